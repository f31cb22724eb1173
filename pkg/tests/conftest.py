import numpy as np
import pytest

from sacm.grammar import ALL_KINDS, Vocabulary, build_lexicon, generate_prompts
from sacm.model import ModelConfig, init_model


@pytest.fixture(scope="session")
def lexicon():
    return build_lexicon(0)


@pytest.fixture(scope="session")
def vocab(lexicon):
    return Vocabulary.from_lexicon(lexicon)


@pytest.fixture(scope="session")
def small_model(vocab):
    """Untrained 2-layer, width-32 model with weights large enough to give non-trivial effects."""
    base = init_model(ModelConfig(2, 32, 4, len(vocab), 32, init_seed=3), vocab.words)
    rng = np.random.default_rng(5)
    params = {k: v + (rng.normal(0, 0.3, v.shape) if v.ndim == 2 else 0.0) for k, v in base.params.items()}
    return type(base)(base.config, params, base.vocab)


@pytest.fixture(scope="session")
def prompts_by_kind(lexicon):
    return {k.label: generate_prompts(k, 12, lexicon, 11) for k in ALL_KINDS}


@pytest.fixture(scope="session")
def mixed_prompts(prompts_by_kind):
    return [p for ps in prompts_by_kind.values() for p in ps]


# --- acceptance criterion reporting ------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


class Criterion:
    """Collects measurements for one acceptance criterion and records pass/fail."""

    def __init__(self, name: str):
        self.name = name
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def check(self, ok: bool, text: str) -> None:
        self.notes.append(("ok: " if ok else "FAILED: ") + text)
        assert ok, f"{self.name}: {text}"


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(marker.args[0] if marker else request.node.name)
    yield c
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    line = f"{'PASS' if passed else 'FAIL'}  {c.name}  | " + "; ".join(c.notes)
    ACCEPTANCE_RESULTS.append((c.name, passed, line))
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
