"""Experiment configuration: an INI-style ``key = value`` file with sections.

Grammar (read with :mod:`configparser`, interpolation off, ``#``/``;`` comments)::

    [lexicon]   seed
    [prompts]   seed, count, structures (comma list of variant labels, or "all" / "analysis"),
                count.<label>, seed.<label> (per-variant overrides)
    [corpus]    size, seed, heldout_fraction
    [model]     n_layers, d_model, n_heads, max_seq_len, init_seed
    [training]  steps, batch_size, lr, weight_decay, warmup, seed, checkpoint_every
    [effects]   interventions (comma list of: total, grammaticality, neurons, heads,
                zero-heads, verb-profile), policy (subject | final | all), fraction,
                on_error (abort | skip)
    [paths]     output_dir, cache_dir

Every key has a default, so an empty file is a valid config. Relative paths
are resolved against the config file's directory. ``SACM_CACHE_DIR``
overrides the cache directory.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .effects import PatchPolicy
from .errors import IoFailure, ValidationError
from .grammar import ALL_KINDS, ANALYSIS_KINDS, StructureKind
from .model import ModelConfig
from .training import TrainConfig

EFFECT_FAMILIES = ("total", "grammaticality", "neurons", "heads", "zero-heads", "verb-profile")


@dataclass(frozen=True)
class ExperimentConfig:
    lexicon_seed: int = 0
    prompt_seed: int = 7
    prompt_count: int = 300
    structures: tuple[str, ...] = tuple(k.label for k in ALL_KINDS)
    prompt_counts: dict = field(default_factory=dict)   # label -> count override
    prompt_seeds: dict = field(default_factory=dict)    # label -> seed override
    corpus_size: int = 50000
    corpus_seed: int = 1
    heldout_fraction: float = 0.1
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    max_seq_len: int = 32
    init_seed: int = 0
    training: TrainConfig = TrainConfig()
    interventions: tuple[str, ...] = EFFECT_FAMILIES
    policy: PatchPolicy = PatchPolicy.SUBJECT_ONLY
    fraction: float = 0.05
    on_error: str = "abort"
    output_dir: Path = Path("run")
    cache_dir: Path = Path("run/cache")

    def __post_init__(self):
        for label in self.structures:
            StructureKind.from_label(label)
        unknown = set(self.interventions) - set(EFFECT_FAMILIES)
        if unknown:
            raise ValidationError(f"unknown effect families {sorted(unknown)}")
        if not 0 < self.fraction <= 1:
            raise ValidationError("fraction must lie in (0, 1]")
        if self.on_error not in ("abort", "skip"):
            raise ValidationError("on_error must be 'abort' or 'skip'")
        if self.prompt_count < 1 or self.corpus_size < 1:
            raise ValidationError("counts must be positive")

    def kinds(self) -> list[StructureKind]:
        return [StructureKind.from_label(label) for label in self.structures]

    def count_for(self, label: str) -> int:
        return int(self.prompt_counts.get(label, self.prompt_count))

    def seed_for(self, label: str) -> int:
        return int(self.prompt_seeds.get(label, self.prompt_seed))

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(self.n_layers, self.d_model, self.n_heads, vocab_size, self.max_seq_len, self.init_seed)

    def canonical(self) -> dict:
        """Everything that determines results (paths excluded)."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        d.pop("cache_dir")
        d["policy"] = self.policy.value
        d["training"] = dataclasses.asdict(self.training)
        d["structures"] = list(self.structures)
        d["interventions"] = list(self.interventions)
        d["prompt_counts"] = dict(sorted(self.prompt_counts.items()))
        d["prompt_seeds"] = dict(sorted(self.prompt_seeds.items()))
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()

    def with_seed_override(self, seed: int) -> "ExperimentConfig":
        """Replace every seed by ``seed`` (lexicon, prompts, corpus, init, training)."""
        return dataclasses.replace(
            self, lexicon_seed=seed, prompt_seed=seed, prompt_seeds={}, corpus_seed=seed,
            init_seed=seed, training=dataclasses.replace(self.training, seed=seed))


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace("\n", ",").split(",") if v.strip())


def parse_config(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config syntax error: {exc}") from exc
    known = {"lexicon", "prompts", "corpus", "model", "training", "effects", "paths"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValidationError(f"unknown config sections {sorted(extra)}")
    base = Path(base_dir)
    kw: dict = {}

    def get(section, key, conv, target):
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                kw[target] = conv(raw)
            except ValueError as exc:
                raise ValidationError(f"[{section}] {key} = {raw!r}: {exc}") from exc

    get("lexicon", "seed", int, "lexicon_seed")
    get("prompts", "seed", int, "prompt_seed")
    get("prompts", "count", int, "prompt_count")
    if cp.has_option("prompts", "structures"):
        raw = cp.get("prompts", "structures").strip()
        if raw == "all":
            kw["structures"] = tuple(k.label for k in ALL_KINDS)
        elif raw == "analysis":
            kw["structures"] = tuple(k.label for k in ANALYSIS_KINDS)
        else:
            kw["structures"] = _split(raw)
    if cp.has_section("prompts"):
        counts, seeds = {}, {}
        for key, value in cp.items("prompts"):
            if key.startswith("count."):
                counts[key[6:]] = int(value)
            elif key.startswith("seed."):
                seeds[key[5:]] = int(value)
        kw["prompt_counts"], kw["prompt_seeds"] = counts, seeds
    get("corpus", "size", int, "corpus_size")
    get("corpus", "seed", int, "corpus_seed")
    get("corpus", "heldout_fraction", float, "heldout_fraction")
    for key in ("n_layers", "d_model", "n_heads", "max_seq_len", "init_seed"):
        get("model", key, int, key)
    if cp.has_section("training"):
        tfields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
        tkw = {}
        for key, value in cp.items("training"):
            if key not in tfields:
                raise ValidationError(f"unknown training key {key!r}")
            tkw[key] = float(value) if tfields[key] == "float" else int(value)
        kw["training"] = TrainConfig(**tkw)
    if cp.has_option("effects", "interventions"):
        kw["interventions"] = _split(cp.get("effects", "interventions"))
    get("effects", "policy", PatchPolicy, "policy")
    get("effects", "fraction", float, "fraction")
    get("effects", "on_error", str, "on_error")
    get("paths", "output_dir", lambda v: base / v, "output_dir")
    get("paths", "cache_dir", lambda v: base / v, "cache_dir")
    if "output_dir" in kw and "cache_dir" not in kw:
        kw["cache_dir"] = kw["output_dir"] / "cache"
    env = os.environ.get("SACM_CACHE_DIR")
    if env:
        kw["cache_dir"] = Path(env)
    return ExperimentConfig(**kw)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, Path(path).parent)


DEFAULT_CONFIG_TEXT = """\
# Default experiment: all 13 structure variants, 300 prompts each.
[lexicon]
seed = 0

[prompts]
seed = 7
count = 300
structures = all

[corpus]
size = 50000
seed = 1
heldout_fraction = 0.1

[model]
n_layers = 4
d_model = 128
n_heads = 4
max_seq_len = 32
init_seed = 0

[training]
steps = 2500
batch_size = 64
lr = 0.003
weight_decay = 0.01
seed = 0
checkpoint_every = 500

[effects]
interventions = total, grammaticality, neurons, heads, zero-heads, verb-profile
policy = subject
fraction = 0.05
on_error = abort

[paths]
output_dir = run
"""
