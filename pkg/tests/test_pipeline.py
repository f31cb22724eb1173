import csv
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from sacm import checkpoint as ckpt
from sacm import pipeline
from sacm.analysis import SimilarityMatrix, read_contour_csv
from sacm.cli import main
from sacm.config import DEFAULT_CONFIG_TEXT, load_config, parse_config
from sacm.errors import ValidationError

from oracles import l1_oracle, overlap_oracle, topk_oracle

SMALL = """\
[prompts]
count = 6
structures = simple_agreement, within_obj_rc_sg, within_obj_rc_sg_nocomp, across_one_distractor, across_pp_pl
[corpus]
size = 1500
[model]
n_layers = 2
d_model = 16
n_heads = 2
[training]
steps = 20
batch_size = 16
checkpoint_every = 5
[effects]
fraction = 0.25
[paths]
output_dir = run
"""


def write_config(directory: Path, text: str = SMALL) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "exp.ini"
    path.write_text(text)
    return path


def run_all(cfg: Path, jobs: int = 1) -> None:
    for cmd in (["generate"], ["train"], ["effects", "--jobs", str(jobs)], ["analyze"], ["report"]):
        assert main([cmd[0], "--config", str(cfg), *cmd[1:]]) == 0, cmd


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipe")
    cfg = write_config(base)
    run_all(cfg)
    return base


def csv_rows(path):
    with open(path, newline="") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_default_config_text_parses():
    cfg = parse_config(DEFAULT_CONFIG_TEXT)
    assert cfg == parse_config("")
    assert len(cfg.kinds()) == 13 and cfg.prompt_count == 300


def test_config_errors():
    with pytest.raises(ValidationError):
        parse_config("[bogus]\nx = 1\n")
    with pytest.raises(ValidationError):
        parse_config("[effects]\npolicy = everywhere\n")
    with pytest.raises(ValidationError):
        parse_config("[prompts]\nstructures = nonsense\n")
    with pytest.raises(ValidationError):
        parse_config("[training]\nlearning_rate = 1\n")


def test_seed_override_and_digest():
    cfg = parse_config(SMALL)
    o = cfg.with_seed_override(5)
    assert (o.lexicon_seed, o.prompt_seed, o.corpus_seed, o.init_seed, o.training.seed) == (5,) * 5
    assert o.digest() != cfg.digest()
    assert parse_config(SMALL, "/elsewhere").digest() == cfg.digest()


def test_cache_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SACM_CACHE_DIR", str(tmp_path / "c"))
    assert load_config(write_config(tmp_path)).cache_dir == tmp_path / "c"


def test_outputs_carry_digest(run_dir):
    digest = load_config(run_dir / "exp.ini").digest()
    csvs = list((run_dir / "run").rglob("*.csv"))
    assert len(csvs) > 15
    for path in csvs:
        assert path.read_text().splitlines()[0] == f"# sacm config_digest={digest}", path


def test_neuron_rows_per_structure(run_dir):
    cfg = load_config(run_dir / "exp.ini")
    rows = csv_rows(run_dir / "run/effects/neurons.csv")
    assert list(rows[0]) == list(pipeline.EFFECT_COLUMNS)
    for kind in cfg.kinds():
        assert sum(r["variant"] == kind.label for r in rows) == (cfg.n_layers + 1) * cfg.d_model


def test_overlap_recomputed_from_raw_effects(run_dir):
    """Independent recomputation of the overlap and norm files from neurons.csv."""
    cfg = load_config(run_dir / "exp.ini")
    rows = csv_rows(run_dir / "run/effects/neurons.csv")
    tables = {}
    for r in rows:
        t = tables.setdefault(r["variant"], np.zeros((cfg.n_layers + 1, cfg.d_model)))
        t[int(r["layer"]), int(r["neuron_or_head"])] = float(r["effect"])
    labels = SimilarityMatrix.read_csv(run_dir / "run/analysis/hypothesis.csv").labels
    hyp = SimilarityMatrix.read_csv(run_dir / "run/analysis/hypothesis.csv").values.tolist()
    norms = {int(r["layer"]): float(r["l1_norm"]) for r in csv_rows(run_dir / "run/analysis/l1_norms.csv")}
    for layer in range(cfg.n_layers + 1):
        sets = [topk_oracle(tables[lab][layer], cfg.fraction) for lab in labels]
        got = SimilarityMatrix.read_csv(run_dir / f"run/analysis/overlap_layer{layer}.csv")
        assert got.labels == labels
        assert got.values.tolist() == overlap_oracle(sets)
        assert norms[layer] == pytest.approx(l1_oracle(overlap_oracle(sets), hyp), rel=1e-12)
    best = csv_rows(run_dir / "run/analysis/best_layer.csv")[0]
    assert 0 <= int(best["layer"]) <= cfg.n_layers
    assert float(best["l1_norm"]) == min(norms.values())


def test_contrast_pairs_complementizer_variants(run_dir):
    rows = csv_rows(run_dir / "run/analysis/contrast_summary.csv")
    assert [(r["variant_a"], r["variant_b"]) for r in rows] == [("within_obj_rc_sg", "within_obj_rc_sg_nocomp")]
    assert read_contour_csv(run_dir / "run/analysis/contours.csv")["within_obj_rc_sg"].fraction == 0.25


def test_report_numbers_trace_to_csv_cells(run_dir):
    text = (run_dir / "run/report.md").read_text()
    cells = set()
    for path in (run_dir / "run").rglob("*.csv"):
        for row in csv.reader(l for l in path.read_text().splitlines() if not l.startswith("#")):
            cells.update(row)
    body = re.sub(r"`[0-9a-f]{64}`", "", text)
    body = re.sub(r"\(analysis/[^)]*\)", "", body)
    numbers = re.findall(r"(?<![\w.])-?\d+(?:\.\d+)?(?:e-?\d+)?(?![\w.])", body)
    assert numbers
    for n in numbers:
        assert n in cells, n


def test_rerun_is_byte_identical_across_job_counts(run_dir, tmp_path):
    other = tmp_path / "again"
    cfg = write_config(other)
    run_all(cfg, jobs=2)
    a, b = run_dir / "run", other / "run"
    names = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.suffix in (".csv", ".jsonl", ".sacm", ".svg", ".md")
                   and "cache" not in p.parts)
    assert names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_report_idempotent(run_dir):
    before = (run_dir / "run/report.md").read_bytes()
    assert main(["report", "--config", str(run_dir / "exp.ini")]) == 0
    assert (run_dir / "run/report.md").read_bytes() == before


def test_interrupted_sweep_resumes_to_same_csv(run_dir, tmp_path):
    work = tmp_path / "resume"
    shutil.copytree(run_dir, work)
    cfg = work / "exp.ini"
    target = work / "run/effects/neurons.csv"
    before = target.read_bytes()
    partial = sorted((work / "run/effects/partial").rglob("neurons/*.npy"))
    for p in partial[len(partial) // 2:]:
        p.unlink()  # simulate a kill half way through the sweep
    target.unlink()
    assert main(["effects", "--config", str(cfg), "--which", "neurons", "--resume"]) == 0
    assert target.read_bytes() == before


def test_train_resume_matches_uninterrupted(run_dir, tmp_path):
    work = tmp_path / "train"
    shutil.copytree(run_dir, work)
    (work / "run/model/model.sacm").unlink()
    cfg = load_config(work / "exp.ini")
    pipeline.cmd_train(cfg, stop_after=7)
    assert not (work / "run/model/model.sacm").exists()
    assert main(["train", "--config", str(work / "exp.ini"), "--resume"]) == 0
    assert (work / "run/model/model.sacm").read_bytes() == (run_dir / "run/model/model.sacm").read_bytes()
    loss = csv_rows(work / "run/model/loss.csv")
    assert len(loss) == cfg.training.steps


def test_hypothesis_independent_of_checkpoint(run_dir, tmp_path):
    work = tmp_path / "hyp"
    shutil.copytree(run_dir, work)
    before = (work / "run/analysis/hypothesis.csv").read_bytes()
    shutil.copy(work / "run/model/random.sacm", work / "run/model/model.sacm")
    cfg = str(work / "exp.ini")
    assert main(["effects", "--config", cfg, "--which", "neurons"]) == 0
    assert main(["analyze", "--config", cfg]) == 0
    assert (work / "run/analysis/hypothesis.csv").read_bytes() == before


def test_exit_codes(tmp_path, capsys):
    cfg = write_config(tmp_path / "a", SMALL.replace("count = 6", "count = 100000"))
    assert main(["generate", "--config", str(cfg)]) == 2
    assert "320" in capsys.readouterr().err  # subject nouns x verbs for simple agreement
    cfg = write_config(tmp_path / "b")
    assert main(["train", "--config", str(cfg)]) == 4
    assert "corpus.txt" in capsys.readouterr().err
    assert main(["generate", "--config", str(cfg), "--jobs", "0"]) == 2
    assert main(["generate", "--nonsense"]) == 2
    assert main(["generate", "--config", str(tmp_path / "missing.ini")]) == 4
    assert main(["generate", "--config", str(cfg)]) == 0
    assert main(["report", "--config", str(cfg)]) == 4
    assert "effects" in capsys.readouterr().err
    changed = write_config(tmp_path / "b", SMALL.replace("size = 1500", "size = 1600"))
    assert main(["generate", "--config", str(changed)]) == 2
    assert "config" in capsys.readouterr().err


def test_checkpoint_digest_in_manifest(run_dir):
    import json
    m = json.loads((run_dir / "run/manifest.json").read_text())
    assert m["checkpoint_digest"] == ckpt.file_digest(run_dir / "run/model/model.sacm")
    assert {"generate", "train", "analyze", "report"} <= set(m["stages"])
    for rel, digest in m["files"].items():
        assert ckpt.file_digest(run_dir / "run" / rel) == digest, rel
