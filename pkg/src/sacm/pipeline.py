"""Experiment stages: generate, train, effects, analyze, report.

Run directory layout (``output_dir``)::

    manifest.json                 config digest, file hashes, stage markers, timings
    prompts/<variant>.jsonl       one prompt per line
    corpus.txt, heldout.tsv       training sentences; held-out (noun, verb) lemma pairs
    model/model.sacm              trained checkpoint
    model/random.sacm             untrained control (same init seed)
    model/train_state.sacm        optimizer state for --resume
    model/loss.csv                step, loss
    effects/*.csv                 one file per effect family
    effects/partial/...           per (variant, layer) sweep progress (.npy)
    analysis/*.csv, *.svg         contours, top-k sets, overlaps, hypothesis, norms, contrasts
    report.md

Every CSV starts with a ``# sacm config_digest=<hex>`` line, then a header
row; floats are written with ``repr`` (shortest round-trip form).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import multiprocessing as mp
import numpy as np

from . import analysis as an
from . import checkpoint as ckpt
from . import effects as fx
from . import plotting
from .config import ExperimentConfig
from .errors import DegenerateProbability, IncompleteSweep, IoFailure, ProvenanceMismatch, ValidationError
from .grammar import (ANALYSIS_KINDS, Corpus, Prompt, Structure, StructureKind, Vocabulary, apply_swap_number,
                      build_lexicon,
                      generate_prompts, make_training_corpus, read_prompts, write_prompts)
from .model import ModelSnapshot, NeuronId, init_model
from .training import train

log = logging.getLogger(__name__)

FORMAT_VERSIONS = {"checkpoint": ckpt.FORMAT_VERSION, "prompts": 1, "csv": 1, "manifest": 1}
EFFECT_COLUMNS = ("structure", "variant", "prompt_id", "verb", "intervention", "layer", "neuron_or_head",
                  "position_policy", "y_null", "y_intervened", "effect")
DISTRACTOR_FAMILY = (Structure.SIMPLE_AGREEMENT, Structure.ACROSS_ONE_DISTRACTOR, Structure.ACROSS_TWO_DISTRACTORS)


# --- small I/O helpers ------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], digest: str) -> None:
    buf = io.StringIO()
    buf.write(f"# sacm config_digest={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    ckpt.atomic_write(path, buf.getvalue().encode("utf-8"))


def read_csv(path: Path) -> tuple[str, list[dict]]:
    """Return (config digest, rows) of a pipeline CSV."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            first = fh.readline()
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise IoFailure(f"missing input {path}") from exc
    digest = first.strip().partition("config_digest=")[2]
    return digest, rows


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """One run directory plus its manifest."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.dir = Path(config.output_dir)
        self.digest = config.digest()
        self.manifest_path = self.dir / "manifest.json"
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> dict:
        if self.manifest_path.exists():
            m = json.loads(self.manifest_path.read_text())
            if m.get("config_digest") != self.digest:
                raise ProvenanceMismatch(
                    f"{self.manifest_path} was produced by config {m.get('config_digest', '?')[:12]}, "
                    f"current config is {self.digest[:12]}; use a fresh output_dir")
            return m
        return {"config_digest": self.digest, "formats": FORMAT_VERSIONS, "checkpoint_digest": None,
                "stages": {}, "files": {}, "config": self.config.canonical()}

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def record(self, stage: str, seconds: float, files: Iterable[Path]) -> None:
        for f in files:
            self.manifest["files"][str(f.relative_to(self.dir))] = sha256(f)
        self.manifest["stages"][stage] = {"done": True, "seconds": round(seconds, 3)}
        self.save()

    def save(self) -> None:
        ckpt.atomic_write(self.manifest_path, (json.dumps(self.manifest, indent=2, sort_keys=True) + "\n").encode())

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise IoFailure(f"missing prerequisite {path} (run the '{stage}' stage first)")
        return path

    def check_digest(self, path: Path) -> None:
        digest, _ = read_csv(path)
        if digest != self.digest:
            raise ProvenanceMismatch(f"{path} carries config digest {digest[:12]}, expected {self.digest[:12]}")

    def lexicon(self):
        return build_lexicon(self.config.lexicon_seed)

    def prompts(self, label: str) -> list[Prompt]:
        return read_prompts(self.require(self.path("prompts", f"{label}.jsonl"), "generate"))

    def model(self, name: str = "model") -> ModelSnapshot:
        path = self.require(self.path("model", f"{name}.sacm"), "train")
        return ckpt.load_checkpoint(path)


# --- generate -----------------------------------------------------------------

def cmd_generate(config: ExperimentConfig) -> Run:
    """Prompt files for every configured variant plus the training corpus."""
    t0 = time.perf_counter()
    run = Run(config)
    lex = run.lexicon()
    files = []
    run.path("prompts").mkdir(parents=True, exist_ok=True)
    for kind in config.kinds():
        prompts = generate_prompts(kind, config.count_for(kind.label), lex, config.seed_for(kind.label))
        path = run.path("prompts", f"{kind.label}.jsonl")
        write_prompts(path, prompts)
        files.append(path)
    corpus = make_training_corpus(lex, config.corpus_size, config.corpus_seed, config.heldout_fraction)
    corpus.write(run.path("corpus.txt"))
    held = run.path("heldout.tsv")
    ckpt.atomic_write(held, "".join(f"{a}\t{b}\n" for a, b in sorted(corpus.heldout_pairs)).encode())
    files += [run.path("corpus.txt"), held]
    run.record("generate", time.perf_counter() - t0, files)
    return run


def read_heldout(run: Run) -> frozenset[tuple[str, str]]:
    path = run.require(run.path("heldout.tsv"), "generate")
    return frozenset(tuple(line.split("\t")) for line in path.read_text().splitlines() if line)


# --- train ----------------------------------------------------------------------

def cmd_train(config: ExperimentConfig, resume: bool = False, stop_after: int | None = None) -> Run:
    t0 = time.perf_counter()
    run = Run(config)
    corpus = Corpus.read(run.require(run.path("corpus.txt"), "generate"))
    vocab = Vocabulary.from_lexicon(run.lexicon())
    encoded = [vocab.encode(s) for s in corpus.sentences]
    base = init_model(config.model_config(len(vocab)), vocab.words)
    run.path("model").mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(base, run.path("model", "random.sacm"))
    result = train(base, encoded, config.training, run.path("model", "train_state.sacm"), resume=resume,
                   stop_after=stop_after)
    if stop_after is not None and len(result.losses) < config.training.steps:
        log.info("stopped at step %d", len(result.losses))
        return run
    ckpt.save_checkpoint(result.model, run.path("model", "model.sacm"))
    write_csv(run.path("model", "loss.csv"), ("step", "loss"),
              ((i + 1, l) for i, l in enumerate(result.losses)), run.digest)
    write_csv(run.path("model", "train_summary.csv"), ("final_train_loss", "heldout_loss"),
              [(result.losses[-1], result.val_loss)], run.digest)
    run.manifest["checkpoint_digest"] = sha256(run.path("model", "model.sacm"))
    run.record("train", time.perf_counter() - t0,
               [run.path("model", n) for n in ("model.sacm", "random.sacm", "loss.csv", "train_summary.csv")])
    return run


# --- effects ----------------------------------------------------------------------

def _variant_columns(kind: StructureKind):
    return kind.structure.value, kind.label


def _total_rows(model: ModelSnapshot, prompts: Sequence[Prompt], on_error: str):
    rows, skipped = [], 0
    for p in prompts:
        try:
            rec = fx.effect_record(model, p)
        except DegenerateProbability:
            if on_error == "abort":
                raise
            skipped += 1
            continue
        rows.append((*_variant_columns(p.kind), p.prompt_id, p.verb.lemma, "swap-number", "", "", "",
                     rec.y_null, rec.y_intervened, rec.te))
    return rows, skipped


def effects_total(run: Run) -> list[Path]:
    cfg = run.config
    out = []
    summary = []
    for name in ("model", "random"):
        model = run.model(name)
        rows = []
        for kind in cfg.kinds():
            r, skipped = _total_rows(model, run.prompts(kind.label), cfg.on_error)
            rows += r
            tes = [row[-1] for row in r]
            summary.append((*_variant_columns(kind), "trained" if name == "model" else "random",
                            len(tes), skipped, math.fsum(tes) / len(tes) if tes else float("nan")))
        path = run.path("effects", "total.csv" if name == "model" else "total_random.csv")
        write_csv(path, EFFECT_COLUMNS, rows, run.digest)
        out.append(path)
    path = run.path("effects", "total_summary.csv")
    write_csv(path, ("structure", "variant", "model", "n", "n_skipped", "mean_te"), summary, run.digest)
    return out + [path]


def effects_grammaticality(run: Run) -> list[Path]:
    model = run.model()
    rows = []
    acc = defaultdict(list)
    for kind in run.config.kinds():
        for p in run.prompts(kind.label):
            for q in (p, apply_swap_number(p)):
                y = fx.y_ratio(model, q)
                g = 1.0 / y
                rows.append((*_variant_columns(kind), q.prompt_id, q.verb.lemma, q.subject_number,
                             kind.attractor_number or "none", y, g))
                acc[(kind.structure.value, kind.label, q.subject_number, kind.attractor_number or "none")].append(g)
    path = run.path("effects", "grammaticality.csv")
    write_csv(path, ("structure", "variant", "prompt_id", "verb", "subject_number", "attractor_number", "y", "g"),
              rows, run.digest)
    spath = run.path("effects", "grammaticality_summary.csv")
    write_csv(spath, ("structure", "variant", "subject_number", "attractor_number", "n", "mean_g"),
              [(*k, len(v), math.fsum(v) / len(v)) for k, v in acc.items()], run.digest)
    return [path, spath]


# sweep workers -------------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(model: ModelSnapshot, cache_dir: str, digest: str):
    _WORKER.clear()
    _WORKER.update(model=model, cache=fx.TraceCache(cache_dir, model, digest), traces={})


def _worker_traces(label: str, prompts: Sequence[Prompt]):
    tr = _WORKER["traces"]
    if label not in tr:
        tr.clear()  # keep one variant resident
        tr[label] = _WORKER["cache"].get(label, prompts)
    return tr[label]


def _sweep_item(item):
    family, label, layer, policy_value, prompt_path = item
    model = _WORKER["model"]
    prompts = read_prompts(prompt_path)
    traces = _worker_traces(label, prompts)
    policy = fx.PatchPolicy(policy_value) if policy_value else None
    if family == "neurons":
        return np.stack([fx.neuron_sweep_prompt(model, p, traces[p.prompt_id], policy, [layer])[0]
                         for p in prompts])
    zero = family == "zero-heads"
    return np.stack([fx.head_sweep_prompt(model, p, traces[p.prompt_id], policy, zero) for p in prompts])


def _run_items(items, model, run: Run, jobs: int, on_result):
    args = (model, str(run.config.cache_dir), ckpt.model_digest(model))
    if jobs <= 1:
        _worker_init(*args)
        for it in items:
            on_result(it, _sweep_item(it))
        return
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_worker_init, initargs=args) as pool:
        # results are consumed in submission order, so output is independent of scheduling
        for it, res in zip(items, pool.map(_sweep_item, items)):
            on_result(it, res)


def _sweep(run: Run, family: str, jobs: int, resume: bool) -> dict[str, np.ndarray]:
    """Per-prompt effect tables per variant, checkpointed per (variant, layer)."""
    cfg = run.config
    model = run.model()
    digest = ckpt.model_digest(model)
    cache = fx.TraceCache(cfg.cache_dir, model, digest)
    partial = run.path("effects", "partial", digest[:16], family)
    partial.mkdir(parents=True, exist_ok=True)
    policy = None if family == "zero-heads" else cfg.policy
    items, tables = [], {}
    for kind in cfg.kinds():
        prompt_path = run.path("prompts", f"{kind.label}.jsonl")
        prompts = run.prompts(kind.label)
        cache.get(kind.label, prompts)  # single writer populates the trace cache up front
        layers = range(cfg.n_layers + 1) if family == "neurons" else [None]
        for layer in layers:
            f = partial / f"{kind.label}-{'all' if layer is None else layer}.npy"
            if resume and f.exists():
                continue
            items.append((family, kind.label, layer, policy.value if policy else "", str(prompt_path)))

    def save(item, arr):
        _, label, layer, _, _ = item
        f = partial / f"{label}-{'all' if layer is None else layer}.npy"
        buf = io.BytesIO()
        np.save(buf, arr)
        ckpt.atomic_write(f, buf.getvalue())

    _run_items(items, model, run, jobs, save)
    for kind in cfg.kinds():
        if family == "neurons":
            parts = [np.load(partial / f"{kind.label}-{l}.npy") for l in range(cfg.n_layers + 1)]
            tables[kind.label] = np.stack(parts, axis=1)  # (prompts, layers, d)
        else:
            tables[kind.label] = np.load(partial / f"{kind.label}-all.npy")
    return tables


def effects_mediators(run: Run, family: str, jobs: int = 1, resume: bool = False) -> list[Path]:
    cfg = run.config
    model = run.model()
    tables = _sweep(run, family, jobs, resume)
    cache = fx.TraceCache(cfg.cache_dir, model)
    rows = []
    for kind in cfg.kinds():
        prompts = run.prompts(kind.label)
        traces = cache.get(kind.label, prompts)
        y_null = np.array([math.exp(traces[p.prompt_id].log_y_null) for p in prompts])
        table = tables[kind.label]
        n = len(prompts)
        mean_y_null = float(y_null.sum() / n)
        patched = y_null[:, None, None] * (1.0 + table)
        mean_patched = patched.sum(axis=0) / n
        means = table.sum(axis=0) / n
        intervention = "zero" if family == "zero-heads" else "swap-number"
        policy = "" if family == "zero-heads" else cfg.policy.value
        offset = 0 if family == "neurons" else 1
        for a in range(means.shape[0]):
            for b in range(means.shape[1]):
                rows.append((*_variant_columns(kind), "*", "*", intervention, a + offset, b, policy,
                             mean_y_null, float(mean_patched[a, b]), float(means[a, b])))
    name = {"neurons": "neurons.csv", "heads": "heads.csv", "zero-heads": "zero_heads.csv"}[family]
    path = run.path("effects", name)
    write_csv(path, EFFECT_COLUMNS, rows, run.digest)
    return [path]


def effects_verb_profile(run: Run) -> list[Path]:
    model = run.model()
    groups = {k.label: run.prompts(k.label) for k in run.config.kinds() if k.structure in DISTRACTOR_FAMILY}
    rows = fx.verb_probability_profile(model, groups)
    path = run.path("effects", "verb_profile.csv")
    write_csv(path, ("structure", "prompt_id", "which", "probability"),
              [(r.structure, r.prompt_id, r.which, r.probability) for r in rows], run.digest)
    return [path]


def cmd_effects(config: ExperimentConfig, which: Sequence[str] | None = None, jobs: int = 1,
                resume: bool = False) -> Run:
    t0 = time.perf_counter()
    run = Run(config)
    run.path("effects").mkdir(parents=True, exist_ok=True)
    which = list(which or config.interventions)
    files = []
    for fam in which:
        if fam == "total":
            files += effects_total(run)
        elif fam == "grammaticality":
            files += effects_grammaticality(run)
        elif fam in ("neurons", "heads", "zero-heads"):
            files += effects_mediators(run, fam, jobs, resume)
        elif fam == "verb-profile":
            files += effects_verb_profile(run)
        else:
            raise ValidationError(f"unknown effect family {fam!r}")
    run.record("effects:" + ",".join(which), time.perf_counter() - t0, files)
    return run


# --- analyze ------------------------------------------------------------------------

def load_neuron_effects(path: Path) -> dict[str, list[fx.MediatorEffect]]:
    _, rows = read_csv(path)
    out = defaultdict(list)
    for r in rows:
        out[r["variant"]].append(fx.MediatorEffect(
            NeuronId(int(r["layer"]), int(r["neuron_or_head"])),
            fx.PatchPolicy(r["position_policy"]) if r["position_policy"] else None,
            float(r["effect"]), 0))
    return dict(out)


def load_te(path: Path) -> dict[str, dict[str, float]]:
    _, rows = read_csv(path)
    out = defaultdict(dict)
    for r in rows:
        out[r["variant"]][r["prompt_id"]] = float(r["effect"])
    return dict(out)


def cmd_analyze(config: ExperimentConfig) -> Run:
    t0 = time.perf_counter()
    run = Run(config)
    neuron_csv = run.require(run.path("effects", "neurons.csv"), "effects")
    run.check_digest(neuron_csv)
    effects = load_neuron_effects(neuron_csv)
    missing = [k.label for k in config.kinds() if k.label not in effects]
    if missing:
        raise IncompleteSweep(f"neurons.csv lacks variants {missing}")
    out = run.path("analysis")
    out.mkdir(parents=True, exist_ok=True)
    files = []

    selections, contours, contours_all = {}, {}, {}
    for label, eff in effects.items():
        sel = an.top_k_per_layer(eff, config.fraction)
        selections[label] = sel
        contours[label] = an.layer_contour(sel, eff, config.fraction)
        contours_all[label] = an.layer_contour(an.top_k_per_layer(eff, 1.0), eff, 1.0)
    an.write_contour_csv(out / "contours.csv", contours)
    an.write_contour_csv(out / "contours_all.csv", contours_all)
    for name in ("contours.csv", "contours_all.csv"):
        _stamp(out / name, run.digest)
    plotting.contour_svg(contours, out / "contours.svg", f"top {config.fraction:g} of neurons per layer")
    write_csv(out / "topk.csv", ("variant", "layer", "rank", "neuron"),
              [(lab, layer, i, n) for lab, sel in selections.items() for layer, ns in sel.items()
               for i, n in enumerate(ns)], run.digest)
    files += [out / "contours.csv", out / "contours_all.csv", out / "contours.svg", out / "topk.csv"]

    labels = [k.label for k in ANALYSIS_KINDS if k.label in selections]
    if len(labels) >= 2:
        hyp = an.hypothesis_matrix(labels)
        hyp.write_csv(out / "hypothesis.csv")
        _stamp(out / "hypothesis.csv", run.digest)
        plotting.heatmap_svg(hyp, out / "hypothesis.svg", "hypothesized similarity")
        per_layer, norm_rows = {}, []
        for layer in range(config.n_layers + 1):
            m = an.overlap_matrix({lab: selections[lab] for lab in labels}, layer)
            per_layer[layer] = m
            m.write_csv(out / f"overlap_layer{layer}.csv")
            _stamp(out / f"overlap_layer{layer}.csv", run.digest)
            plotting.heatmap_svg(m, out / f"overlap_layer{layer}.svg", f"top-neuron overlap, layer {layer}")
            norm_rows.append((layer, an.l1_difference(m, hyp)))
            files += [out / f"overlap_layer{layer}.csv", out / f"overlap_layer{layer}.svg"]
        write_csv(out / "l1_norms.csv", ("layer", "l1_norm"), norm_rows, run.digest)
        layer, norm = an.best_layer(per_layer, hyp)
        write_csv(out / "best_layer.csv", ("layer", "l1_norm", "distance_rescale"),
                  [(layer, norm, hyp.meta["distance_rescale"])], run.digest)
        files += [out / "hypothesis.csv", out / "hypothesis.svg", out / "l1_norms.csv", out / "best_layer.csv"]

    total_csv = run.path("effects", "total.csv")
    if total_csv.exists():
        te = load_te(total_csv)
        rows, summary = [], []
        for kind in config.kinds():
            if kind.complementizer is not False:
                continue
            base = kind.with_complementizer(True).label
            if base not in te or kind.label not in te:
                continue
            table = an.paired_contrast(base, te[base], kind.label, te[kind.label],
                                       contours.get(base), contours.get(kind.label))
            for r in table.te_rows:
                rows.append((base, kind.label, "te", r.key, r.a, r.b, r.delta, r.relative))
            for r in table.contour_rows:
                rows.append((base, kind.label, "contour", r.key, r.a, r.b, r.delta, r.relative))
            summary.append((base, kind.label, len(table.te_rows), table.mean_te_delta))
        if rows:
            write_csv(out / "contrast.csv", ("variant_a", "variant_b", "kind", "key", "a", "b", "delta", "relative"),
                      rows, run.digest)
            write_csv(out / "contrast_summary.csv", ("variant_a", "variant_b", "n", "mean_te_delta"),
                      summary, run.digest)
            files += [out / "contrast.csv", out / "contrast_summary.csv"]
    run.record("analyze", time.perf_counter() - t0, files)
    return run


def _stamp(path: Path, digest: str) -> None:
    """Prefix a CSV written by the analysis module with the digest line."""
    text = path.read_text(encoding="utf-8")
    ckpt.atomic_write(path, (f"# sacm config_digest={digest}\n" + text).encode("utf-8"))


# --- report ----------------------------------------------------------------------------

REPORT_PREREQUISITES = (("effects", "total_summary.csv", "effects"),
                        ("effects", "grammaticality_summary.csv", "effects"),
                        ("analysis", "contours.csv", "analyze"),
                        ("analysis", "best_layer.csv", "analyze"))


def cmd_report(config: ExperimentConfig) -> Path:
    """Markdown summary whose every number is copied verbatim from a CSV cell."""
    run = Run(config)
    for *parts, stage in REPORT_PREREQUISITES:
        run.require(run.path(*parts), stage)
    lines = ["# Subject-verb agreement mediation report", "",
             f"config digest: `{run.digest}`", ""]
    if run.manifest.get("checkpoint_digest"):
        lines += [f"checkpoint sha256: `{run.manifest['checkpoint_digest']}`", ""]

    _, te = read_csv(run.path("effects", "total_summary.csv"))
    lines += ["## Mean total effect", "", "| variant | model | n | mean TE |", "|---|---|---|---|"]
    lines += [f"| {r['variant']} | {r['model']} | {r['n']} | {r['mean_te']} |" for r in te]

    _, gram = read_csv(run.path("effects", "grammaticality_summary.csv"))
    lines += ["", "## Grammaticality margin", "", "| variant | subject | attractor | mean G |", "|---|---|---|---|"]
    lines += [f"| {r['variant']} | {r['subject_number']} | {r['attractor_number']} | {r['mean_g']} |" for r in gram]
    labels = sorted({r["variant"] for r in gram})
    series = {num: [next((float(r["mean_g"]) for r in gram if r["variant"] == lab and r["subject_number"] == num),
                         float("nan")) for lab in labels] for num in ("sg", "pl")}
    plotting.bars_svg(labels, series, run.path("analysis", "grammaticality.svg"), "mean G", log=True)
    lines += ["", "![grammaticality](analysis/grammaticality.svg)"]

    _, contour = read_csv(run.path("analysis", "contours.csv"))
    lines += ["", "## Indirect-effect contours (top neurons per layer)", "",
              "| variant | layer | mean NIE |", "|---|---|---|"]
    lines += [f"| {r['structure']} | {r['layer']} | {r['mean_nie']} |" for r in contour]
    lines += ["", "![contours](analysis/contours.svg)"]

    _, best = read_csv(run.path("analysis", "best_layer.csv"))
    b = best[0]
    lines += ["", "## Overlap versus hypothesis", "",
              f"best layer: {b['layer']} (l1 norm {b['l1_norm']})", "",
              "![hypothesis](analysis/hypothesis.svg)", "",
              f"![overlap](analysis/overlap_layer{b['layer']}.svg)"]
    norms = run.path("analysis", "l1_norms.csv")
    if norms.exists():
        _, nrows = read_csv(norms)
        lines += ["", "| layer | l1 norm |", "|---|---|"] + [f"| {r['layer']} | {r['l1_norm']} |" for r in nrows]
    path = run.path("report.md")
    ckpt.atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    run.record("report", 0.0, [path, run.path("analysis", "grammaticality.svg")])
    return path
