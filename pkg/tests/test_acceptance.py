"""Acceptance criteria, each at its stated tolerance.

The module trains the default 4-layer, width-128 model once and runs the
generate -> effects(neurons) -> analyze pipeline on six structures with 300
prompts each. Expect roughly half an hour on one CPU core.
"""
import math
import shutil
import time

import numpy as np
import pytest

from sacm import analysis as an
from sacm import effects as fx
from sacm import pipeline
from sacm.config import parse_config
from sacm.grammar import (Structure, StructureKind, apply_swap_number, build_lexicon, generate_prompts, is_heldout,
                          read_prompts)
from sacm.model import HeadId, ModelConfig, NeuronId, forward, gradient_check, init_model
from sacm.training import pad_batch

from oracles import hypothesis_oracle, l1_oracle, overlap_oracle, prompt_features, topk_oracle

SIX = ("simple_agreement", "within_obj_rc_sg", "across_one_distractor", "across_two_distractors",
       "across_pp_sg", "across_obj_rc_sg")

# default recipe, restricted to one variant per structure
RUN_CONFIG = f"""\
[prompts]
structures = {", ".join(SIX)}
[effects]
interventions = neurons
[paths]
output_dir = run
"""


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    cfg = parse_config(RUN_CONFIG, base)
    timings = {}
    t = time.perf_counter()
    pipeline.cmd_generate(cfg)
    timings["generate"] = time.perf_counter() - t
    t = time.perf_counter()
    pipeline.cmd_train(cfg)
    timings["train"] = time.perf_counter() - t
    t = time.perf_counter()
    pipeline.cmd_effects(cfg, ["neurons"], jobs=8)
    timings["effects"] = time.perf_counter() - t
    t = time.perf_counter()
    pipeline.cmd_analyze(cfg)
    timings["analyze"] = time.perf_counter() - t
    run = pipeline.Run(cfg)
    return {"base": base, "config": cfg, "run": run, "timings": timings,
            "model": run.model("model"), "random": run.model("random")}


def _prompts(full_run, label):
    return read_prompts(full_run["run"].path("prompts", f"{label}.jsonl"))


def _mixed(full_run, n, seed):
    lex = build_lexicon(0)
    kinds = [StructureKind.from_label(l) for l in pipeline.ExperimentConfig().structures]
    rng = np.random.default_rng(seed)
    return [generate_prompts(kinds[i % len(kinds)], 300, lex, 7)[int(rng.integers(300))] for i in range(n)]


@pytest.mark.criterion("criterion 1: reciprocal identity")
def test_criterion_1_reciprocal_identity(full_run, criterion):
    model = full_run["model"]
    t = time.perf_counter()
    worst = 0.0
    for p in _mixed(full_run, 100, 1):
        sg = p if p.subject_number == "sg" else apply_swap_number(p)
        pl = apply_swap_number(sg)
        prod = fx.y_ratio(model, sg, fx.Intervention.SWAP_NUMBER) * fx.y_ratio(model, pl)
        worst = max(worst, abs(prod - 1.0))
    elapsed = time.perf_counter() - t
    criterion.check(worst <= 1e-12, f"max |product - 1| = {worst:.3g} over 100 prompts (tol 1e-12)")
    criterion.check(elapsed < 10, f"runtime {elapsed:.2f} s (< 10 s)")


@pytest.mark.criterion("criterion 2: TE relabeling invariance")
def test_criterion_2_te_relabeling(full_run, criterion):
    model = full_run["model"]
    worst = 0.0
    for p in _mixed(full_run, 100, 2):
        a = fx.total_effect(model, p)
        b = fx.total_effect(model, apply_swap_number(p))
        worst = max(worst, abs(a - b))
    criterion.check(worst <= 1e-12, f"max |TE(sg start) - TE(pl start)| = {worst:.3g} (tol 1e-12)")


@pytest.mark.criterion("criterion 3: self-patch neutrality")
def test_criterion_3_self_patch(full_run, criterion):
    model = full_run["model"]
    cfg = model.config
    rng = np.random.default_rng(3)
    prompts = _mixed(full_run, 50, 3)
    worst_n = worst_h = 0.0
    for i, p in enumerate(prompts):
        tr = fx.compute_traces(model, p)
        n = NeuronId(int(rng.integers(cfg.n_layers + 1)), int(rng.integers(cfg.d_model)))
        worst_n = max(worst_n, abs(fx.indirect_effect(model, p, n, fx.PatchPolicy.SUBJECT_ONLY, tr.null, tr)))
        if i < 20:
            h = HeadId(int(rng.integers(1, cfg.n_layers + 1)), int(rng.integers(cfg.n_heads)))
            worst_h = max(worst_h, abs(fx.indirect_effect(model, p, h, fx.PatchPolicy.SUBJECT_ONLY, tr.null, tr)))
    criterion.check(worst_n <= 1e-12, f"50 neuron self-patches: max |NIE| = {worst_n:.3g}")
    criterion.check(worst_h <= 1e-12, f"20 head self-patches: max |NIE| = {worst_h:.3g}")


@pytest.mark.criterion("criterion 4: full-patch equivalence")
def test_criterion_4_full_patch(full_run, criterion):
    model = full_run["model"]
    lex = build_lexicon(0)
    worst = 0.0
    for s in Structure:
        kind = StructureKind(s, "sg" if s.has_attractor else None, True if s.is_rc else None)
        for p in generate_prompts(kind, 20, lex, 4):
            tr = fx.compute_traces(model, p)
            te = tr.te
            full = fx.full_layer_patch_effect(model, p, 0, tr)
            worst = max(worst, abs(full - te) / abs(te))
    criterion.check(worst <= 1e-9, f"max relative error {worst:.3g} on 20 prompts x 6 structures (tol 1e-9)")


@pytest.mark.criterion("criterion 5: gradient check")
def test_criterion_5_gradient_check(criterion):
    t = time.perf_counter()
    cfg = ModelConfig(2, 32, 4, 100, 32, init_seed=5)
    model = init_model(cfg)
    rng = np.random.default_rng(5)
    # larger-than-init weights so every block carries a sizeable gradient
    params = {k: v + rng.normal(0, 0.1, v.shape) for k, v in model.params.items()}
    ids, tgt, mask = pad_batch([rng.integers(0, 100, 9), rng.integers(0, 100, 6), rng.integers(0, 100, 8)])
    entries = gradient_check(params, cfg, ids, tgt, mask, h=1e-4, per_block=3, seed=5)
    elapsed = time.perf_counter() - t
    worst = max(entries, key=lambda e: e.rel_error)
    blocks = {e.name for e in entries}
    criterion.note(f"{len(entries)} coordinates in {len(blocks)} blocks")
    criterion.check(worst.rel_error < 1e-4, f"max relative error {worst.rel_error:.3g} ({worst.name}{worst.index})")
    criterion.check(elapsed < 60, f"runtime {elapsed:.1f} s (< 60 s)")


@pytest.mark.criterion("criterion 6: causality")
def test_criterion_6_causality(full_run, criterion):
    model = full_run["model"]
    V, T_max = model.config.vocab_size, model.config.max_seq_len
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(50):
        T = int(rng.integers(2, T_max + 1))
        a = rng.integers(0, V, T)
        t = int(rng.integers(0, T - 1))
        b = a.copy()
        b[t + 1:] = (a[t + 1:] + rng.integers(1, V, T - t - 1)) % V
        la, lb = forward(model, a)[1].logits, forward(model, b)[1].logits
        bad += not np.array_equal(la[: t + 1], lb[: t + 1])
    criterion.check(bad == 0, f"{bad} of 50 inputs changed logits at positions <= t")


@pytest.mark.criterion("criterion 7: random-weights control")
def test_criterion_7_random_control(full_run, criterion):
    model = full_run["random"]
    fraction = 0.05
    te_ok, nie_ok = [], []
    for label in SIX:
        avg = fx.average_total_effect(model, _prompts(full_run, label))
        te_ok.append(abs(avg.mean) < 0.5)
        criterion.note(f"{label}: |mean TE| {abs(avg.mean):.3g} (n={avg.n})")
    for label in SIX:
        prompts = _prompts(full_run, label)[:100]
        table = fx.neuron_effects_table(model, prompts, fx.PatchPolicy.SUBJECT_ONLY)
        eff = fx.mediator_effects(table, fx.PatchPolicy.SUBJECT_ONLY)
        values = dict(an.layer_contour(an.top_k_per_layer(eff, fraction), eff, fraction).entries)
        limit = 1.1 * abs(values[0])
        later = max(values[l] for l in values if l >= 1)
        nie_ok.append(later <= limit)
        criterion.note(f"{label}: top-5% NIE layer 0 {values[0]:.3g}, max layers>=1 {later:.3g} "
                       f"(limit {limit:.3g}){'' if later <= limit else ' EXCEEDED'}")
    criterion.check(all(te_ok), f"|mean TE| < 0.5 on {sum(te_ok)}/{len(SIX)} structures")
    criterion.check(all(nie_ok), f"layers >= 1 within 10% of layer 0 on {sum(nie_ok)}/{len(SIX)} structures")


@pytest.mark.criterion("criterion 8: trained-model behavior")
def test_criterion_8_trained_behavior(full_run, criterion):
    model, random = full_run["model"], full_run["random"]
    run = full_run["run"]
    held = pipeline.read_heldout(run)
    lex = build_lexicon(run.config.lexicon_seed)
    simple = StructureKind(Structure.SIMPLE_AGREEMENT)
    everything = generate_prompts(simple, 320, lex, 0)
    heldout = [q for p in everything if is_heldout(p, held) for q in (p, apply_swap_number(p))]
    good = sum(fx.grammaticality(model, p) > 1 for p in heldout)
    share = good / len(heldout)
    criterion.check(share >= 0.9, f"G > 1 on {good}/{len(heldout)} held-out prompts ({share:.1%}, need >= 90%)")
    prompts = _prompts(full_run, "simple_agreement")
    trained = fx.average_total_effect(model, prompts).mean
    control = fx.average_total_effect(random, prompts).mean
    criterion.check(trained >= 10 * abs(control),
                    f"mean TE trained {trained:.4g} vs random {control:.3g} (ratio {trained / abs(control):.3g}x)")
    minutes = full_run["timings"]["train"] / 60
    criterion.check(minutes <= 30, f"training took {minutes:.1f} min (<= 30)")


@pytest.mark.criterion("criterion 9: hypothesis-matrix oracle")
def test_criterion_9_hypothesis_oracle(criterion):
    lex = build_lexicon(0)
    kinds = [StructureKind.from_label(l) for l in pipeline.ExperimentConfig().structures]
    for subset in (kinds, [k for k in kinds if k.complementizer is not False]):
        labels = [k.label for k in subset]
        m = an.hypothesis_matrix(labels)
        ref = hypothesis_oracle([prompt_features(generate_prompts(k, 1, lex, 0)[0]) for k in subset])
        criterion.check(m.values.tolist() == ref, f"{len(labels)} variants: element-wise exact match")
        criterion.check(np.array_equal(m.values, m.values.T) and bool(np.all(np.diag(m.values) == 100.0)),
                        "symmetric with diagonal 100")


@pytest.mark.criterion("criterion 10: analysis correctness")
def test_criterion_10_analysis_oracles(criterion):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(100):
        layers, width, n_struct = int(rng.integers(2, 6)), int(rng.integers(10, 129)), int(rng.integers(2, 8))
        tables = {f"s{i}": np.round(rng.normal(size=(layers, width)), 2) for i in range(n_struct)}
        effects = {lab: [fx.MediatorEffect(NeuronId(l, n), None, float(t[l, n]), 1)
                         for l in range(layers) for n in range(width)] for lab, t in tables.items()}
        selected = {lab: an.top_k_per_layer(e, 0.05) for lab, e in effects.items()}
        hyp = an.SimilarityMatrix(tuple(tables), rng.uniform(0, 100, (n_struct, n_struct)))
        for l in range(layers):
            sets = [topk_oracle(tables[lab][l], 0.05) for lab in tables]
            mismatches += any(selected[lab][l] != s for lab, s in zip(tables, sets))
            m = an.overlap_matrix(selected, l)
            mismatches += m.values.tolist() != overlap_oracle(sets)
            mismatches += not math.isclose(an.l1_difference(m, hyp), l1_oracle(m.values.tolist(), hyp.values.tolist()),
                                           rel_tol=1e-12)
    criterion.check(mismatches == 0, f"{mismatches} mismatches against brute-force oracles on 100 random tables")
    violations = 0
    for _ in range(200):
        n = int(rng.integers(2, 10))
        labels = tuple(f"s{i}" for i in range(n))
        a, b, c = (an.SimilarityMatrix(labels, rng.uniform(0, 100, (n, n))) for _ in range(3))
        d = an.l1_difference
        violations += not (d(a, b) >= 0 and d(a, a) == 0 and d(a, b) == d(b, a)
                           and d(a, c) <= d(a, b) + d(b, c) + 1e-9)
    criterion.check(violations == 0, f"{violations} metric-property violations on 200 random triples")


@pytest.mark.criterion("criterion 11: full pipeline budget")
def test_criterion_11_pipeline_budget(full_run, criterion, tmp_path):
    tm = full_run["timings"]
    minutes = (tm["generate"] + tm["effects"] + tm["analyze"]) / 60
    criterion.note(f"generate {tm['generate']:.0f} s, effects(neurons, 8 workers) {tm['effects']:.0f} s, "
                   f"analyze {tm['analyze']:.0f} s")
    criterion.check(minutes <= 15, f"pipeline took {minutes:.1f} min (<= 15)")
    # rerun from scratch in a fresh directory with the same trained checkpoint
    rerun = tmp_path / "rerun"
    cfg = parse_config(RUN_CONFIG, rerun)
    pipeline.cmd_generate(cfg)
    first = full_run["run"]
    (rerun / "run" / "model").mkdir(parents=True)
    shutil.copy(first.path("model", "model.sacm"), rerun / "run" / "model" / "model.sacm")
    pipeline.cmd_effects(cfg, ["neurons"], jobs=8)
    pipeline.cmd_analyze(cfg)
    a, b = first.dir, rerun / "run"
    names = sorted(str(p.relative_to(a)) for p in a.rglob("*.csv") if "model" not in p.parts)
    differing = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    criterion.check(not differing, f"{len(names)} CSVs compared, byte-identical except {differing or 'none'}")
