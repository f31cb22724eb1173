import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacm import analysis as an
from sacm.effects import MediatorEffect, PatchPolicy
from sacm.errors import IncompleteSweep, LabelMismatch, SetSizeMismatch, UnmatchedPrompts, ValidationError
from sacm.grammar import ALL_KINDS, ANALYSIS_KINDS, generate_prompts
from sacm.model import NeuronId

from oracles import hypothesis_oracle, l1_oracle, overlap_oracle, prompt_features, topk_oracle


def effects_from(table: np.ndarray) -> list[MediatorEffect]:
    return [MediatorEffect(NeuronId(l, n), PatchPolicy.SUBJECT_ONLY, float(table[l, n]), 1)
            for l in range(table.shape[0]) for n in range(table.shape[1])]


def test_selection_size():
    assert an.selection_size(0.05, 128) == 7
    assert an.selection_size(0.07, 100) == 7
    assert an.selection_size(0.001, 10) == 1
    with pytest.raises(ValidationError):
        an.selection_size(0.0, 10)


def test_topk_ties_prefer_lower_index():
    table = np.array([[1.0, 3.0, 3.0, 2.0, 3.0]])
    assert an.top_k_per_layer(effects_from(table), 0.4) == {0: (1, 2)}


def test_incomplete_sweep():
    eff = effects_from(np.ones((3, 4)))
    with pytest.raises(IncompleteSweep):
        an.top_k_per_layer(eff[:-1])
    with pytest.raises(IncompleteSweep):
        an.top_k_per_layer([e for e in eff if e.mediator.layer != 1])


def test_contour_means():
    table = np.arange(12, dtype=float).reshape(2, 6)
    eff = effects_from(table)
    sel = an.top_k_per_layer(eff, 0.5)
    c = an.layer_contour(sel, eff, 0.5)
    assert c.entries == ((0, 4.0), (1, 10.0))


def test_against_oracles_on_random_tables():
    rng = np.random.default_rng(42)
    for trial in range(100):
        layers, width = int(rng.integers(1, 5)), int(rng.integers(5, 60))
        frac = float(rng.choice([0.05, 0.1, 0.2, 0.5]))
        n_struct = int(rng.integers(2, 6))
        tables = {f"s{i}": np.round(rng.normal(size=(layers, width)), int(rng.integers(1, 4)))
                  for i in range(n_struct)}  # rounding forces ties
        selected = {lab: an.top_k_per_layer(effects_from(t), frac) for lab, t in tables.items()}
        for lab, t in tables.items():
            for l in range(layers):
                assert selected[lab][l] == topk_oracle(t[l], frac)
        for l in range(layers):
            m = an.overlap_matrix(selected, l)
            ref = overlap_oracle([selected[lab][l] for lab in tables])
            assert m.values.tolist() == ref
            other = an.SimilarityMatrix(m.labels, rng.uniform(0, 100, m.values.shape))
            assert an.l1_difference(m, other) == pytest.approx(l1_oracle(m.values.tolist(), other.values.tolist()),
                                                               rel=1e-12)


def test_hypothesis_matches_prompt_derived_oracle(lexicon):
    for kinds in (ANALYSIS_KINDS, ALL_KINDS):
        labels = [k.label for k in kinds]
        feats = [prompt_features(generate_prompts(k, 1, lexicon, 0)[0]) for k in kinds]
        m = an.hypothesis_matrix(labels)
        assert m.values.tolist() == hypothesis_oracle(feats)
        assert np.array_equal(m.values, m.values.T)
        assert np.all(np.diag(m.values) == 100.0)
        assert m.values.min() == 0.0


def test_hypothesis_independent_of_distance_units():
    labels = [k.label for k in ANALYSIS_KINDS]
    base = an.hypothesis_matrix(labels)
    np.testing.assert_allclose(an.hypothesis_matrix(labels, distance_scale=7.0).values, base.values, atol=1e-12)


def test_overlap_errors():
    with pytest.raises(SetSizeMismatch):
        an.overlap_matrix({"a": {0: (1, 2)}, "b": {0: (1,)}}, 0)
    with pytest.raises(IncompleteSweep):
        an.overlap_matrix({"a": {0: (1,)}, "b": {1: (1,)}}, 0)
    a = an.SimilarityMatrix(("x", "y"), np.eye(2))
    with pytest.raises(LabelMismatch):
        an.l1_difference(a, an.SimilarityMatrix(("y", "x"), np.eye(2)))


def test_best_layer_tie_goes_low():
    h = an.SimilarityMatrix(("a", "b"), [[100, 50], [50, 100]])
    m = {2: an.SimilarityMatrix(("a", "b"), [[100, 40], [40, 100]]),
         1: an.SimilarityMatrix(("a", "b"), [[100, 60], [60, 100]]),
         3: an.SimilarityMatrix(("a", "b"), [[100, 0], [0, 100]])}
    assert an.best_layer(m, h) == (1, 10.0)


matrices = st.integers(2, 6).flatmap(lambda n: st.tuples(*[
    st.lists(st.lists(st.floats(0, 100, allow_nan=False), min_size=n, max_size=n), min_size=n, max_size=n)
    for _ in range(3)]))


@settings(max_examples=200, deadline=None)
@given(matrices)
def test_l1_metric_properties(triple):
    labels = tuple(f"s{i}" for i in range(len(triple[0])))
    a, b, c = (an.SimilarityMatrix(labels, np.array(m)) for m in triple)
    ab, ba = an.l1_difference(a, b), an.l1_difference(b, a)
    assert ab >= 0 and ab == ba
    assert an.l1_difference(a, a) == 0
    assert an.l1_difference(a, c) <= ab + an.l1_difference(b, c) + 1e-9


def test_csv_roundtrips(tmp_path):
    m = an.SimilarityMatrix(("a", "b"), [[100.0, 1 / 3], [1 / 3, 100.0]])
    m.write_csv(tmp_path / "m.csv")
    assert np.array_equal(an.SimilarityMatrix.read_csv(tmp_path / "m.csv").values, m.values)
    contours = {"a": an.LayerContour(((0, 0.1), (1, 1 / 7)), 0.05)}
    an.write_contour_csv(tmp_path / "c.csv", contours)
    assert an.read_contour_csv(tmp_path / "c.csv") == contours


def test_paired_contrast():
    a = {"x-0000": 1.0, "x-0001": 2.0}
    b = {"y-0000": 1.5, "y-0001": 1.0}
    t = an.paired_contrast("x", a, "y", b, an.LayerContour(((0, 2.0),), .05), an.LayerContour(((0, 1.0),), .05))
    assert [r.delta for r in t.te_rows] == [0.5, -1.0]
    assert t.mean_te_delta == -0.25
    assert t.contour_rows[0].relative == -0.5
    with pytest.raises(UnmatchedPrompts):
        an.paired_contrast("x", a, "y", {"y-0000": 1.0}, None, None)
