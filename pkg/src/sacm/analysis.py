"""Layer contours, top-k neuron selection, overlap and hypothesis matrices."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .effects import MediatorEffect
from .errors import (IncompleteSweep, IoFailure, LabelMismatch, SetSizeMismatch, UnmatchedPrompts,
                     ValidationError)
from .grammar import ALL_KINDS, Structure, StructureKind
from .model import NeuronId

FEATURE_TABLE_VERSION = 1


# --- selection and contours -------------------------------------------------

def _by_layer(effects: Iterable[MediatorEffect]) -> dict[int, dict[int, float]]:
    layers: dict[int, dict[int, float]] = defaultdict(dict)
    for e in effects:
        if not isinstance(e.mediator, NeuronId):
            raise ValidationError(f"{e.mediator!r} is not a neuron")
        layers[e.mediator.layer][e.mediator.neuron] = e.nie
    return dict(sorted(layers.items()))


def selection_size(fraction: float, width: int) -> int:
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    # guard against 0.07 * 100 = 7.000000000000001
    return max(1, math.ceil(round(fraction * width, 9)))


def top_k_per_layer(effects: Sequence[MediatorEffect], fraction: float = 0.05) -> dict[int, tuple[int, ...]]:
    """The ceil(fraction * width) highest-NIE neurons of each layer.

    Ties go to the lower neuron index; each tuple is in selection order.
    """
    layers = _by_layer(effects)
    if not layers:
        raise IncompleteSweep("no neuron effects given")
    width = max(len(v) for v in layers.values())
    expected_layers = set(range(min(layers), max(layers) + 1))
    if set(layers) != expected_layers:
        raise IncompleteSweep(f"layers {sorted(expected_layers - set(layers))} are missing")
    k = selection_size(fraction, width)
    out = {}
    for layer, values in layers.items():
        if set(values) != set(range(width)):
            raise IncompleteSweep(f"layer {layer} covers {len(values)} of {width} neurons")
        order = sorted(values, key=lambda n: (-values[n], n))
        out[layer] = tuple(order[:k])
    return out


@dataclass(frozen=True)
class LayerContour:
    entries: tuple[tuple[int, float], ...]
    fraction: float

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries])


def layer_contour(selected: Mapping[int, Sequence[int]], effects: Sequence[MediatorEffect],
                  fraction: float) -> LayerContour:
    """Mean NIE of the selected neurons in each layer."""
    layers = _by_layer(effects)
    entries = []
    for layer in sorted(selected):
        if layer not in layers:
            raise IncompleteSweep(f"no effects for layer {layer}")
        vals = [layers[layer][n] for n in selected[layer]]
        entries.append((layer, math.fsum(vals) / len(vals)))
    return LayerContour(tuple(entries), fraction)


# --- similarity matrices ------------------------------------------------------

@dataclass
class SimilarityMatrix:
    labels: tuple[str, ...]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise ValidationError(f"matrix shape {self.values.shape} does not match {n} labels")

    def write_csv(self, path: str | Path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["label", *self.labels])
                for lab, row in zip(self.labels, self.values):
                    w.writerow([lab, *(_fmt(v) for v in row)])
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def read_csv(cls, path: str | Path) -> "SimilarityMatrix":
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(_data_lines(fh)))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        labels = tuple(rows[0][1:])
        return cls(labels, np.array([[float(v) for v in r[1:]] for r in rows[1:]]))


def _data_lines(fh):
    """Skip ``#`` comment lines (provenance stamps)."""
    return (line for line in fh if not line.startswith("#"))


def _fmt(v: float) -> str:
    return repr(float(v))


def overlap_matrix(selected: Mapping[str, Mapping[int, Sequence[int]]], layer: int) -> SimilarityMatrix:
    """Entry (a, b) = 100 * |S_a & S_b| / k for the layer's top-k sets."""
    labels = tuple(selected)
    sets = []
    for lab in labels:
        if layer not in selected[lab]:
            raise IncompleteSweep(f"{lab} has no selection at layer {layer}")
        sets.append(frozenset(selected[lab][layer]))
    sizes = {len(s) for s in sets}
    if len(sizes) != 1:
        raise SetSizeMismatch(f"selection sizes differ across structures: {sorted(sizes)}")
    k = sizes.pop()
    vals = np.array([[100.0 * len(a & b) / k for b in sets] for a in sets])
    return SimilarityMatrix(labels, vals, {"layer": layer, "k": k})


@dataclass(frozen=True)
class FeatureVector:
    separated: int
    distance: int
    has_distractor: int
    has_attractor: int
    attractor_number: str  # "sg", "pl" or "none"
    has_rc: int
    has_pp: int

    def __post_init__(self):
        if (self.attractor_number == "none") != (self.has_attractor == 0):
            raise ValidationError("attractor_number must be 'none' exactly when there is no attractor")

    def categorical(self) -> tuple:
        return (self.separated, self.has_distractor, self.has_attractor, self.attractor_number,
                self.has_rc, self.has_pp)


def _features(kind: StructureKind) -> FeatureVector:
    s = kind.structure
    comp = 1 if kind.complementizer else 0
    # tokens strictly between the subject and the target verb slot
    distance = {
        Structure.SIMPLE_AGREEMENT: 0,
        Structure.WITHIN_OBJ_RC: 0,
        Structure.ACROSS_ONE_DISTRACTOR: 1,
        Structure.ACROSS_TWO_DISTRACTORS: 3,
        Structure.ACROSS_PP: 3,
        Structure.ACROSS_OBJ_RC: 3 + comp,
    }[s]
    return FeatureVector(
        separated=int(distance > 0),
        distance=distance,
        has_distractor=int(s in (Structure.ACROSS_ONE_DISTRACTOR, Structure.ACROSS_TWO_DISTRACTORS)),
        has_attractor=int(s.has_attractor),
        attractor_number=kind.attractor_number or "none",
        has_rc=int(s.is_rc),
        has_pp=int(s is Structure.ACROSS_PP),
    )


FEATURE_TABLE: dict[str, FeatureVector] = {k.label: _features(k) for k in ALL_KINDS}


def hypothesis_matrix(labels: Sequence[str], table: Mapping[str, FeatureVector] = FEATURE_TABLE,
                      distance_scale: float = 1.0) -> SimilarityMatrix:
    """Feature-based similarity between structure variants, scaled to [0, 100].

    Categorical features add 1 per mismatch; the token-distance difference is
    rescaled linearly so the largest difference over all pairs counts 2.
    ``distance_scale`` multiplies raw distances first (the result must not
    depend on it).
    """
    labels = tuple(labels)
    feats = [table[lab] for lab in labels]
    n = len(labels)
    raw = np.array([[abs(a.distance - b.distance) * distance_scale for b in feats] for a in feats], dtype=float)
    max_raw = raw.max() if n else 0.0
    rescale = 2.0 / max_raw if max_raw > 0 else 0.0
    dist = np.empty((n, n))
    for i, a in enumerate(feats):
        for j, b in enumerate(feats):
            mismatches = sum(x != y for x, y in zip(a.categorical(), b.categorical()))
            dist[i, j] = mismatches + (2.0 * raw[i, j] / max_raw if max_raw > 0 else 0.0)
    max_dist = dist.max() if n else 0.0
    sim = max_dist - dist
    max_sim = sim.max() if n else 0.0
    values = 100.0 * sim / max_sim if max_sim > 0 else np.full((n, n), 100.0)
    meta = {"feature_table_version": FEATURE_TABLE_VERSION, "distance_rescale": rescale,
            "max_distance": float(max_dist)}
    return SimilarityMatrix(labels, values, meta)


def l1_difference(a: SimilarityMatrix, b: SimilarityMatrix) -> float:
    """Sum of |a_ij - b_ij| over the strictly lower triangle."""
    if tuple(a.labels) != tuple(b.labels):
        raise LabelMismatch(f"labels differ: {a.labels} vs {b.labels}")
    idx = np.tril_indices(len(a.labels), k=-1)
    return float(np.abs(a.values[idx] - b.values[idx]).sum())


def best_layer(per_layer: Mapping[int, SimilarityMatrix], hypothesis: SimilarityMatrix) -> tuple[int, float]:
    """Layer whose overlap matrix is closest to the hypothesis; ties go to the lower layer."""
    if not per_layer:
        raise ValidationError("need at least one layer")
    norms = sorted((l1_difference(m, hypothesis), layer) for layer, m in per_layer.items())
    norm, layer = norms[0]
    return layer, norm


# --- paired contrast ------------------------------------------------------------

def pair_key(prompt_id: str) -> str:
    """Index part of a prompt id, shared by the same draw across variants."""
    return prompt_id.rsplit("-", 1)[-1]


@dataclass(frozen=True)
class ContrastRow:
    key: str
    a: float
    b: float

    @property
    def delta(self) -> float:
        return self.b - self.a

    @property
    def relative(self) -> float:
        return self.delta / abs(self.a) if self.a != 0 else float("nan")


@dataclass(frozen=True)
class ContrastTable:
    label_a: str
    label_b: str
    te_rows: tuple[ContrastRow, ...]
    contour_rows: tuple[ContrastRow, ...]

    @property
    def mean_te_delta(self) -> float:
        return math.fsum(r.delta for r in self.te_rows) / len(self.te_rows)


def paired_contrast(label_a: str, te_a: Mapping[str, float], label_b: str, te_b: Mapping[str, float],
                    contour_a: LayerContour | None = None, contour_b: LayerContour | None = None) -> ContrastTable:
    """Per-prompt TE deltas (b - a) and per-layer contour deltas between two variants."""
    ka = {pair_key(k): v for k, v in te_a.items()}
    kb = {pair_key(k): v for k, v in te_b.items()}
    if set(ka) != set(kb):
        raise UnmatchedPrompts(f"{len(set(ka) ^ set(kb))} prompts are not matched between {label_a} and {label_b}")
    te_rows = tuple(ContrastRow(k, ka[k], kb[k]) for k in sorted(ka))
    contour_rows = ()
    if contour_a is not None and contour_b is not None:
        ca, cb = dict(contour_a.entries), dict(contour_b.entries)
        if set(ca) != set(cb):
            raise UnmatchedPrompts("contours cover different layers")
        contour_rows = tuple(ContrastRow(str(layer), ca[layer], cb[layer]) for layer in sorted(ca))
    return ContrastTable(label_a, label_b, te_rows, contour_rows)


def write_contour_csv(path: str | Path, contours: Mapping[str, LayerContour]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["structure", "layer", "mean_nie", "fraction"])
            for label, c in contours.items():
                for layer, v in c.entries:
                    w.writerow([label, layer, _fmt(v), _fmt(c.fraction)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_contour_csv(path: str | Path) -> dict[str, LayerContour]:
    acc, frac = defaultdict(list), {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_data_lines(fh)):
            acc[row["structure"]].append((int(row["layer"]), float(row["mean_nie"])))
            frac[row["structure"]] = float(row["fraction"])
    return {k: LayerContour(tuple(v), frac[k]) for k, v in acc.items()}
