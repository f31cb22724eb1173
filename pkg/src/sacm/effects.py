"""Probability ratios, total effects, grammaticality and indirect effects.

All ratios are handled as differences of log-probabilities. For a prompt
``u`` with subject number ``n`` and verb ``v``::

    y(u)          = p(v with the other number | u) / p(v with number n | u)
    TE(u)         = 1 / (y(u) * y(swap(u))) - 1
    G(u)          = 1 / y(u)
    NIE_z(u)      = y_{z <- z(swap(u))}(u) / y(u) - 1

Ratios under an intervention keep the orientation of the original prompt,
so ``y_swap(u) * y(swap(u)) == 1``.
"""
from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .errors import DegenerateProbability, PatchOutOfRange, ValidationError
from .grammar import PL, SG, Prompt, apply_swap_number, with_complementizer
from .model import (ActivationTrace, HeadId, Mediator, ModelSnapshot, NeuronId, PatchSet,
                    forward, forward_patched, propagate, propagate_with_heads)


class Intervention(enum.Enum):
    NULL = "null"
    SWAP_NUMBER = "swap-number"
    ZERO = "zero"


class PatchPolicy(enum.Enum):
    SUBJECT_ONLY = "subject"
    FINAL_TOKEN = "final"
    ALL_POSITIONS = "all"

    def positions(self, prompt: Prompt) -> list[int]:
        if self is PatchPolicy.SUBJECT_ONLY:
            return [prompt.subject_index]
        if self is PatchPolicy.FINAL_TOKEN:
            return [len(prompt.tokens) - 1]
        return list(range(len(prompt.tokens)))


@dataclass(frozen=True)
class EffectRecord:
    prompt_id: str
    verb: str
    intervention: Intervention
    y_null: float
    y_intervened: float
    te: float
    g_sg: float
    g_pl: float


@dataclass(frozen=True)
class MediatorEffect:
    mediator: Mediator
    patch_position_policy: PatchPolicy | None
    nie: float
    n_samples: int


# --- ratio arithmetic -------------------------------------------------------

def y_from_probs(p_incorrect: float, p_correct: float) -> float:
    if not (p_correct > 0 and p_incorrect > 0):
        raise DegenerateProbability(f"verb probabilities must be positive (got {p_incorrect}, {p_correct})")
    return p_incorrect / p_correct


def te_from_ratios(y_intervened: float, y_null: float) -> float:
    return y_intervened / y_null - 1.0


def grammaticality_from_y(y: float) -> float:
    return 1.0 / y


def _ids(model: ModelSnapshot, tokens: Sequence[str]) -> np.ndarray:
    index = {w: i for i, w in enumerate(model.vocab)}
    try:
        return np.array([index[t] for t in tokens], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"token {exc.args[0]!r} is not in the model vocabulary") from None


def verb_ids(model: ModelSnapshot, prompt: Prompt) -> tuple[int, int]:
    """(correct, incorrect) verb ids for the prompt's own subject number."""
    c, i = _ids(model, [prompt.correct_verb, prompt.incorrect_verb])
    return int(c), int(i)


def _log_y(logp: np.ndarray, correct: int, incorrect: int):
    lc, li = logp[..., correct], logp[..., incorrect]
    if not (np.all(np.isfinite(lc)) and np.all(np.isfinite(li))):
        raise DegenerateProbability("a verb log-probability is not finite")
    return li - lc


def log_y(model: ModelSnapshot, prompt: Prompt, intervention: Intervention = Intervention.NULL) -> float:
    """log y for ``prompt``, oriented by the prompt's own subject number."""
    correct, incorrect = verb_ids(model, prompt)
    if intervention is Intervention.NULL:
        tokens = prompt.tokens
    elif intervention is Intervention.SWAP_NUMBER:
        tokens = apply_swap_number(prompt).tokens
    else:
        raise ValidationError("the zero intervention acts on mediators, not prompt text")
    logp, _ = forward(model, _ids(model, tokens))
    return float(_log_y(logp, correct, incorrect))


def y_ratio(model: ModelSnapshot, prompt: Prompt, intervention: Intervention = Intervention.NULL) -> float:
    return math.exp(log_y(model, prompt, intervention))


def total_effect(model: ModelSnapshot, prompt: Prompt) -> float:
    """1 / (y(u) * y(swap(u))) - 1 from the two forward passes."""
    s = log_y(model, prompt) + log_y(model, apply_swap_number(prompt))
    return math.expm1(-s)


def grammaticality(model: ModelSnapshot, prompt: Prompt) -> float:
    return math.exp(-log_y(model, prompt))


def effect_record(model: ModelSnapshot, prompt: Prompt) -> EffectRecord:
    a = log_y(model, prompt)
    swapped = apply_swap_number(prompt)
    b = log_y(model, swapped)
    g = {prompt.subject_number: math.exp(-a), swapped.subject_number: math.exp(-b)}
    return EffectRecord(prompt.prompt_id, prompt.verb.lemma, Intervention.SWAP_NUMBER,
                        math.exp(a), math.exp(-b), math.expm1(-(a + b)), g[SG], g[PL])


@dataclass(frozen=True)
class Average:
    mean: float
    n: int
    n_skipped: int = 0


def average_total_effect(model: ModelSnapshot, prompts: Sequence[Prompt], complementizer: bool | None = None,
                         on_error: str = "abort") -> Average:
    """Mean TE over prompts (each carries its own verb).

    ``on_error="skip"`` drops items whose probabilities degenerate and counts
    them; the default aborts.
    """
    if not prompts:
        raise ValidationError("average_total_effect needs at least one prompt")
    if len({p.kind.structure for p in prompts}) != 1:
        raise ValidationError("prompts must share one structure")
    if on_error not in ("abort", "skip"):
        raise ValidationError(f"unknown error policy {on_error!r}")
    values, skipped = [], 0
    for p in prompts:
        if complementizer is not None:
            p = with_complementizer(p, complementizer)
        try:
            values.append(total_effect(model, p))
        except DegenerateProbability:
            if on_error == "abort":
                raise
            skipped += 1
    if not values:
        raise DegenerateProbability("every item degenerated")
    return Average(math.fsum(values) / len(values), len(values), skipped)


def grammaticality_table(model: ModelSnapshot, prompts: Iterable[Prompt]) -> dict[tuple[str, str], float]:
    """Mean G by (structure label, subject number), over each prompt and its swap."""
    acc = defaultdict(list)
    for p in prompts:
        for q in (p, apply_swap_number(p)):
            acc[(q.kind.label, q.subject_number)].append(grammaticality(model, q))
    return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}


# --- traces -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptTraces:
    """Null and swap-number runs of one prompt."""

    null: ActivationTrace
    swap: ActivationTrace
    log_y_null: float
    log_y_swap: float  # orientation of the original prompt

    @property
    def te(self) -> float:
        return math.expm1(self.log_y_swap - self.log_y_null)


def compute_traces(model: ModelSnapshot, prompt: Prompt) -> PromptTraces:
    correct, incorrect = verb_ids(model, prompt)
    lp0, t0 = forward(model, _ids(model, prompt.tokens))
    lp1, t1 = forward(model, _ids(model, apply_swap_number(prompt).tokens))
    return PromptTraces(t0, t1, float(_log_y(lp0, correct, incorrect)), float(_log_y(lp1, correct, incorrect)))


class TraceCache:
    """Per-variant trace files in the checkpoint container format.

    One file per (model digest, variant label); block names are
    ``<prompt_id>/<null|swap>/<resid|head_ctx|logits>`` and the JSON meta
    carries the prompt index. Files are replaced atomically, so concurrent
    readers see either nothing or a complete file.
    """

    def __init__(self, directory: str | Path | None, model: ModelSnapshot, model_digest: str | None = None):
        self.directory = Path(directory) if directory else None
        self.model = model
        self.digest = model_digest or ckpt.model_digest(model)

    def path(self, label: str) -> Path | None:
        if self.directory is None:
            return None
        return self.directory / f"traces-{self.digest[:16]}-{label}.sacm"

    def get(self, label: str, prompts: Sequence[Prompt]) -> dict[str, PromptTraces]:
        path = self.path(label)
        ids = [p.prompt_id for p in prompts]
        if path is not None and path.exists():
            loaded = self._load(path)
            if loaded is not None and all(i in loaded for i in ids):
                return {i: loaded[i] for i in ids}
        traces = {p.prompt_id: compute_traces(self.model, p) for p in prompts}
        if path is not None:
            self._store(path, traces)
        return traces

    def _store(self, path: Path, traces: dict[str, PromptTraces]) -> None:
        blocks, index = {}, []
        for pid, tr in traces.items():
            index.append({"prompt_id": pid, "log_y_null": tr.log_y_null, "log_y_swap": tr.log_y_swap})
            for run, t in (("null", tr.null), ("swap", tr.swap)):
                blocks[f"{pid}/{run}/resid"] = t.resid
                blocks[f"{pid}/{run}/head_ctx"] = t.head_ctx
                blocks[f"{pid}/{run}/logits"] = t.logits
        meta = {"model_digest": self.digest, "index": index}
        ckpt.atomic_write(path, ckpt.encode(ckpt.KIND_TRACES, self.model.config, blocks, meta))

    def _load(self, path: Path) -> dict[str, PromptTraces] | None:
        try:
            _, config, meta, blocks = ckpt.decode(ckpt.read_bytes(path), ckpt.KIND_TRACES)
        except ckpt.CorruptCheckpoint:
            return None
        if config != self.model.config or meta.get("model_digest") != self.digest:
            return None
        out = {}
        for entry in meta["index"]:
            pid = entry["prompt_id"]
            runs = [ActivationTrace(blocks[f"{pid}/{r}/resid"], blocks[f"{pid}/{r}/head_ctx"],
                                    blocks[f"{pid}/{r}/logits"]) for r in ("null", "swap")]
            out[pid] = PromptTraces(*runs, entry["log_y_null"], entry["log_y_swap"])
        return out


# --- single-mediator effects (reference path) --------------------------------

def _check_uniform(prompts: Sequence[Prompt]) -> None:
    if not prompts:
        raise ValidationError("need at least one prompt")
    if len({p.kind for p in prompts}) != 1:
        raise ValidationError("prompts must share one structure variant")


def patched_log_y(model: ModelSnapshot, prompt: Prompt, patches: PatchSet) -> float:
    correct, incorrect = verb_ids(model, prompt)
    logp = forward_patched(model, _ids(model, prompt.tokens), patches)
    return float(_log_y(logp, correct, incorrect))


def _mediator_values(trace: ActivationTrace, mediator: Mediator, positions: Sequence[int]) -> PatchSet:
    ps = PatchSet()
    for pos in positions:
        if isinstance(mediator, NeuronId):
            ps.add(mediator, pos, trace.neuron(mediator, pos))
        else:
            ps.add(mediator, pos, trace.head(mediator, pos).copy())
    return ps


def indirect_effect(model: ModelSnapshot, prompt: Prompt, mediator: Mediator, policy: PatchPolicy,
                    source: ActivationTrace | None = None, traces: PromptTraces | None = None) -> float:
    """y with ``mediator`` set from ``source`` (default: the swap run), over y_null, minus 1."""
    traces = traces or compute_traces(model, prompt)
    source = traces.swap if source is None else source
    patches = _mediator_values(source, mediator, policy.positions(prompt))
    return math.expm1(patched_log_y(model, prompt, patches) - traces.log_y_null)


def _mean_effect(model, prompts, mediator, policy, source: str = "swap") -> MediatorEffect:
    _check_uniform(prompts)
    vals = []
    for p in prompts:
        tr = compute_traces(model, p)
        vals.append(indirect_effect(model, p, mediator, policy, getattr(tr, source), tr))
    return MediatorEffect(mediator, policy, math.fsum(vals) / len(vals), len(vals))


def neuron_nie(model: ModelSnapshot, prompts: Sequence[Prompt], neuron: NeuronId,
               policy: PatchPolicy = PatchPolicy.SUBJECT_ONLY) -> MediatorEffect:
    if not isinstance(neuron, NeuronId):
        raise PatchOutOfRange(f"{neuron!r} is not a neuron")
    return _mean_effect(model, prompts, neuron, policy)


def head_nie_swap(model: ModelSnapshot, prompts: Sequence[Prompt], head: HeadId,
                  policy: PatchPolicy = PatchPolicy.SUBJECT_ONLY) -> MediatorEffect:
    if not isinstance(head, HeadId):
        raise PatchOutOfRange(f"{head!r} is not a head")
    return _mean_effect(model, prompts, head, policy)


def head_cie_zero(model: ModelSnapshot, prompts: Sequence[Prompt], head: HeadId) -> MediatorEffect:
    """Controlled effect of forcing one head's context vector to zero at every position."""
    _check_uniform(prompts)
    cfg = model.config
    vals = []
    for p in prompts:
        ps = PatchSet()
        for pos in range(len(p.tokens)):
            ps.add(head, pos, np.zeros(cfg.d_head))
        vals.append(math.expm1(patched_log_y(model, p, ps) - log_y(model, p)))
    return MediatorEffect(head, None, math.fsum(vals) / len(vals), len(vals))


def full_layer_patch_effect(model: ModelSnapshot, prompt: Prompt, layer: int = 0,
                            traces: PromptTraces | None = None) -> float:
    """Indirect effect of patching every neuron of ``layer`` at every position at once."""
    traces = traces or compute_traces(model, prompt)
    ps = PatchSet()
    for pos in range(len(prompt.tokens)):
        for n in range(model.config.d_model):
            ps.add(NeuronId(layer, n), pos, float(traces.swap.resid[layer, pos, n]))
    return math.expm1(patched_log_y(model, prompt, ps) - traces.log_y_null)


# --- batched sweeps -------------------------------------------------------------

def neuron_sweep_prompt(model: ModelSnapshot, prompt: Prompt, traces: PromptTraces,
                        policy: PatchPolicy, layers: Sequence[int] | None = None,
                        source: str = "swap") -> np.ndarray:
    """Per-neuron indirect effects for one prompt: array (len(layers), d_model).

    Every neuron of a layer is patched in its own batch row, then the
    remaining blocks run once for the whole batch.
    """
    cfg = model.config
    d = cfg.d_model
    layers = range(cfg.n_layers + 1) if layers is None else layers
    correct, incorrect = verb_ids(model, prompt)
    pos = np.array(policy.positions(prompt))
    src = getattr(traces, source)
    rows = np.arange(d)[:, None]
    out = np.empty((len(layers), d))
    start = int(pos.min())  # earlier positions are untouched by the patch
    prefix = traces.null.resid[:, :start]
    for li, layer in enumerate(layers):
        x = np.repeat(traces.null.resid[layer, start:][None], d, axis=0)
        x[rows, pos[None, :] - start, rows] = src.resid[layer][pos].T
        logp = propagate(model, x, layer, prefix)
        out[li] = np.expm1(_log_y(logp, correct, incorrect) - traces.log_y_null)
    return out


def head_sweep_prompt(model: ModelSnapshot, prompt: Prompt, traces: PromptTraces,
                      policy: PatchPolicy | None, zero: bool = False, source: str = "swap") -> np.ndarray:
    """Per-head effects for one prompt: array (n_layers, n_heads).

    With ``zero`` every head is set to the zero vector at all positions
    (policy ignored); otherwise heads take their counterfactual contexts at
    the policy positions.
    """
    cfg = model.config
    H = cfg.n_heads
    correct, incorrect = verb_ids(model, prompt)
    hs = np.arange(H)
    pos = np.arange(len(prompt.tokens)) if zero else np.array(policy.positions(prompt))
    src = getattr(traces, source)
    out = np.empty((cfg.n_layers, H))
    for layer in range(1, cfg.n_layers + 1):
        values = None if zero else src.head_ctx[layer - 1]

        def hook(z, values=values):
            if values is None:
                z[hs[:, None], hs[:, None], pos[None, :]] = 0.0
            else:
                z[hs[:, None], hs[:, None], pos[None, :]] = values[:, pos]

        x_in = np.repeat(traces.null.resid[layer - 1][None], H, axis=0)
        logp = propagate_with_heads(model, x_in, layer, hook)
        out[layer - 1] = np.expm1(_log_y(logp, correct, incorrect) - traces.log_y_null)
    return out


def neuron_effects_table(model: ModelSnapshot, prompts: Sequence[Prompt], policy: PatchPolicy,
                         cache: TraceCache | None = None, label: str | None = None) -> np.ndarray:
    """Per-prompt neuron effects, shape (n_prompts, n_layers + 1, d_model)."""
    _check_uniform(prompts)
    traces = _traces_for(model, prompts, cache, label)
    return np.stack([neuron_sweep_prompt(model, p, traces[p.prompt_id], policy) for p in prompts])


def head_effects_table(model: ModelSnapshot, prompts: Sequence[Prompt], policy: PatchPolicy | None,
                       zero: bool = False, cache: TraceCache | None = None, label: str | None = None) -> np.ndarray:
    """Per-prompt head effects, shape (n_prompts, n_layers, n_heads)."""
    _check_uniform(prompts)
    traces = _traces_for(model, prompts, cache, label)
    return np.stack([head_sweep_prompt(model, p, traces[p.prompt_id], policy, zero) for p in prompts])


def _traces_for(model, prompts, cache, label):
    if cache is not None:
        return cache.get(label or prompts[0].kind.label, prompts)
    return {p.prompt_id: compute_traces(model, p) for p in prompts}


def mediator_effects(table: np.ndarray, policy: PatchPolicy | None, heads: bool = False) -> list[MediatorEffect]:
    """Average a per-prompt table over prompts (fixed summation order)."""
    n = table.shape[0]
    means = table.sum(axis=0) / n
    out = []
    for a in range(means.shape[0]):
        for b in range(means.shape[1]):
            med = HeadId(a + 1, b) if heads else NeuronId(a, b)
            out.append(MediatorEffect(med, policy, float(means[a, b]), n))
    return out


# --- verb probability profile ----------------------------------------------------

@dataclass(frozen=True)
class ProfileRow:
    structure: str
    prompt_id: str
    which: str  # "correct" or "incorrect"
    probability: float


def verb_probability_profile(model: ModelSnapshot, prompts_by_structure: dict[str, Sequence[Prompt]]) -> list[ProfileRow]:
    """p(correct verb) and p(incorrect verb) per prompt, for log-scale box plots."""
    rows = []
    for label, prompts in prompts_by_structure.items():
        for p in prompts:
            correct, incorrect = verb_ids(model, p)
            logp, _ = forward(model, _ids(model, p.tokens))
            for which, idx in (("correct", correct), ("incorrect", incorrect)):
                rows.append(ProfileRow(label, p.prompt_id, which, float(math.exp(logp[idx]))))
    return rows


def profile_medians(rows: Iterable[ProfileRow]) -> dict[tuple[str, str], float]:
    acc = defaultdict(list)
    for r in rows:
        acc[(r.structure, r.which)].append(r.probability)
    return {k: float(np.median(v)) for k, v in acc.items()}
