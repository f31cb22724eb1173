"""A small pre-norm GPT-style language model in float64 numpy.

The forward pass is instrumented: it records the residual stream at every
block boundary (layer 0 is the embedding output, layer l the output of block
l) and every head's context vector before the output projection, and it can
overwrite either of them on the fly.

Parameter names, in the order used by checkpoints::

    tok_emb (V, d), pos_emb (P, d)
    blocks.{l}.ln1.g, blocks.{l}.ln1.b                     (d,)
    blocks.{l}.attn.W_Q, W_K, W_V, W_O                     (d, d)
    blocks.{l}.attn.b_Q, b_K, b_V, b_O                     (d,)
    blocks.{l}.ln2.g, blocks.{l}.ln2.b                     (d,)
    blocks.{l}.mlp.W_in (d, 4d), mlp.b_in (4d,), mlp.W_out (4d, d), mlp.b_out (d,)
    ln_f.g, ln_f.b (d,), W_U (d, V)

for l = 1..n_layers.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .errors import InvalidConfig, PatchOutOfRange, SequenceTooLong, TokenOutOfRange

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    vocab_size: int = 100
    max_seq_len: int = 32
    init_seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "vocab_size", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_mlp(self) -> int:
        return 4 * self.d_model


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, V = cfg.d_model, cfg.vocab_size
    shapes = {"tok_emb": (V, d), "pos_emb": (cfg.max_seq_len, d)}
    for l in range(1, cfg.n_layers + 1):
        b = f"blocks.{l}."
        shapes[b + "ln1.g"] = shapes[b + "ln1.b"] = (d,)
        for m in "QKVO":
            shapes[b + f"attn.W_{m}"] = (d, d)
            shapes[b + f"attn.b_{m}"] = (d,)
        shapes[b + "ln2.g"] = shapes[b + "ln2.b"] = (d,)
        shapes[b + "mlp.W_in"] = (d, cfg.d_mlp)
        shapes[b + "mlp.b_in"] = (cfg.d_mlp,)
        shapes[b + "mlp.W_out"] = (cfg.d_mlp, d)
        shapes[b + "mlp.b_out"] = (d,)
    shapes["ln_f.g"] = shapes["ln_f.b"] = (d,)
    shapes["W_U"] = (d, V)
    return shapes


@dataclass(frozen=True)
class ModelSnapshot:
    """Configuration plus read-only float64 parameters (and the tokenizer's words)."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: tuple[str, ...] = ()

    def __post_init__(self):
        shapes = parameter_shapes(self.config)
        if list(self.params) != list(shapes):
            raise InvalidConfig("parameter names/order do not match the config")
        for name, shape in shapes.items():
            arr = self.params[name]
            if arr.shape != shape or arr.dtype != np.float64:
                raise InvalidConfig(f"{name}: expected float64{shape}, got {arr.dtype}{arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidConfig(f"{name} has non-finite entries")
            arr.flags.writeable = False
        if self.vocab and len(self.vocab) != self.config.vocab_size:
            raise InvalidConfig("vocabulary length differs from vocab_size")

    def n_parameters(self) -> int:
        return sum(a.size for a in self.params.values())


def count_parameters(cfg: ModelConfig) -> int:
    """Closed form: embeddings + per-block weights + final norm + unembedding."""
    d, V, P = cfg.d_model, cfg.vocab_size, cfg.max_seq_len
    per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d)
    return V * d + P * d + cfg.n_layers * per_block + 2 * d + d * V


def init_model(config: ModelConfig, vocab: Sequence[str] = ()) -> ModelSnapshot:
    """Weights and embeddings ~ N(0, 0.02^2), biases 0, norm gains 1."""
    rng = np.random.default_rng(config.init_seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf == "b" or leaf.startswith("b_"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, INIT_STD, size=shape)
    return ModelSnapshot(config, params, tuple(vocab))


# --- mediators and patches -------------------------------------------------

class NeuronId(NamedTuple):
    layer: int   # 0 = embedding output, l = output of block l
    neuron: int


class HeadId(NamedTuple):
    layer: int   # 1..n_layers
    head: int


Mediator = Union[NeuronId, HeadId]


@dataclass
class PatchSet:
    """Overrides ``(mediator, position) -> value`` applied during a forward pass."""

    entries: dict[tuple[Mediator, int], object] = field(default_factory=dict)

    def add(self, mediator: Mediator, position: int, value) -> "PatchSet":
        key = (mediator, int(position))
        if key in self.entries:
            raise PatchOutOfRange(f"duplicate patch for {mediator} at position {position}")
        self.entries[key] = value
        return self

    def __len__(self):
        return len(self.entries)

    def validate(self, cfg: ModelConfig, seq_len: int) -> None:
        for (med, pos), value in self.entries.items():
            if not 0 <= pos < seq_len:
                raise PatchOutOfRange(f"position {pos} outside prompt of length {seq_len}")
            if isinstance(med, HeadId):
                if not (1 <= med.layer <= cfg.n_layers and 0 <= med.head < cfg.n_heads):
                    raise PatchOutOfRange(f"no such head {med}")
                if np.shape(value) != (cfg.d_head,):
                    raise PatchOutOfRange(f"head patch needs a length-{cfg.d_head} vector")
            elif isinstance(med, NeuronId):
                if not (0 <= med.layer <= cfg.n_layers and 0 <= med.neuron < cfg.d_model):
                    raise PatchOutOfRange(f"no such neuron {med}")
                if np.ndim(value) != 0:
                    raise PatchOutOfRange("neuron patch needs a scalar")
            else:
                raise PatchOutOfRange(f"unknown mediator {med!r}")


@dataclass(frozen=True)
class ActivationTrace:
    resid: np.ndarray     # (n_layers + 1, T, d_model)
    head_ctx: np.ndarray  # (n_layers, n_heads, T, d_head); index 0 is block 1
    logits: np.ndarray    # (T, vocab)

    def neuron(self, nid: NeuronId, position: int) -> float:
        return float(self.resid[nid.layer, position, nid.neuron])

    def head(self, hid: HeadId, position: int) -> np.ndarray:
        return self.head_ctx[hid.layer - 1, hid.head, position]


# --- numerical pieces ------------------------------------------------------

def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, xhat, rstd


def _gelu(x):
    # polynomial written out; ``x ** 3`` takes numpy's slow generic power path
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), t


def _causal_mask(T: int) -> np.ndarray:
    return np.triu(np.full((T, T), -np.inf), k=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))


ZHook = Callable[[np.ndarray], None]


def _block(p, cfg: ModelConfig, l: int, x: np.ndarray, z_hook: ZHook | None = None,
           attention: bool = True, last_only: bool = False, prefix: np.ndarray | None = None):
    """One pre-norm block on ``x`` (B, T, d); returns (output, head contexts).

    With ``last_only`` only the final position's output is computed (B, 1, d).
    ``prefix`` (P, d) holds block inputs for positions before ``x`` that are
    shared by every batch row; they contribute keys and values only.
    """
    pre = f"blocks.{l}."
    B, T, d = x.shape
    H, dh = cfg.n_heads, cfg.d_head
    Tq = 1 if last_only else T
    a, _, _ = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
    if attention:
        q = (a[:, T - Tq:] @ p[pre + "attn.W_Q"] + p[pre + "attn.b_Q"]).reshape(B, Tq, H, dh).transpose(0, 2, 1, 3)
        k = (a @ p[pre + "attn.W_K"] + p[pre + "attn.b_K"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = (a @ p[pre + "attn.W_V"] + p[pre + "attn.b_V"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        P = 0
        if prefix is not None and len(prefix):
            P = len(prefix)
            ap, _, _ = _layer_norm(prefix, p[pre + "ln1.g"], p[pre + "ln1.b"])
            kp = (ap @ p[pre + "attn.W_K"] + p[pre + "attn.b_K"]).reshape(P, H, dh).transpose(1, 0, 2)
            vp = (ap @ p[pre + "attn.W_V"] + p[pre + "attn.b_V"]).reshape(P, H, dh).transpose(1, 0, 2)
            k = np.concatenate([np.broadcast_to(kp, (B, H, P, dh)), k], axis=2)
            v = np.concatenate([np.broadcast_to(vp, (B, H, P, dh)), v], axis=2)
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        if not last_only:
            scores += np.triu(np.full((T, P + T), -np.inf), k=P + 1)
        scores -= scores.max(-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(-1, keepdims=True)
        z = w @ v
    else:
        z = np.zeros((B, H, Tq, dh))
    if z_hook is not None:
        z_hook(z)
    attn_out = z.transpose(0, 2, 1, 3).reshape(B, Tq, d) @ p[pre + "attn.W_O"] + p[pre + "attn.b_O"]
    h = x[:, T - Tq:] + attn_out
    a2, _, _ = _layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
    act, _ = _gelu(a2 @ p[pre + "mlp.W_in"] + p[pre + "mlp.b_in"])
    return h + act @ p[pre + "mlp.W_out"] + p[pre + "mlp.b_out"], z


def _unembed(p, x):
    a, _, _ = _layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    return a @ p["W_U"]


def check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise TokenOutOfRange("token sequence must be a non-empty 1-d sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise TokenOutOfRange(f"token ids must lie in [0, {cfg.vocab_size})")
    if ids.size > cfg.max_seq_len:
        raise SequenceTooLong(f"{ids.size} tokens exceed max_seq_len={cfg.max_seq_len}")
    return ids


def _run(model: ModelSnapshot, ids: np.ndarray, patches: PatchSet | None, attention: bool = True):
    cfg, p = model.config, model.params
    T = ids.size
    neuron_patches = defaultdict(list)
    head_patches = defaultdict(list)
    if patches:
        patches.validate(cfg, T)
        for (med, pos), value in patches.entries.items():
            if isinstance(med, NeuronId):
                neuron_patches[med.layer].append((pos, med.neuron, float(value)))
            else:
                head_patches[med.layer].append((med.head, pos, np.asarray(value, dtype=np.float64)))

    resid = np.empty((cfg.n_layers + 1, T, cfg.d_model))
    ctx = np.empty((cfg.n_layers, cfg.n_heads, T, cfg.d_head))

    def patch_resid(layer, x):
        for pos, n, val in neuron_patches.get(layer, ()):
            x[0, pos, n] = val

    x = (p["tok_emb"][ids] + p["pos_emb"][:T])[None]
    patch_resid(0, x)
    resid[0] = x[0]
    for l in range(1, cfg.n_layers + 1):
        hook = None
        if l in head_patches:
            def hook(z, _entries=head_patches[l]):
                for h, pos, vec in _entries:
                    z[0, h, pos] = vec
        x, z = _block(p, cfg, l, x, hook, attention)
        patch_resid(l, x)
        resid[l] = x[0]
        ctx[l - 1] = z[0]
    logits = _unembed(p, x)[0]
    return logits, ActivationTrace(resid, ctx, logits)


def forward(model: ModelSnapshot, tokens) -> tuple[np.ndarray, ActivationTrace]:
    """Final-position next-token log-probabilities and the full activation trace."""
    ids = check_tokens(model.config, tokens)
    logits, trace = _run(model, ids, None)
    return log_softmax(logits[-1]), trace


def forward_patched(model: ModelSnapshot, tokens, patches: PatchSet) -> np.ndarray:
    """Like :func:`forward`, with mediator values overwritten as they are produced.

    A neuron patch at layer l edits the residual stream before block l+1 (or
    the unembedding when l = n_layers) reads it; a head patch replaces that
    head's context vector before the output projection.
    """
    ids = check_tokens(model.config, tokens)
    logits, _ = _run(model, ids, patches)
    return log_softmax(logits[-1])


def forward_without_attention(model: ModelSnapshot, tokens) -> np.ndarray:
    """Diagnostic run where every head outputs the zero vector."""
    ids = check_tokens(model.config, tokens)
    logits, _ = _run(model, ids, None, attention=False)
    return log_softmax(logits[-1])


def continuation_logprob(model: ModelSnapshot, tokens, continuation: int) -> float:
    if not 0 <= int(continuation) < model.config.vocab_size:
        raise TokenOutOfRange(f"continuation id {continuation} outside vocabulary")
    logp, _ = forward(model, tokens)
    return float(logp[int(continuation)])


# --- batched resumption (used by the mediator sweeps) -----------------------

def propagate(model: ModelSnapshot, x: np.ndarray, from_layer: int,
              prefix: np.ndarray | None = None) -> np.ndarray:
    """Run blocks ``from_layer+1 .. n_layers`` on residual states ``x`` (B, T, d).

    ``prefix`` is an unpatched trace's residual stream (n_layers+1, P, d) for
    the P positions preceding ``x``; those positions are then computed once
    instead of once per batch row. Returns final-position log-probabilities
    (B, V).
    """
    cfg, p = model.config, model.params
    for l in range(from_layer + 1, cfg.n_layers + 1):
        pre = None if prefix is None else prefix[l - 1]
        x, _ = _block(p, cfg, l, x, last_only=l == cfg.n_layers, prefix=pre)
    return log_softmax(_unembed(p, x[:, -1]))


def propagate_with_heads(model: ModelSnapshot, x_in: np.ndarray, layer: int, z_hook: ZHook) -> np.ndarray:
    """Run block ``layer`` on ``x_in`` with ``z_hook`` editing head contexts, then the rest."""
    x, _ = _block(model.params, model.config, layer, x_in, z_hook)
    return propagate(model, x, layer)


# --- training objective ----------------------------------------------------

def _ln_backward(dy, xhat, rstd, g):
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def loss_and_grad(params: dict[str, np.ndarray], cfg: ModelConfig, ids: np.ndarray,
                  targets: np.ndarray, mask: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean next-token cross-entropy over ``mask`` and its exact gradient.

    ``ids``, ``targets`` and ``mask`` are (B, T); positions where mask is 0
    contribute nothing.
    """
    p = params
    B, T = ids.shape
    H, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
    scale = 1.0 / math.sqrt(dh)
    causal = _causal_mask(T)
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    x = p["tok_emb"][ids] + p["pos_emb"][:T]
    caches = []
    for l in range(1, cfg.n_layers + 1):
        pre = f"blocks.{l}."
        a, xhat1, rstd1 = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        heads = []
        for m in "QKV":
            y = a @ p[pre + f"attn.W_{m}"] + p[pre + f"attn.b_{m}"]
            heads.append(y.reshape(B, T, H, dh).transpose(0, 2, 1, 3))
        q, k, v = heads
        s = q @ k.transpose(0, 1, 3, 2) * scale + causal
        s -= s.max(-1, keepdims=True)
        w = np.exp(s)
        w /= w.sum(-1, keepdims=True)
        z = w @ v
        zc = z.transpose(0, 2, 1, 3).reshape(B, T, d)
        h = x + zc @ p[pre + "attn.W_O"] + p[pre + "attn.b_O"]
        a2, xhat2, rstd2 = _layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        u = a2 @ p[pre + "mlp.W_in"] + p[pre + "mlp.b_in"]
        act, t = _gelu(u)
        caches.append((a, xhat1, rstd1, q, k, v, w, zc, a2, xhat2, rstd2, u, act, t))
        x = h + act @ p[pre + "mlp.W_out"] + p[pre + "mlp.b_out"]

    af, xhatf, rstdf = _layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    logits = af @ p["W_U"]
    logp = log_softmax(logits)
    n = max(float(mask.sum()), 1.0)
    nll = -np.take_along_axis(logp, targets[..., None], -1)[..., 0]
    loss = float((nll * mask).sum() / n)

    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, targets[..., None], np.take_along_axis(dlogits, targets[..., None], -1) - 1.0, -1)
    dlogits *= (mask / n)[..., None]
    grads["W_U"] = af.reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
    dx, grads["ln_f.g"], grads["ln_f.b"] = _ln_backward(dlogits @ p["W_U"].T, xhatf, rstdf, p["ln_f.g"])

    for l in range(cfg.n_layers, 0, -1):
        pre = f"blocks.{l}."
        a, xhat1, rstd1, q, k, v, w, zc, a2, xhat2, rstd2, u, act, t = caches[l - 1]
        # MLP branch
        grads[pre + "mlp.b_out"] = dx.sum((0, 1))
        grads[pre + "mlp.W_out"] = act.reshape(-1, cfg.d_mlp).T @ dx.reshape(-1, d)
        dact = dx @ p[pre + "mlp.W_out"].T
        du = dact * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u))
        grads[pre + "mlp.b_in"] = du.sum((0, 1))
        grads[pre + "mlp.W_in"] = a2.reshape(-1, d).T @ du.reshape(-1, cfg.d_mlp)
        dh_, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _ln_backward(
            du @ p[pre + "mlp.W_in"].T, xhat2, rstd2, p[pre + "ln2.g"])
        dh_ += dx
        # attention branch
        grads[pre + "attn.b_O"] = dh_.sum((0, 1))
        grads[pre + "attn.W_O"] = zc.reshape(-1, d).T @ dh_.reshape(-1, d)
        dz = (dh_ @ p[pre + "attn.W_O"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dw = dz @ v.transpose(0, 1, 3, 2)
        dv = w.transpose(0, 1, 3, 2) @ dz
        ds = w * (dw - (dw * w).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        da = np.zeros_like(a)
        for m, dm in zip("QKV", (dq, dk, dv)):
            dm = dm.transpose(0, 2, 1, 3).reshape(B, T, d)
            grads[pre + f"attn.b_{m}"] = dm.sum((0, 1))
            grads[pre + f"attn.W_{m}"] = a.reshape(-1, d).T @ dm.reshape(-1, d)
            da += dm @ p[pre + f"attn.W_{m}"].T
        dx1, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _ln_backward(da, xhat1, rstd1, p[pre + "ln1.g"])
        dx = dh_ + dx1

    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][:T] = dx.sum(0)
    return loss, grads


def loss_only(params, cfg, ids, targets, mask) -> float:
    """Cross-entropy via the inference path; independent of :func:`loss_and_grad`."""
    p = params
    x = p["tok_emb"][ids] + p["pos_emb"][: ids.shape[1]]
    for l in range(1, cfg.n_layers + 1):
        x, _ = _block(p, cfg, l, x)
    logp = log_softmax(_unembed(p, x))
    nll = -np.take_along_axis(logp, targets[..., None], -1)[..., 0]
    return float((nll * mask).sum() / max(float(mask.sum()), 1.0))


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        # coordinates whose true gradient is exactly zero (the key bias, by
        # softmax shift invariance) only ever show finite-difference noise
        denom = max(abs(self.analytic), abs(self.numeric), GRADCHECK_FLOOR)
        return abs(self.analytic - self.numeric) / denom


GRADCHECK_FLOOR = 1e-6


def gradient_check(params: dict[str, np.ndarray], cfg: ModelConfig, ids, targets, mask,
                   h: float = 1e-4, per_block: int = 3, seed: int = 0) -> list[GradCheckEntry]:
    """Compare :func:`loss_and_grad` with central differences of :func:`loss_only`."""
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grad(params, cfg, ids, targets, mask)
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = []
    for name, arr in work.items():
        for flat in rng.choice(arr.size, size=min(per_block, arr.size), replace=False):
            idx = np.unravel_index(int(flat), arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = loss_only(work, cfg, ids, targets, mask)
            arr[idx] = old - h
            down = loss_only(work, cfg, ids, targets, mask)
            arr[idx] = old
            out.append(GradCheckEntry(name, tuple(int(i) for i in idx), float(grads[name][idx]), (up - down) / (2 * h)))
    return out
