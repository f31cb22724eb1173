import numpy as np
import pytest

from sacm.errors import InvalidConfig, PatchOutOfRange, SequenceTooLong, TokenOutOfRange
from sacm.model import (HeadId, ModelConfig, NeuronId, PatchSet, count_parameters, forward, forward_patched,
                        forward_without_attention, gradient_check, init_model, loss_and_grad, loss_only)
from sacm.training import pad_batch


def test_parameter_count_closed_form():
    for cfg in (ModelConfig(), ModelConfig(2, 32, 4, 50, 16), ModelConfig(1, 8, 2, 7, 5)):
        assert init_model(cfg).n_parameters() == count_parameters(cfg)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(InvalidConfig):
        ModelConfig(n_layers=0)


def test_params_are_read_only(small_model):
    with pytest.raises(ValueError):
        small_model.params["W_U"][0, 0] = 1.0


def test_forward_normalized_and_trace_shapes(small_model):
    cfg = small_model.config
    logp, trace = forward(small_model, [1, 5, 9, 2])
    assert abs(np.exp(logp).sum() - 1.0) < 1e-12
    assert trace.resid.shape == (cfg.n_layers + 1, 4, cfg.d_model)
    assert trace.head_ctx.shape == (cfg.n_layers, cfg.n_heads, 4, cfg.d_head)


def test_token_and_length_errors(small_model):
    with pytest.raises(TokenOutOfRange):
        forward(small_model, [0, small_model.config.vocab_size])
    with pytest.raises(TokenOutOfRange):
        forward(small_model, [])
    with pytest.raises(SequenceTooLong):
        forward(small_model, [1] * (small_model.config.max_seq_len + 1))


def test_causality_bitwise(small_model):
    rng = np.random.default_rng(0)
    V = small_model.config.vocab_size
    for _ in range(20):
        T = int(rng.integers(2, 12))
        a = rng.integers(0, V, T)
        t = int(rng.integers(0, T - 1))
        b = a.copy()
        b[t + 1:] = rng.integers(0, V, T - t - 1)
        _, ta = forward(small_model, a)
        _, tb = forward(small_model, b)
        assert np.array_equal(ta.logits[: t + 1], tb.logits[: t + 1])
        assert np.array_equal(ta.resid[:, : t + 1], tb.resid[:, : t + 1])


def test_identity_patch_is_exact(small_model):
    toks = [3, 7, 11, 2, 5]
    logp, trace = forward(small_model, toks)
    ps = PatchSet()
    ps.add(NeuronId(1, 4), 2, trace.resid[1, 2, 4]).add(HeadId(2, 1), 3, trace.head_ctx[1, 1, 3])
    assert np.array_equal(forward_patched(small_model, toks, ps), logp)


def test_patch_validation(small_model):
    cfg = small_model.config
    bad = [PatchSet().add(NeuronId(cfg.n_layers + 1, 0), 0, 0.0),
           PatchSet().add(NeuronId(0, cfg.d_model), 0, 0.0),
           PatchSet().add(HeadId(0, 0), 0, np.zeros(cfg.d_head)),
           PatchSet().add(HeadId(1, cfg.n_heads), 0, np.zeros(cfg.d_head)),
           PatchSet().add(HeadId(1, 0), 0, np.zeros(cfg.d_head + 1)),
           PatchSet().add(NeuronId(0, 0), 9, 0.0)]
    for ps in bad:
        with pytest.raises(PatchOutOfRange):
            forward_patched(small_model, [1, 2, 3], ps)
    with pytest.raises(PatchOutOfRange):
        PatchSet().add(NeuronId(0, 0), 0, 0.0).add(NeuronId(0, 0), 0, 1.0)


def test_zeroing_all_heads_matches_attention_free_run(small_model):
    cfg = small_model.config
    toks = [1, 4, 9, 16, 25]
    ps = PatchSet()
    for l in range(1, cfg.n_layers + 1):
        for h in range(cfg.n_heads):
            for t in range(len(toks)):
                ps.add(HeadId(l, h), t, np.zeros(cfg.d_head))
    np.testing.assert_allclose(forward_patched(small_model, toks, ps), forward_without_attention(small_model, toks),
                               rtol=0, atol=1e-12)


def test_loss_paths_agree(small_model):
    seqs = [np.array([1, 4, 9, 16, 25, 3]), np.array([2, 7, 1])]
    ids, tgt, mask = pad_batch(seqs)
    loss, _ = loss_and_grad(small_model.params, small_model.config, ids, tgt, mask)
    assert abs(loss - loss_only(small_model.params, small_model.config, ids, tgt, mask)) < 1e-12


def test_gradient_check_small_model():
    cfg = ModelConfig(1, 8, 2, 11, 6, init_seed=1)
    model = init_model(cfg)
    rng = np.random.default_rng(1)
    params = {k: v + rng.normal(0, 0.2, v.shape) for k, v in model.params.items()}
    ids, tgt, mask = pad_batch([rng.integers(0, 11, 6), rng.integers(0, 11, 4)])
    entries = gradient_check(params, cfg, ids, tgt, mask, per_block=4)
    worst = max(entries, key=lambda e: e.rel_error)
    assert worst.rel_error < 1e-4, worst
