import math

import numpy as np
import pytest

from pkfr.numcore import ContractError, Tensor, backward, grad_check
from pkfr.policy import (
    MODEL_KINDS,
    ModelParams,
    PolicyConfig,
    act,
    action_mean,
    actor_forward,
    backbone_forward,
    baseline_forward,
    build_memory,
    build_query,
    critic_value,
    encode_depth,
    gaussian_log_prob,
    init_model,
    policy_step,
    predict_future,
)
from pkfr.spaces import FULL_SCALE, PLANAR


def small_config(**kw):
    defaults = dict(dims=PLANAR, width=8, head_count=2, layers=1, context_dim=6,
                    depth_hidden=8, scan_size=8, critic_hidden=(16, 16),
                    disc_hidden=(16, 16), baseline_hidden=(16, 16))
    defaults.update(kw)
    return PolicyConfig(**defaults)


def small_model(seed=0, kind="parkourformer", dtype=np.float64, **kw):
    return init_model(small_config(**kw), seed=seed, kind=kind, dtype=dtype)


def paper_model(seed=0):
    return init_model(PolicyConfig(dims=FULL_SCALE), seed=seed, kind="parkourformer",
                      dtype=np.float64)


# -- build_memory --------------------------------------------------------------

def test_memory_paper_dims():
    params = paper_model()
    history = np.random.default_rng(0).normal(size=(8, 96))
    assert build_memory(params, history).shape == (8, 128)


def test_memory_zero_history_equals_position_table():
    params = paper_model()
    mem = build_memory(params, np.zeros((8, 96)))
    assert np.array_equal(mem.data, params.actor.pos_table)


def test_memory_sensitive_to_frame_order():
    params = small_model()
    rng = np.random.default_rng(1)
    hist = rng.normal(size=(8, PLANAR.obs_dim))
    swapped = hist.copy()
    swapped[[0, 1]] = swapped[[1, 0]]
    a = build_memory(params, hist).data
    b = build_memory(params, swapped).data
    assert np.max(np.abs(a - b)) > 0.0


def test_memory_wrong_length_rejected():
    params = small_model()
    with pytest.raises(ContractError):
        build_memory(params, np.zeros((7, PLANAR.obs_dim)))


# -- encode_depth ----------------------------------------------------------------

def test_depth_token_default_widths():
    params = init_model(PolicyConfig(dims=PLANAR), seed=0, dtype=np.float64)
    scan = np.random.default_rng(2).uniform(0, 5, size=32)
    z, c = encode_depth(params, scan)
    assert z.shape == (128,)
    assert c.shape == (128,)


def test_depth_clipping_idempotence():
    params = small_model()
    rng = np.random.default_rng(3)
    scan = rng.uniform(0, 5, size=8)
    beyond = scan.copy()
    beyond[2] = 11.0
    clipped = scan.copy()
    clipped[2] = 5.0
    z1, c1 = encode_depth(params, beyond)
    z2, c2 = encode_depth(params, clipped)
    assert np.array_equal(z1.data, z2.data)
    assert np.array_equal(c1.data, c2.data)


def test_depth_token_separates_flat_from_wall():
    params = small_model(seed=5)
    flat = np.full(8, 4.0)
    wall = np.full(8, 0.7)
    z_flat, _ = encode_depth(params, flat)
    z_wall, _ = encode_depth(params, wall)
    assert np.linalg.norm(z_flat.data - z_wall.data) > 0.0


# -- build_query -----------------------------------------------------------------

def test_query_paper_shape():
    params = paper_model()
    rng = np.random.default_rng(4)
    z, _ = encode_depth(params, rng.uniform(0, 5, size=32))
    q = build_query(params, rng.normal(size=96), z)
    assert q.shape == (2, 128)


def test_query_rows_are_layer_normalized():
    params = paper_model()
    actor = params.actor
    rng = np.random.default_rng(5)
    obs = rng.normal(size=96)
    z, _ = encode_depth(params, rng.uniform(0, 5, size=32))
    q = build_query(params, obs, z).data
    assert np.all(np.abs(q.mean(axis=-1)) < 1e-9)
    # normalization divides by sqrt(var + 1e-5): check the exact definition
    x_t = actor.w1.weight.data @ obs + actor.w1.bias.data
    fused = actor.w2.weight.data @ np.concatenate([x_t, z.data]) + actor.w2.bias.data
    raw = (actor.wq.weight.data @ fused + actor.wq.bias.data).reshape(2, 128)
    rv = raw.var(axis=-1)
    assert np.allclose(q.var(axis=-1), rv / (rv + 1e-5), atol=1e-12)


def test_query_matches_composed_oracle():
    params = small_model(seed=7)
    actor = params.actor
    rng = np.random.default_rng(8)
    obs = rng.normal(size=PLANAR.obs_dim)
    z_np = rng.normal(size=8)
    q = build_query(params, obs, Tensor(z_np)).data

    x_t = actor.w1.weight.data @ obs + actor.w1.bias.data
    fused = actor.w2.weight.data @ np.concatenate([x_t, z_np]) + actor.w2.bias.data
    raw = (actor.wq.weight.data @ fused + actor.wq.bias.data).reshape(2, 8)
    mu = raw.mean(axis=-1, keepdims=True)
    var = raw.var(axis=-1, keepdims=True)
    expected = (raw - mu) / np.sqrt(var + 1e-5)
    assert np.allclose(q, expected, atol=1e-10)


# -- backbone --------------------------------------------------------------------

def test_zero_value_projection_gives_pure_residual():
    from pkfr.nn import cross_attention

    params = small_model(seed=9)
    layer = params.actor.layers[0]
    layer.attn.value.weight = Tensor(np.zeros((8, 8)), requires_grad=True)
    rng = np.random.default_rng(10)
    q = Tensor(rng.normal(size=(2, 8)))
    mem = Tensor(rng.normal(size=(8, 8)))
    att = cross_attention(layer.attn, q, mem)
    assert np.array_equal(att.data, np.zeros((2, 8)))
    assert np.array_equal((att + q).data, q.data)


def test_backbone_matches_layer_by_layer_oracle():
    params = small_model(seed=11, head_count=1, layers=1)
    actor = params.actor
    rng = np.random.default_rng(12)
    q0 = rng.normal(size=(2, 8))
    mem = rng.normal(size=(8, 8))
    c = rng.normal(size=6)
    out = backbone_forward(params, Tensor(q0), Tensor(mem), Tensor(c)).data

    layer = actor.layers[0]
    wq = layer.attn.query.weight.data
    wk = layer.attn.key.weight.data
    wv = layer.attn.value.weight.data
    wo = layer.attn.output.weight.data
    qh, kh, vh = q0 @ wq.T, mem @ wk.T, mem @ wv.T
    logits = qh @ kh.T / math.sqrt(8)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    att = (e / e.sum(axis=-1, keepdims=True)) @ vh @ wo.T
    h = att + q0
    mu = h.mean(axis=-1, keepdims=True)
    ln_h = (h - mu) / np.sqrt(h.var(axis=-1, keepdims=True) + 1e-5)

    ffn = layer.ffn
    gate_mod = ffn.c1.weight.data @ c
    val_mod = ffn.c2.weight.data @ c
    g = ln_h @ ffn.w3.weight.data.T + ffn.w3.bias.data + gate_mod
    v = ln_h @ ffn.w4.weight.data.T + ffn.w4.bias.data + val_mod
    silu = g / (1.0 + np.exp(-g))
    y = (silu * v) @ ffn.w5.weight.data.T + ffn.w5.bias.data
    expected = y + ln_h
    assert np.allclose(out, expected, atol=1e-10)


def test_backbone_preserves_query_shape():
    for n_layers in (1, 2, 3):
        params = small_model(seed=13, layers=n_layers)
        rng = np.random.default_rng(14)
        q = Tensor(rng.normal(size=(2, 8)))
        mem = Tensor(rng.normal(size=(8, 8)))
        c = Tensor(rng.normal(size=6))
        assert backbone_forward(params, q, mem, c).shape == (2, 8)


# -- heads -----------------------------------------------------------------------

def test_predict_future_zero_head():
    params = small_model(seed=15)
    params.actor.pred_head.weight = Tensor(
        np.zeros(params.actor.pred_head.weight.shape), requires_grad=True)
    params.actor.pred_head.bias = Tensor(
        np.zeros(params.actor.pred_head.bias.shape), requires_grad=True)
    q = Tensor(np.random.default_rng(16).normal(size=(2, 8)))
    assert np.array_equal(predict_future(params, q).data, np.zeros((2, 12)))


def test_predict_future_paper_width():
    params = paper_model()
    q = Tensor(np.random.default_rng(17).normal(size=(2, 128)))
    assert predict_future(params, q).shape == (2, 67)


def test_predict_future_matches_matmul_oracle():
    params = small_model(seed=18)
    rng = np.random.default_rng(19)
    q = rng.normal(size=(2, 8))
    out = predict_future(params, Tensor(q)).data
    head = params.actor.pred_head
    expected = (head.weight.data @ q[0] + head.bias.data).reshape(2, 12)
    assert np.allclose(out, expected, atol=1e-12)


def test_act_mean_mode_log_prob():
    params = small_model(seed=20)
    rng = np.random.default_rng(21)
    q = Tensor(rng.normal(size=(2, 8)))
    s_hat = predict_future(params, q)
    _, lp = act(params, q, s_hat, mode="mean")
    log_std = params.actor.log_std.data
    expected = -np.sum(0.5 * math.log(2 * math.pi) + log_std)
    assert float(lp.data) == pytest.approx(expected, abs=1e-12)


def test_act_sampling_noise_scale():
    params = small_model(seed=22)
    params.actor.log_std = Tensor(np.zeros(4), requires_grad=True)
    rng = np.random.default_rng(23)
    n = 100_000
    q = Tensor(np.tile(rng.normal(size=(1, 2, 8)), (n, 1, 1)))
    s_hat = predict_future(params, q)
    actions, _ = act(params, q, s_hat, mode="sample", rng=np.random.default_rng(7))
    mean = action_mean(params, q, s_hat).data
    std = (actions - mean).std(axis=0)
    assert np.all(std > 0.99) and np.all(std < 1.01)


def test_log_prob_gradients_pass_grad_check():
    rng = np.random.default_rng(24)
    mean = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    log_std = Tensor(rng.normal(size=4) * 0.3, requires_grad=True)
    actions = rng.normal(size=(3, 4))

    def f(ps):
        return gaussian_log_prob(ps[0], ps[1], actions).sum()

    report = grad_check(f, [mean, log_std], step=1e-5, tol=1e-6)
    assert report.passed, report


# -- critic ----------------------------------------------------------------------

def test_critic_paper_privileged_length():
    params = paper_model()
    assert params.config.critic_in == 99
    v = critic_value(params, np.zeros(99))
    assert v.shape == ()


def test_critic_zero_final_layer():
    params = small_model(seed=25)
    last = params.critic.layers[-1]
    last.weight = Tensor(np.zeros(last.weight.shape), requires_grad=True)
    last.bias = Tensor(np.zeros(last.bias.shape), requires_grad=True)
    rng = np.random.default_rng(26)
    for _ in range(3):
        assert float(critic_value(params, rng.normal(size=17)).data) == 0.0


def test_critic_matches_feed_forward_oracle():
    params = small_model(seed=27)
    rng = np.random.default_rng(28)
    x = rng.normal(size=17)
    got = float(critic_value(params, x).data)

    def silu(v):
        return v / (1.0 + np.exp(-v))

    h = x
    for layer in params.critic.layers[:-1]:
        h = silu(layer.weight.data @ h + layer.bias.data)
    last = params.critic.layers[-1]
    expected = float((last.weight.data @ h + last.bias.data)[0])
    assert got == pytest.approx(expected, abs=1e-12)


def test_critic_length_mismatch():
    params = small_model()
    with pytest.raises(ContractError):
        critic_value(params, np.zeros(11))


# -- baselines --------------------------------------------------------------------

def test_moe_one_hot_gate_selects_single_expert():
    params = small_model(seed=29, kind="moe4")
    actor = params.actor
    actor.gate.weight = Tensor(np.zeros(actor.gate.weight.shape), requires_grad=True)
    actor.gate.bias = Tensor(np.array([1e4, 0.0, 0.0, 0.0]), requires_grad=True)
    rng = np.random.default_rng(30)
    hist = rng.normal(size=(3, 8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=(3, 8))
    out = baseline_forward("moe4", params, hist, scan).mean.data

    from pkfr.numcore import concat
    from pkfr.nn import linear_forward
    from pkfr.numcore import apply_primitive

    flat = np.concatenate([hist.reshape(3, -1), scan], axis=-1)
    x = Tensor(flat)
    for layer in actor.experts[0]:
        x = apply_primitive("silu", [linear_forward(layer, x)])
    expert0 = linear_forward(actor.act_head_per_expert[0], x).data
    assert np.allclose(out, expert0, atol=1e-14)


def test_moe_uniform_gate_averages_experts():
    params = small_model(seed=31, kind="moe4")
    actor = params.actor
    actor.gate.weight = Tensor(np.zeros(actor.gate.weight.shape), requires_grad=True)
    actor.gate.bias = Tensor(np.zeros(4), requires_grad=True)
    rng = np.random.default_rng(32)
    hist = rng.normal(size=(2, 8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=(2, 8))
    out = baseline_forward("moe4", params, hist, scan).mean.data

    from pkfr.nn import linear_forward
    from pkfr.numcore import apply_primitive

    flat = np.concatenate([hist.reshape(2, -1), scan], axis=-1)
    parts = []
    for i in range(4):
        x = Tensor(flat)
        for layer in actor.experts[i]:
            x = apply_primitive("silu", [linear_forward(layer, x)])
        parts.append(linear_forward(actor.act_head_per_expert[i], x).data)
    assert np.allclose(out, np.mean(parts, axis=0), atol=1e-12)


def test_vanilla_transformer_ignores_context_weights():
    params = small_model(seed=33, kind="vanilla_transformer")
    rng = np.random.default_rng(34)
    hist = rng.normal(size=(2, 8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=(2, 8))
    before = baseline_forward("vanilla_transformer", params, hist, scan).mean.data
    for layer in params.actor.layers:
        layer.ffn.c1.weight.data[:] = rng.normal(size=layer.ffn.c1.weight.shape)
        layer.ffn.c2.weight.data[:] = rng.normal(size=layer.ffn.c2.weight.shape)
    after = baseline_forward("vanilla_transformer", params, hist, scan).mean.data
    assert np.array_equal(before, after)


def test_unknown_model_kind_rejected():
    with pytest.raises(ContractError):
        init_model(small_config(), kind="lstm")


# -- invariants --------------------------------------------------------------------

def test_end_to_end_mean_mode_deterministic():
    params = small_model(seed=35)
    rng = np.random.default_rng(36)
    hist = rng.normal(size=(8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=8)
    priv = rng.normal(size=17)
    a = policy_step(params, hist, scan, priv, mode="mean")
    b = policy_step(params, hist, scan, priv, mode="mean")
    assert np.array_equal(a.action, b.action)
    assert a.log_prob == b.log_prob
    assert np.array_equal(a.predicted_future, b.predicted_future)
    assert a.value == b.value


def test_future_conditioning_pathway_is_live():
    params = small_model(seed=37)
    rng = np.random.default_rng(38)
    hist = rng.normal(size=(1, 8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=(1, 8))
    base = actor_forward(params, hist, scan).mean.data.copy()
    params.actor.pred_head.weight.data[:] += 0.37
    bumped = actor_forward(params, hist, scan).mean.data
    assert np.max(np.abs(base - bumped)) > 0.0


def test_every_history_frame_reaches_the_action():
    params = small_model(seed=39)
    rng = np.random.default_rng(40)
    hist = rng.normal(size=(8, PLANAR.obs_dim))
    scan = rng.uniform(0, 5, size=8)
    base = actor_forward(params, hist[None], scan[None]).mean.data.copy()
    for k in range(1, 8):
        mutated = hist.copy()
        mutated[7 - k] += 0.5
        out = actor_forward(params, mutated[None], scan[None]).mean.data
        assert np.max(np.abs(out - base)) > 0.0, f"frame t-{k} unused"


def test_parameter_families_partition_everything():
    for kind in MODEL_KINDS:
        params = small_model(seed=41, kind=kind)
        names = [n for n, _ in params.named_parameters()]
        assert len(names) == len(set(names))
        ids_all = {id(t) for _, t in params.named_parameters()}
        fams = [params.family_theta(), params.family_phi(), params.family_psi()]
        ids_union = set()
        for fam in fams:
            fam_ids = {id(t) for t in fam}
            assert not (ids_union & fam_ids)  # families are disjoint
            ids_union |= fam_ids
        assert ids_union == ids_all
