"""Actor-critic over sensorimotor history with future-state conditioning.

The actor projects the 8-frame observation history into a positional
key-value memory, fuses the current observation with a depth token into two
query tokens, refines them through cross-attention layers whose feed-forward
blocks are modulated by a terrain context vector, then emits deterministic
two-step future motion states (from query token 0) and a Gaussian action
(from query token 1 concatenated with the flattened future block). A
separate feed-forward critic consumes privileged observations. Three
reference baselines (flat MLP, 4-expert mixture, vanilla self-attention
transformer) share the same critic/discriminator machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import amp as amp_mod
from .numcore import ContractError, Tensor, apply_primitive, concat, split
from .nn import (
    AttentionParams,
    ConditionalSwiGLUParams,
    LinearLayer,
    conditional_swiglu,
    cross_attention,
    init_attention,
    init_conditional_swiglu,
    init_linear,
    linear_forward,
    plain_swiglu,
    sinusoidal_positions,
)
from .spaces import FUTURE_STEPS, HISTORY_LEN, PLANAR, DimSpec

MODEL_KINDS = ("parkourformer", "mlp", "moe4", "vanilla_transformer")

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    dims: DimSpec = PLANAR
    width: int = 128
    head_count: int = 4
    layers: int = 2
    ffn_hidden: int = 0  # 0 means 2 * width
    context_dim: int = 128
    depth_hidden: int = 64
    scan_size: int = 32
    scan_max: float = 5.0
    critic_hidden: tuple = (256, 256)
    disc_hidden: tuple = (128, 128)
    baseline_hidden: tuple = (256, 256)
    residual_mode: str = "as_written"  # or "conventional"
    attach_future_to_action: bool = True
    pred_into_backbone: bool = True  # detach flag for the supervised loss path
    detach_future_in_disc: bool = False  # stop-gradient on predicted rows
    critic_sees_scan: bool = False
    init_log_std: float = -0.5
    # structural ablations
    zero_depth: bool = False
    use_future: bool = True

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden > 0 else 2 * self.width

    @property
    def critic_in(self) -> int:
        extra = self.scan_size if self.critic_sees_scan else 0
        return self.dims.privileged_dim + extra

    @property
    def disc_rows(self) -> int:
        return HISTORY_LEN + (FUTURE_STEPS if self.use_future else 0)


@dataclass
class BackboneLayer:
    attn: AttentionParams
    ffn: ConditionalSwiGLUParams


@dataclass
class ActorParams:
    w1: LinearLayer  # observation token projection
    w2: LinearLayer  # depth-observation fusion
    wq: LinearLayer  # query builder, width -> 2*width
    pos_table: np.ndarray  # deterministic positional table, not learned
    layers: list
    depth1: LinearLayer
    depth2: LinearLayer
    depth_z: LinearLayer
    depth_c: LinearLayer
    pred_head: LinearLayer
    act_head: LinearLayer
    log_std: Tensor


@dataclass
class CriticParams:
    layers: list  # three LinearLayers ending in a scalar


@dataclass
class MlpActorParams:
    layers: list
    act_head: LinearLayer
    log_std: Tensor


@dataclass
class MoeActorParams:
    gate: LinearLayer
    experts: list  # 4 expert layer stacks
    act_head_per_expert: list
    log_std: Tensor


@dataclass
class VanillaActorParams:
    token_proj: LinearLayer
    depth_proj: LinearLayer
    pos_table: np.ndarray
    layers: list  # BackboneLayer with plain FFN use
    act_head: LinearLayer
    log_std: Tensor


@dataclass
class ModelParams:
    kind: str
    config: PolicyConfig
    actor: object
    critic: CriticParams
    disc: "amp_mod.DiscriminatorParams"

    @property
    def disc_rows(self) -> int:
        if self.kind != "parkourformer":
            return HISTORY_LEN
        return self.config.disc_rows

    def named_parameters(self):
        """Stable (name, Tensor) pairs, every learnable exactly once."""
        out = []
        out.extend(_named_in("actor", self.actor))
        out.extend(_named_in("critic", self.critic))
        out.extend(_named_in("disc", self.disc))
        return out

    def family_theta(self):
        return [t for n, t in _named_in("actor", self.actor)]

    def family_phi(self):
        return [t for n, t in _named_in("critic", self.critic)]

    def family_psi(self):
        return [t for n, t in _named_in("disc", self.disc)]

    def all_parameters(self):
        return [t for _, t in self.named_parameters()]


def _named_in(prefix, obj):
    if isinstance(obj, Tensor):
        return [(prefix, obj)]
    if isinstance(obj, LinearLayer):
        pairs = [(f"{prefix}.weight", obj.weight)]
        if obj.bias is not None:
            pairs.append((f"{prefix}.bias", obj.bias))
        return pairs
    if isinstance(obj, AttentionParams):
        out = []
        for nm in ("query", "key", "value", "output"):
            out.extend(_named_in(f"{prefix}.{nm}", getattr(obj, nm)))
        return out
    if isinstance(obj, ConditionalSwiGLUParams):
        out = []
        for nm in ("w3", "w4", "w5", "c1", "c2"):
            out.extend(_named_in(f"{prefix}.{nm}", getattr(obj, nm)))
        return out
    if isinstance(obj, BackboneLayer):
        return _named_in(f"{prefix}.attn", obj.attn) + _named_in(f"{prefix}.ffn", obj.ffn)
    if isinstance(obj, (list, tuple)):
        out = []
        for i, item in enumerate(obj):
            out.extend(_named_in(f"{prefix}.{i}", item))
        return out
    if hasattr(obj, "__dataclass_fields__"):
        out = []
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            if isinstance(value, np.ndarray):  # constant tables are not learned
                continue
            out.extend(_named_in(f"{prefix}.{name}", value))
        return out
    raise ContractError(f"cannot enumerate parameters of {type(obj)}")


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def init_model(config: PolicyConfig, seed: int = 0, kind: str = "parkourformer",
               dtype=np.float32) -> ModelParams:
    if kind not in MODEL_KINDS:
        raise ContractError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "parkourformer":
        actor = _init_actor(rng, config, dtype)
    elif kind == "mlp":
        actor = _init_mlp_actor(rng, config, dtype)
    elif kind == "moe4":
        actor = _init_moe_actor(rng, config, dtype)
    else:
        actor = _init_vanilla_actor(rng, config, dtype)
    critic = CriticParams(layers=_init_mlp(
        rng, config.critic_in, config.critic_hidden, 1, dtype
    ))
    # baselines never predict, so their discriminator sees history only
    rows = config.disc_rows if kind == "parkourformer" else HISTORY_LEN
    disc = amp_mod.init_discriminator(
        rng, rows * config.dims.amp_dim, config.disc_hidden, dtype
    )
    return ModelParams(kind=kind, config=config, actor=actor, critic=critic, disc=disc)


def _init_mlp(rng, in_dim, hidden, out_dim, dtype):
    dims = [in_dim, *hidden, out_dim]
    return [init_linear(rng, dims[i + 1], dims[i], dtype=dtype)
            for i in range(len(dims) - 1)]


def _init_actor(rng, cfg: PolicyConfig, dtype) -> ActorParams:
    w = cfg.width
    layers = [
        BackboneLayer(
            attn=init_attention(rng, w, cfg.head_count, dtype=dtype),
            ffn=init_conditional_swiglu(rng, w, cfg.hidden, cfg.context_dim,
                                        dtype=dtype),
        )
        for _ in range(cfg.layers)
    ]
    amp_dim = cfg.dims.amp_dim
    return ActorParams(
        w1=init_linear(rng, w, cfg.dims.obs_dim, dtype=dtype),
        w2=init_linear(rng, w, 2 * w, dtype=dtype),
        wq=init_linear(rng, 2 * w, w, dtype=dtype),
        pos_table=sinusoidal_positions(HISTORY_LEN, w).astype(dtype),
        layers=layers,
        depth1=init_linear(rng, cfg.depth_hidden, cfg.scan_size, dtype=dtype),
        depth2=init_linear(rng, cfg.depth_hidden, cfg.depth_hidden, dtype=dtype),
        depth_z=init_linear(rng, w, cfg.depth_hidden, dtype=dtype),
        depth_c=init_linear(rng, cfg.context_dim, cfg.depth_hidden, dtype=dtype),
        pred_head=init_linear(rng, FUTURE_STEPS * amp_dim, w, dtype=dtype),
        act_head=init_linear(rng, cfg.dims.n_joints, w + FUTURE_STEPS * amp_dim,
                             dtype=dtype),
        log_std=Tensor(np.full(cfg.dims.n_joints, cfg.init_log_std, dtype=dtype),
                       requires_grad=True),
    )


def _init_mlp_actor(rng, cfg: PolicyConfig, dtype) -> MlpActorParams:
    in_dim = HISTORY_LEN * cfg.dims.obs_dim + cfg.scan_size
    h = cfg.baseline_hidden
    return MlpActorParams(
        layers=_init_mlp(rng, in_dim, h[:-1], h[-1], dtype),
        act_head=init_linear(rng, cfg.dims.n_joints, h[-1], dtype=dtype),
        log_std=Tensor(np.full(cfg.dims.n_joints, cfg.init_log_std, dtype=dtype),
                       requires_grad=True),
    )


def _init_moe_actor(rng, cfg: PolicyConfig, dtype) -> MoeActorParams:
    in_dim = HISTORY_LEN * cfg.dims.obs_dim + cfg.scan_size
    hidden = (128, 128)  # four experts, each smaller than the single MLP
    experts, heads = [], []
    for _ in range(4):
        experts.append(_init_mlp(rng, in_dim, hidden[:-1], hidden[-1], dtype))
        heads.append(init_linear(rng, cfg.dims.n_joints, hidden[-1], dtype=dtype))
    return MoeActorParams(
        gate=init_linear(rng, 4, in_dim, dtype=dtype),
        experts=experts,
        act_head_per_expert=heads,
        log_std=Tensor(np.full(cfg.dims.n_joints, cfg.init_log_std, dtype=dtype),
                       requires_grad=True),
    )


def _init_vanilla_actor(rng, cfg: PolicyConfig, dtype) -> VanillaActorParams:
    w = cfg.width
    layers = [
        BackboneLayer(
            attn=init_attention(rng, w, cfg.head_count, dtype=dtype),
            ffn=init_conditional_swiglu(rng, w, cfg.hidden, cfg.context_dim,
                                        dtype=dtype),
        )
        for _ in range(cfg.layers)
    ]
    return VanillaActorParams(
        token_proj=init_linear(rng, w, cfg.dims.obs_dim, dtype=dtype),
        depth_proj=init_linear(rng, w, cfg.scan_size, dtype=dtype),
        pos_table=sinusoidal_positions(HISTORY_LEN + 1, w).astype(dtype),
        layers=layers,
        act_head=init_linear(rng, cfg.dims.n_joints, w, dtype=dtype),
        log_std=Tensor(np.full(cfg.dims.n_joints, cfg.init_log_std, dtype=dtype),
                       requires_grad=True),
    )


# ---------------------------------------------------------------------------
# forward pieces (contracts operate on single instances or batches)
# ---------------------------------------------------------------------------


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def build_memory(params: ModelParams, history) -> Tensor:
    """Project the 8-frame history into tokens and add positional rows."""
    actor = params.actor
    h = _as_tensor(history, actor.w1.weight)
    if h.shape[-2] != HISTORY_LEN:
        raise ContractError(f"history must have {HISTORY_LEN} frames, got {h.shape}")
    tokens = linear_forward(actor.w1, h)
    return tokens + Tensor(actor.pos_table)


def encode_depth(params: ModelParams, scan):
    """Depth token z and terrain context c from a normalized ray scan."""
    cfg = params.config
    actor = params.actor
    s = _as_tensor(scan, actor.depth1.weight)
    if s.shape[-1] != cfg.scan_size:
        raise ContractError(f"scan length {s.shape[-1]} != expected {cfg.scan_size}")
    if cfg.zero_depth:
        lead = s.shape[:-1]
        zero_z = Tensor(np.zeros(lead + (cfg.width,), dtype=s.dtype))
        zero_c = Tensor(np.zeros(lead + (cfg.context_dim,), dtype=s.dtype))
        return zero_z, zero_c
    x = s.clip(0.0, cfg.scan_max) * (1.0 / cfg.scan_max)
    h = apply_primitive("silu", [linear_forward(actor.depth1, x)])
    h = apply_primitive("silu", [linear_forward(actor.depth2, h)])
    return linear_forward(actor.depth_z, h), linear_forward(actor.depth_c, h)


def build_query(params: ModelParams, current_obs, z: Tensor) -> Tensor:
    """Fuse the current observation token with the depth token into two
    layer-normalized query rows."""
    actor = params.actor
    obs = _as_tensor(current_obs, actor.w1.weight)
    x_t = linear_forward(actor.w1, obs)
    fused = linear_forward(actor.w2, concat([x_t, z], axis=-1))
    q = linear_forward(actor.wq, fused)
    width = params.config.width
    q = q.reshape(q.shape[:-1] + (2, width))
    return apply_primitive("layernorm", [q])


def backbone_forward(params: ModelParams, q0: Tensor, memory: Tensor,
                     c: Tensor) -> Tensor:
    """Cross-attention + conditioned feed-forward residual stack."""
    cfg = params.config
    q = q0
    for layer in params.actor.layers:
        h = cross_attention(layer.attn, q, memory) + q
        ln_h = apply_primitive("layernorm", [h])
        ffn = conditional_swiglu(layer.ffn, ln_h, c)
        q = ffn + (ln_h if cfg.residual_mode == "as_written" else h)
    return q


def predict_future(params: ModelParams, q_l: Tensor) -> Tensor:
    """Deterministic two-step future motion states from query token 0."""
    amp_dim = params.config.dims.amp_dim
    tok0, _ = split(q_l, 2, axis=-2)
    lead = tok0.shape[:-2]
    flat = tok0.reshape(lead + (params.config.width,))
    pred = linear_forward(params.actor.pred_head, flat)
    return pred.reshape(lead + (FUTURE_STEPS, amp_dim))


def action_mean(params: ModelParams, q_l: Tensor, s_hat: Tensor) -> Tensor:
    """Gaussian mean from query token 1 fused with the future block."""
    cfg = params.config
    if s_hat.shape[-2] != FUTURE_STEPS:
        raise ContractError(f"future block must have {FUTURE_STEPS} rows")
    _, tok1 = split(q_l, 2, axis=-2)
    lead = tok1.shape[:-2]
    tok1 = tok1.reshape(lead + (cfg.width,))
    if not cfg.use_future:
        s_hat = Tensor(np.zeros(s_hat.shape, dtype=s_hat.dtype))
    elif not cfg.attach_future_to_action:
        s_hat = s_hat.detach()
    flat = s_hat.reshape(lead + (FUTURE_STEPS * cfg.dims.amp_dim,))
    return linear_forward(params.actor.act_head, concat([tok1, flat], axis=-1))


def gaussian_log_prob(mean: Tensor, log_std: Tensor, actions) -> Tensor:
    """Exact log-density of a diagonal Gaussian, per batch row."""
    a = _as_tensor(actions, mean)
    z = (a - mean) * apply_primitive("exp", [-log_std])
    n = mean.shape[-1]
    quad = z.square().sum(axis=-1) * (-0.5)
    return quad - log_std.sum() - 0.5 * n * LOG_2PI


def gaussian_entropy(log_std: Tensor) -> Tensor:
    n = log_std.shape[0]
    return log_std.sum() + 0.5 * n * (LOG_2PI + 1.0)


def act(params: ModelParams, q_l: Tensor, s_hat: Tensor, mode: str = "sample",
        rng: np.random.Generator | None = None):
    """Draw (or take the mean) action with its exact log-density."""
    if mode not in ("sample", "mean"):
        raise ContractError(f"mode must be 'sample' or 'mean', got {mode!r}")
    mean = action_mean(params, q_l, s_hat)
    log_std = params.actor.log_std
    if mode == "mean":
        action = mean.data.copy()
    else:
        if rng is None:
            raise ContractError("sample mode needs a random generator")
        sigma = np.exp(log_std.data)
        action = mean.data + sigma * rng.standard_normal(mean.shape)
    lp = gaussian_log_prob(mean, log_std, action)
    return action, lp


def critic_value(params: ModelParams, privileged) -> Tensor:
    """Scalar value from the separate privileged feed-forward critic."""
    x = _as_tensor(privileged, params.critic.layers[0].weight)
    if x.shape[-1] != params.config.critic_in:
        raise ContractError(
            f"privileged obs length {x.shape[-1]} != expected {params.config.critic_in}"
        )
    squeeze = x.ndim == 1
    for layer in params.critic.layers[:-1]:
        x = apply_primitive("silu", [linear_forward(layer, x)])
    v = linear_forward(params.critic.layers[-1], x)
    if squeeze:
        return v.reshape(())
    return v.reshape(v.shape[:-1])


@dataclass
class ActorOut:
    mean: Tensor  # [B, n]
    log_std: Tensor  # [n]
    s_hat: Tensor | None  # [B, 2, amp_dim] for the main model, else None


def actor_forward(params: ModelParams, histories, scans) -> ActorOut:
    """Batched actor forward shared by rollout and optimization.

    histories [B, 8, obs_dim], scans [B, scan_size].
    """
    if params.kind == "parkourformer":
        memory = build_memory(params, histories)
        z, c = encode_depth(params, scans)
        current = histories[:, -1] if isinstance(histories, np.ndarray) else None
        if current is None:
            hist_t = histories
            lead = hist_t.shape[:-2]
            pieces = split(hist_t, HISTORY_LEN, axis=-2)
            current = pieces[-1].reshape(lead + (params.config.dims.obs_dim,))
        q0 = build_query(params, current, z)
        q_l = backbone_forward(params, q0, memory, c)
        s_hat = predict_future(params, q_l)
        mean = action_mean(params, q_l, s_hat)
        return ActorOut(mean=mean, log_std=params.actor.log_std, s_hat=s_hat)
    return baseline_forward(params.kind, params, histories, scans)


def baseline_forward(kind: str, params: ModelParams, histories, scans) -> ActorOut:
    """Reference architectures: flat MLP, 4-expert mixture, vanilla
    self-attention transformer (no future head, no terrain conditioning)."""
    actor = params.actor
    cfg = params.config
    if kind == "mlp":
        flat = _flatten_inputs(histories, scans, actor.layers[0].weight)
        x = flat
        for layer in actor.layers:
            x = apply_primitive("silu", [linear_forward(layer, x)])
        return ActorOut(mean=linear_forward(actor.act_head, x),
                        log_std=actor.log_std, s_hat=None)
    if kind == "moe4":
        flat = _flatten_inputs(histories, scans, actor.gate.weight)
        gates = apply_primitive("softmax", [linear_forward(actor.gate, flat)])
        gate_cols = split(gates, 4, axis=-1)
        mixed = None
        for i in range(4):
            x = flat
            for layer in actor.experts[i]:
                x = apply_primitive("silu", [linear_forward(layer, x)])
            out_i = linear_forward(actor.act_head_per_expert[i], x)
            term = out_i * gate_cols[i]
            mixed = term if mixed is None else mixed + term
        return ActorOut(mean=mixed, log_std=actor.log_std, s_hat=None)
    if kind == "vanilla_transformer":
        h = _as_tensor(histories, actor.token_proj.weight)
        s = _as_tensor(scans, actor.depth_proj.weight)
        tokens = linear_forward(actor.token_proj, h)
        depth_tok = linear_forward(actor.depth_proj, s)
        lead = depth_tok.shape[:-1]
        depth_tok = depth_tok.reshape(lead + (1, cfg.width))
        seq = concat([tokens, depth_tok], axis=-2) + Tensor(actor.pos_table)
        for layer in actor.layers:
            att = cross_attention(layer.attn, seq, seq) + seq
            ln = apply_primitive("layernorm", [att])
            seq = plain_swiglu(layer.ffn, ln) + ln
        pieces = split(seq, HISTORY_LEN + 1, axis=-2)
        last = pieces[HISTORY_LEN - 1].reshape(lead + (cfg.width,))
        return ActorOut(mean=linear_forward(actor.act_head, last),
                        log_std=actor.log_std, s_hat=None)
    raise ContractError(f"unknown baseline kind {kind!r}")


def _flatten_inputs(histories, scans, like: Tensor) -> Tensor:
    h = _as_tensor(histories, like)
    s = _as_tensor(scans, like)
    lead = h.shape[:-2]
    flat_h = h.reshape(lead + (h.shape[-2] * h.shape[-1],))
    return concat([flat_h, s], axis=-1)


@dataclass
class PolicyOutput:
    action_mean: np.ndarray
    action_log_std: np.ndarray
    action: np.ndarray
    log_prob: float
    predicted_future: np.ndarray | None
    value: float


def policy_step(params: ModelParams, history, scan, privileged,
                mode: str = "sample",
                rng: np.random.Generator | None = None) -> PolicyOutput:
    """Single-instance convenience wrapper around the batched forward."""
    out = actor_forward(params, history[None, :, :], scan[None, :])
    mean_row = out.mean.reshape((params.config.dims.n_joints,))
    if mode == "mean":
        action = mean_row.data.copy()
    else:
        if rng is None:
            raise ContractError("sample mode needs a random generator")
        sigma = np.exp(out.log_std.data)
        action = mean_row.data + sigma * rng.standard_normal(mean_row.shape)
    lp = float(gaussian_log_prob(mean_row, out.log_std, action).data)
    value = float(critic_value(params, privileged).data)
    return PolicyOutput(
        action_mean=mean_row.data.copy(),
        action_log_std=out.log_std.data.copy(),
        action=action,
        log_prob=lp,
        predicted_future=None if out.s_hat is None else out.s_hat.data[0].copy(),
        value=value,
    )
