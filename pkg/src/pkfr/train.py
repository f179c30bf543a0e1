"""Rollout collection, advantage estimation, and the joint update.

One iteration: collect a fixed number of control steps from a fleet of
independent environments with the stochastic policy, build two-step future
targets with episode-boundary masks, compute GAE, then run several epochs of
minibatch updates. The actor/critic families are optimized on the clipped
surrogate + value + advantage-weighted prediction - entropy objective; the
discriminator family is optimized on its own least-squares loss with fresh
reference/policy batches each epoch. Style reward enters through the total
reward, so the two objectives alternate rather than share one gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import amp as amp_mod
from .env import PlanarEnv, generate_terrain, reference_motion
from .env.sim import SimConfig, depth_scan
from .numcore import ContractError, Tensor, apply_primitive, backward
from .policy import (
    ModelParams,
    actor_forward,
    critic_value,
    gaussian_entropy,
    gaussian_log_prob,
)
from .spaces import FUTURE_STEPS, HISTORY_LEN


@dataclass(frozen=True)
class LossWeights:
    c1: float = 0.5  # value loss
    c2: float = 1.0  # future prediction loss
    c3: float = 0.005  # entropy bonus
    c4: float = 1.0  # discriminator loss (alternating objective)
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    beta: float = 1.0  # extra weight on negative-advantage prediction terms
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 4
    minibatch: int = 256
    gp_weight: float = 5.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "gamma", "lam", "beta", "lr"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if not 0.0 < self.clip_eps < 1.0:
            raise ContractError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")


class Adam:
    """Per-parameter moment estimates; one logical writer between phases."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.data.dtype, copy=False)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class RolloutBuffer:
    histories: np.ndarray  # [E, T, 8, obs]
    scans: np.ndarray  # [E, T, K]
    privileged: np.ndarray  # [E, T, P]
    amp_states: np.ndarray  # [E, T, amp]; the motion state at decision time
    amp_histories: np.ndarray  # [E, T, 8, amp]
    actions: np.ndarray  # [E, T, n]
    log_probs: np.ndarray  # [E, T]
    values: np.ndarray  # [E, T]
    task_rewards: np.ndarray  # [E, T]
    amp_rewards: np.ndarray  # [E, T]
    dones: np.ndarray  # [E, T] bool
    s_hat: np.ndarray  # [E, T, 2, amp]
    ref_phases: np.ndarray  # [E, T]
    bootstrap_values: np.ndarray  # [E]
    end_reasons: list = field(default_factory=list)
    future_targets: np.ndarray | None = None
    future_masks: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_envs(self) -> int:
        return self.histories.shape[0]

    @property
    def n_steps(self) -> int:
        return self.histories.shape[1]

    @property
    def n_rows(self) -> int:
        return self.n_envs * self.n_steps

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape((self.n_rows,) + arr.shape[2:])


def make_envs(n_envs: int, family: str, difficulty: float, seed: int,
              cfg: SimConfig | None = None):
    """Independent environments with per-instance derived seeds."""
    cfg = cfg or SimConfig()
    seeds = np.random.SeedSequence(seed).spawn(n_envs)
    envs = []
    for i, ss in enumerate(seeds):
        profile = generate_terrain(family, difficulty, seed=seed * 997 + i)
        env = PlanarEnv(profile, cfg, seed=int(ss.generate_state(1)[0]))
        env.reset()
        envs.append(env)
    return envs


def _privileged(env: PlanarEnv, obs: np.ndarray, scan: np.ndarray,
                sees_scan: bool) -> np.ndarray:
    parts = [obs, [env.state.vx]]
    if sees_scan:
        parts.append(scan)
    return np.concatenate([np.atleast_1d(np.asarray(p)) for p in parts])


def collect_rollout(envs, params: ModelParams, steps: int,
                    rng: np.random.Generator) -> RolloutBuffer:
    """Sample-mode rollout across the fleet, recording everything the
    update needs, including emitted future predictions."""
    cfg = params.config
    dims = cfg.dims
    n_envs = len(envs)
    dtype = params.actor.log_std.dtype

    def _alloc(*shape):
        return np.zeros(shape, dtype=dtype)

    buf = RolloutBuffer(
        histories=_alloc(n_envs, steps, HISTORY_LEN, dims.obs_dim),
        scans=_alloc(n_envs, steps, cfg.scan_size),
        privileged=_alloc(n_envs, steps, cfg.critic_in),
        amp_states=_alloc(n_envs, steps, dims.amp_dim),
        amp_histories=_alloc(n_envs, steps, HISTORY_LEN, dims.amp_dim),
        actions=_alloc(n_envs, steps, dims.n_joints),
        log_probs=_alloc(n_envs, steps),
        values=_alloc(n_envs, steps),
        task_rewards=_alloc(n_envs, steps),
        amp_rewards=_alloc(n_envs, steps),
        dones=np.zeros((n_envs, steps), dtype=bool),
        s_hat=_alloc(n_envs, steps, FUTURE_STEPS, dims.amp_dim),
        ref_phases=_alloc(n_envs, steps),
        bootstrap_values=_alloc(n_envs),
    )

    scans = [depth_scan(env.state, env.profile, env.cfg) for env in envs]

    log_std = params.actor.log_std.data
    sigma = np.exp(log_std)

    for t in range(steps):
        H = np.stack([env.history for env in envs]).astype(dtype)
        S = np.stack(scans).astype(dtype)
        buf.histories[:, t] = H
        buf.scans[:, t] = S
        buf.amp_histories[:, t] = np.stack(
            [env.amp_history for env in envs]).astype(dtype)
        buf.amp_states[:, t] = buf.amp_histories[:, t, -1]
        buf.ref_phases[:, t] = [env.phase for env in envs]

        priv = np.stack([
            _privileged(env, env.history[-1], scans[e], cfg.critic_sees_scan)
            for e, env in enumerate(envs)
        ]).astype(dtype)
        buf.privileged[:, t] = priv

        out = actor_forward(params, H, S)
        mean = out.mean.data
        eps = rng.standard_normal(mean.shape)
        actions = mean + sigma * eps
        buf.actions[:, t] = actions
        z = (actions - mean) / sigma
        buf.log_probs[:, t] = (
            -0.5 * (z * z).sum(axis=-1) - log_std.sum()
            - 0.5 * dims.n_joints * math.log(2 * math.pi)
        )
        buf.values[:, t] = critic_value(params, priv).data
        if out.s_hat is not None:
            buf.s_hat[:, t] = out.s_hat.data

        if out.s_hat is not None and cfg.use_future:
            seqs = np.concatenate(
                [buf.amp_histories[:, t], buf.s_hat[:, t]], axis=1)
        else:
            seqs = buf.amp_histories[:, t]
        buf.amp_rewards[:, t] = amp_mod.amp_reward_batch(params.disc, seqs)

        for e, env in enumerate(envs):
            if not np.isfinite(actions[e]).all():
                buf.dones[e, t] = True
                buf.task_rewards[e, t] = 0.0
                buf.amp_rewards[e, t] = 0.0
                buf.end_reasons.append("divergence")
                scans[e] = env.reset().scan
                continue
            res = env.step(actions[e])
            buf.task_rewards[e, t] = res.reward.total
            buf.dones[e, t] = res.terminated
            if res.terminated:
                buf.end_reasons.append(res.reason)
                res = env.reset()
            scans[e] = res.scan

        if t == steps - 1:
            priv_boot = np.stack([
                _privileged(env, env.history[-1], scans[e], cfg.critic_sees_scan)
                for e, env in enumerate(envs)
            ]).astype(dtype)
            buf.bootstrap_values[:] = critic_value(params, priv_boot).data

    return buf


def build_future_targets(buffer: RolloutBuffer) -> RolloutBuffer:
    """Targets s_{t+k} and validity masks that never cross an episode end
    or the collected horizon."""
    E, T = buffer.n_envs, buffer.n_steps
    amp_dim = buffer.amp_states.shape[-1]
    targets = np.zeros((E, T, FUTURE_STEPS, amp_dim), dtype=buffer.amp_states.dtype)
    masks = np.zeros((E, T, FUTURE_STEPS), dtype=buffer.amp_states.dtype)
    for e in range(E):
        for t in range(T):
            for k in (1, 2):
                if t + k > T - 1:
                    continue  # target beyond the collected horizon
                # invalid if the episode terminates at or before t+k-1
                if buffer.dones[e, t : t + k].any():
                    continue
                targets[e, t, k - 1] = buffer.amp_states[e, t + k]
                masks[e, t, k - 1] = 1.0
    buffer.future_targets = targets
    buffer.future_masks = masks
    return buffer


def prediction_loss(buffer: RolloutBuffer, weights: LossWeights | None = None) -> float:
    """Masked mean squared two-step error of the emitted predictions."""
    if buffer.future_masks is None:
        raise ContractError("call build_future_targets first")
    masks = buffer.future_masks
    count = masks.sum()
    if count == 0:
        return 0.0
    err = ((buffer.s_hat - buffer.future_targets) ** 2).sum(axis=-1)
    return float((masks * err).sum() / count)


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    """Exponentially weighted advantage estimates; advantages normalized
    over the whole batch, returns left raw for the value target."""
    E, T = buffer.n_envs, buffer.n_steps
    rewards = (buffer.task_rewards + buffer.amp_rewards).astype(np.float64)
    values = buffer.values.astype(np.float64)
    dones = buffer.dones.astype(np.float64)
    adv = np.zeros((E, T), dtype=np.float64)
    next_value = buffer.bootstrap_values.astype(np.float64)
    next_adv = np.zeros(E, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * next_value * not_done - values[:, t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[:, t] = next_adv
        next_value = values[:, t]
    buffer.returns = adv + values
    std = adv.std()
    buffer.advantages = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    return buffer


def _weighted_prediction_loss(s_hat_new: Tensor, targets, masks, advantages,
                              beta: float, dtype) -> Tensor:
    """Eq.-style masked MSE with per-sample weight 1 + beta on negative
    advantages; normalizer is the weighted count of valid entries."""
    w_rows = 1.0 + beta * (advantages < 0.0)
    w = (masks * w_rows[:, None]).astype(dtype)
    denom = float(w.sum())
    if denom == 0.0:
        return Tensor(np.zeros((), dtype=dtype))
    err = (s_hat_new - Tensor(targets.astype(dtype))).square().sum(axis=-1)
    return (err * Tensor(w)).sum() * (1.0 / denom)


def ppo_losses(buffer: RolloutBuffer, params: ModelParams, clip_eps: float,
               idx: np.ndarray | None = None):
    """Clipped surrogate, value error, and closed-form entropy as graph nodes."""
    if buffer.advantages is None:
        raise ContractError("advantages missing; run compute_gae first")
    dtype = params.actor.log_std.dtype
    if idx is None:
        idx = np.arange(buffer.n_rows)
    hist = buffer.flat("histories")[idx].astype(dtype)
    scans = buffer.flat("scans")[idx].astype(dtype)
    actions = buffer.flat("actions")[idx].astype(dtype)
    old_lp = buffer.flat("log_probs")[idx].astype(dtype)
    adv = buffer.flat("advantages")[idx].astype(dtype)
    rets = buffer.flat("returns")[idx].astype(dtype)
    priv = buffer.flat("privileged")[idx].astype(dtype)

    out = actor_forward(params, hist, scans)
    new_lp = gaussian_log_prob(out.mean, out.log_std, actions)
    ratio = (new_lp - Tensor(old_lp)).exp()
    adv_t = Tensor(adv)
    clipped = ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv_t
    surrogate = apply_primitive("minimum", [ratio * adv_t, clipped])
    l_ppo = -surrogate.mean()
    v = critic_value(params, priv)
    l_value = (v - Tensor(rets)).square().mean()
    entropy = gaussian_entropy(out.log_std)
    return l_ppo, l_value, entropy, out


def _policy_disc_batch(buffer: RolloutBuffer, params: ModelParams, idx,
                       s_hat_new: Tensor | None):
    """Discriminator input sequences for policy rows; predicted rows ride
    along as graph nodes when provided (style pressure reaches the head)."""
    dtype = params.actor.log_std.dtype
    hist = Tensor(buffer.flat("amp_histories")[idx].astype(dtype))
    if params.config.use_future and s_hat_new is not None:
        return amp_mod.assemble_policy_sequence(hist, s_hat_new)
    if params.config.use_future and params.kind == "parkourformer":
        pred = Tensor(buffer.flat("s_hat")[idx].astype(dtype))
        return amp_mod.assemble_policy_sequence(hist, pred)
    return hist


def _reference_batch(buffer: RolloutBuffer, params: ModelParams, idx,
                     control_dt: float) -> np.ndarray:
    dims = params.config.dims
    phases = buffer.flat("ref_phases")[idx]
    return np.stack([
        amp_mod.assemble_reference_sequence(
            lambda p: reference_motion(p, dims), ph, control_dt
        )[: params.disc_rows]
        for ph in phases
    ])


def composite_loss(buffer: RolloutBuffer, params: ModelParams,
                   weights: LossWeights, idx: np.ndarray | None = None,
                   control_dt: float = 0.02) -> Tensor:
    """The composite objective as a single scalar graph: clipped surrogate
    plus weighted value, prediction, entropy, and discriminator terms.

    Used for end-to-end gradient checking; the operational update applies
    the actor/critic and discriminator pieces alternately instead.
    """
    if idx is None:
        idx = np.arange(buffer.n_rows)
    l_ppo, l_value, entropy, out = ppo_losses(buffer, params, weights.clip_eps, idx)
    total = l_ppo + weights.c1 * l_value - weights.c3 * entropy
    if out.s_hat is not None:
        dtype = params.actor.log_std.dtype
        lpred = _weighted_prediction_loss(
            out.s_hat,
            buffer.flat("future_targets")[idx],
            buffer.flat("future_masks")[idx],
            buffer.flat("advantages")[idx],
            weights.beta,
            dtype,
        )
        total = total + weights.c2 * lpred
    ref = _reference_batch(buffer, params, idx, control_dt)
    s_for_disc = None
    if params.config.use_future and out.s_hat is not None:
        s_for_disc = (out.s_hat.detach()
                      if params.config.detach_future_in_disc else out.s_hat)
    pol = _policy_disc_batch(buffer, params, idx, s_for_disc)
    l_disc = amp_mod.discriminator_loss(params.disc, ref, pol, weights.gp_weight)
    return total - weights.c4 * l_disc


@dataclass
class UpdateReport:
    l_ppo: float
    l_value: float
    l_pred: float
    entropy: float
    l_disc: float
    diverged: bool = False


def composite_update(buffer: RolloutBuffer, params: ModelParams,
                     weights: LossWeights, opt_actor_critic: Adam,
                     opt_disc: Adam, rng: np.random.Generator,
                     control_dt: float = 0.02) -> UpdateReport:
    """Epochs of minibatch PPO on the actor/critic families interleaved with
    discriminator updates on fresh reference/policy batches."""
    if buffer.future_masks is None:
        build_future_targets(buffer)
    if buffer.advantages is None:
        compute_gae(buffer, weights.gamma, weights.lam)

    ac_params = opt_actor_critic.params
    disc_params = opt_disc.params
    dtype = params.actor.log_std.dtype
    stats = {"l_ppo": [], "l_value": [], "l_pred": [], "entropy": [], "l_disc": []}
    n = buffer.n_rows

    for _ in range(weights.epochs):
        order = rng.permutation(n)
        mb = max(1, min(weights.minibatch, n))
        for start in range(0, n - mb + 1, mb):
            idx = order[start : start + mb]
            l_ppo, l_value, entropy, out = ppo_losses(
                buffer, params, weights.clip_eps, idx)
            loss = l_ppo + weights.c1 * l_value - weights.c3 * entropy
            l_pred_val = 0.0
            if out.s_hat is not None:
                lpred = _weighted_prediction_loss(
                    out.s_hat,
                    buffer.flat("future_targets")[idx],
                    buffer.flat("future_masks")[idx],
                    buffer.flat("advantages")[idx],
                    weights.beta,
                    dtype,
                )
                loss = loss + weights.c2 * lpred
                l_pred_val = float(lpred.data)
            if not np.isfinite(loss.data).all():
                return UpdateReport(
                    l_ppo=float(l_ppo.data), l_value=float(l_value.data),
                    l_pred=l_pred_val, entropy=float(entropy.data),
                    l_disc=float("nan"), diverged=True,
                )
            grads = backward(loss, params=ac_params)
            opt_actor_critic.step(grads)
            stats["l_ppo"].append(float(l_ppo.data))
            stats["l_value"].append(float(l_value.data))
            stats["l_pred"].append(l_pred_val)
            stats["entropy"].append(float(entropy.data))

        # one discriminator update per epoch on stored policy sequences
        mb_idx = rng.choice(n, size=mb, replace=False)
        ref = _reference_batch(buffer, params, mb_idx, control_dt)
        pol = _policy_disc_batch(buffer, params, mb_idx, None)
        l_disc = amp_mod.discriminator_loss(params.disc, ref, pol, weights.gp_weight)
        if not np.isfinite(l_disc.data).all():
            return UpdateReport(
                l_ppo=float(np.mean(stats["l_ppo"])) if stats["l_ppo"] else 0.0,
                l_value=float(np.mean(stats["l_value"])) if stats["l_value"] else 0.0,
                l_pred=float(np.mean(stats["l_pred"])) if stats["l_pred"] else 0.0,
                entropy=float(np.mean(stats["entropy"])) if stats["entropy"] else 0.0,
                l_disc=float("nan"), diverged=True,
            )
        dgrads = backward(l_disc, params=disc_params)
        opt_disc.step(dgrads)
        stats["l_disc"].append(float(l_disc.data))

    return UpdateReport(
        l_ppo=float(np.mean(stats["l_ppo"])),
        l_value=float(np.mean(stats["l_value"])),
        l_pred=float(np.mean(stats["l_pred"])),
        entropy=float(np.mean(stats["entropy"])),
        l_disc=float(np.mean(stats["l_disc"])),
    )


# ---------------------------------------------------------------------------
# training loop and metrics
# ---------------------------------------------------------------------------

METRICS_HEADER = ("iter,mean_task_reward,mean_amp_reward,L_ppo,L_value,L_pred,"
                  "entropy,L_disc,success_rate")


@dataclass
class IterationRow:
    iteration: int
    mean_task_reward: float
    mean_amp_reward: float
    l_ppo: float
    l_value: float
    l_pred: float
    entropy: float
    l_disc: float
    success_rate: float

    def csv(self) -> str:
        vals = [
            self.mean_task_reward, self.mean_amp_reward, self.l_ppo, self.l_value,
            self.l_pred, self.entropy, self.l_disc, self.success_rate,
        ]
        return f"{self.iteration}," + ",".join(f"{v:.10g}" for v in vals)


def train_iteration(envs, params: ModelParams, weights: LossWeights,
                    opt_ac: Adam, opt_disc: Adam, steps: int, iteration: int,
                    rollout_rng: np.random.Generator,
                    update_rng: np.random.Generator) -> IterationRow:
    buf = collect_rollout(envs, params, steps, rollout_rng)
    build_future_targets(buf)
    compute_gae(buf, weights.gamma, weights.lam)
    report = composite_update(
        buf, params, weights, opt_ac, opt_disc, update_rng,
        control_dt=envs[0].cfg.control_dt,
    )
    if report.diverged:
        raise FloatingPointError(f"non-finite loss at iteration {iteration}")
    ended = [r for r in buf.end_reasons if r != "divergence"]
    successes = sum(1 for r in ended if r == "success")
    return IterationRow(
        iteration=iteration,
        mean_task_reward=float(buf.task_rewards.mean()),
        mean_amp_reward=float(buf.amp_rewards.mean()),
        l_ppo=report.l_ppo,
        l_value=report.l_value,
        l_pred=report.l_pred,
        entropy=report.entropy,
        l_disc=report.l_disc,
        success_rate=(successes / len(ended)) if ended else 0.0,
    )


@dataclass
class MetricsTable:
    families: list
    success: dict
    target_near: dict
    tracking_vel: dict

    @property
    def mean_success(self) -> float:
        return float(np.mean([self.success[f] for f in self.families]))

    @property
    def mean_target_near(self) -> float:
        return float(np.mean([self.target_near[f] for f in self.families]))

    @property
    def mean_tracking(self) -> float:
        return float(np.mean([self.tracking_vel[f] for f in self.families]))


def evaluate_metrics(params: ModelParams, families, episodes_per_family: int,
                     difficulty: float, seed: int,
                     cfg: SimConfig | None = None) -> MetricsTable:
    """Mean-mode episodes per terrain family: success rate, fraction ending
    within 0.5 m of the goal, and velocity-tracking score."""
    if episodes_per_family <= 0:
        raise ContractError("episodes_per_family must be positive")
    cfg = cfg or SimConfig()
    dtype = params.actor.log_std.dtype
    success, near, track = {}, {}, {}
    for fi, family in enumerate(families):
        wins, nears, tracks = 0, 0, []
        for ep in range(episodes_per_family):
            profile = generate_terrain(family, difficulty, seed=seed + 7919 * ep)
            env = PlanarEnv(profile, cfg, seed=seed + 13 * fi + ep)
            res = env.reset()
            scan = res.scan
            ep_track = []
            reason = "timeout"
            for _ in range(cfg.episode_cap):
                out = actor_forward(
                    params,
                    env.history[None].astype(dtype),
                    scan[None].astype(dtype),
                )
                action = out.mean.data[0]
                res = env.step(action)
                scan = res.scan
                ep_track.append(
                    math.exp(-((env.state.vx - env.command) ** 2) / cfg.vel_sigma_sq)
                )
                if res.terminated:
                    reason = res.reason
                    break
            if reason == "success":
                wins += 1
            if abs(env.state.x - profile.goal_x) <= 0.5:
                nears += 1
            tracks.append(float(np.mean(ep_track)))
        success[family] = wins / episodes_per_family
        near[family] = nears / episodes_per_family
        track[family] = float(np.mean(tracks))
    return MetricsTable(
        families=list(families), success=success, target_near=near,
        tracking_vel=track,
    )
