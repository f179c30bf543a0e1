"""Adversarial motion prior.

Discriminator sequences stack 8 real motion-state rows with the 2 predicted
future rows (policy side) or 2 genuine continuation rows (reference side).
The discriminator is a least-squares critic with +-1 targets and a gradient
penalty on reference samples; its score maps to a bounded style reward.

The penalty needs d(score)/d(input) as a differentiable expression, so the
discriminator is a fixed tanh MLP whose input gradient is written in closed
form with ordinary primitives (no second-order autodiff required).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env.gait import GAIT_FREQ
from .numcore import ContractError, Tensor, apply_primitive
from .nn import LinearLayer, init_linear, linear_forward
from .spaces import FUTURE_STEPS, HISTORY_LEN, SEQ_LEN

GP_WEIGHT = 5.0


@dataclass
class DiscriminatorParams:
    l1: LinearLayer
    l2: LinearLayer
    head: LinearLayer  # scalar output

    @property
    def in_dim(self) -> int:
        return self.l1.in_dim


def init_discriminator(rng: np.random.Generator, in_dim: int,
                       hidden=(128, 128), dtype=np.float32) -> DiscriminatorParams:
    return DiscriminatorParams(
        l1=init_linear(rng, hidden[0], in_dim, dtype=dtype),
        l2=init_linear(rng, hidden[1], hidden[0], dtype=dtype),
        head=init_linear(rng, 1, hidden[1], dtype=dtype),
    )


def _flatten_seq(params: DiscriminatorParams, seqs) -> Tensor:
    t = seqs if isinstance(seqs, Tensor) else Tensor(
        np.asarray(seqs, dtype=params.l1.weight.dtype))
    if t.shape[-1] == params.in_dim:
        return t  # already flat
    if t.ndim >= 2 and t.shape[-1] * t.shape[-2] == params.in_dim:
        return t.reshape(t.shape[:-2] + (params.in_dim,))
    raise ContractError(
        f"sequence of shape {t.shape} does not flatten to {params.in_dim}"
    )


def discriminator_score(params: DiscriminatorParams, seqs) -> Tensor:
    """Scalar score per sequence; accepts [.., rows, dim] or flat [.., rows*dim]."""
    x = _flatten_seq(params, seqs)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape((1, x.shape[0]))
    a1 = apply_primitive("tanh", [linear_forward(params.l1, x)])
    a2 = apply_primitive("tanh", [linear_forward(params.l2, a1)])
    d = linear_forward(params.head, a2)
    d = d.reshape(d.shape[:-1])
    if squeeze:
        d = d.reshape(())
    return d


def discriminator_score_with_input_grad(params: DiscriminatorParams, seqs):
    """Score and d(score)/d(input), both as graph expressions.

    The input gradient of the tanh MLP is the chained Jacobian
    W1^T diag(1-a1^2) W2^T diag(1-a2^2) w_head, written with primitives so
    the gradient penalty stays differentiable w.r.t. the weights.
    """
    x = _flatten_seq(params, seqs)
    a1 = apply_primitive("tanh", [linear_forward(params.l1, x)])
    a2 = apply_primitive("tanh", [linear_forward(params.l2, a1)])
    d = linear_forward(params.head, a2).reshape(a2.shape[:-1])
    one = Tensor(np.ones((), dtype=x.dtype))
    g2 = (one - a2.square()) * params.head.weight.reshape((params.head.in_dim,))
    g1 = (one - a1.square()) * (g2 @ params.l2.weight)
    gx = g1 @ params.l1.weight
    return d, gx


def assemble_policy_sequence(history, predicted) -> Tensor:
    """Real 8-row history followed by the 2 predicted rows, in time order."""
    hist = history if isinstance(history, Tensor) else Tensor(
        np.asarray(history, dtype=predicted.dtype if isinstance(predicted, Tensor)
                   else np.float64))
    pred = predicted if isinstance(predicted, Tensor) else Tensor(
        np.asarray(predicted, dtype=hist.dtype))
    if hist.shape[-2] != HISTORY_LEN:
        raise ContractError(f"history must have {HISTORY_LEN} rows, got {hist.shape}")
    if pred.shape[-2] != FUTURE_STEPS:
        raise ContractError(f"predicted block must have {FUTURE_STEPS} rows, got {pred.shape}")
    if hist.shape[-1] != pred.shape[-1]:
        raise ContractError(
            f"state widths differ: history {hist.shape[-1]} vs predicted {pred.shape[-1]}"
        )
    return apply_primitive("concat", [hist, pred], axis=-2)


def assemble_reference_sequence(motion, phase: float, dt: float,
                                freq: float = GAIT_FREQ) -> np.ndarray:
    """10 consecutive reference states sampled at the control period."""
    rows = [np.asarray(motion((phase + k * dt * freq) % 1.0)) for k in range(SEQ_LEN)]
    return np.stack(rows)


def discriminator_loss(params: DiscriminatorParams, ref_batch, policy_batch,
                       gp_weight: float = GP_WEIGHT) -> Tensor:
    """Least-squares objective: references toward +1, policy toward -1,
    plus a gradient penalty on the reference samples."""
    ref = np.asarray(ref_batch if not isinstance(ref_batch, Tensor) else ref_batch.data)
    if ref.size == 0:
        raise ContractError("empty reference batch")
    if isinstance(policy_batch, Tensor):
        if policy_batch.size == 0:
            raise ContractError("empty policy batch")
    elif np.asarray(policy_batch).size == 0:
        raise ContractError("empty policy batch")

    d_ref, grad_ref = discriminator_score_with_input_grad(params, ref)
    d_pol = discriminator_score(params, policy_batch)
    loss = (d_ref - 1.0).square().mean() + (d_pol + 1.0).square().mean()
    if gp_weight != 0.0:
        loss = loss + gp_weight * grad_ref.square().sum(axis=-1).mean()
    return loss


def reward_from_score(d) -> np.ndarray:
    """Bounded style mapping r = max(0, 1 - 0.25 (D - 1)^2)."""
    d = np.asarray(d, dtype=np.float64)
    return np.maximum(0.0, 1.0 - 0.25 * (d - 1.0) ** 2)


def amp_reward(params: DiscriminatorParams, seq) -> float:
    """Style reward in [0, 1] for one sequence."""
    return float(amp_reward_batch(params, np.asarray(seq)[None, ...])[0])


def amp_reward_batch(params: DiscriminatorParams, seqs) -> np.ndarray:
    return reward_from_score(score_batch(params, seqs))


def score_batch(params: DiscriminatorParams, seqs) -> np.ndarray:
    """Plain-numpy scores for reward computation (no graph)."""
    arr = np.asarray(seqs)
    if arr.shape[-1] != params.in_dim:
        if arr.ndim >= 2 and arr.shape[-1] * arr.shape[-2] == params.in_dim:
            arr = arr.reshape(arr.shape[:-2] + (params.in_dim,))
        else:
            raise ContractError(
                f"sequence of shape {arr.shape} does not flatten to {params.in_dim}"
            )
    arr = arr.astype(params.l1.weight.dtype)
    a1 = np.tanh(arr @ params.l1.weight.data.T + params.l1.bias.data)
    a2 = np.tanh(a1 @ params.l2.weight.data.T + params.l2.bias.data)
    return a2 @ params.head.weight.data[0] + params.head.bias.data[0]
