"""Parameterized layers: linear maps, sinusoidal positions, multi-head
cross-attention, and the context-modulated SwiGLU feed-forward block.

All forwards accept an arbitrary number of leading batch axes; the last one
or two axes carry the token/width structure. Residual additions are the
caller's responsibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import ContractError, Tensor, apply_primitive


@dataclass
class LinearLayer:
    weight: Tensor  # [out, in]
    bias: Tensor | None = None

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


def init_linear(rng: np.random.Generator, out_dim: int, in_dim: int, *,
                bias: bool = True, zero: bool = False,
                dtype=np.float32) -> LinearLayer:
    """Uniform +-sqrt(1/in_dim) init; ``zero`` starts the map at exactly 0."""
    if zero:
        w = np.zeros((out_dim, in_dim))
    else:
        bound = math.sqrt(1.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    layer = LinearLayer(weight=Tensor(w.astype(dtype), requires_grad=True))
    if bias:
        layer.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)
    return layer


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """y = W x (+ bias) applied along the last axis."""
    if x.shape[-1] != layer.in_dim:
        raise ContractError(
            f"linear: input last axis {x.shape[-1]} != weight in-dim {layer.in_dim}"
        )
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape((1, x.shape[0]))
    y = x @ layer.weight.transpose()
    if layer.bias is not None:
        y = y + layer.bias
    if squeeze:
        y = y.reshape((layer.out_dim,))
    return y


def sinusoidal_positions(count: int, width: int) -> np.ndarray:
    """Interleaved sin/cos position table with wavelength base 10000."""
    if width % 2 != 0:
        raise ContractError(f"positional width must be even, got {width}")
    pos = np.arange(count, dtype=np.float64)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(width // 2, dtype=np.float64)
                   * 2.0 / width)
    table = np.zeros((count, width), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freqs)
    table[:, 1::2] = np.cos(pos * freqs)
    return table


@dataclass
class AttentionParams:
    query: LinearLayer
    key: LinearLayer
    value: LinearLayer
    output: LinearLayer
    head_count: int
    head_dim: int

    def __post_init__(self):
        if self.head_count * self.head_dim != self.query.out_dim:
            raise ContractError(
                f"head_count*head_dim = {self.head_count * self.head_dim} "
                f"must equal model width {self.query.out_dim}"
            )


def init_attention(rng: np.random.Generator, width: int, head_count: int = 4,
                   dtype=np.float32) -> AttentionParams:
    if width % head_count != 0:
        raise ContractError(f"width {width} not divisible by {head_count} heads")
    mk = lambda: init_linear(rng, width, width, bias=False, dtype=dtype)
    return AttentionParams(
        query=mk(), key=mk(), value=mk(), output=mk(),
        head_count=head_count, head_dim=width // head_count,
    )


def _to_heads(x: Tensor, heads: int, head_dim: int) -> Tensor:
    """[..., tokens, width] -> [..., heads, tokens, head_dim]."""
    lead = x.shape[:-2]
    t = x.shape[-2]
    x = x.reshape(lead + (t, heads, head_dim))
    axes = tuple(range(len(lead))) + (x.ndim - 3 + 1, x.ndim - 3, x.ndim - 1)
    return x.transpose(axes)


def _from_heads(x: Tensor) -> Tensor:
    """[..., heads, tokens, head_dim] -> [..., tokens, heads*head_dim]."""
    lead = x.shape[:-3]
    h, t, d = x.shape[-3:]
    axes = tuple(range(len(lead))) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
    return x.transpose(axes).reshape(lead + (t, h * d))


def _swap_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return x.transpose(axes)


def cross_attention(params: AttentionParams, queries: Tensor, memory: Tensor,
                    return_weights: bool = False):
    """Scaled dot-product attention of query tokens over a memory.

    Shapes: queries [..., q, width], memory [..., m, width] -> [..., q, width].
    No residual is added here.
    """
    if queries.shape[-1] != memory.shape[-1]:
        raise ContractError(
            f"attention width mismatch: queries {queries.shape[-1]} "
            f"vs memory {memory.shape[-1]}"
        )
    h, d = params.head_count, params.head_dim
    q = _to_heads(linear_forward(params.query, queries), h, d)
    k = _to_heads(linear_forward(params.key, memory), h, d)
    v = _to_heads(linear_forward(params.value, memory), h, d)
    logits = (q @ _swap_last(k)) * (1.0 / math.sqrt(d))
    weights = apply_primitive("softmax", [logits])
    mixed = _from_heads(weights @ v)
    out = linear_forward(params.output, mixed)
    if return_weights:
        return out, weights.data
    return out


@dataclass
class ConditionalSwiGLUParams:
    w3: LinearLayer  # [hidden, width]
    w4: LinearLayer  # [hidden, width]
    w5: LinearLayer  # [width, hidden]
    c1: LinearLayer  # [hidden, context], bias-free
    c2: LinearLayer  # [hidden, context], bias-free

    def __post_init__(self):
        if self.c1.bias is not None or self.c2.bias is not None:
            raise ContractError("context modulators must be bias-free")


def init_conditional_swiglu(rng: np.random.Generator, width: int, hidden: int,
                            context_dim: int, dtype=np.float32,
                            zero_context: bool = True) -> ConditionalSwiGLUParams:
    """Modulators start at zero so training begins from the plain block."""
    return ConditionalSwiGLUParams(
        w3=init_linear(rng, hidden, width, dtype=dtype),
        w4=init_linear(rng, hidden, width, dtype=dtype),
        w5=init_linear(rng, width, hidden, dtype=dtype),
        c1=init_linear(rng, hidden, context_dim, bias=False, zero=zero_context,
                       dtype=dtype),
        c2=init_linear(rng, hidden, context_dim, bias=False, zero=zero_context,
                       dtype=dtype),
    )


def conditional_swiglu(params: ConditionalSwiGLUParams, x: Tensor,
                       c: Tensor) -> Tensor:
    """Gated feed-forward with additive context modulation of both branches.

    x [..., rows, width], c [..., context] broadcast across the rows.
    """
    if c.shape[-1] != params.c1.in_dim:
        raise ContractError(
            f"context length {c.shape[-1]} != modulator in-dim {params.c1.in_dim}"
        )
    gate_mod = linear_forward(params.c1, c)
    value_mod = linear_forward(params.c2, c)
    if x.ndim == gate_mod.ndim + 1:
        shape = gate_mod.shape[:-1] + (1, gate_mod.shape[-1])
        gate_mod = gate_mod.reshape(shape)
        value_mod = value_mod.reshape(shape)
    gate = apply_primitive("silu", [linear_forward(params.w3, x) + gate_mod])
    value = linear_forward(params.w4, x) + value_mod
    return linear_forward(params.w5, gate * value)


def plain_swiglu(params: ConditionalSwiGLUParams, x: Tensor) -> Tensor:
    """The unconditioned block: W5( SiLU(W3 x) * (W4 x) )."""
    gate = apply_primitive("silu", [linear_forward(params.w3, x)])
    return linear_forward(params.w5, gate * linear_forward(params.w4, x))
