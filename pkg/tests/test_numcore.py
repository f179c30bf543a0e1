import numpy as np
import pytest

from pkfr import numcore
from pkfr.numcore import (
    ContractError,
    ShapeError,
    Tensor,
    UnsupportedOpError,
    apply_primitive,
    backward,
    concat,
    grad_check,
    split,
    tensor,
)


def t64(x, rg=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


def fd_grad(f, x, step=1e-6):
    """Central-difference gradient of scalar f w.r.t. flat entries of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = f()
        flat[j] = orig - step
        fm = f()
        flat[j] = orig
        gf[j] = (fp - fm) / (2 * step)
    return g


def test_matmul_identity():
    a = t64([[1.0, 2.0], [3.0, 4.0]])
    eye = t64(np.eye(2))
    out = apply_primitive("matmul", [a, eye])
    assert np.array_equal(out.data, a.data)


def test_softmax_symmetry():
    x = t64([0.0, 0.0])
    out = apply_primitive("softmax", [x])
    assert np.allclose(out.data, [0.5, 0.5], atol=0)


def test_silu_at_zero():
    x = t64([0.0])
    assert apply_primitive("silu", [x]).data[0] == 0.0


def test_backward_square():
    x = t64([3.0], rg=True)
    loss = (x * x).sum()
    backward(loss)
    assert x.grad[0] == pytest.approx(6.0)


def test_two_layer_network_matches_central_differences():
    rng = np.random.default_rng(7)
    w1 = t64(rng.normal(size=(4, 3)), rg=True)
    b1 = t64(rng.normal(size=(4,)), rg=True)
    w2 = t64(rng.normal(size=(1, 4)), rg=True)
    x = np.asarray(rng.normal(size=(5, 3)))

    def f(params):
        w1_, b1_, w2_ = params
        h = apply_primitive("silu", [Tensor(x) @ w1_.transpose() + b1_])
        return (h @ w2_.transpose()).sum()

    report = grad_check(f, [w1, b1, w2], step=1e-5, tol=1e-6)
    assert report.passed, f"max rel err {report.max_rel_err}"


def test_unreachable_leaf_gets_exact_zero():
    x = t64([2.0], rg=True)
    unused = t64([5.0], rg=True)
    loss = (x * x).sum()
    grads = backward(loss, params=[x, unused])
    assert np.array_equal(grads[1], np.zeros(1))


def test_grad_check_sum_of_squares():
    p = t64(np.linspace(-2, 2, 9), rg=True)
    report = grad_check(lambda ps: (ps[0] * ps[0]).sum(), [p], step=1e-5, tol=1e-8)
    assert report.passed
    assert report.max_rel_err < 1e-8


def test_grad_check_detects_corrupted_silu(monkeypatch):
    def bad_silu(inputs, attrs):
        (a,) = inputs
        sig = 1.0 / (1.0 + np.exp(-a.data))
        out = a.data * sig

        def vjp(g):
            return (g * sig,)  # missing the x*sig*(1-sig) term

        return out, vjp

    monkeypatch.setitem(numcore.PRIMITIVES, "silu", bad_silu)
    rng = np.random.default_rng(3)
    p = t64(rng.normal(size=(6,)) + 1.5, rg=True)
    report = grad_check(
        lambda ps: apply_primitive("silu", [ps[0]]).sum(), [p], step=1e-5, tol=1e-6
    )
    assert not report.passed
    assert report.max_rel_err > 1e-2


# -- per-primitive finite-difference sweep ----------------------------------

UNARY_KINDS = ["neg", "softmax", "layernorm", "silu", "tanh", "exp", "square"]


@pytest.mark.parametrize("kind", UNARY_KINDS)
def test_unary_primitive_matches_fd(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    x = rng.normal(size=(3, 4))
    r = rng.normal(size=(3, 4))
    xt = t64(x, rg=True)

    def build():
        out = apply_primitive(kind, [xt])
        return (out * t64(r)).sum()

    loss = build()
    backward(loss)
    numeric = fd_grad(lambda: float(build().data), x)
    assert np.allclose(xt.grad, numeric, rtol=1e-6, atol=1e-7), kind


def test_log_primitive_matches_fd():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.5, 2.0, size=(3, 3))
    r = rng.normal(size=(3, 3))
    xt = t64(x, rg=True)

    def build():
        return (apply_primitive("log", [xt]) * t64(r)).sum()

    backward(build())
    numeric = fd_grad(lambda: float(build().data), x)
    assert np.allclose(xt.grad, numeric, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("kind", ["add", "sub", "mul", "minimum"])
def test_binary_primitive_matches_fd(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(4, 3))
    at, bt = t64(a, rg=True), t64(b, rg=True)
    r = rng.normal(size=(4, 3))

    def build():
        return (apply_primitive(kind, [at, bt]) * t64(r)).sum()

    backward(build())
    for arr, node in ((a, at), (b, bt)):
        numeric = fd_grad(lambda: float(build().data), arr)
        assert np.allclose(node.grad, numeric, rtol=1e-6, atol=1e-7), kind


def test_matmul_matches_fd():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    at, bt = t64(a, rg=True), t64(b, rg=True)
    r = rng.normal(size=(3, 2))

    def build():
        return ((at @ bt) * t64(r)).sum()

    backward(build())
    for arr, node in ((a, at), (b, bt)):
        numeric = fd_grad(lambda: float(build().data), arr)
        assert np.allclose(node.grad, numeric, rtol=1e-6, atol=1e-8)


def test_batched_matmul_matches_fd():
    rng = np.random.default_rng(15)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 3))
    at, bt = t64(a, rg=True), t64(b, rg=True)
    r = rng.normal(size=(2, 3, 3))

    def build():
        return ((at @ bt) * t64(r)).sum()

    backward(build())
    for arr, node in ((a, at), (b, bt)):
        numeric = fd_grad(lambda: float(build().data), arr)
        assert np.allclose(node.grad, numeric, rtol=1e-6, atol=1e-8)


def test_reductions_and_movement_match_fd():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4))
    xt = t64(x, rg=True)
    r_mean = rng.normal(size=(4,))

    def build():
        y = xt.reshape((4, 3)).transpose()
        return (y.mean(axis=0) * t64(r_mean)).sum() + xt.sum() * 0.25

    backward(build())
    numeric = fd_grad(lambda: float(build().data), x)
    assert np.allclose(xt.grad, numeric, rtol=1e-6, atol=1e-8)


def test_clip_and_max_scalar_match_fd_away_from_kinks():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(10,)) * 3.0
    # keep entries away from the kink points so FD is valid
    x = x[(np.abs(x - 1.0) > 0.05) & (np.abs(x + 1.0) > 0.05) & (np.abs(x) > 0.05)]
    xt = t64(x, rg=True)
    r = np.ones_like(x)

    def build():
        return (xt.clip(-1.0, 1.0) * t64(r)).sum() + (xt.max_scalar(0.0)).sum()

    backward(build())
    numeric = fd_grad(lambda: float(build().data), x)
    assert np.allclose(xt.grad, numeric, rtol=1e-6, atol=1e-9)


def test_concat_and_split_match_fd():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 5))
    at, bt = t64(a, rg=True), t64(b, rg=True)
    r = rng.normal(size=(2, 4))

    def build():
        joined = concat([at, bt], axis=-1)
        left, right = split(joined, 2, axis=-1)
        return ((left - right) * t64(r)).sum()

    backward(build())
    for arr, node in ((a, at), (b, bt)):
        numeric = fd_grad(lambda: float(build().data), arr)
        assert np.allclose(node.grad, numeric, rtol=1e-6, atol=1e-8)


# -- invariants --------------------------------------------------------------

def test_layernorm_rows_standardized():
    rng = np.random.default_rng(31)
    x = t64(rng.normal(size=(6, 16)) * 4 + 2)
    out = apply_primitive("layernorm", [x]).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-9)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)  # eps shifts var by ~1e-5


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(32)
    x = t64(rng.normal(size=(8, 12)) * 30)
    out = apply_primitive("softmax", [x]).data
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(out > 0)


def test_backward_is_linear():
    rng = np.random.default_rng(33)
    x = t64(rng.normal(size=(5,)), rg=True)
    a, b = 1.7, -0.6

    def l1():
        return (x * x).sum()

    def l2():
        return apply_primitive("tanh", [x]).sum()

    backward(l1())
    g1 = x.grad.copy()
    backward(l2())
    g2 = x.grad.copy()
    backward(l1() * a + l2() * b)
    combined = x.grad.copy()
    assert np.all(np.abs(combined - (a * g1 + b * g2)) < 1e-10)


# -- error contracts ---------------------------------------------------------

def test_matmul_shape_error_names_axes():
    a = t64(np.zeros((2, 5)))
    b = t64(np.zeros((3, 4)))
    with pytest.raises(ShapeError, match="5.*3"):
        apply_primitive("matmul", [a, b])


def test_unknown_kind_raises():
    with pytest.raises(UnsupportedOpError):
        apply_primitive("convolve", [t64([1.0])])


def test_non_scalar_backward_raises():
    x = t64([1.0, 2.0], rg=True)
    with pytest.raises(ContractError):
        backward(x * x)


def test_mixed_precision_raises():
    a = Tensor(np.zeros(3, dtype=np.float32))
    b = Tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(ContractError):
        apply_primitive("add", [a, b])


@pytest.mark.filterwarnings("ignore:overflow")
def test_debug_finite_scan(monkeypatch):
    monkeypatch.setattr(numcore, "DEBUG_CHECK_FINITE", True)
    x = t64([1.0, 2.0])
    apply_primitive("exp", [x])  # finite in, finite out: fine
    big = t64([1e308])
    with pytest.raises(FloatingPointError):
        apply_primitive("square", [big])
