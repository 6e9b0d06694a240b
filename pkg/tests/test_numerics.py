import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astpe import numerics as nx
from astpe.numerics import GradTape, Tensor, grad_check


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = nx.matmul(Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_hand_product():
    out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(nx.ShapeError, match="inner extents"):
        nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_matmul_identity_associativity_small_ints():
    rng = np.random.default_rng(0)
    a = Tensor(rng.integers(-5, 5, (3, 4)).astype(float))
    b = Tensor(rng.integers(-5, 5, (4, 2)).astype(float))
    i = Tensor(np.eye(4))
    np.testing.assert_array_equal(((a @ i) @ b).data, (a @ b).data)


def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_no_overflow():
    y = nx.softmax_lastdim(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [1.0, 0.0], atol=1e-12)


def test_softmax_closed_form():
    y = nx.softmax_lastdim(Tensor([math.log(2.0), 0.0])).data
    np.testing.assert_allclose(y, [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_softmax_rows_and_shift_invariance(seed, shift):
    x = np.random.default_rng(seed).normal(0, 5, (4, 7))
    y = nx.softmax_lastdim(Tensor(x)).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nx.softmax_lastdim(Tensor(x + shift)).data, y, atol=1e-12)


def test_grad_check_square():
    x = t64(3.0)
    with GradTape() as tape:
        y = x * x
    assert float(tape.gradient(y, [x])[0]) == 6.0
    rep = grad_check(lambda: x * x, {"x": x}, eps=1e-6)
    assert rep.passed and rep.max_rel_error < 1e-8


def test_grad_check_rejects_nonfinite():
    x = t64(1.0)
    with pytest.raises(nx.NumericalError):
        grad_check(lambda: x * math.inf, {"x": x})


def test_grad_check_rejects_float32():
    x = Tensor(np.float32(1.0), requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda: x * x, {"x": x})


def test_suffix_broadcasting_only():
    with pytest.raises(nx.ShapeError):
        nx.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 1))))
    out = nx.add(Tensor(np.zeros((2, 3, 4))), Tensor(np.ones(4)))
    assert out.shape == (2, 3, 4)


def test_untouched_source_gets_zero_grad():
    a, b = t64([1.0, 2.0]), t64([3.0])
    with GradTape() as tape:
        loss = (a * a).sum()
    ga, gb = tape.gradient(loss, [a, b])
    np.testing.assert_array_equal(ga, [2.0, 4.0])
    np.testing.assert_array_equal(gb, [0.0])


def test_no_tape_records_nothing():
    a = t64([1.0])
    assert not (a * a).requires_grad
    with GradTape() as tape:
        b = a * a
    assert b.requires_grad and len(tape.nodes) == 1


# ---- every primitive against central differences, 20 seeds each

def _prim_cases(rng):
    a = t64(rng.normal(size=(2, 3, 4)))
    b = t64(rng.normal(size=(2, 3, 4)))
    w = t64(rng.normal(size=(4, 5)))
    bias = t64(rng.normal(size=4))
    m = t64(rng.normal(size=(2, 4, 3)))
    tbl = t64(rng.normal(size=(3, 5)))
    idx = rng.integers(0, 5, size=(3, 6))
    kern = t64(rng.normal(size=(4, 3, 3)))
    kb = t64(rng.normal(size=4))
    img = t64(rng.normal(size=(2, 3, 5, 4)))
    labels = rng.integers(0, 4, size=3)
    targets = rng.integers(0, 2, size=(3, 4))
    logits = t64(rng.normal(size=(3, 4)))
    r = t64(rng.normal(size=(3, 4)))
    proj = lambda t: (t * Tensor(np.random.default_rng(7).normal(size=t.shape))).sum()
    return {
        "add": (lambda: proj(a + b), {"a": a, "b": b}),
        "sub": (lambda: proj(a - bias), {"a": a, "bias": bias}),
        "mul": (lambda: proj(a * b), {"a": a, "b": b}),
        "mul_bias": (lambda: proj(a * bias), {"a": a, "bias": bias}),
        "matmul_w": (lambda: proj(a @ w), {"a": a, "w": w}),
        "matmul_batched": (lambda: proj(a @ m), {"a": a, "m": m}),
        "swap_last": (lambda: proj(a.T), {"a": a}),
        "permute": (lambda: proj(a.transpose(2, 0, 1)), {"a": a}),
        "reshape": (lambda: proj(a.reshape(6, 4)), {"a": a}),
        "getitem": (lambda: proj(a[:, 1:, :]), {"a": a}),
        "getitem_int": (lambda: proj(a[1]), {"a": a}),
        "concat": (lambda: proj(nx.concat([a, b], axis=1)), {"a": a, "b": b}),
        "pad": (lambda: proj(nx.pad_leading(a)), {"a": a}),
        "softmax": (lambda: proj(nx.softmax_lastdim(a)), {"a": a}),
        "normalize": (lambda: proj(nx.normalize_lastdim(a)), {"a": a}),
        "gelu": (lambda: proj(nx.gelu(a)), {"a": a}),
        "exp": (lambda: proj(nx.exp(a)), {"a": a}),
        "gather": (lambda: proj(nx.take_along_last(tbl, idx)), {"tbl": tbl}),
        "conv": (lambda: proj(nx.depthwise_conv3x3(img, kern, kb)), {"img": img, "k": kern, "kb": kb}),
        "mean": (lambda: (a * a).mean(), {"a": a}),
        "ce": (lambda: nx.cross_entropy(logits, labels), {"logits": logits}),
        "bce": (lambda: nx.bce_with_logits(logits, targets), {"logits": logits}),
        "layer_norm": (lambda: proj(nx.layer_norm(r, bias, bias)), {"r": r, "bias": bias}),
    }


PRIMS = sorted(_prim_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", PRIMS)
def test_primitive_gradients_match_finite_differences(name):
    for seed in range(20):
        f, params = _prim_cases(np.random.default_rng(seed))[name]
        rep = grad_check(f, params, eps=1e-6, tol=1e-4)
        assert rep.passed, (name, seed, rep.per_param)


def test_depthwise_conv_matches_loops():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5, 2))
    k = rng.normal(size=(2, 3, 3))
    b = rng.normal(size=2)
    out = nx.depthwise_conv3x3(Tensor(x), Tensor(k), Tensor(b)).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(x)
    for i in range(4):
        for j in range(5):
            for c in range(2):
                ref[i, j, c] = b[c] + sum(xp[i + a, j + e, c] * k[c, a, e] for a in range(3) for e in range(3))
    np.testing.assert_allclose(out, ref, atol=1e-13)


def test_bce_saturated_is_zero():
    logits = Tensor(np.array([[20.0, -20.0], [-20.0, 20.0]]))
    loss = nx.bce_with_logits(logits, np.array([[1, 0], [0, 1]]))
    assert float(loss.data) < 1e-8


def test_float32_stays_float32():
    x = Tensor(np.ones((2, 3), dtype=np.float32))
    assert (x * 0.5 + 1.0).dtype == np.float32
    assert nx.gelu(x).dtype == np.float32
