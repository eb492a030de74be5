import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fern import numkernel as nk
from fern.householder import reflect_tensor

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_matmul_shape():
    a = nk.constant(np.ones((2, 3)))
    b = nk.constant(np.ones((3, 4)))
    assert nk.matmul(a, b).shape == (2, 4)


def test_matmul_inner_mismatch():
    with pytest.raises(nk.ShapeError):
        nk.matmul(nk.constant(np.ones((2, 3))), nk.constant(np.ones((4, 2))))


def test_analytic_values():
    assert nk.tanh(nk.constant(0.0)).item() == 0.0
    assert nk.softplus(nk.constant(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_identity_affine():
    z = nk.constant([0.3, -1.7])
    out = nk.add(nk.mul(nk.constant([1.0, 1.0]), z), nk.constant([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, z.data)


def test_non_finite_trips():
    with pytest.raises(nk.NonFiniteError):
        nk.constant([np.nan])
    big = nk.constant([1e300])
    with pytest.raises(nk.NonFiniteError), np.errstate(over="ignore"):
        nk.mul(big, big)


def test_only_leading_batch_broadcast():
    a = nk.constant(np.ones((4, 3)))
    nk.add(a, nk.constant(np.ones(3)))
    with pytest.raises(nk.ShapeError):
        nk.add(a, nk.constant(np.ones((4, 1))))


def test_square_grad():
    x = nk.parameter(3.0)
    with nk.Tape() as tape:
        y = nk.square(x)
    tape.backward(y)
    assert x.grad == pytest.approx(6.0)


def test_norm_sq_grad():
    v = nk.parameter([1.0, 2.0])
    with nk.Tape() as tape:
        y = nk.sum(nk.mul(v, v))
    tape.backward(y)
    np.testing.assert_allclose(v.grad, [2.0, 4.0])


def test_backward_errors():
    x = nk.parameter([1.0, 2.0])
    with nk.Tape() as tape:
        y = nk.mul(x, 2.0)
    with pytest.raises(nk.ShapeError):
        tape.backward(y)
    with nk.Tape() as tape:
        y = nk.sum(x)
    tape.backward(y)
    with pytest.raises(nk.TapeError):
        tape.backward(y)


def test_untouched_leaf_gets_zero():
    a, b = nk.parameter([1.0, 2.0]), nk.parameter([5.0])
    with nk.Tape() as tape:
        y = nk.sum(nk.square(a))
    tape.backward(y, leaves=[a, b])
    np.testing.assert_array_equal(b.grad, [0.0])


def test_shared_leaf_accumulates_within_one_pass():
    x = nk.parameter(2.0)
    with nk.Tape() as tape:
        y = nk.add(nk.mul(x, x), nk.mul(x, 3.0))
    tape.backward(y)
    assert x.grad == pytest.approx(7.0)


def test_householder_grad_wrt_v():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(5)

    def f(v):
        unit = nk.l2_normalize(v)
        return nk.sum(nk.square(reflect_tensor(nk.constant(y), unit)[:3]))

    assert nk.grad_check(f, rng.standard_normal(5), h=1e-6) < 1e-5


def test_grad_check_tanh_sum():
    x = np.random.default_rng(1).standard_normal(20)
    assert nk.grad_check(lambda t: nk.sum(nk.tanh(t)), x) < 1e-6


def test_grad_check_constant():
    assert nk.grad_check(lambda t: nk.constant(4.0), np.ones(3)) == 0.0


PRIMITIVES = {
    "add": lambda t, c: nk.add(t, c),
    "sub": lambda t, c: nk.sub(c, t),
    "mul": lambda t, c: nk.mul(t, c),
    "neg": lambda t, c: nk.neg(t),
    "square": lambda t, c: nk.square(t),
    "tanh": lambda t, c: nk.tanh(t),
    "softplus": lambda t, c: nk.softplus(t),
    "matmul": lambda t, c: nk.matmul(nk.reshape(t, (2, 3)), nk.constant(c.data.reshape(3, 2))),
    "mean": lambda t, c: nk.mean(nk.reshape(t, (2, 3)), axis=0),
    "sum_keep": lambda t, c: nk.broadcast_to(nk.sum(nk.reshape(t, (2, 3)), -1, True), (2, 3)),
    "take": lambda t, c: nk.reshape(t, (2, 3))[:, 1:],
    "concat": lambda t, c: nk.concat([t, nk.mul(t, c)], axis=-1),
    "stack": lambda t, c: nk.stack([t, c], axis=0),
    "l2_normalize": lambda t, c: nk.l2_normalize(t),
    "huber": lambda t, c: nk.huber(nk.mul(t, 2.0), c.data, 1.0),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_jvp_matches_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    c = nk.constant(rng.standard_normal(6))
    w = rng.standard_normal(PRIMITIVES[name](nk.constant(np.ones(6)), c).shape)

    def f(t):
        return nk.sum(nk.mul(PRIMITIVES[name](t, c), w))

    assert nk.grad_check(f, rng.standard_normal(6) + 0.1, h=1e-6) < 1e-5


@given(hnp.arrays(np.float64, 5, elements=finite), finite, finite)
def test_linearity(x, a, b):
    def grad(fn):
        t = nk.parameter(x)
        with nk.Tape() as tape:
            y = fn(t)
        tape.backward(y)
        return t.grad

    f = lambda t: nk.sum(nk.tanh(t))
    g = lambda t: nk.sum(nk.square(t))
    combo = grad(lambda t: nk.add(nk.mul(f(t), a), nk.mul(g(t), b)))
    np.testing.assert_allclose(combo, a * grad(f) + b * grad(g), rtol=1e-12, atol=1e-12)


@given(hnp.arrays(np.float64, (3, 4), elements=finite))
def test_bit_determinism(x):
    def run():
        t = nk.parameter(x)
        w = nk.constant(np.linspace(-1, 1, 8).reshape(4, 2))
        with nk.Tape() as tape:
            y = nk.sum(nk.softplus(nk.matmul(nk.tanh(t), w)))
        tape.backward(y)
        return y.data.tobytes(), t.grad.tobytes()

    assert run() == run()


def test_no_recording_outside_tape():
    x = nk.parameter([1.0])
    y = nk.mul(x, 2.0)
    with nk.Tape() as tape:
        pass
    assert len(tape) == 0
    assert y.data[0] == 2.0


def test_allocation_probe_sees_shapes():
    with nk.allocation_probe() as shapes:
        nk.matmul(nk.constant(np.ones((2, 3))), nk.constant(np.ones((3, 5))))
    assert (2, 5) in shapes


def test_l2_normalize_zero_raises():
    with pytest.raises(nk.NonFiniteError):
        nk.l2_normalize(nk.constant(np.zeros(3)))
