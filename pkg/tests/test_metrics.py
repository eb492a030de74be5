import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fern import metrics as m

from oracles import brute_force_w2

vec = hnp.arrays(np.float64, 6, elements=st.floats(-5, 5))


def test_w2_permutation_invariant():
    assert m.w2_1d([0, 1, 2, 3], [3, 1, 0, 2]) == 0.0


def test_w2_unit_shift():
    assert m.w2_1d([0, 1, 2, 3], [1, 2, 3, 4]) == 1.0


def test_w2_errors():
    with pytest.raises(ValueError):
        m.w2_1d([], [])
    with pytest.raises(ValueError):
        m.w2_1d([1.0], [1.0, 2.0])


def test_w2_matches_brute_force_small():
    rng = np.random.default_rng(0)
    for _ in range(50):
        H = rng.integers(1, 7)
        a, b = rng.standard_normal(H), rng.standard_normal(H)
        assert m.w2_1d(a, b) == pytest.approx(brute_force_w2(a, b), rel=1e-12, abs=1e-15)


@given(vec, vec)
def test_w2_below_pointwise_mse(a, b):
    assert m.w2_1d(a, b) <= np.mean((a - b) ** 2) + 1e-12


@given(vec, vec, vec)
def test_w2_axioms(a, b, c):
    assert m.w2_1d(a, a) == 0.0
    assert m.w2_1d(a, b) == m.w2_1d(b, a)
    d = lambda u, v: np.sqrt(m.w2_1d(u, v))  # noqa: E731
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_w2_rows():
    a = np.array([[0, 1, 2, 3], [1, 1, 1, 1.0]])
    b = np.array([[1, 2, 3, 4], [1, 1, 1, 1.0]])
    np.testing.assert_array_equal(m.w2_1d_rows(a, b), [1.0, 0.0])


def test_swd_identical_sets():
    x = np.random.default_rng(0).standard_normal((10, 5))
    assert m.swd(x, x, n_proj=7) == 0.0


def test_swd_single_axis_direction():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((12, 4)), rng.standard_normal((12, 4))
    e = np.zeros((1, 4))
    e[0, 2] = 1.0
    assert m.swd(a, b, directions=e) == pytest.approx(m.w2_1d(a[:, 2], b[:, 2]), rel=1e-14)


def test_swd_seeded_and_converges():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((40, 6)), rng.standard_normal((40, 6)) + 0.3
    assert m.swd(a, b, 500) == m.swd(a, b, 500)
    ref = m.swd(a, b, 10_000, seed=99)
    # Monte-Carlo bound from the spread of per-direction costs
    dirs = m.projection_directions(6, 10_000, 99)
    per = m.w2_1d_rows((a @ dirs.T).T, (b @ dirs.T).T)
    bound = 4 * per.std() / np.sqrt(500)
    assert abs(m.swd(a, b, 500) - ref) < bound
    assert abs(m.swd(a, b, 1000) - ref) < bound


def test_swd_errors():
    with pytest.raises(ValueError):
        m.swd(np.ones((1, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        m.swd(np.ones((3, 3)), np.ones((3, 3)), n_proj=0)
    with pytest.raises(ValueError):
        m.swd(np.ones((3, 3)), np.ones((3, 2)))


def test_ept_perfect_and_immediate():
    t = np.zeros((2, 3, 10))
    assert m.ept(t, t, [1, 1, 1]) == 10
    p = t.copy()
    p[..., 0] = 2.0
    assert m.ept(p, t, [1, 1, 1]) == 1


def test_ept_ramp_strict():
    H = 20
    err = np.linspace(0.1, 2.0, H)              # 1.0 at step 10, 1.1 at step 11
    p = err[None, None, :]
    assert m.ept(p, np.zeros_like(p), [1.0]) == 11


def test_ept_errors():
    with pytest.raises(ValueError):
        m.ept(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), [0.0])


@given(hnp.arrays(np.float64, (3, 2, 8), elements=st.floats(0, 3)),
       hnp.arrays(np.float64, (3, 2, 8), elements=st.floats(0, 1)))
def test_ept_monotone_in_error(e, extra):
    small = m.ept_matrix(e, np.zeros_like(e), [1.0, 0.5])
    large = m.ept_matrix(e + extra, np.zeros_like(e), [1.0, 0.5])
    assert np.all(large <= small)
    assert np.all((small >= 1) & (small <= 8))


def test_evaluate_per_channel_average():
    rng = np.random.default_rng(3)
    true = rng.standard_normal((6, 5))
    pred = true + np.r_[np.zeros((3, 5)), np.ones((3, 5))]
    ch = np.repeat([0, 1], 3)
    rep = m.evaluate(pred, true, ch, np.array([0.5, 0.5]), n_proj=10)
    assert rep.mse == pytest.approx(0.5) and rep.mae == pytest.approx(0.5)
    assert rep.ept_avg == pytest.approx((5 + 1) / 2)
    assert rep.swd is not None and rep.swd_projections == 10
    assert m.evaluate(pred, true, ch, np.array([0.5, 0.5])).swd is None
    assert set(rep.to_dict()) >= {"mse", "mae", "wd", "swd", "ept_avg", "swd_seed"}
