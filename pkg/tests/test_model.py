import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fern import numkernel as nk
from fern.householder import apply_np, dense_orthogonal, householder_apply
from fern.model import (ConfigError, Fern, FernConfig, coupling_layer, encode, forward,
                        init_params, load_checkpoint, ot_head, param_count, softclamp,
                        softclamp_inverse, spd_project)
from fern.rng import generator

from oracles import dense_spd, dense_u, gaussian_w2_sq

SMALL = dict(input_len=8, horizon=8, patch=4, reflections=2, hidden=6)


def small(**kw):
    return FernConfig(**{**SMALL, **kw})


def inputs(cfg, batch=3, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((batch, cfg.input_len)),
            0.3 * rng.standard_normal((batch, cfg.latent_dim)),
            0.3 * rng.standard_normal((batch, cfg.horizon)))


def randomised(cfg, seed=0, scale=0.3):
    params = init_params(cfg, generator(seed, "init"))
    rng = np.random.default_rng(seed + 100)
    for t in params.values():
        t.data = t.data + scale * rng.standard_normal(t.shape)
    return params


# ---------------------------------------------------------------- softclamp


@pytest.mark.parametrize("lo,hi", [(0.0, 5.5), (-4.5, 4.5), (-15.0, 15.0)])
def test_softclamp_midpoint_and_saturation(lo, hi):
    m = 0.5 * (lo + hi)
    assert softclamp(m, lo, hi) == m
    assert abs(softclamp(hi + 10 * (hi - lo), lo, hi) - hi) < 1e-6
    assert abs(softclamp(lo - 10 * (hi - lo), lo, hi) - lo) < 1e-6


def test_softclamp_monotone_bounded_unit_slope():
    xs = np.linspace(-40, 40, 1000)
    ys = softclamp(xs, 0.0, 5.5)
    assert np.all(np.diff(ys) > 0)
    assert np.all((ys > 0) & (ys < 5.5))
    h = 1e-6
    assert (softclamp(2.75 + h, 0, 5.5) - softclamp(2.75 - h, 0, 5.5)) / (2 * h) == \
        pytest.approx(1.0, abs=1e-8)


def test_softclamp_tensor_matches_array_and_inverse():
    xs = np.linspace(-3, 8, 17)
    np.testing.assert_allclose(softclamp(nk.constant(xs), 0, 5.5).data, softclamp(xs, 0, 5.5))
    assert softclamp(softclamp_inverse(1.0, 0, 5.5), 0, 5.5) == pytest.approx(1.0, abs=1e-14)


def test_softclamp_bad_bounds():
    with pytest.raises(ValueError):
        softclamp(0.0, 1.0, 1.0)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        FernConfig(horizon=100, patch=24)
    with pytest.raises(ConfigError):
        FernConfig(reflections=30)
    with pytest.raises(ConfigError):
        FernConfig(input_len=97, horizon=96)
    with pytest.raises(ConfigError):
        FernConfig(eval_noise="mean")
    FernConfig(reflections=30, no_rotation=True)


def test_config_roundtrip():
    cfg = small(no_patch=True)
    assert FernConfig.from_dict(cfg.to_dict()) == cfg


def test_no_patch_reflections_beyond_horizon():
    with pytest.raises(ConfigError):
        FernConfig(input_len=8, horizon=8, patch=4, reflections=10, no_patch=True)


# ---------------------------------------------------------------- coupling / encoder


def _identity_heads(params, cfg):
    for i in range(1, cfg.enc_layers + 1):
        params[f"enc{i}.phix.W"].data[:] = 0.0
        params[f"enc{i}.phiz.W"].data[:] = 0.0


def test_coupling_identity_heads():
    cfg = small()
    params = init_params(cfg, generator(0, "init"))
    _identity_heads(params, cfg)
    x, z, _ = inputs(cfg)
    for i in range(1, cfg.enc_layers + 1):   # includes the block-diagonal layers 2 and 4
        x2, z2 = coupling_layer(nk.constant(x), nk.constant(z), params, i, cfg)
        np.testing.assert_allclose(x2.data, x, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(z2.data, z, rtol=1e-14, atol=1e-14)


def test_coupling_z_update_feeds_x_update():
    cfg = small()
    params = randomised(cfg)
    x, z, _ = inputs(cfg)
    xa, _ = coupling_layer(nk.constant(x), nk.constant(z), params, 1, cfg)
    xb, _ = coupling_layer(nk.constant(x), nk.constant(z + 0.1), params, 1, cfg)
    assert not np.allclose(xa.data, xb.data)


def test_block_layer_is_rotation_scaling():
    cfg = small()
    params = init_params(cfg, generator(0, "init"))
    _identity_heads(params, cfg)
    half = cfg.input_len // 2
    a, b = 0.8, 0.6
    bias = params["enc2.phiz.b"].data
    bias[:half] = softclamp_inverse(a, *cfg.block_bounds)
    bias[half:2 * half] = softclamp_inverse(b, *cfg.block_bounds)
    x = np.arange(1.0, 9.0)[None]
    out, _ = coupling_layer(nk.constant(x), nk.constant(np.zeros((1, 8))), params, 2, cfg)
    pairs = x.reshape(half, 2)
    expect = np.stack([a * pairs[:, 0] - b * pairs[:, 1], b * pairs[:, 0] + a * pairs[:, 1]], 1)
    np.testing.assert_allclose(out.data[0], expect.ravel(), rtol=1e-12)


def test_encoder_gradient_through_all_layers():
    cfg = small()
    params = randomised(cfg, 1)
    _, z, _ = inputs(cfg, 2)

    def f(t):
        return nk.sum(nk.tanh(encode(nk.reshape(t, (2, 8)), nk.constant(z), params, cfg)))

    assert nk.grad_check(f, np.random.default_rng(2).standard_normal(16), h=1e-5) < 1e-4


def test_encoder_decoupled_when_heads_zero():
    cfg = small()
    params = init_params(cfg, generator(0, "init"))
    _identity_heads(params, cfg)
    x, z, _ = inputs(cfg)
    h1 = encode(nk.constant(x), nk.constant(z), params, cfg).data
    h2 = encode(nk.constant(-3 * x), nk.constant(z), params, cfg).data
    np.testing.assert_array_equal(h1, h2)


def test_encoder_deterministic():
    cfg = small()
    params = randomised(cfg)
    x, z, _ = inputs(cfg)
    a = encode(nk.constant(x), nk.constant(z), params, cfg).data
    b = encode(nk.constant(x), nk.constant(z), params, cfg).data
    assert a.tobytes() == b.tobytes()


def test_no_encoder_no_mu_ignores_context():
    cfg = small(no_encoder_no_mu=True)
    params = randomised(cfg)
    x, z, y0 = inputs(cfg)
    a, _ = forward(x, z, y0, params, cfg)
    b, _ = forward(x * 5 + 1, z, y0, params, cfg)
    np.testing.assert_array_equal(a.data, b.data)


def test_only_encoder_skips_decoder_refinements():
    cfg = small(only_encoder=True)
    params = randomised(cfg)
    x, z, y0 = inputs(cfg)
    a, _ = forward(x, z, y0, params, cfg)
    params["head.dec1.W"].data += 1.0
    b, _ = forward(x, z, y0, params, cfg)
    np.testing.assert_array_equal(a.data, b.data)
    full = small()
    c, _ = forward(x, z, y0, params, full)
    assert not np.allclose(a.data, c.data)


# ---------------------------------------------------------------- OT head


def test_ot_head_shapes_default_patching():
    cfg = FernConfig(hidden=16)
    model = Fern(cfg, seed=0)
    _, f = model.predict(np.zeros((1, 336)), return_factors=True)
    assert f.eigenvalues.shape == (1, 14, 24)
    assert f.vectors.shape == (1, 14, 8, 24)
    np.testing.assert_allclose(np.linalg.norm(f.vectors, axis=-1), 1.0, atol=1e-9)
    assert np.all((f.eigenvalues >= 0) & (f.eigenvalues <= 5.5))


def test_ot_head_no_rotation():
    cfg = small(no_rotation=True)
    params = randomised(cfg)
    x, z, y0 = inputs(cfg)
    _, f = forward(x, z, y0, params, cfg)
    assert f.vectors.shape[2] == 0


def test_eigenvalues_saturate():
    cfg = small()
    params = init_params(cfg, generator(0, "init"))
    params["head.b2"].data[:cfg.patch] = 1e3
    x, z, y0 = inputs(cfg)
    _, f = forward(x, z, y0, params, cfg)
    np.testing.assert_allclose(f.eigenvalues, 5.5, atol=1e-6)


def test_zero_norm_reflection_falls_back(caplog):
    cfg = small()
    params = init_params(cfg, generator(0, "init"))
    p = cfg.patch
    params["head.W2"].data[:, 2 * p:] = 0.0
    params["head.b2"].data[2 * p:] = 0.0
    hz = nk.constant(np.full((1, cfg.hidden), 0.2))
    with caplog.at_level(logging.WARNING):
        _, _, vs = ot_head(hz, params, cfg)
    assert "zero-norm" in caplog.text
    e1 = np.zeros(p)
    e1[0] = 1.0
    np.testing.assert_array_equal(vs[0].data[0, 0], e1)


# ---------------------------------------------------------------- Householder / SPD


def unit_rows(rng, R, p):
    v = rng.standard_normal((R, p))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_householder_empty_and_e1():
    y = nk.constant([1.0, 2.0])
    assert householder_apply([], y).data.tolist() == [1.0, 2.0]
    out = householder_apply([nk.constant([1.0, 0.0])], y)
    np.testing.assert_array_equal(out.data, [-1.0, 2.0])


def test_householder_dimension_mismatch():
    with pytest.raises(nk.ShapeError):
        householder_apply([nk.constant([1.0, 0.0, 0.0])], nk.constant([1.0, 2.0]))
    with pytest.raises(ValueError):
        apply_np(np.ones((2, 3)), np.ones(4))


@given(st.integers(0, 2**31), st.sampled_from([1, 2, 3, 8, 24]))
def test_householder_matches_dense(seed, R):
    rng = np.random.default_rng(seed)
    vs = unit_rows(rng, R, 24)
    y = rng.standard_normal(24)
    U = dense_u(vs)
    out = householder_apply([nk.constant(v) for v in vs], nk.constant(y)).data
    np.testing.assert_allclose(out, U @ y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(apply_np(vs, y, transpose=True), U.T @ y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dense_orthogonal(vs), U, rtol=0, atol=1e-13)
    assert np.abs(U.T @ U - np.eye(24)).max() < 1e-10
    assert np.linalg.det(U) == pytest.approx((-1.0) ** R, abs=1e-9)


def test_spd_identity_transport():
    y0 = np.random.default_rng(0).standard_normal((2, 3, 4))
    out = spd_project(nk.constant(np.ones((2, 3, 4))), nk.constant(np.zeros((2, 3, 4))), [],
                      nk.constant(y0))
    np.testing.assert_array_equal(out.data, y0)


def test_spd_translation_image_and_affine_equivalence():
    rng = np.random.default_rng(5)
    p, R = 6, 4
    lam = rng.uniform(0, 5.5, p)
    t = rng.standard_normal(p)
    vs = unit_rows(rng, R, p)
    A = dense_spd(lam, vs)
    proj = lambda y0: spd_project(nk.constant(lam), nk.constant(t),   # noqa: E731
                                  [nk.constant(v) for v in vs], nk.constant(y0)).data
    np.testing.assert_allclose(proj(np.zeros(p)), A @ t, atol=1e-12)
    y0 = rng.standard_normal(p)
    np.testing.assert_allclose(proj(y0) - proj(np.zeros(p)), A @ y0, atol=1e-10)


def test_spd_rejects_negative_eigenvalue():
    with pytest.raises(AssertionError):
        spd_project(nk.constant([-0.1, 1.0]), nk.constant([0.0, 0.0]), [],
                    nk.constant([1.0, 1.0]))


@given(st.integers(0, 2**31))
def test_spd_spectrum_equals_lambda(seed):
    rng = np.random.default_rng(seed)
    p = 24
    lam = rng.uniform(0, 5.5, p)
    A = dense_spd(lam, unit_rows(rng, 8, p))
    np.testing.assert_allclose(A, A.T, atol=1e-13)
    ev = np.linalg.eigvalsh(A)
    np.testing.assert_allclose(ev, np.sort(lam), atol=1e-8)
    assert ev.min() >= -1e-12


def test_gaussian_pushforward_and_w2_closed_form():
    rng = np.random.default_rng(11)
    p, a = 4, 0.1
    lam = rng.uniform(0.2, 3.0, p)
    t = rng.standard_normal(p)
    vs = unit_rows(rng, 2, p)
    A = dense_spd(lam, vs)
    mu = A @ t
    y0 = np.sqrt(a) * rng.standard_normal((100_000, p))
    ys = spd_project(nk.constant(np.broadcast_to(lam, y0.shape).copy()),
                     nk.constant(np.broadcast_to(t, y0.shape).copy()),
                     [nk.constant(np.broadcast_to(v, y0.shape).copy()) for v in vs],
                     nk.constant(y0)).data
    se = np.sqrt(a * np.diag(A @ A) / y0.shape[0])
    assert np.all(np.abs(ys.mean(0) - mu) < 5 * se)
    np.testing.assert_allclose(np.cov(ys.T), a * A @ A, atol=0.02 * np.abs(a * A @ A).max())
    closed = mu @ mu + a * np.trace((A - np.eye(p)) @ (A - np.eye(p)))
    general = gaussian_w2_sq(np.zeros(p), a * np.eye(p), mu, a * A @ A)
    assert abs(closed - general) < 1e-6


# ---------------------------------------------------------------- forward


def test_patch_independence():
    cfg = small()
    params = randomised(cfg)
    x, z, y0 = inputs(cfg, 1)
    base, _ = forward(x, z, y0, params, cfg)
    y1 = y0.copy()
    y1[:, 4:] = 0.0                          # zero patch 1's noise
    out, _ = forward(x, z, y1, params, cfg)
    np.testing.assert_array_equal(out.data[:, :4], base.data[:, :4])
    assert not np.allclose(out.data[:, 4:], base.data[:, 4:])


def test_forward_affine_in_y0():
    cfg = small(reflections=4)
    params = randomised(cfg, 3)
    x, z, y0 = inputs(cfg, 1)
    out, f = forward(x, z, y0, params, cfg)
    zero, _ = forward(x, z, np.zeros_like(y0), params, cfg)
    for j in range(cfg.n_patches):
        A = dense_spd(f.eigenvalues[0, j], f.vectors[0, j])
        sl = slice(4 * j, 4 * j + 4)
        np.testing.assert_allclose(out.data[0, sl] - zero.data[0, sl], A @ y0[0, sl], atol=1e-9)


def test_no_patch_single_transport():
    cfg = FernConfig(hidden=8, no_patch=True)
    model = Fern(cfg, seed=0)
    _, f = model.predict(np.zeros((1, 336)), return_factors=True)
    assert f.eigenvalues.shape == (1, 1, 336)


def test_default_parameter_count():
    n = param_count(init_params(FernConfig(), generator(7, "init")))
    assert abs(n - 1.025e6) / 1.025e6 < 0.20


def test_no_dense_patch_matrix_on_forward_path():
    cfg = FernConfig(input_len=48, horizon=48, patch=24, reflections=8, hidden=16)
    params = init_params(cfg, generator(0, "init"))
    x, z, y0 = inputs(cfg, 5)
    with nk.allocation_probe() as shapes:
        forward(x, z, y0, params, cfg)
    p = cfg.patch_size
    assert shapes and not any(len(s) >= 2 and s[-2:] == (p, p) for s in shapes)


def test_reflection_cost_linear_in_r():
    counts = {}
    for R in (2, 8, 24):
        cfg = FernConfig(input_len=48, horizon=48, patch=24, reflections=R, hidden=8)
        counter = {}
        x, z, y0 = inputs(cfg, 3)
        forward(x, z, y0, init_params(cfg, generator(0, "init")), cfg, counter)
        counts[R] = counter["madds"]
    assert counts[24] / counts[2] == 12.0
    assert counts[8] / counts[2] == 4.0


def test_predict_zero_noise_and_sampled_noise():
    cfg = small()
    model = Fern(cfg, seed=3)
    x, z, y0 = inputs(cfg)
    pred = model.predict(x)
    expect, _ = model(x, np.zeros_like(z), np.zeros_like(y0))
    np.testing.assert_array_equal(pred, expect.data)
    sampler = Fern(small(eval_noise="sample"), params=model.params)
    with pytest.raises(ValueError):
        sampler.predict(x)
    a = sampler.predict(x, generator(1, "eval"))
    b = sampler.predict(x, generator(1, "eval"))
    np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    cfg = small()
    model = Fern(cfg, seed=5)
    model.save(tmp_path / "m.json", extra={"epoch": 3})
    back = Fern.load(tmp_path / "m.json")
    assert back.cfg == cfg
    for k, v in model.params.items():
        assert back.params[k].data.tobytes() == v.data.tobytes()
    _, _, extra = load_checkpoint(tmp_path / "m.json")
    assert extra == {"epoch": 3}
    x, _, _ = inputs(cfg)
    np.testing.assert_array_equal(back.predict(x), model.predict(x))


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")


def test_init_deterministic_per_seed():
    a = Fern(small(), seed=9).state()
    b = Fern(small(), seed=9).state()
    c = Fern(small(), seed=10).state()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)
