import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfeda import spectral
from bfeda.spectral import (Grid, PhysicalField, SpectralField, curl, dealiased_pointwise,
                            divergence, forward_transform, inverse_transform, leray_project,
                            project_coeffs, solenoidal_random_coeffs, spectral_derivative,
                            spectral_laplacian)

from conftest import random_real_coeffs


def test_grid_rejects_odd_or_small():
    with pytest.raises(ValueError):
        Grid(7)
    with pytest.raises(ValueError):
        Grid(6)
    with pytest.raises(ValueError):
        Grid(8, -1.0)


def test_roundtrip_and_mean_convention(grid8, rng):
    v = rng.standard_normal(grid8.shape)
    c = grid8.forward(v)
    assert np.allclose(grid8.inverse(c), v, atol=1e-13)
    assert c[0, 0, 0].real == pytest.approx(v.mean(), abs=1e-14)


def test_field_wrappers(grid8, rng):
    v = rng.standard_normal((3,) + grid8.shape)
    s = forward_transform(PhysicalField(grid8, v))
    p = inverse_transform(s)
    assert np.allclose(p.values, v, atol=1e-13)
    assert s.norm() == pytest.approx(p.norm(), rel=1e-12)
    with pytest.raises(ValueError):
        SpectralField(grid8, np.zeros((4, 4, 4), complex))


def test_parseval_matches_quadrature(grid16, rng):
    v = rng.standard_normal(grid16.shape)
    c = grid16.forward(v)
    quad = (v ** 2).sum() * grid16.dx ** 3
    assert grid16.norm_sq(c) == pytest.approx(quad, rel=1e-12)


def test_derivative_of_trig_polynomial():
    g = Grid(16, 3.0)
    x, y, z = g.mesh
    k = g.scale
    v = np.sin(2 * k * x) * np.cos(3 * k * y) + np.cos(k * z)
    s = forward_transform(PhysicalField(g, v))
    dx = inverse_transform(spectral_derivative(s, 0)).values
    dz = inverse_transform(spectral_derivative(s, 2)).values
    assert np.allclose(dx, 2 * k * np.cos(2 * k * x) * np.cos(3 * k * y), atol=1e-12)
    assert np.allclose(dz, -k * np.sin(k * z), atol=1e-12)
    lap = inverse_transform(spectral_laplacian(s)).values
    expect = -(13 * k * k) * np.sin(2 * k * x) * np.cos(3 * k * y) - k * k * np.cos(k * z)
    assert np.allclose(lap, expect, atol=1e-10)


def test_derivative_matches_finite_differences(rng):
    # a smooth, well-resolved field; fourth-order centered differences as the oracle
    g = Grid(32)
    x, y, z = g.mesh
    v = np.exp(np.sin(x) + 0.5 * np.cos(y - z))
    c = g.forward(v)
    d = g.inverse(1j * g.k_deriv[0] * c)
    h = g.dx
    fd = (-np.roll(v, -2, 0) + 8 * np.roll(v, -1, 0) - 8 * np.roll(v, 1, 0) + np.roll(v, 2, 0)) / (12 * h)
    assert np.abs(d - fd).max() < 2e-3


def test_leray_projection_properties(grid16, rng):
    c = np.stack([random_real_coeffs(grid16, rng) for _ in range(3)])
    p = project_coeffs(grid16, c)
    assert np.abs(divergence(grid16, p)).max() < 1e-12
    assert np.allclose(project_coeffs(grid16, p), p, atol=1e-14)
    # a pure gradient is removed, a curl is kept
    phi = random_real_coeffs(grid16, rng)
    grad = np.stack([1j * k * phi for k in grid16.k_deriv])
    grad[:, 0, 0, 0] = 0
    assert np.abs(project_coeffs(grid16, grad)).max() < 1e-12
    w = curl(grid16, c)
    assert np.allclose(project_coeffs(grid16, w), w, atol=1e-12)
    # orthogonality of the decomposition
    assert abs(grid16.inner(p, c - p)) < 1e-9 * grid16.norm_sq(c)


def test_leray_project_field_list(grid8, rng):
    fields = [SpectralField(grid8, random_real_coeffs(grid8, rng)) for _ in range(3)]
    out = leray_project(fields)
    stacked = np.stack([f.coeffs for f in out])
    assert np.abs(divergence(grid8, stacked)).max() < 1e-12


def test_dealiased_product_matches_truncated_convolution(rng):
    # oracle: direct convolution of the two spectra, truncated to resolved modes
    g = Grid(8)
    a = random_real_coeffs(g, rng)
    b = random_real_coeffs(g, rng)
    out = dealiased_pointwise(lambda p, q: p * q, SpectralField(g, a), SpectralField(g, b))
    got = g.forward(out.values)

    n = g.n
    full = lambda c: np.fft.fftn(g.inverse(c)) / n ** 3
    A, B = full(a), full(b)
    ks = np.fft.fftfreq(n, 1 / n).astype(int)
    conv = np.zeros((n, n, n), complex)
    for i1, k1 in enumerate(ks):
        for j1, l1 in enumerate(ks):
            for m1, q1 in enumerate(ks):
                if A[i1, j1, m1] == 0:
                    continue
                for i2, k2 in enumerate(ks):
                    for j2, l2 in enumerate(ks):
                        kk, ll = k1 + k2, l1 + l2
                        if max(abs(kk), abs(ll)) >= n // 2:
                            continue
                        for m2, q2 in enumerate(ks):
                            qq = q1 + q2
                            if abs(qq) >= n // 2:
                                continue
                            conv[kk % n, ll % n, qq % n] += A[i1, j1, m1] * B[i2, j2, m2]
    expect = conv[:, :, : n // 2 + 1]
    expect[~g.nyquist_free] = 0
    assert np.abs(got - expect).max() < 1e-12


def test_solenoidal_random_is_grid_independent(rng):
    a = solenoidal_random_coeffs(Grid(16), 3, np.random.default_rng(7))
    b = solenoidal_random_coeffs(Grid(32), 3, np.random.default_rng(7))
    va = Grid(16).inverse(a)
    vb = Grid(32).inverse(b)[:, ::2, ::2, ::2]
    assert np.allclose(va, vb, atol=1e-12)
    assert np.abs(divergence(Grid(16), a)).max() < 1e-12


def test_thread_count_does_not_change_results(grid16, rng):
    v = rng.standard_normal((3,) + grid16.shape)
    spectral.set_threads(1)
    a = grid16.to_padded_physical(grid16.forward(v))
    spectral.set_threads(2)
    try:
        b = grid16.to_padded_physical(grid16.forward(v))
    finally:
        spectral.set_threads(1)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        spectral.set_threads(0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 10.0))
def test_parseval_scales_with_box(seed, length):
    g = Grid(8, length)
    v = np.random.default_rng(seed).standard_normal(g.shape)
    c = g.forward(v)
    assert g.norm_sq(c) == pytest.approx((v ** 2).sum() * g.dx ** 3, rel=1e-11)
    assert g.grad_norm_sq(c) >= 0
