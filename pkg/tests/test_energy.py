"""Double-well nonlinearity, energy, and gradient."""

import numpy as np
import pytest

from conftest import smooth_field
from spde_ac.energy import cube_hat, energy, energy_gradient, nonlinearity_f
from spde_ac.spectral import (
    GridSpec,
    ScalarField,
    forward_transform,
    l2_inner,
    l2_norm,
    to_coeffs,
)


class TestNonlinearity:
    def test_zeros_of_f(self, grid64):
        for const in (0.0, 1.0, -1.0):
            u = ScalarField(grid64, const * np.ones(64))
            assert np.max(np.abs(nonlinearity_f(u).values)) < 1e-13

    def test_sin_triple_angle(self, grid64):
        # sin^3 = (3 sin - sin 3x)/4, so f(sin) = -sin/4 - sin(3x)/4
        x = grid64.axis_coords()
        fu = nonlinearity_f(ScalarField(grid64, np.sin(x)))
        expect = -0.25 * np.sin(x) - 0.25 * np.sin(3 * x)
        assert np.max(np.abs(fu.values - expect)) < 1e-13

    def test_dealias_matches_convolution_oracle(self, rng):
        # independent oracle: cubic coefficients by direct convolution in
        # wavenumber space, for fields with the top third of modes empty
        grid = GridSpec(1, 32)
        kmax = grid.n // 3  # resolved band for an alias-free cubic
        x = grid.coords()[0]
        vals = rng.standard_normal() * np.ones(grid.shape)
        coeff = {0: complex(vals[0])}
        for k in range(1, kmax + 1):
            a, b = rng.standard_normal(2)
            coeff[k] = 0.5 * (a - 1j * b)
            coeff[-k] = 0.5 * (a + 1j * b)
            vals = vals + a * np.cos(k * x) + b * np.sin(k * x)
        # dense plain-exponential coefficients over k = -3*kmax .. 3*kmax
        width = 3 * kmax
        dense = np.zeros(2 * width + 1, complex)
        for k, c in coeff.items():
            dense[k + width] = c
        conv = np.convolve(np.convolve(dense, dense), dense)
        mid = conv.shape[0] // 2

        got = cube_hat(to_coeffs(vals, 1), grid)
        # package coefficients carry sqrt(2 pi) * (-1)^k relative to the
        # plain exponential expansion (basis anchored at the first node)
        scale = np.sqrt(2 * np.pi)
        half = grid.n // 2
        for k in range(-half + 1, half + 1):
            want = conv[mid + k] if abs(k) <= width else 0.0
            if k == half and half <= width:
                want = want + conv[mid - half]  # truncation folds -n/2 into +n/2
            expected = ((-1) ** k) * want
            assert got[k % grid.n] / scale == pytest.approx(expected, abs=1e-12)

    def test_one_sided_monotone_bound(self, grid64, rng):
        # (f(a) - f(b), a - b) >= -||a-b||^2, pointwise algebra
        for _ in range(30):
            a = smooth_field(rng, grid64, amp=1.5)
            b = smooth_field(rng, grid64, amp=1.5)
            fa = nonlinearity_f(a, dealias=False)
            fb = nonlinearity_f(b, dealias=False)
            diff = ScalarField(grid64, a.values - b.values)
            pair = l2_inner(ScalarField(grid64, fa.values - fb.values), diff)
            assert pair >= -l2_norm(diff) ** 2 - 1e-12


class TestEnergy:
    def test_well_minimum(self, grid64):
        rep = energy(ScalarField(grid64, np.ones(64)))
        assert rep.energy == pytest.approx(0.0, abs=1e-14)
        assert rep.dirichlet_part == 0.0

    def test_zero_field(self, grid64):
        rep = energy(ScalarField(grid64, np.zeros(64)))
        assert rep.energy == pytest.approx(np.pi / 2, rel=1e-13)
        assert rep.potential_part == pytest.approx(np.pi / 2, rel=1e-13)

    def test_sin_analytic(self, grid64):
        x = grid64.axis_coords()
        rep = energy(ScalarField(grid64, np.sin(x)))
        assert rep.dirichlet_part == pytest.approx(np.pi / 2, rel=1e-12)
        assert rep.potential_part == pytest.approx(3 * np.pi / 16, rel=1e-12)
        assert rep.energy == pytest.approx(np.pi / 2 + 3 * np.pi / 16, rel=1e-12)

    def test_parts_sum_and_sign(self, grid64, rng):
        for _ in range(10):
            rep = energy(smooth_field(rng, grid64, amp=2.0))
            assert rep.energy == pytest.approx(rep.dirichlet_part + rep.potential_part)
            assert rep.dirichlet_part >= 0.0
            assert rep.potential_part >= 0.0

    def test_quadrature_oracle_high_resolution(self):
        # potential part of sin on a fine grid vs analytic cos^4 integral
        g = GridSpec(1, 256)
        x = g.axis_coords()
        rep = energy(ScalarField(g, np.sin(x)))
        assert rep.potential_part == pytest.approx(0.25 * (3 * np.pi / 4), rel=1e-13)


class TestGradient:
    def test_equilibrium(self, grid64):
        g = energy_gradient(ScalarField(grid64, np.ones(64)))
        assert np.max(np.abs(g.values)) < 1e-13

    def test_sin_analytic(self, grid64):
        x = grid64.axis_coords()
        g = energy_gradient(ScalarField(grid64, np.sin(x)))
        expect = 0.75 * np.sin(x) - 0.25 * np.sin(3 * x)
        assert np.max(np.abs(g.values - expect)) < 1e-12

    def test_finite_difference_oracle(self, grid64, rng):
        # central differences of E converge quadratically to the pairing
        # with the gradient; the energy is quartic so ratios sit at 100
        for _ in range(5):
            u = smooth_field(rng, grid64)
            h = smooth_field(rng, grid64)
            pair = l2_inner(energy_gradient(u), h)
            errs = []
            for eps in (1e-2, 1e-3, 1e-4):
                ep = energy(ScalarField(grid64, u.values + eps * h.values)).energy
                em = energy(ScalarField(grid64, u.values - eps * h.values)).energy
                errs.append(abs((ep - em) / (2 * eps) - pair))
            assert errs[2] <= 1e-6 * abs(pair)
            for coarse, fine in zip(errs, errs[1:]):
                assert 50 < coarse / max(fine, 1e-300) < 200

    def test_gradient_2d(self, rng):
        g = GridSpec(2, 16)
        xs = g.coords()
        u = ScalarField(g, np.sin(xs[0]) * np.ones(g.shape))
        grad = energy_gradient(u)
        expect = 0.75 * np.sin(xs[0]) - 0.25 * np.sin(3 * xs[0])
        assert np.max(np.abs(grad.values - expect * np.ones(g.shape))) < 1e-12
