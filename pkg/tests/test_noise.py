"""Wiener paths, coupling, and the three diffusion classes."""

import numpy as np
import pytest

from spde_ac.noise import (
    FactorMismatch,
    NoiseSpec,
    apply_diffusion,
    coarsen,
    default_num_modes,
    hs_norm_l2,
    mode_amplitudes,
    read_path,
    sample_path,
    w32_image_check,
    write_path,
)
from spde_ac.spectral import GridSpec


class TestPathSampling:
    def test_deterministic(self):
        a = sample_path(123, 8, 1e-3, 64)
        b = sample_path(123, 8, 1e-3, 64)
        assert np.array_equal(a.increments, b.increments)

    def test_streams_differ(self):
        a = sample_path(123, 8, 1e-3, 64, stream=0)
        b = sample_path(123, 8, 1e-3, 64, stream=1)
        assert not np.array_equal(a.increments, b.increments)

    def test_gaussian_moments(self):
        # K=1, 1e5 steps: mean within 4 sigma, variance within 5%
        n = 100_000
        tau = 1e-4
        p = sample_path(5, 1, tau, n)
        z = p.increments[:, 0] / np.sqrt(tau)
        assert abs(z.mean()) < 4.0 / np.sqrt(n)
        assert abs(z.var() - 1.0) < 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_path(0, 4, 1e-3, 0)
        with pytest.raises(ValueError):
            sample_path(0, 4, -1e-3, 4)


class TestCoarsen:
    def test_identity(self):
        p = sample_path(1, 4, 1e-3, 16)
        assert coarsen(p, 1) is p

    def test_total_increment(self):
        p = sample_path(1, 4, 1e-3, 16)
        c = coarsen(p, 16)
        assert c.num_steps == 1
        assert np.allclose(c.increments[0], p.increments.sum(axis=0), rtol=1e-12)

    def test_chain_bit_exact(self):
        p = sample_path(7, 8, 1e-3, 64)
        assert np.array_equal(coarsen(coarsen(p, 2), 2).increments, coarsen(p, 4).increments)
        assert np.array_equal(
            coarsen(coarsen(p, 4), 2).increments, coarsen(p, 8).increments
        )

    def test_factor_validation(self):
        p = sample_path(1, 4, 1e-3, 16)
        with pytest.raises(FactorMismatch):
            coarsen(p, 3)
        with pytest.raises(FactorMismatch):
            coarsen(p, 32)

    def test_variance_scales_with_factor(self):
        p = sample_path(11, 1, 1e-3, 2**14)
        c = coarsen(p, 4)
        v = c.increments[:, 0].var()
        assert abs(v - 4e-3) < 0.1 * 4e-3

    def test_tau_updated(self):
        p = sample_path(1, 4, 1e-3, 16)
        assert coarsen(p, 4).tau_fine == pytest.approx(4e-3)


class TestDiffusion:
    def test_zero_increment(self, grid64, rng):
        u = rng.standard_normal(64)
        for variant in ("additive", "nemytskii", "affine"):
            spec = NoiseSpec(variant, 6, 2.0, 0.7)
            out = apply_diffusion(spec, grid64, u, np.zeros(6))
            assert np.max(np.abs(out)) == 0.0

    def test_additive_exact_mode(self, grid64):
        # K=1, mu_1=1 realises the first mode cos(x); dW=0.3 gives 0.3 cos x
        spec = NoiseSpec("additive", 1, 0.0, 1.0)
        x = grid64.axis_coords()
        out = apply_diffusion(spec, grid64, np.zeros(64), np.array([0.3]))
        assert np.max(np.abs(out - 0.3 * np.cos(x))) < 1e-15

    def test_additive_independent_of_state(self, grid64, rng):
        spec = NoiseSpec("additive", 6, 2.0, 0.7)
        dw = rng.standard_normal(6)
        a = apply_diffusion(spec, grid64, np.zeros(64), dw)
        b = apply_diffusion(spec, grid64, rng.standard_normal(64), dw)
        assert np.array_equal(a, b)

    def test_affine_linear_part_vanishes_at_zero(self, grid64, rng):
        spec = NoiseSpec("affine", 6, 2.0, 0.7, affine_offset=0.0)
        out = apply_diffusion(spec, grid64, np.zeros(64), rng.standard_normal(6))
        assert np.max(np.abs(out)) == 0.0

    def test_affine_homogeneity(self, grid64, rng):
        spec = NoiseSpec("affine", 6, 2.0, 0.7, affine_offset=0.0)
        u = rng.standard_normal(64)
        dw = rng.standard_normal(6)
        one = apply_diffusion(spec, grid64, u, dw)
        two = apply_diffusion(spec, grid64, 2 * u, dw)
        assert np.allclose(two, 2 * one, rtol=1e-14)

    def test_batch_broadcasting(self, grid64, rng):
        spec = NoiseSpec("nemytskii", 6, 2.0, 0.7)
        u = rng.standard_normal((5, 64))
        dw = rng.standard_normal((5, 6))
        batch = apply_diffusion(spec, grid64, u, dw)
        for i in range(5):
            single = apply_diffusion(spec, grid64, u[i], dw[i])
            assert np.allclose(batch[i], single, rtol=1e-14)

    def test_wrong_mode_count(self, grid64):
        spec = NoiseSpec("additive", 6, 2.0, 0.7)
        with pytest.raises(ValueError, match="modes"):
            apply_diffusion(spec, grid64, np.zeros(64), np.zeros(5))


class TestHilbertSchmidt:
    def test_additive_constant(self, grid64, rng):
        spec = NoiseSpec("additive", 6, 2.0, 0.7)
        a = hs_norm_l2(spec, grid64, np.zeros(64))
        b = hs_norm_l2(spec, grid64, rng.standard_normal(64))
        assert a == b > 0

    def test_affine_homogeneous_doubles(self, grid64, rng):
        spec = NoiseSpec("affine", 6, 2.0, 0.7, affine_offset=0.0)
        u = rng.standard_normal(64)
        assert hs_norm_l2(spec, grid64, 2 * u) == pytest.approx(
            2 * hs_norm_l2(spec, grid64, u), rel=1e-12
        )

    def test_linear_growth_bound(self, grid64, rng):
        # ||Phi(u)||_HS <= c (1 + ||u||_L2) with c from the mode table:
        # mode images are mu_k * (profile or affine factors) * unit trig
        vol = 2 * np.pi
        for variant, profile in (("nemytskii", "sin"), ("nemytskii", "bounded_rational"), ("affine", "sin")):
            spec = NoiseSpec(variant, 6, 2.0, 0.7, profile=profile)
            mu = mode_amplitudes(spec, grid64)
            c = float(np.sqrt(np.sum(mu**2) * vol))
            for _ in range(20):
                u = rng.standard_normal(64) * rng.uniform(0.1, 3.0)
                l2 = float(np.sqrt(grid64.h * np.sum(u**2)))
                assert hs_norm_l2(spec, grid64, u) <= c * (1.0 + l2) + 1e-12

    def test_lipschitz_in_state(self, grid64, rng):
        # ||Phi(u) - Phi(v)||_HS <= c ||u - v||_L2 with c = sqrt(sum mu^2)
        for variant in ("nemytskii", "affine"):
            spec = NoiseSpec(variant, 6, 2.0, 0.7)
            mu = mode_amplitudes(spec, grid64)
            c = float(np.sqrt(np.sum(mu**2)))
            for _ in range(10):
                u = rng.standard_normal(64)
                v = rng.standard_normal(64)
                du = np.sqrt(grid64.h * np.sum((u - v) ** 2))
                # direct summation oracle over modes
                from spde_ac.noise import _basis, _profile

                if variant == "affine":
                    alpha, _ = _basis(spec, grid64)
                    images = alpha * (u - v)
                else:
                    (rows,) = _basis(spec, grid64)
                    images = rows * (_profile(spec, u) - _profile(spec, v))
                hs_diff = float(np.sqrt(grid64.h * np.sum(images**2)))
                assert hs_diff <= c * du + 1e-12


class TestSpecValidation:
    def test_variants(self):
        with pytest.raises(ValueError):
            NoiseSpec("white", 4, 2.0, 1.0)
        with pytest.raises(ValueError):
            NoiseSpec("nemytskii", 4, 2.0, 1.0, profile="cos")
        with pytest.raises(ValueError):
            NoiseSpec("additive", 0, 2.0, 1.0)

    def test_mode_budget(self, grid64):
        spec = NoiseSpec("additive", 2 * (grid64.n // 2) + 2, 2.0, 1.0)
        with pytest.raises(ValueError, match="frequencies"):
            apply_diffusion(spec, grid64, np.zeros(64), np.zeros(spec.num_modes))

    def test_decay_amplitudes(self, grid64):
        spec = NoiseSpec("additive", 4, 2.0, 0.5)
        mu = mode_amplitudes(spec, grid64)
        # interleaved cos/sin of frequency 1 then 2: nu = 1, 1, 4, 4
        assert np.allclose(mu, 0.5 * np.array([2.0, 2.0, 5.0, 5.0]) ** -2.0)

    def test_default_num_modes(self, grid64):
        k = default_num_modes(grid64, decay=2.0, threshold=1e-4)
        assert k >= 2 and k % 2 == 0
        assert default_num_modes(grid64, decay=50.0) == 2

    def test_w32_image_check(self, grid64):
        w32_image_check(NoiseSpec("additive", 8, 2.0, 0.5), grid64)
        with pytest.raises(ValueError, match="decay"):
            w32_image_check(NoiseSpec("additive", 8, 1.5, 0.5), grid64)


class TestModeTables2D:
    def test_frequency_order(self):
        g = GridSpec(2, 16)
        spec = NoiseSpec("affine", 4, 2.0, 1.0)
        nu = mode_amplitudes(spec, g)
        # amplitudes are nonincreasing because frequencies come sorted by |k|^2
        assert np.all(np.diff(nu) <= 1e-15)

    def test_diffusion_shape(self, rng):
        g = GridSpec(2, 16)
        spec = NoiseSpec("nemytskii", 5, 2.0, 0.7)
        out = apply_diffusion(spec, g, rng.standard_normal((16, 16)), rng.standard_normal(5))
        assert out.shape == (16, 16)


def test_path_dump_roundtrip(tmp_path):
    p = sample_path(99, 5, 0.25, 12, stream=3)
    target = tmp_path / "path.bin"
    write_path(p, target)
    q = read_path(target)
    assert q.seed == 99 and q.stream == 3
    assert q.tau_fine == 0.25
    assert np.array_equal(q.increments, p.increments)


def test_bad_magic(tmp_path):
    target = tmp_path / "junk.bin"
    target.write_bytes(b"nope" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        read_path(target)
