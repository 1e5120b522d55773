import numpy as np
import pytest

from ztorus.spectral import (
    Field,
    SpectralError,
    TorusGrid,
    gradient,
    h_dot_norm,
    hhat_norm,
    laplacian,
    lp_norm,
    multiplier,
    read_field_snapshot,
    sobolev_norm,
    sym_abs_grad,
    sym_inv_abs_grad,
    sym_wave_sine,
    write_field_snapshot,
)


def random_smooth(grid, seed=0, decay=0.5, mean_zero=False):
    rng = np.random.default_rng(seed)
    n = grid.n_per_dim
    c = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * np.exp(-decay * grid.m_abs)
    if mean_zero:
        c[0, 0] = 0.0
    return Field.from_spectral(grid, c)


class TestTransforms:
    def test_constant_field_dc_mode(self):
        g = TorusGrid(64)
        u = Field.from_nodal(g, np.full((64, 64), 2.5 + 0.5j))
        s = u.spectral
        assert abs(s[0, 0] - (2.5 + 0.5j)) < 1e-13
        s2 = s.copy()
        s2[0, 0] = 0.0
        assert np.max(np.abs(s2)) < 1e-13

    def test_pure_mode(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        u = Field.from_nodal(g, np.exp(1j * x1))
        s = u.spectral
        assert abs(s[1, 0] - 1.0) < 1e-12
        s2 = s.copy()
        s2[1, 0] = 0.0
        assert np.max(np.abs(s2)) < 1e-12

    @pytest.mark.parametrize("n", [32, 64, 128, 256])
    def test_round_trip(self, n):
        g = TorusGrid(n)
        u = random_smooth(g, seed=n)
        back = Field.from_nodal(g, u.nodal)
        scale = np.max(np.abs(u.spectral))
        assert np.max(np.abs(back.spectral - u.spectral)) < 1e-12 * scale

    def test_parseval(self):
        g = TorusGrid(64)
        u = random_smooth(g, seed=3)
        lhs = np.sum(np.abs(u.nodal) ** 2) * g.h**2
        rhs = (2 * np.pi) ** 2 * np.sum(np.abs(u.spectral) ** 2)
        assert abs(lhs - rhs) < 1e-12 * rhs

    def test_real_kind_enforced(self):
        g = TorusGrid(32)
        with pytest.raises(SpectralError):
            Field.from_spectral(g, np.full((32, 32), 1j), "real").nodal

    def test_size_mismatch(self):
        g = TorusGrid(32)
        with pytest.raises(SpectralError):
            Field.from_nodal(g, np.zeros((16, 16)))


class TestMultipliers:
    def test_laplacian_eigenfunction(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        u = Field.from_nodal(g, np.exp(1j * x1))
        assert np.max(np.abs(laplacian(u).nodal + u.nodal)) < 1e-12

    def test_identity_symbol(self):
        g = TorusGrid(64)
        u = random_smooth(g, 1)
        v = multiplier(u, np.ones((64, 64)))
        assert np.max(np.abs(v.nodal - u.nodal)) < 1e-13

    def test_inv_abs_grad_unit_modes(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        u = Field.from_nodal(g, np.exp(1j * x1) + np.exp(-1j * x1))
        v = multiplier(u, sym_inv_abs_grad, "zero")
        assert np.max(np.abs(v.nodal - u.nodal)) < 1e-12

    def test_abs_grad_inverse_composition(self):
        g = TorusGrid(64)
        u = random_smooth(g, 5, mean_zero=True)
        v = multiplier(multiplier(u, sym_abs_grad), sym_inv_abs_grad, "zero")
        scale = np.max(np.abs(u.nodal))
        assert np.max(np.abs(v.nodal - u.nodal)) < 1e-12 * scale

    def test_singular_symbol_rejects_mean(self):
        g = TorusGrid(32)
        u = Field.from_nodal(g, np.full((32, 32), 1.0 + 0j))
        with pytest.raises(SpectralError):
            multiplier(u, sym_inv_abs_grad, "zero")
        with pytest.raises(SpectralError):
            multiplier(u, sym_inv_abs_grad, "keep")

    def test_wave_sine_two_mode_hand_sum(self):
        # direct coefficient summation oracle on a two-mode field
        g = TorusGrid(32)
        x1, x2 = g.nodes
        t = 0.37
        a, b = 0.8, -0.3j
        u = Field.from_nodal(g, a * np.exp(1j * x1) + b * np.exp(1j * (2 * x1 + x2)))
        v = multiplier(u, sym_wave_sine(t), "zero")
        expected = a * np.sin(t * 1.0) / 1.0 * np.exp(1j * x1) + b * np.sin(
            t * np.sqrt(5.0)
        ) / np.sqrt(5.0) * np.exp(1j * (2 * x1 + x2))
        assert np.max(np.abs(v.nodal - expected)) < 1e-12

    def test_gradient_nyquist_zeroed(self):
        g = TorusGrid(32)
        u = random_smooth(g, 9)
        g1, _ = gradient(u)
        assert np.all(g1.spectral[g.nyquist_mask] == 0)


class TestNorms:
    def test_sobolev_single_mode(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        u = Field.from_nodal(g, np.exp(1j * x1))
        assert abs(sobolev_norm(u, 1.0) - np.sqrt(2.0)) < 1e-12

    def test_sobolev_constant(self):
        g = TorusGrid(64)
        u = Field.from_nodal(g, np.full((64, 64), -1.7 + 0j))
        for k in (-1.0, 0.0, 2.0):
            assert abs(sobolev_norm(u, k) - 1.7) < 1e-12

    def test_sobolev_h0_is_l2_of_coefficients(self):
        g = TorusGrid(64)
        u = random_smooth(g, 11)
        assert abs(sobolev_norm(u, 0.0) - np.linalg.norm(u.spectral)) < 1e-12

    def test_lp_constant(self):
        g = TorusGrid(64)
        u = Field.from_nodal(g, np.full((64, 64), 3.0 + 0j))
        assert abs(lp_norm(u, 4) - 3.0 * np.sqrt(2 * np.pi)) < 1e-12

    def test_lp_unimodular_equals_constant_case(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        u = Field.from_nodal(g, np.exp(1j * x1))
        assert abs(lp_norm(u, 4) - np.sqrt(2 * np.pi)) < 1e-12

    def test_parseval_l2_vs_sobolev(self):
        g = TorusGrid(64)
        u = random_smooth(g, 13)
        assert abs(lp_norm(u, 2) - 2 * np.pi * sobolev_norm(u, 0.0)) < 1e-10 * lp_norm(u, 2)

    def test_hhat_cosine(self):
        g = TorusGrid(64)
        x1, _ = g.nodes
        phi = Field.from_nodal(g, np.cos(x1), "real")
        assert abs(hhat_norm(phi) - lp_norm(phi, 2)) < 1e-12

    def test_hhat_laplacian_identity(self):
        # |Lap g|_{hhat} = |grad g|_{L2}, checked by direct coefficient summation
        g = TorusGrid(64)
        smooth = random_smooth(g, 17, decay=1.0, mean_zero=True)
        gg = Field.from_nodal(g, smooth.nodal.real, "real")
        phi = laplacian(gg)
        coeffs = gg.spectral
        direct = 2 * np.pi * np.sqrt(np.sum(g.m_sq * np.abs(coeffs) ** 2))
        assert abs(hhat_norm(phi) - direct) < 1e-10 * max(direct, 1e-300)

    def test_hhat_zero(self):
        g = TorusGrid(32)
        assert hhat_norm(Field.zeros(g, "real")) == 0.0

    def test_hhat_rejects_mean(self):
        g = TorusGrid(32)
        u = Field.from_nodal(g, np.full((32, 32), 1.0), "real")
        with pytest.raises(SpectralError):
            hhat_norm(u)

    def test_gn_inequality_frozen_constant(self):
        # frozen empirical constant: seeded sup is 0.47, narrow bumps 0.63
        C = 0.75
        rng = np.random.default_rng(7)
        g = TorusGrid(64)
        for _ in range(200):
            dec = rng.uniform(0.2, 2.0)
            c = (rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))) * np.exp(
                -dec * g.m_abs
            )
            c[0, 0] = 0.0
            u = Field.from_spectral(g, c)
            assert lp_norm(u, 4) <= C * np.sqrt(lp_norm(u, 2) * h_dot_norm(u, 1))


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        g = TorusGrid(32)
        u = random_smooth(g, 23)
        path = tmp_path / "field.ztf"
        write_field_snapshot(path, u, 0.625)
        back, t = read_field_snapshot(path)
        assert t == 0.625
        assert back.kind == "complex"
        assert np.array_equal(back.nodal, u.nodal)

    def test_header(self, tmp_path):
        g = TorusGrid(32)
        u = Field.zeros(g, "real")
        path = tmp_path / "f.ztf"
        write_field_snapshot(path, u, 1.0)
        first = open(path, "rb").readline().decode("ascii")
        assert first.startswith("ZTFIELD v1 real 32 ")
