import numpy as np
import pytest

from oracles import shoot_ground_state
from ztorus import profiles
from ztorus.profiles import (
    DecayFitError,
    RadialGrid,
    certify_decay,
    radial_grad_l2,
    radial_h1,
    radial_l2,
    radial_laplacian,
    residuals_on_refined,
    solve_ground_state,
    solve_profile_pair,
    write_profile_csv,
)


class TestGroundState:
    def test_against_shooting_oracle(self, ground_state):
        q0_oracle, mass_oracle = shoot_ground_state()
        # oracle agreement to 4 significant digits, then frozen values
        assert abs(ground_state.q_at_zero - q0_oracle) < 5e-4 * q0_oracle
        assert abs(ground_state.mass_sq - mass_oracle) < 5e-4 * mass_oracle
        assert abs(ground_state.q_at_zero - 2.2062) < 5e-4
        assert abs(ground_state.mass_sq - 11.70) < 5e-3

    def test_residual(self, ground_state):
        assert ground_state.residual <= 1e-9

    def test_boundary_decay(self, ground_state):
        assert ground_state.q_values[-1] <= 1e-5

    def test_positive_and_eventually_decreasing(self, ground_state):
        q = ground_state.q_values
        assert np.all(q[:-1] > 0)
        tail = q[ground_state.grid.nodes > 5.0]
        assert np.all(np.diff(tail) < 0)

    def test_independent_second_order_stencil(self):
        # definition of solving the ODE; the (1/r) d/dr stencil carries an
        # O(h^2) floor near the origin, so 1e-6 needs h ~ 3e-4
        # the solver's own gate is left at the fine grid's roundoff floor
        fine = solve_ground_state(RadialGrid(15.0, 65537), tol=1e-7)
        q = fine.q_values
        h = fine.grid.h
        lap = np.empty_like(q)
        lap[1:-1] = (q[2:] - 2 * q[1:-1] + q[:-2]) / h**2 + (q[2:] - q[:-2]) / (
            2 * h * fine.grid.nodes[1:-1]
        )
        res = np.abs(-lap[1:-1] + q[1:-1] - q[1:-1] ** 3)
        assert np.max(res) <= 1e-6

    def test_truncation_insensitivity(self, ground_state):
        wide = solve_ground_state(RadialGrid(30.0, 8192), tol=1e-8)
        assert abs(wide.mass_sq - ground_state.mass_sq) <= 1e-8

    def test_decay_certificate(self, ground_state):
        cert = certify_decay(ground_state, (8.0, 13.0))
        assert 0.8 <= cert.delta <= 1.2

    def test_rmax_too_small_rejected(self):
        with pytest.raises(ValueError):
            solve_ground_state(RadialGrid(10.0, 1024))


class TestProfilePair:
    def test_lambda_zero_reduction(self, ground30, gm_grid):
        prof = solve_profile_pair(0.0, ground30, tol=1e-8)
        assert max(prof.residuals) <= 1e-8
        assert np.max(np.abs(prof.p_values - ground30.q_values)) < 1e-8
        assert np.max(np.abs(prof.n_values + ground30.q_values**2)) < 1e-8

    def test_small_lambda_close_to_limit(self, ground30, gm_grid):
        prof = solve_profile_pair(1e-3, ground30, tol=1e-8)
        dist = radial_h1(gm_grid, prof.p_values - ground30.q_values)
        assert dist <= 1e-2

    def test_continuation_to_0p1(self, profile01):
        assert max(profile01.residuals) <= 1e-8

    def test_n_negative_near_origin(self, profile_family):
        for lam, prof in profile_family.items():
            assert prof.n_values[0] < 0

    def test_monotone_continuation_distance(self, profile_family, ground30, gm_grid):
        q = ground30.q_values
        dists = []
        for lam in sorted(profile_family):
            prof = profile_family[lam]
            dists.append(
                radial_h1(gm_grid, prof.p_values - q)
                + radial_l2(gm_grid, prof.n_values + q**2)
            )
        assert all(a < b for a, b in zip(dists, dists[1:]))

    def test_refined_grid_residuals(self, profile01):
        rp, rn = residuals_on_refined(profile01)
        assert rp <= 1e-7
        assert rn <= 1e-7

    def test_decay_certificates(self, profile01):
        cert = profile01.decay_cert
        assert cert is not None
        assert cert.delta > 0
        assert cert.sigma >= 2.5

    def test_decay_noise_floor(self, gm_grid, profile01):
        zero = profiles.SelfSimilarProfile(
            lam=0.1, grid=gm_grid,
            p_values=np.zeros(gm_grid.n_points), n_values=np.zeros(gm_grid.n_points),
            residuals=(0.0, 0.0),
        )
        with pytest.raises(DecayFitError):
            certify_decay(zero, (6.0, 12.0))

    def test_lambda_out_of_range(self, ground30):
        with pytest.raises(ValueError):
            solve_profile_pair(0.7, ground30)

    def test_csv_export(self, profile01, tmp_path):
        path = write_profile_csv(profile01, tmp_path)
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "r,P,N"
        assert len(lines) == profile01.grid.n_points + 1
        r0, p0, n0 = (float(v) for v in lines[1].split(","))
        assert r0 == 0.0 and p0 == profile01.p_values[0]


class TestRadialNorms:
    def test_grad_norm_matches_spectrum_free_check(self, ground30, gm_grid):
        # for the ground state, the 2D identities give |grad Q|^2 = |Q|^2
        grad = radial_grad_l2(gm_grid, ground30.q_values)
        assert abs(grad**2 - ground30.mass_sq) < 1e-3 * ground30.mass_sq

    def test_weighted_norm(self, gm_grid):
        # |x * f|_{L2} for f = exp(-r^2/2): closed form 2pi * int r^2 e^{-r^2} r dr = pi
        f = np.exp(-gm_grid.nodes**2 / 2.0)
        val = radial_l2(gm_grid, f, weight_power=1)
        assert abs(val**2 - np.pi) < 1e-6

    def test_radial_laplacian_gaussian(self, gm_grid):
        r = gm_grid.nodes
        f = np.exp(-(r**2))
        lap = radial_laplacian(f, gm_grid)
        exact = (4.0 * r**2 - 4.0) * f
        assert np.max(np.abs(lap - exact)) < 1e-8
