"""Measurements: conserved quantities, weighted norms, rate fits, concentration.

Norm conventions here are integral-normalized: L^2 means (int |u|^2 dx)^{1/2}
and Sobolev norms carry the same scaling (2pi times the coefficient sums of
the spectral module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from ztorus.construction import _smooth_step, torus_displacement
from ztorus.evolve import ReducedState, ZakharovState, spectral_tail_fraction
from ztorus.spectral import (
    Field,
    TorusGrid,
    h_dot_norm,
    h_norm,
    hhat_norm,
    laplacian,
    lp_norm,
)

CSV_HEADER = "t,mass,energy,h1_u,l2_n,hhat_nt,weighted_H,modified_E,rho_R0.25,rho_R0.5,rho_R1.0"
CONCENTRATION_RADII = (0.25, 0.5, 1.0)


class RateFitError(RuntimeError):
    """Rate fitting preconditions failed or the solver diverged."""


@dataclass
class DiagRecord:
    t: float
    mass: float
    energy: float
    h1_u: float
    l2_n: float
    hhat_nt: float
    weighted_H: float = 0.0
    modified_E: float = 0.0
    concentration: dict = field(default_factory=dict)
    rate_fit_state: dict | None = None
    tail_frac: float = 0.0

    def to_row(self) -> str:
        rho = [self.concentration.get(r, 0.0) for r in CONCENTRATION_RADII]
        vals = [self.t, self.mass, self.energy, self.h1_u, self.l2_n, self.hhat_nt,
                self.weighted_H, self.modified_E, *rho]
        return ",".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class WeightParams:
    """Exponential weight e^{mu/(2 lam t)} and the fixed t-power tuple.

    The derivative orders and time powers (3, 0, -4; 2, -2/3, -10/3) are the
    ones entering the weighted norm of the reduced pair.
    """

    mu: float
    lam: float

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError("mu and lam must be positive")

    def exp_half(self, t: float) -> float:
        arg = self.mu / (2.0 * self.lam * t)
        return math.inf if arg > 700.0 else math.exp(arg)

    def exp_full(self, t: float) -> float:
        arg = self.mu / (self.lam * t)
        return math.inf if arg > 700.0 else math.exp(arg)


def _weighted(value: float, weight: float) -> float:
    if value == 0.0:
        return 0.0
    return value * weight


def weighted_H(state: ReducedState, w: WeightParams) -> float:
    """The blow-up-weighted norm of the reduced pair; +inf marks overflow."""
    t = state.t
    if t <= 0:
        raise ValueError("weighted norm requires t > 0")
    e = w.exp_half(t)
    terms = (
        _weighted(h_dot_norm(state.u, 3), e),
        _weighted(lp_norm(state.u, 2), e * t**-4),
        _weighted(h_dot_norm(state.r, 2), e * t ** (-2.0 / 3.0)),
        _weighted(lp_norm(state.r, 2), e * t ** (-10.0 / 3.0)),
    )
    if any(math.isinf(v) for v in terms):
        return math.inf
    return math.hypot(math.hypot(terms[0], terms[1]), math.hypot(terms[2], terms[3]))


def modified_energy(state: ReducedState, u_background: Field, w: WeightParams) -> float:
    """Weighted norm squared plus the cross term and the coercivity term.

    The cross term couples the second derivatives of the full envelope with
    the wave displacement so that the third-derivative term cancels in the
    time derivative.
    """
    t = state.t
    if t <= 0:
        raise ValueError("modified energy requires t > 0")
    h2 = weighted_H(state, w) ** 2
    lap_u = laplacian(state.u)
    lap_re_r = laplacian(Field.from_nodal(state.r.grid, state.r.nodal.real, "real"))
    total_nodal = state.u.nodal + u_background.nodal
    cross = float(
        np.sum(total_nodal * np.conj(lap_u.nodal) * lap_re_r.nodal.real).real
        * state.u.grid.h**2
    )
    e = w.exp_full(t)
    tenth = h_norm(state.u, 1) ** 10
    if math.isinf(e):
        return math.inf if (abs(cross) > 0 or tenth > 0) else h2
    return h2 + 2.0 * e * cross + e * tenth


# --- measurement of full-system states ----------------------------------------------


def energy(state: ZakharovState) -> float:
    """Conserved energy: |grad u|^2 + (|n|^2 + |v|^2)/2 + int n |u|^2."""
    grad2 = h_dot_norm(state.u, 1) ** 2
    n2 = lp_norm(state.n, 2) ** 2
    v2 = state.v_norm() ** 2
    coupling = float(np.sum(state.n.real_nodal * np.abs(state.u.nodal) ** 2) * state.n.grid.h**2)
    return grad2 + 0.5 * (n2 + v2) + coupling


def energy_rate(state: ZakharovState) -> float:
    """Exact dE/dt when the wave velocity has nonzero mean b: b int (n + |u|^2)."""
    b = state.nt_mean()
    integrand = float(
        np.sum(state.n.real_nodal + np.abs(state.u.nodal) ** 2) * state.n.grid.h**2
    )
    return b * integrand


def measure(
    state: ZakharovState,
    radii: Sequence[float] = CONCENTRATION_RADII,
    with_concentration: bool = True,
) -> DiagRecord:
    conc = {}
    if with_concentration:
        for r in radii:
            conc[r], _ = concentration(state.u, r)
    nt_coeffs = state.nt.spectral.copy()
    nt_coeffs[0, 0] = 0.0
    nt_free = Field.from_spectral(state.nt.grid, nt_coeffs, "real")
    return DiagRecord(
        t=state.t,
        mass=lp_norm(state.u, 2) ** 2,
        energy=energy(state),
        h1_u=h_norm(state.u, 1),
        l2_n=lp_norm(state.n, 2),
        hhat_nt=hhat_norm(nt_free),
        concentration=conc,
        tail_frac=spectral_tail_fraction(state.u),
    )


# --- blow-up rate fitting --------------------------------------------------------------


@dataclass
class RateFit:
    T_est: float
    gamma: float
    amplitude: float
    gamma_stderr: float


def fit_blowup_rate(
    ts: Sequence[float], values: Sequence[float], window: tuple[float, float] | None = None
) -> RateFit:
    """Nonlinear least squares of y = C (T - t)^(-gamma) on a window.

    The linearized fit of 1/y against t supplies the initial guess (its root
    is T).  Requires at least 10 samples, monotone increasing over the tail.
    """
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is not None:
        sel = (ts >= window[0]) & (ts <= window[1])
        ts, values = ts[sel], values[sel]
    if len(ts) < 10:
        raise RateFitError(f"need >= 10 records in the window, got {len(ts)}")
    order = np.argsort(ts)
    ts, values = ts[order], values[order]
    tail = values[len(values) // 2 :]
    if np.any(np.diff(tail) <= -1e-6 * tail[:-1]):
        raise RateFitError("norms are not monotone increasing over the tail")
    # linearized: 1/y = (T - t)/C; its root anchors T (exact when gamma = 1)
    slope, intercept = np.polyfit(ts, 1.0 / values, 1)
    if slope >= 0:
        raise RateFitError("linearized fit has non-negative slope; no blow-up trend")
    c0 = -1.0 / slope
    t_est0 = intercept * c0
    t_lo = ts[-1] + 1e-12
    # (T, gamma) are jointly ill-determined on short windows: keep T within a
    # generous bracket of the linearized root so the solver cannot drift to
    # the large-T/large-gamma degenerate branch (the root sits below the
    # window for gamma > 1, so the span supplies the fallback room)
    t_hi = t_lo + max(5.0 * (t_est0 - t_lo), 2.0 * (ts[-1] - ts[0]), 1e-3)

    def resid(p):
        log_c, t_b, gamma = p
        return log_c - gamma * np.log(t_b - ts) - np.log(values)

    p0 = np.array([math.log(max(c0, 1e-300)), min(max(t_est0, t_lo + 1e-6), t_hi - 1e-9), 1.0])
    sol = least_squares(
        resid, p0, xtol=1e-15, ftol=1e-15, gtol=1e-15,
        bounds=([-np.inf, t_lo, 1e-3], [np.inf, t_hi, 100.0]),
    )
    if not sol.success:
        raise RateFitError(f"rate fit diverged: {sol.message}")
    log_c, t_b, gamma = sol.x
    dof = max(len(ts) - 3, 1)
    cov_scale = 2.0 * sol.cost / dof
    jtj = sol.jac.T @ sol.jac
    try:
        cov = np.linalg.inv(jtj) * cov_scale
        stderr = float(math.sqrt(max(cov[2, 2], 0.0)))
    except np.linalg.LinAlgError:
        stderr = float("nan")
    return RateFit(T_est=float(t_b), gamma=float(gamma), amplitude=float(math.exp(log_c)), gamma_stderr=stderr)


# --- concentration -------------------------------------------------------------------


_kernel_cache: dict = {}


def _disc_kernel(grid: TorusGrid, radius: float) -> np.ndarray:
    """Coverage-weighted disc indicator sampled on the displacement lattice.

    The boundary cell gets the linear ramp clip((R - d)/h + 1/2, 0, 1), a
    one-cell quadrature smoothing of the sharp indicator.
    """
    key = (grid.n_per_dim, float(radius))
    if key not in _kernel_cache:
        n = grid.n_per_dim
        off = np.minimum(np.arange(n), n - np.arange(n)) * grid.h
        d1, d2 = np.meshgrid(off, off, indexing="ij")
        dist = np.hypot(d1, d2)
        _kernel_cache[key] = np.clip((radius - dist) / grid.h + 0.5, 0.0, 1.0)
    return _kernel_cache[key]


def concentration(u: Field, radius: float, method: str = "fft") -> tuple[float, tuple[float, float]]:
    """sup over centers of the mass of u in the disc of the given radius.

    The sup is taken over grid nodes; the disc sum is the h^2-weighted nodal
    quadrature with the coverage-weighted indicator.  ``method='fft'`` uses
    the exact circular convolution; ``method='direct'`` is the O(N^4) check.
    Returns (value, maximizing node).
    """
    grid = u.grid
    if not (0.0 < radius < np.pi):
        raise ValueError("radius must lie in (0, pi)")
    dens = np.abs(u.nodal) ** 2
    kern = _disc_kernel(grid, radius)
    if method == "fft":
        conv = np.fft.ifft2(np.fft.fft2(dens) * np.fft.fft2(kern)).real * grid.h**2
    elif method == "direct":
        n = grid.n_per_dim
        conv = np.empty((n, n))
        for i in range(n):
            rolled_i = np.roll(kern, i, axis=0)
            for j in range(n):
                conv[i, j] = np.sum(dens * np.roll(rolled_i, j, axis=1)) * grid.h**2
    else:
        raise ValueError(f"unknown method {method!r}")
    idx = np.unravel_index(int(np.argmax(conv)), conv.shape)
    y_star = (float(grid.x[idx[0]]), float(grid.x[idx[1]]))
    return float(conv[idx]), y_star


def split_concentration(u: Field, radius: float, y: tuple[float, float]) -> tuple[Field, Field]:
    """Split u into a piece near y and a piece vanishing on the doubled ball.

    v = theta * u is supported in |x-y| <= 3R/4; w = phi * u vanishes on
    |x-y| <= R; theta + phi <= 1 pointwise so |v| + |w| <= |u|.
    """
    grid = u.grid
    if 2.0 * radius >= np.pi / 2.0:
        raise ValueError("need 2R < pi/2 so both cutoffs fit on the torus")
    _, _, dist = torus_displacement(grid, y)
    theta = _theta_profile(dist / radius)
    phi = 1.0 - _theta_profile(dist / (2.0 * radius))
    v = Field.from_nodal(grid, theta * u.nodal, u.kind)
    wf = Field.from_nodal(grid, phi * u.nodal, u.kind)
    return v, wf


def _theta_profile(s: np.ndarray) -> np.ndarray:
    """1 for s <= 1/2, 0 for s >= 3/4, smooth transition between."""
    step, _, _ = _smooth_step((0.75 - np.asarray(s, dtype=float)) * 4.0)
    return step


def split_defect(u: Field, radius: float, y: tuple[float, float], p: int) -> tuple[float, float]:
    """(global additivity defect, annulus contribution) for the L^p split.

    The defect int |u|^p - |v|^p - |w|^p equals, identically, the integral of
    (1 - theta^p - phi^p) |u|^p over the transition annulus; both sides are
    computed independently.
    """
    grid = u.grid
    v, wf = split_concentration(u, radius, y)
    h2 = grid.h**2
    un, vn, wn = np.abs(u.nodal), np.abs(v.nodal), np.abs(wf.nodal)
    defect = float(np.sum(un**p - vn**p - wn**p) * h2)
    _, _, dist = torus_displacement(grid, y)
    theta = _theta_profile(dist / radius)
    phi = 1.0 - _theta_profile(dist / (2.0 * radius))
    weight = 1.0 - theta**p - phi**p
    annulus = weight != 0.0
    ann_mass = float(np.sum((weight * un**p)[annulus]) * h2)
    return defect, ann_mass


# --- sharp interpolation inequality ----------------------------------------------------


def gn_sharp_check(u: Field, m0: float, b: float) -> float:
    """RHS - LHS of the sharp torus interpolation inequality.

    LHS = int |u|^4; RHS = (2/m0 * int |grad u|^2 + b * int |u|^2) * int |u|^2.
    """
    l2sq = lp_norm(u, 2) ** 2
    grad2 = h_dot_norm(u, 1) ** 2
    l4 = lp_norm(u, 4) ** 4
    return (2.0 / m0 * grad2 + b * l2sq) * l2sq - l4


def energy_coercivity_ratio(state: ZakharovState, m0: float, b: float) -> float:
    """(E + m0 b ||u||^2) / (||u||_{H1}^2 + ||n||^2 + ||v||^2)."""
    num = energy(state) + m0 * b * lp_norm(state.u, 2) ** 2
    den = h_norm(state.u, 1) ** 2 + lp_norm(state.n, 2) ** 2 + state.v_norm() ** 2
    return num / den
