"""Time integration of the Zakharov system and its regularized reduction.

Linear parts are advanced by exact spectral propagators: the (possibly
regularized) Schrodinger semigroup e^{-i|m|^2 t - eps |m|^4 t}, the free wave
propagator, and e^{-i|m| t - eps |m|^4 t} for the reduced wave variable.
Nonlinear parts are nodal products.  The default Strang composition keeps
the density-potential substep a pure phase (the density is real), so the
mass of u is conserved to roundoff at eps = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ztorus.spectral import (
    Field,
    SpectralError,
    TorusGrid,
    hhat_norm,
    h_norm,
    lp_norm,
    mean_value,
)


class BlowupResolutionExceeded(RuntimeError):
    """The state grew past what the grid and step can resolve."""

    def __init__(self, t: float, message: str):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class ZakharovState:
    """Energy-space state (u, n, n_t) at time t.

    The wave velocity potential v (the gradient part of the Helmholtz
    split of n_t) is derived spectrally: its L^2 norm equals the
    gradient-part norm of the mean-free part of n_t.
    """

    t: float
    u: Field
    n: Field
    nt: Field

    def v_norm(self) -> float:
        """||v||_{L^2} where dn/dt + div v = 0 (mean-free part of n_t)."""
        coeffs = self.nt.spectral.copy()
        coeffs[0, 0] = 0.0
        return hhat_norm(Field.from_spectral(self.nt.grid, coeffs, "real"))

    def nt_mean(self) -> float:
        return float(mean_value(self.nt).real)


@dataclass(frozen=True)
class ReducedState:
    """Reduced pair (u, r) at time t; Re r is the wave displacement."""

    t: float
    u: Field
    r: Field


@dataclass(frozen=True)
class AdaptSpec:
    """CFL-like shrink rule: dt = c_adapt / (1 + sup|u|^2), floored at dt_min.

    ``tail_frac_abort``: relative spectral mass of u in the outer quarter of
    the kept band above which the run is declared under-resolved (the
    collapsing core has fallen below the grid scale).
    """

    c_adapt: float = 0.25
    dt_min: float = 1e-8
    growth_abort: float = 10.0
    tail_frac_abort: float | None = None


def spectral_tail_fraction(u: Field) -> float:
    """Mass fraction of u in the outer quarter of the dealias-kept band."""
    grid = u.grid
    cut = grid.dealias_fraction * grid.n_per_dim / 2.0
    band = ((np.abs(grid.m1) >= 0.75 * cut) | (np.abs(grid.m2) >= 0.75 * cut)) & grid.dealias_mask
    mag2 = np.abs(u.spectral) ** 2
    total = float(np.sum(mag2))
    return float(np.sum(mag2[band])) / total if total > 0 else 0.0


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    scheme: str = "strang_split"
    epsilon: float = 0.0
    dealias: bool = True
    adapt: AdaptSpec | None = None
    coupling: bool = True

    def __post_init__(self) -> None:
        if self.scheme not in ("strang_split", "exponential_integrator"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


# --- exact linear propagators ---------------------------------------------------


def schrodinger_semigroup(u: Field, t: float, epsilon: float = 0.0) -> Field:
    """uhat(m) -> e^{-i|m|^2 t - eps|m|^4 t} uhat(m); backward heat rejected."""
    if epsilon > 0.0 and t < 0.0:
        raise SpectralError("backward evolution with epsilon > 0 is ill-posed")
    grid = u.grid
    sym = np.exp((-1j * grid.m_sq - epsilon * grid.m_sq**2) * t)
    return Field(grid, "complex", spectral=u.spectral * sym)


def wave_propagator(z0: Field, z1: Field, t: float) -> tuple[Field, Field]:
    """Exact free wave flow; the zero mode advances linearly in t."""
    grid = z0.grid
    m = grid.m_abs
    cos_t = np.cos(m * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_over = np.where(m > 0, np.sin(m * t) / np.where(m > 0, m, 1.0), t)
    a0, a1 = z0.spectral, z1.spectral
    z = cos_t * a0 + sin_over * a1
    zt = -m * np.sin(m * t) * a0 + cos_t * a1
    kind = "real" if z0.kind == z1.kind == "real" else "complex"
    return (Field(grid, kind, spectral=z), Field(grid, kind, spectral=zt))


def _reduced_semigroup(r: Field, t: float, epsilon: float) -> Field:
    if epsilon > 0.0 and t < 0.0:
        raise SpectralError("backward evolution with epsilon > 0 is ill-posed")
    grid = r.grid
    sym = np.exp((-1j * grid.m_abs - epsilon * grid.m_sq**2) * t)
    return Field(grid, "complex", spectral=r.spectral * sym)


# --- full system ------------------------------------------------------------------


def _dealias_arr(grid: TorusGrid, coeffs: np.ndarray, on: bool) -> np.ndarray:
    return coeffs * grid.dealias_mask if on else coeffs


def _zakharov_nonlinear(state: ZakharovState, dt: float, cfg: StepperConfig) -> ZakharovState:
    """Exact flow of the coupling part: phase on u, forcing kick on n_t.

    The phase map is unitary at the nodes, so u itself is never filtered
    (filtering would drain mass, which decides marginally supercritical
    collapse); the dealias mask applies to the quadratic wave forcing.
    """
    grid = state.u.grid
    if not cfg.coupling:
        return replace(state, t=state.t)
    n_nodal = state.n.real_nodal
    u_new = state.u.nodal * np.exp(-1j * dt * n_nodal)
    u_hat = grid.forward(u_new)
    # |u| is unchanged by the phase, so the wave forcing uses the substep value
    absu2 = np.abs(state.u.nodal) ** 2
    lap_hat = -grid.m_sq * _dealias_arr(grid, grid.forward(absu2), cfg.dealias)
    nt_hat = state.nt.spectral + dt * lap_hat
    return ZakharovState(
        t=state.t,
        u=Field(grid, "complex", spectral=u_hat),
        n=state.n,
        nt=Field(grid, "real", spectral=nt_hat),
    )


def _zakharov_linear(state: ZakharovState, dt: float, cfg: StepperConfig) -> ZakharovState:
    u = schrodinger_semigroup(state.u, dt, cfg.epsilon)
    n, nt = wave_propagator(state.n, state.nt, dt)
    return ZakharovState(t=state.t, u=u, n=n, nt=nt)


def _zakharov_rhs_nonlinear(state: ZakharovState, cfg: StepperConfig):
    """Vector field of the coupling for the exponential integrator."""
    grid = state.u.grid
    if not cfg.coupling:
        zero = np.zeros((grid.n_per_dim, grid.n_per_dim), dtype=np.complex128)
        return zero, zero
    du = grid.forward(-1j * state.n.real_nodal * state.u.nodal)
    absu2 = np.abs(state.u.nodal) ** 2
    dnt = -grid.m_sq * grid.forward(absu2)
    return (
        _dealias_arr(grid, du, cfg.dealias),
        _dealias_arr(grid, dnt, cfg.dealias),
    )


def step_zakharov(state: ZakharovState, cfg: StepperConfig, dt: float | None = None) -> ZakharovState:
    """One step of the configured scheme; raises on runaway growth."""
    dt = cfg.dt if dt is None else dt
    h1_before = h_norm(state.u, 1)
    if cfg.scheme == "strang_split":
        s = _zakharov_linear(state, 0.5 * dt, cfg)
        s = _zakharov_nonlinear(s, dt, cfg)
        s = _zakharov_linear(s, 0.5 * dt, cfg)
    else:
        s = _step_zakharov_lawson(state, cfg, dt)
    s = replace(s, t=state.t + dt)
    h1_after = h_norm(s.u, 1)
    growth = AdaptSpec().growth_abort if cfg.adapt is None else cfg.adapt.growth_abort
    if h1_before > 0 and h1_after > growth * h1_before:
        raise BlowupResolutionExceeded(
            state.t, f"H1 norm grew {h1_after / h1_before:.1f}x in one step at t={state.t:g}"
        )
    return s


def _step_zakharov_lawson(state: ZakharovState, cfg: StepperConfig, dt: float) -> ZakharovState:
    """Lawson (integrating-factor) midpoint rule, second order."""
    grid = state.u.grid
    du1, dnt1 = _zakharov_rhs_nonlinear(state, cfg)
    half = ZakharovState(
        t=state.t,
        u=Field.from_spectral(grid, state.u.spectral + 0.5 * dt * du1, "complex"),
        n=state.n,
        nt=Field.from_spectral(grid, state.nt.spectral + 0.5 * dt * dnt1, "real"),
    )
    half = _zakharov_linear(half, 0.5 * dt, cfg)
    half = replace(half, t=state.t + 0.5 * dt)
    du2, dnt2 = _zakharov_rhs_nonlinear(half, cfg)
    full = _zakharov_linear(state, dt, cfg)
    # propagate the midpoint slope by the remaining half interval
    u_new = full.u.spectral + dt * (
        schrodinger_semigroup(Field.from_spectral(grid, du2), 0.5 * dt, cfg.epsilon).spectral
    )
    nt_slope = Field.from_spectral(grid, dnt2, "complex")
    z_slope, zt_slope = wave_propagator(Field.zeros(grid), nt_slope, 0.5 * dt)
    n_new = full.n.spectral + dt * z_slope.spectral
    nt_new = full.nt.spectral + dt * zt_slope.spectral
    return ZakharovState(
        t=state.t,
        u=Field.from_spectral(grid, u_new, "complex"),
        n=Field.from_spectral(grid, n_new, "real"),
        nt=Field.from_spectral(grid, nt_new, "real"),
    )


# --- reduced system -----------------------------------------------------------------


def _reduced_rhs(state: ReducedState, bg: dict, cfg: StepperConfig):
    """-i * (nonlinear + background) terms of the reduced equations."""
    grid = state.u.grid
    u_nod = state.u.nodal
    re_r = state.r.nodal.real
    if cfg.coupling:
        u_bg = bg["u_cut"].nodal
        wz = bg["wz"].real_nodal
        q = bg["forcing"].nodal
        rhs_s = u_nod * re_r + wz * u_nod + u_bg * re_r + q
        prod_w = np.abs(u_nod) ** 2 + 2.0 * (np.conj(u_bg) * u_nod).real
    else:
        rhs_s = np.zeros_like(u_nod)
        prod_w = np.zeros_like(u_nod.real)
    du = -1j * _dealias_arr(grid, grid.forward(rhs_s), cfg.dealias)
    dr = -1j * grid.m_abs * _dealias_arr(grid, grid.forward(prod_w), cfg.dealias)
    return du, dr


def step_reduced(
    state: ReducedState,
    cfg: StepperConfig,
    background: Callable[[float], dict],
    dt: float | None = None,
) -> ReducedState:
    """One Strang / Lawson step of the regularized reduced system.

    ``background`` maps a time to the dict of sampled fields
    {u_cut, wz (= n background), forcing}.
    """
    dt = cfg.dt if dt is None else dt
    grid = state.u.grid
    h1_before = h_norm(state.u, 1) + lp_norm(state.r, 2)
    if cfg.scheme == "strang_split":
        u = schrodinger_semigroup(state.u, 0.5 * dt, cfg.epsilon)
        r = _reduced_semigroup(state.r, 0.5 * dt, cfg.epsilon)
        mid_state = ReducedState(state.t + 0.5 * dt, u, r)
        # midpoint rule for the nonlinear substep
        du1, dr1 = _reduced_rhs(mid_state, background(state.t + 0.5 * dt), cfg)
        probe = ReducedState(
            mid_state.t,
            Field.from_spectral(grid, u.spectral + 0.5 * dt * du1, "complex"),
            Field.from_spectral(grid, r.spectral + 0.5 * dt * dr1, "complex"),
        )
        du2, dr2 = _reduced_rhs(probe, background(state.t + 0.5 * dt), cfg)
        u = Field.from_spectral(grid, u.spectral + dt * du2, "complex")
        r = Field.from_spectral(grid, r.spectral + dt * dr2, "complex")
        u = schrodinger_semigroup(u, 0.5 * dt, cfg.epsilon)
        r = _reduced_semigroup(r, 0.5 * dt, cfg.epsilon)
    else:
        du1, dr1 = _reduced_rhs(state, background(state.t), cfg)
        probe = ReducedState(
            state.t,
            Field.from_spectral(grid, state.u.spectral + 0.5 * dt * du1, "complex"),
            Field.from_spectral(grid, state.r.spectral + 0.5 * dt * dr1, "complex"),
        )
        probe = ReducedState(
            state.t + 0.5 * dt,
            schrodinger_semigroup(probe.u, 0.5 * dt, cfg.epsilon),
            _reduced_semigroup(probe.r, 0.5 * dt, cfg.epsilon),
        )
        du2, dr2 = _reduced_rhs(probe, background(state.t + 0.5 * dt), cfg)
        u = schrodinger_semigroup(state.u, dt, cfg.epsilon)
        r = _reduced_semigroup(state.r, dt, cfg.epsilon)
        du2h = schrodinger_semigroup(Field.from_spectral(grid, du2), 0.5 * dt, cfg.epsilon)
        dr2h = _reduced_semigroup(Field.from_spectral(grid, dr2), 0.5 * dt, cfg.epsilon)
        u = Field.from_spectral(grid, u.spectral + dt * du2h.spectral, "complex")
        r = Field.from_spectral(grid, r.spectral + dt * dr2h.spectral, "complex")
    new = ReducedState(state.t + dt, u, r)
    h1_after = h_norm(new.u, 1) + lp_norm(new.r, 2)
    growth = AdaptSpec().growth_abort if cfg.adapt is None else cfg.adapt.growth_abort
    if h1_before > 1e-13 and h1_after > growth * h1_before:
        raise BlowupResolutionExceeded(
            state.t, f"reduced norm grew {h1_after / h1_before:.1f}x in one step"
        )
    return new


# --- run loop -------------------------------------------------------------------------


@dataclass
class RunResult:
    status: str  # 'completed' | 'resolution_exceeded'
    last_time: float
    records: list
    final_state: object
    message: str = ""


def run(
    initial,
    cfg: StepperConfig,
    t_end: float,
    measure: Callable | None = None,
    diag_every: float | None = None,
    callbacks: tuple = (),
    background: Callable[[float], dict] | None = None,
    max_steps: int = 2_000_000,
    snapshot: Callable | None = None,
    snapshot_every: float | None = None,
    stop_condition: Callable | None = None,
) -> RunResult:
    """Advance ``initial`` to ``t_end`` with adaptive dt and diagnostics cadence.

    ``measure`` maps a state to a diagnostics record; callbacks receive each
    record (timestamps strictly increasing).  Terminates early with status
    'resolution_exceeded' when the instability detector trips or the adaptive
    step hits its floor.
    """
    state = initial
    if t_end <= state.t:
        raise ValueError("t_end must exceed the initial time")
    records = []
    next_diag = state.t
    next_snap = state.t if snapshot_every is not None else None

    def emit(s):
        if measure is not None:
            rec = measure(s)
            records.append(rec)
            for cb in callbacks:
                cb(rec)

    is_reduced = isinstance(state, ReducedState)
    step_once = (
        (lambda s, d: step_reduced(s, cfg, background, d))
        if is_reduced
        else (lambda s, d: step_zakharov(s, cfg, d))
    )
    if diag_every is not None:
        emit(state)
        next_diag = state.t + diag_every
    status, message = "completed", ""
    for _ in range(max_steps):
        if state.t >= t_end - 1e-14:
            break
        dt = cfg.dt
        if cfg.adapt is not None:
            sup2 = lp_norm(state.u, np.inf) ** 2
            dt = min(dt, cfg.adapt.c_adapt / (1.0 + sup2))
            if dt < cfg.adapt.dt_min:
                status = "resolution_exceeded"
                message = f"adaptive step {dt:.3e} fell below dt_min at t={state.t:g}"
                break
        dt = min(dt, t_end - state.t)
        try:
            state = step_once(state, dt)
        except BlowupResolutionExceeded as exc:
            status = "resolution_exceeded"
            message = str(exc)
            break
        if diag_every is not None and state.t >= next_diag - 1e-12:
            if (
                cfg.adapt is not None
                and cfg.adapt.tail_frac_abort is not None
                and spectral_tail_fraction(state.u) > cfg.adapt.tail_frac_abort
            ):
                status = "resolution_exceeded"
                message = f"spectral tail fraction exceeded at t={state.t:g}"
                break
            emit(state)
            next_diag += diag_every
            if stop_condition is not None and records and stop_condition(records[-1]):
                status = "resolution_exceeded"
                message = f"stop condition met at t={state.t:g}"
                break
        if next_snap is not None and snapshot is not None and state.t >= next_snap - 1e-12:
            snapshot(state)
            next_snap += snapshot_every
    else:
        status = "resolution_exceeded"
        message = f"step budget exhausted at t={state.t:g}"
    return RunResult(
        status=status,
        last_time=state.t,
        records=records,
        final_state=state,
        message=message,
    )
