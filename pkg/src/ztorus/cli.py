"""Configuration-driven experiment runner.

Verbs:
    run        one experiment from a JSON config
    sweep      one experiment per value of a numeric config field
    verify     run the acceptance test suite
    plot-data  re-emit tidy CSVs from a finished run directory

All floating-point output is written with ``repr`` (shortest exact
round-trip), so re-reading reproduces the run bit for bit.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

import ztorus.construction as construction
import ztorus.diagnostics as diagnostics
import ztorus.profiles as profiles
from ztorus.evolve import (
    AdaptSpec,
    ReducedState,
    StepperConfig,
    ZakharovState,
    run as evolve_run,
)
from ztorus.spectral import Field, TorusGrid, lp_norm, write_field_snapshot

EXPERIMENTS = (
    "profiles",
    "blowup_backward",
    "regularized",
    "smooth_benchmark",
    "growup_exact",
    "concentration_scan",
    "multi_point",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    grid: int = 128
    lam: float | None = None
    a: float | str | None = "auto"
    b: float | None = None
    epsilon: float = 0.0
    t_start: float | None = None
    t_end: float | None = None
    dt: float | None = None
    adaptive: bool = True
    c_adapt: float = 0.05
    centers: list | None = None
    scale: float = 1.0
    radii: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.5])
    output_dir: str = "."
    snapshot_every: float | None = None
    diag_every: float | None = None
    seed: int = 0

    FIELD_MAP = {"lambda": "lam"}

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "FIELD_MAP"}
        data = {}
        for key, value in raw.items():
            name = cls.FIELD_MAP.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown field: {key}")
            data[name] = value
        if "experiment" not in data:
            raise ConfigError("missing field: experiment")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment: {self.experiment}")
        required = {
            "profiles": ["lam"],
            "blowup_backward": ["lam"],
            "regularized": ["lam", "t_start", "t_end"],
            "smooth_benchmark": ["t_end"],
            "growup_exact": ["a", "b", "t_end"],
            "concentration_scan": ["lam"],
            "multi_point": ["lam", "centers"],
        }[self.experiment]
        for name in required:
            value = getattr(self, name)
            if value is None or (name == "a" and value == "auto" and self.experiment == "growup_exact"):
                public = "lambda" if name == "lam" else name
                raise ConfigError(f"missing field: {public}")
        if self.grid < 8 or self.grid % 2:
            raise ConfigError("grid must be an even integer >= 8")

    def resolved(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


class DiagnosticsWriter:
    def __init__(self, path: Path):
        self.path = path
        self.rows: list[str] = []

    def __call__(self, record: diagnostics.DiagRecord) -> None:
        self.rows.append(record.to_row())

    def flush(self) -> None:
        with open(self.path, "w", encoding="ascii") as fh:
            fh.write(diagnostics.CSV_HEADER + "\n")
            for row in self.rows:
                fh.write(row + "\n")


# --- shared builders ------------------------------------------------------------


_PROFILE_CACHE: dict = {}


def _profile_context(lam: float):
    """Ground state + profile pair + interpolant, cached per lam."""
    key = round(lam, 12)
    if key not in _PROFILE_CACHE:
        grid = profiles.RadialGrid(30.0, 6001)
        gs = profiles.solve_ground_state(grid=grid, tol=1e-8)
        prof = profiles.continue_profiles([lam], ground=gs, grid=grid)[lam]
        prof = profiles.with_decay_cert(prof)
        _PROFILE_CACHE[key] = (gs, prof, construction.ProfileInterpolant(prof))
    return _PROFILE_CACHE[key]


def _blowup_initial_state(cfg: RunConfig, out: dict):
    """Cutoff data at t_start, time-reversed for the forward run clock."""
    lam = cfg.lam
    t0 = cfg.t_start if cfg.t_start is not None else 2.0
    gs, prof, interp = _profile_context(lam)
    grid = TorusGrid(cfg.grid)
    centers = tuple(tuple(c) for c in (cfg.centers or [(0.0, 0.0)]))
    params = construction.BlowupDataParams(
        lam=lam, t=t0, centers=centers, scale=cfg.scale
    )
    wc0 = construction.solve_wave_correction(
        grid, interp, params, t_end=t0, store_times=sorted({0.45 * t0, 0.5 * t0, t0})
    )
    if cfg.a == "auto" or cfg.a is None:
        a, wc = construction.choose_a(
            grid, interp, params, t_ref=0.5 * t0, t_check=0.45 * t0, correction=wc0
        )
    else:
        a = float(cfg.a)
        wc = wc0.with_a(a)
    params = params.with_a(a)
    u0, n0 = construction.cutoff_data(grid, interp, params)
    z0, zt0 = wc.at(t0)
    wt0 = construction.n_cutoff_time_derivative(grid, interp, params)
    state = ZakharovState(
        0.0,
        Field.from_nodal(grid, np.conj(u0.nodal)),
        n0 + z0,
        Field.from_nodal(grid, -(wt0.real_nodal + zt0.real_nodal), "real"),
    )
    out["a"] = a
    out["t0"] = t0
    return state, gs, prof, interp, params


def _smooth_state(grid: TorusGrid, seed: int, amp: float = 0.1, nt_mean: float = 0.0) -> ZakharovState:
    rng = np.random.default_rng(seed)
    n = grid.n_per_dim
    decay = np.exp(-1.2 * grid.m_abs)
    cu = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * decay
    u0 = Field.from_spectral(grid, amp * cu)
    cn = rng.standard_normal((n, n)) * decay
    n0 = Field.from_nodal(grid, amp * Field.from_spectral(grid, cn).nodal.real, "real")
    ct = rng.standard_normal((n, n)) * decay
    ntv = amp * Field.from_spectral(grid, ct).nodal.real
    ntv = ntv - ntv.mean() + nt_mean
    return ZakharovState(0.0, u0, n0, Field.from_nodal(grid, ntv, "real"))


# --- experiments ------------------------------------------------------------------


def _exp_profiles(cfg: RunConfig, outdir: Path) -> dict:
    gs, prof, interp = _profile_context(cfg.lam)
    profiles.write_profile_csv(prof, outdir)
    with open(outdir / "ground_state.csv", "w", encoding="ascii") as fh:
        fh.write("r,Q\n")
        for rj, qj in zip(gs.grid.nodes, gs.q_values):
            fh.write(f"{float(rj)!r},{float(qj)!r}\n")
    cert = prof.decay_cert
    return {
        "q_at_zero": gs.q_at_zero,
        "ground_mass_sq": gs.mass_sq,
        "ground_residual": gs.residual,
        "profile_residual_p": prof.residuals[0],
        "profile_residual_n": prof.residuals[1],
        "decay_delta": cert.delta if cert else None,
        "decay_sigma": cert.sigma if cert else None,
        "acceptance": {
            "residuals_le_1e-8": max(prof.residuals) <= 1e-8,
            "tail_slope_le_-2.5": bool(cert and cert.sigma >= 2.5),
        },
    }


def _run_and_write(cfg: RunConfig, state, t_end, outdir: Path, adapt=None, background=None,
                   measure=None, tail_abort=None) -> tuple:
    writer = DiagnosticsWriter(outdir / "diagnostics.csv")
    stepper = StepperConfig(
        dt=cfg.dt if cfg.dt is not None else 2e-3,
        epsilon=cfg.epsilon,
        adapt=adapt,
    )
    snap_dir = outdir / "snapshots"

    def snapshot(s):
        snap_dir.mkdir(exist_ok=True)
        write_field_snapshot(snap_dir / f"u_{s.t:.6f}.ztf", s.u, s.t)
        if hasattr(s, "n"):
            write_field_snapshot(snap_dir / f"n_{s.t:.6f}.ztf", s.n, s.t)

    result = evolve_run(
        state,
        stepper,
        t_end,
        measure=measure or diagnostics.measure,
        diag_every=cfg.diag_every if cfg.diag_every is not None else 0.01,
        callbacks=(writer,),
        background=background,
        snapshot=snapshot if cfg.snapshot_every is not None else None,
        snapshot_every=cfg.snapshot_every,
    )
    writer.flush()
    return result, writer


def _exp_smooth_benchmark(cfg: RunConfig, outdir: Path) -> dict:
    grid = TorusGrid(cfg.grid)
    state = _smooth_state(grid, cfg.seed)
    e0 = diagnostics.energy(state)
    m0 = lp_norm(state.u, 2) ** 2
    result, writer = _run_and_write(cfg, state, cfg.t_end, outdir)
    e1 = diagnostics.energy(result.final_state)
    m1 = lp_norm(result.final_state.u, 2) ** 2
    return {
        "status": result.status,
        "mass_drift": abs(m1 - m0) / m0,
        "energy_drift": abs(e1 - e0) / abs(e0),
        "acceptance": {
            "mass_drift_le_1e-10": abs(m1 - m0) / m0 <= 1e-10,
            "energy_drift_le_1e-6": abs(e1 - e0) / abs(e0) <= 1e-6,
        },
    }


def _exp_growup_exact(cfg: RunConfig, outdir: Path) -> dict:
    grid = TorusGrid(cfg.grid)
    n = grid.n_per_dim
    a, b = float(cfg.a), float(cfg.b)
    state = ZakharovState(
        0.0,
        Field.from_nodal(grid, np.full((n, n), a + 0j)),
        Field.zeros(grid, "real"),
        Field.from_nodal(grid, np.full((n, n), b), "real"),
    )
    result, writer = _run_and_write(cfg, state, cfg.t_end, outdir)
    st = result.final_state
    u_exact = a * np.exp(-1j * b * st.t**2 / 2.0)
    n_exact = b * st.t
    err_u = float(np.max(np.abs(st.u.nodal - u_exact)) / abs(a))
    err_n = float(np.max(np.abs(st.n.real_nodal - n_exact)) / max(abs(n_exact), 1e-300))
    err = max(err_u, err_n)
    return {
        "status": result.status,
        "max_rel_error": err,
        "max_rel_error_u": err_u,
        "max_rel_error_n": err_n,
        "acceptance": {"rel_error_le_1e-8": err <= 1e-8},
    }


def _exp_blowup_backward(cfg: RunConfig, outdir: Path, with_concentration: bool = True) -> dict:
    summary: dict = {}
    state, gs, prof, interp, params = _blowup_initial_state(cfg, summary)
    t0 = summary["t0"]
    rgrid = prof.grid
    m0 = lp_norm(state.u, 2) ** 2

    def meas(s):
        return diagnostics.measure(s, with_concentration=with_concentration)

    # the collapse is resolved while the gradient norm keeps growing; once
    # the core falls under the grid scale the focusing arrests, so a drop
    # below the running peak marks resolution loss
    peak = {"h1": 0.0, "s": 0.0}

    def arrested(rec) -> bool:
        if rec.h1_u > peak["h1"]:
            peak["h1"] = rec.h1_u
            peak["s"] = rec.t
            return False
        return rec.h1_u < 0.97 * peak["h1"]

    adapt = AdaptSpec(c_adapt=cfg.c_adapt, dt_min=1e-9, tail_frac_abort=3e-3)
    writer = DiagnosticsWriter(outdir / "diagnostics.csv")
    # the 2/3 mask starves the wave drive at marginally resolved core scales,
    # arresting a collapse that the unmasked run tracks; aliasing junk near
    # the end is handled by the arrest detector instead
    stepper = StepperConfig(dt=cfg.dt if cfg.dt is not None else 2e-3, adapt=adapt, dealias=False)
    result = evolve_run(
        state, stepper, t0 - 5e-4,
        measure=meas, diag_every=cfg.diag_every if cfg.diag_every is not None else 0.01,
        callbacks=(writer,), stop_condition=arrested,
    )
    writer.flush()
    recs = result.records
    ss = np.array([r.t for r in recs])
    last_resolved_s = peak["s"] if peak["s"] > 0 else result.last_time
    m1 = lp_norm(result.final_state.u, 2) ** 2
    summary.update(
        {
            "status": result.status,
            "message": result.message,
            "last_resolved_s": last_resolved_s,
            "last_resolved_t": t0 - last_resolved_s,
            "mass_drift": abs(m1 - m0) / m0,
        }
    )
    # rate fits on the resolved span: before the arrest, and before the
    # spectral tail of u has grown past a small multiple of its initial level
    tails = np.array([r.tail_frac for r in recs])
    tail_cap = max(4.0 * tails[0], 1e-3)
    bad = np.nonzero(tails > tail_cap)[0]
    s_tail_end = ss[bad[0]] if bad.size else ss[-1]
    summary["fit_window_end_s"] = float(min(0.95 * last_resolved_s, s_tail_end))
    keep = ss <= summary["fit_window_end_s"]
    fits = {}
    series = {
        "h1_u": np.asarray([r.h1_u for r in recs]),
        "l2_n": np.asarray([r.l2_n for r in recs]),
        "hhat_nt": np.asarray([r.hhat_nt for r in recs]),
    }
    # one blow-up time serves all three norms: estimate it from the
    # best-conditioned series, then fit each exponent at the shared T
    t_shared = None
    try:
        fit = diagnostics.fit_blowup_rate(ss[keep], series["h1_u"][keep])
        t_shared = fit.T_est
        fits["h1_u"] = {"gamma": fit.gamma, "T_est": fit.T_est, "C": fit.amplitude}
    except diagnostics.RateFitError as exc:
        fits["h1_u"] = {"error": str(exc)}
    for name in ("l2_n", "hhat_nt"):
        ys = series[name][keep]
        if t_shared is None or np.any(ys <= 0):
            fits[name] = {"error": "no shared blow-up time available"}
            continue
        slope, logc = np.polyfit(np.log(t_shared - ss[keep]), np.log(ys), 1)
        fits[name] = {"gamma": float(-slope), "T_est": t_shared, "C": float(np.exp(logc))}
    summary["rate_fits"] = fits
    # extrapolated self-similar limits against the profile norms
    ts = [0.2, 0.1, 0.05]
    lam = cfg.lam
    grad_lim = construction.extrapolate_to_zero(
        ts, [lam * t * construction.rate_grad_u_l2(interp, params.at_time(t)) for t in ts]
    )
    w_lim = construction.extrapolate_to_zero(
        ts, [lam * t * construction.rate_w_l2(interp, params.at_time(t)) for t in ts]
    )
    targets = {
        "grad_p": profiles.radial_grad_l2(rgrid, prof.p_values),
        "norm_n": profiles.radial_l2(rgrid, prof.n_values),
    }
    summary["rate_limits"] = {
        "grad_u_limit": grad_lim,
        "w_limit": w_lim,
        "targets": targets,
        "grad_rel_err": abs(grad_lim - targets["grad_p"]) / targets["grad_p"],
        "w_rel_err": abs(w_lim - targets["norm_n"]) / targets["norm_n"],
    }
    gammas = [v.get("gamma") for v in fits.values() if "gamma" in v]
    summary["acceptance"] = {
        "gammas_in_band": bool(gammas) and all(0.85 <= gv <= 1.15 for gv in gammas),
        "limits_within_5pct": summary["rate_limits"]["grad_rel_err"] <= 0.05
        and summary["rate_limits"]["w_rel_err"] <= 0.05,
    }
    if with_concentration and recs:
        mass_p = profiles.radial_l2(rgrid, prof.p_values) ** 2
        ratios = np.array([r.concentration.get(0.5, 0.0) for r in recs]) / mass_p
        summary["concentration"] = {
            "final_ratio": float(ratios[-1]),
            "increasing": bool(np.all(np.diff(ratios) > -1e-4 * np.abs(ratios[:-1]))),
        }
    return summary


def _exp_concentration_scan(cfg: RunConfig, outdir: Path) -> dict:
    summary = _exp_blowup_backward(cfg, outdir, with_concentration=True)
    # re-emit a tidy (t, R, rho) table over the configured radii
    state, gs, prof, interp, params = _blowup_initial_state(cfg, {})
    rows = ["t,R,rho"]
    with open(outdir / "diagnostics.csv", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = dict(zip(header, line.strip().split(",")))
            for rname in ("rho_R0.25", "rho_R0.5", "rho_R1.0"):
                rows.append(f"{vals['t']},{rname[5:]},{vals[rname]}")
    (outdir / "concentration.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    return summary


def _exp_multi_point(cfg: RunConfig, outdir: Path) -> dict:
    gs, prof, interp = _profile_context(cfg.lam)
    grid = TorusGrid(cfg.grid)
    centers = tuple(tuple(c) for c in cfg.centers)
    t_probe = cfg.t_start if cfg.t_start is not None else 0.05
    params = construction.BlowupDataParams(
        lam=cfg.lam, t=t_probe, centers=centers, scale=cfg.scale
    )
    # cross products of the cutoffs vanish identically
    cut_fields = [construction.cutoff_field(grid, s) for s in params.cutoffs()]
    cross = 0.0
    for i in range(len(cut_fields)):
        for j in range(i + 1, len(cut_fields)):
            cross = max(cross, float(np.max(np.abs(cut_fields[i].nodal * cut_fields[j].nodal))))
    total_mass = construction.mass_u(interp, params)
    mass_p = profiles.radial_l2(prof.grid, prof.p_values) ** 2
    # per-ball localized gradient norms against the collapse rate
    probe_ts = np.geomspace(0.3, 0.03, 12)
    per_ball = []
    for center in centers:
        single = construction.BlowupDataParams(
            lam=cfg.lam, t=t_probe, centers=(center,), scale=cfg.scale
        )
        vals = [construction.rate_grad_u_l2(interp, single.at_time(t)) for t in probe_ts]
        fit = diagnostics.fit_blowup_rate(0.4 - probe_ts, vals)
        per_ball.append({"center": list(center), "gamma": fit.gamma})
    summary = {
        "cross_product_max": cross,
        "total_mass": total_mass,
        "expected_mass": len(centers) * mass_p,
        "mass_rel_err": abs(total_mass - len(centers) * mass_p) / (len(centers) * mass_p),
        "per_ball_fits": per_ball,
        "acceptance": {
            "cross_products_zero": cross == 0.0,
            "mass_within_1pct": abs(total_mass - len(centers) * mass_p)
            / (len(centers) * mass_p)
            <= 0.01,
            "gammas_in_band": all(0.85 <= b["gamma"] <= 1.15 for b in per_ball),
        },
    }
    _write_json(outdir / "multi_point.json", summary)
    return summary


def _exp_regularized(cfg: RunConfig, outdir: Path) -> dict:
    gs, prof, interp = _profile_context(cfg.lam)
    grid = TorusGrid(cfg.grid)
    params = construction.BlowupDataParams(lam=cfg.lam, t=cfg.t_start)
    mu_times = [round(float(v), 12) for v in np.linspace(0.5 * cfg.t_end, cfg.t_end, 5)]
    wc0 = construction.solve_wave_correction(
        grid, interp, params, t_end=cfg.t_end,
        store_times=sorted({cfg.t_start, 0.45 * cfg.t_end, 0.5 * cfg.t_end, cfg.t_end} | set(mu_times)),
    )
    a, wc = construction.choose_a(
        grid, interp, params, t_ref=0.5 * cfg.t_end, t_check=0.45 * cfg.t_end, correction=wc0
    )
    params = params.with_a(a)
    background = construction.BackgroundSampler(grid, interp, params, wc, t_start=cfg.t_start)
    mu = params.mu or construction.fit_forcing_decay(
        grid, interp, params, wc, t_values=mu_times
    )
    weights = diagnostics.WeightParams(mu=mu, lam=cfg.lam)
    u_bg_cache = {}

    def meas(s: ReducedState):
        if s.t not in u_bg_cache:
            u_bg_cache.clear()
            u_bg_cache[s.t], _ = construction.cutoff_data(grid, interp, params.at_time(s.t))
        rec = diagnostics.DiagRecord(
            t=s.t,
            mass=lp_norm(s.u, 2) ** 2,
            energy=0.0,
            h1_u=diagnostics.h_norm(s.u, 1),
            l2_n=lp_norm(s.r, 2),
            hhat_nt=0.0,
            weighted_H=diagnostics.weighted_H(s, weights),
            modified_E=diagnostics.modified_energy(s, u_bg_cache[s.t], weights),
        )
        return rec

    state = ReducedState(cfg.t_start, Field.zeros(grid), Field.zeros(grid))
    writer = DiagnosticsWriter(outdir / "diagnostics.csv")
    stepper = StepperConfig(
        dt=cfg.dt if cfg.dt is not None else 5e-4, epsilon=cfg.epsilon
    )
    result = evolve_run(
        state, stepper, cfg.t_end, measure=meas,
        diag_every=cfg.diag_every if cfg.diag_every is not None else 0.01,
        callbacks=(writer,), background=background.sample,
    )
    writer.flush()
    hs = [r.weighted_H for r in result.records]
    es = [r.modified_E for r in result.records]
    return {
        "status": result.status,
        "a": a,
        "mu": mu,
        "sup_weighted_H": max(hs) if hs else 0.0,
        "sup_modified_E": max(es) if es else 0.0,
        "all_finite": all(map(math.isfinite, hs + es)),
        "acceptance": {"weighted_norms_finite": all(map(math.isfinite, hs + es))},
    }


EXPERIMENT_RUNNERS = {
    "profiles": _exp_profiles,
    "smooth_benchmark": _exp_smooth_benchmark,
    "growup_exact": _exp_growup_exact,
    "blowup_backward": _exp_blowup_backward,
    "concentration_scan": _exp_concentration_scan,
    "multi_point": _exp_multi_point,
    "regularized": _exp_regularized,
}


def run_experiment(cfg: RunConfig, outdir: str | Path) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "config_resolved.json", cfg.resolved())
    try:
        summary = EXPERIMENT_RUNNERS[cfg.experiment](cfg, outdir)
        summary.setdefault("experiment", cfg.experiment)
        _write_json(outdir / "summary.json", summary)
        return summary
    except Exception as exc:
        _write_json(
            outdir / "summary.json",
            {"experiment": cfg.experiment, "failure": f"{type(exc).__name__}: {exc}"},
        )
        raise


def _sweep_child(args: tuple) -> tuple:
    raw, axis, value, outdir = args
    raw = dict(raw)
    raw[axis] = value
    child_dir = Path(outdir) / f"{axis}_{value:g}"
    try:
        cfg = RunConfig.from_dict(raw)
        summary = run_experiment(cfg, child_dir)
        return value, "ok", summary
    except Exception as exc:
        return value, f"{type(exc).__name__}: {exc}", {}


def sweep(raw_config: dict, axis: str, values: list, outdir: str | Path, jobs: int = 1) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(raw_config, axis, v, str(outdir)) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_child, tasks))
    else:
        results = [_sweep_child(t) for t in tasks]
    rows = ["value,status,mass_drift,last_resolved_t,residual"]
    for value, status, summary in results:
        rows.append(
            ",".join(
                [
                    repr(float(value)),
                    status if status == "ok" else f'"{status}"',
                    repr(float(summary.get("mass_drift", float("nan")))),
                    repr(float(summary.get("last_resolved_t", float("nan")))),
                    repr(float(summary.get("profile_residual_p", float("nan")))),
                ]
            )
        )
    (outdir / "sweep_summary.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    return results


def plot_data(run_dir: str | Path, outdir: str | Path | None = None) -> Path:
    """Re-emit tidy CSVs for the plotting component from a finished run."""
    run_dir = Path(run_dir)
    outdir = Path(outdir) if outdir else run_dir / "tidy"
    outdir.mkdir(parents=True, exist_ok=True)
    diag = run_dir / "diagnostics.csv"
    summary = {}
    if (run_dir / "summary.json").exists():
        summary = json.loads((run_dir / "summary.json").read_text())
    if diag.exists():
        lines = diag.read_text().strip().split("\n")
        header = lines[0].split(",")
        cols = {name: [] for name in header}
        for line in lines[1:]:
            for name, val in zip(header, line.split(",")):
                cols[name].append(float(val))
        fits = summary.get("rate_fits", {})
        rows = ["t,norm,value,fitted"]
        for name in ("h1_u", "l2_n", "hhat_nt"):
            fit = fits.get(name, {})
            for t, v in zip(cols["t"], cols[name]):
                if "gamma" in fit and fit["T_est"] > t:
                    fitted = fit["C"] * (fit["T_est"] - t) ** (-fit["gamma"])
                else:
                    fitted = float("nan")
                rows.append(f"{t!r},{name},{v!r},{fitted!r}")
        (outdir / "rate.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
        rows = ["t,mass_drift,energy_drift"]
        m0, e0 = cols["mass"][0], cols["energy"][0]
        for t, m, e in zip(cols["t"], cols["mass"], cols["energy"]):
            dm = abs(m - m0) / abs(m0) if m0 else 0.0
            de = abs(e - e0) / abs(e0) if e0 else 0.0
            rows.append(f"{t!r},{dm!r},{de!r}")
        (outdir / "conservation.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
        rows = ["t,R,rho"]
        for t_idx, t in enumerate(cols["t"]):
            for rname in ("rho_R0.25", "rho_R0.5", "rho_R1.0"):
                rows.append(f"{t!r},{rname[5:]},{cols[rname][t_idx]!r}")
        (outdir / "concentration.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    for gm in run_dir.glob("gm_lambda_*.csv"):
        (outdir / gm.name).write_text(gm.read_text())
    if (run_dir / "ground_state.csv").exists():
        (outdir / "ground_state.csv").write_text((run_dir / "ground_state.csv").read_text())
    if summary:
        _write_json(outdir / "summary.json", summary)
    return outdir


def verify(quiet: bool = False) -> int:
    """Run the acceptance suite (requires the source checkout)."""
    import pytest

    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "tests" / "test_acceptance.py"
        if candidate.exists():
            args = [str(candidate), "-v"]
            if quiet:
                args.append("-q")
            return pytest.main(args)
    print("acceptance suite not found (run from the source checkout)", file=sys.stderr)
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ztorus", description=__doc__)
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_sweep = sub.add_parser("sweep", help="run one experiment per axis value")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated numbers")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)
    sub.add_parser("verify", help="run the acceptance suite")
    p_plot = sub.add_parser("plot-data", help="re-emit tidy CSVs from a run directory")
    p_plot.add_argument("--run-dir", required=True)
    p_plot.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    if args.verb == "verify":
        return verify(quiet=args.quiet)
    if args.verb == "plot-data":
        out = plot_data(args.run_dir, args.out)
        if not args.quiet:
            print(f"tidy data written to {out}")
        return 0
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.verb == "run":
        try:
            cfg = RunConfig.from_dict(raw)
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return 2
        outdir = args.out or cfg.output_dir
        try:
            summary = run_experiment(cfg, outdir)
        except Exception as exc:
            print(f"run failed: {exc}", file=sys.stderr)
            return 1
        if not args.quiet:
            print(json.dumps(summary, indent=1, sort_keys=True, default=_json_default))
        return 0
    if args.verb == "sweep":
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            print("sweep values must be numbers", file=sys.stderr)
            return 2
        if args.axis not in set(RunConfig.__dataclass_fields__) | {"lambda"}:
            print(f"unknown field: {args.axis}", file=sys.stderr)
            return 2
        outdir = args.out or raw.get("output_dir", ".")
        results = sweep(raw, args.axis, values, outdir, jobs=args.jobs)
        failures = [r for r in results if r[1] != "ok"]
        if not args.quiet:
            print(f"sweep finished: {len(results) - len(failures)} ok, {len(failures)} failed")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
