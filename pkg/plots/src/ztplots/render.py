"""Render publication-style figures from the solver's CSV/JSON artifacts.

Reads only the documented file contracts (diagnostics.csv columns,
summary.json rate fits, gm_lambda_*.csv / ground_state.csv profile tables)
and never recomputes diagnostics.  Rendering is deterministic: fixed style,
fixed dpi, constant metadata, so identical inputs produce identical bytes.

Invoked as:  ztplots render --spec <spec.json> --out <dir>
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("rate", "profiles", "concentration", "conservation")

DIAG_COLUMNS = [
    "t", "mass", "energy", "h1_u", "l2_n", "hhat_nt",
    "weighted_H", "modified_E", "rho_R0.25", "rho_R0.5", "rho_R1.0",
]

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

_METADATA = {"Software": "ztplots"}


class PlotDataError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    inputs: dict
    output: str
    axis_scales: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "FigureSpec":
        unknown = set(raw) - {"kind", "inputs", "output", "axis_scales"}
        if unknown:
            raise PlotDataError(f"unknown spec fields: {sorted(unknown)}")
        for name in ("kind", "inputs", "output"):
            if name not in raw:
                raise PlotDataError(f"missing spec field: {name}")
        if raw["kind"] not in FIGURE_KINDS:
            raise PlotDataError(f"unknown figure kind: {raw['kind']}")
        return cls(
            kind=raw["kind"],
            inputs=dict(raw["inputs"]),
            output=raw["output"],
            axis_scales=dict(raw.get("axis_scales", {})),
        )


def load_csv(path, required: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    text = path.read_text(encoding="ascii").strip()
    if not text:
        raise PlotDataError(f"empty CSV: {path}")
    lines = text.split("\n")
    header = lines[0].split(",")
    if len(lines) < 2:
        raise PlotDataError(f"empty CSV (header only): {path}")
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotDataError(f"missing columns {missing} in {path}")
    cols: dict[str, list] = {name: [] for name in header}
    for line in lines[1:]:
        for name, val in zip(header, line.split(",")):
            cols[name].append(float(val))
    return {name: np.asarray(vals) for name, vals in cols.items()}


def _apply_scales(ax, spec: FigureSpec) -> None:
    if "x" in spec.axis_scales:
        ax.set_xscale(spec.axis_scales["x"])
    if "y" in spec.axis_scales:
        ax.set_yscale(spec.axis_scales["y"])


def _fig_rate(spec: FigureSpec):
    diag = load_csv(spec.inputs["diagnostics"], ["t", "h1_u", "l2_n", "hhat_nt"])
    summary = json.loads(Path(spec.inputs["summary"]).read_text())
    fits = summary.get("rate_fits", {})
    fig, ax = plt.subplots()
    t = diag["t"]
    labels = {"h1_u": "|u|_H1", "l2_n": "|n|_L2", "hhat_nt": "|n_t|_Hhat-1"}
    annotations = []
    for name, label in labels.items():
        ax.plot(t, diag[name], lw=1.2, label=label)
        fit = fits.get(name, {})
        if "gamma" in fit and fit["T_est"] > t[-1]:
            fitted = fit["C"] * (fit["T_est"] - t) ** (-fit["gamma"])
            ax.plot(t, fitted, ls="--", lw=0.8, color="k")
            annotations.append(f"gamma({label}) = {fit['gamma']:.3f}")
    ax.set_xlabel("run time")
    ax.set_ylabel("norm")
    ax.set_yscale(spec.axis_scales.get("y", "log"))
    ax.legend(loc="upper left")
    ax.text(
        0.02, 0.02, "\n".join(annotations), transform=ax.transAxes,
        fontsize=8, va="bottom", family="monospace",
    )
    ax.set_title("blow-up norms and fitted rates")
    return fig


def _fig_profiles(spec: FigureSpec):
    fig, (ax_p, ax_n) = plt.subplots(1, 2, figsize=_STYLE["figure.figsize"])
    gs_cols = None
    if "ground_state" in spec.inputs:
        gs_cols = load_csv(spec.inputs["ground_state"], ["r", "Q"])
    paths = spec.inputs["profiles"]
    if isinstance(paths, str):
        paths = [paths]
    for path in paths:
        cols = load_csv(path, ["r", "P", "N"])
        label = Path(path).stem.replace("gm_lambda_", "lam=")
        ax_p.plot(cols["r"], cols["P"], lw=1.0, label=label)
        ax_n.plot(cols["r"], cols["N"], lw=1.0, label=label)
    if gs_cols is not None:
        ax_p.plot(gs_cols["r"], gs_cols["Q"], "k--", lw=1.0, label="Q")
        ax_n.plot(gs_cols["r"], -gs_cols["Q"] ** 2, "k--", lw=1.0, label="-Q^2")
    for ax, title in ((ax_p, "envelope profile"), (ax_n, "wave profile")):
        ax.set_xlim(0, 8)
        ax.set_xlabel("r")
        ax.legend(fontsize=7)
        ax.set_title(title)
    return fig


def _fig_concentration(spec: FigureSpec):
    diag = load_csv(
        spec.inputs["diagnostics"], ["t", "rho_R0.25", "rho_R0.5", "rho_R1.0"]
    )
    radii = np.array([0.25, 0.5, 1.0])
    values = np.vstack([diag["rho_R0.25"], diag["rho_R0.5"], diag["rho_R1.0"]])
    fig, ax = plt.subplots()
    t = diag["t"]
    t_edges = np.concatenate([[t[0] - (t[1] - t[0]) / 2], (t[:-1] + t[1:]) / 2, [t[-1] + (t[-1] - t[-2]) / 2]]) if len(t) > 1 else np.array([t[0] - 0.5, t[0] + 0.5])
    r_edges = np.array([0.125, 0.375, 0.75, 1.25])
    mesh = ax.pcolormesh(t_edges, r_edges, values, shading="flat")
    fig.colorbar(mesh, ax=ax, label="mass in disc")
    ax.set_xlabel("run time")
    ax.set_ylabel("disc radius")
    ax.set_title("concentration")
    return fig


def _fig_conservation(spec: FigureSpec):
    diag = load_csv(spec.inputs["diagnostics"], ["t", "mass", "energy"])
    fig, ax = plt.subplots()
    t = diag["t"]
    m0, e0 = diag["mass"][0], diag["energy"][0]
    dm = np.abs(diag["mass"] - m0) / abs(m0)
    de = np.abs(diag["energy"] - e0) / max(abs(e0), 1e-300)
    floor = 1e-18
    ax.semilogy(t, np.maximum(dm, floor), label="mass drift")
    ax.semilogy(t, np.maximum(de, floor), label="energy drift")
    ax.set_ylim(bottom=floor / 10.0)
    ax.set_xlabel("run time")
    ax.set_ylabel("relative drift")
    ax.legend()
    ax.set_title("conservation drift")
    return fig


_BUILDERS = {
    "rate": _fig_rate,
    "profiles": _fig_profiles,
    "concentration": _fig_concentration,
    "conservation": _fig_conservation,
}


def build_figure(spec: FigureSpec):
    """Pure figure construction (no file output)."""
    with plt.rc_context(_STYLE):
        return _BUILDERS[spec.kind](spec)


def render(spec: FigureSpec, outdir=None) -> Path:
    """Render the figure to its output path; deterministic bytes."""
    out = Path(spec.output)
    if outdir is not None:
        out = Path(outdir) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    fig = build_figure(spec)
    try:
        fig.savefig(out, metadata=dict(_METADATA))
    finally:
        plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ztplots", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    p_render = sub.add_parser("render", help="render figures from a spec file")
    p_render.add_argument("--spec", required=True, help="JSON FigureSpec or list of specs")
    p_render.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)
    try:
        raw = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    specs = raw if isinstance(raw, list) else [raw]
    try:
        for raw_spec in specs:
            path = render(FigureSpec.from_dict(raw_spec), outdir=args.out)
            print(path)
    except PlotDataError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"render failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
