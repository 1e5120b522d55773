import json
from pathlib import Path

import pytest

from ztplots.render import FigureSpec, PlotDataError, build_figure, main, render

DATA = Path(__file__).parent / "data"


def spec_for(kind: str, output: str) -> FigureSpec:
    inputs = {
        "rate": {"diagnostics": str(DATA / "diagnostics.csv"), "summary": str(DATA / "summary.json")},
        "profiles": {
            "profiles": [str(DATA / "gm_lambda_0.1.csv")],
            "ground_state": str(DATA / "ground_state.csv"),
        },
        "concentration": {"diagnostics": str(DATA / "diagnostics.csv")},
        "conservation": {"diagnostics": str(DATA / "diagnostics.csv")},
    }[kind]
    return FigureSpec(kind=kind, inputs=inputs, output=output)


@pytest.mark.parametrize("kind", ["rate", "profiles", "concentration", "conservation"])
def test_render_all_kinds(kind, tmp_path):
    path = render(spec_for(kind, f"{kind}.png"), outdir=tmp_path)
    assert path.exists()
    assert path.stat().st_size > 1000


@pytest.mark.parametrize("kind", ["rate", "profiles", "concentration", "conservation"])
def test_byte_deterministic(kind, tmp_path):
    p1 = render(spec_for(kind, f"{kind}_a.png"), outdir=tmp_path)
    p2 = render(spec_for(kind, f"{kind}_b.png"), outdir=tmp_path)
    assert p1.read_bytes() == p2.read_bytes()


def test_rate_annotation_matches_summary(tmp_path):
    fig = build_figure(spec_for("rate", "rate.png"))
    texts = [t.get_text() for ax in fig.axes for t in ax.texts]
    annotation = "\n".join(texts)
    summary = json.loads((DATA / "summary.json").read_text())
    for name, label in (("h1_u", "|u|_H1"), ("l2_n", "|n|_L2"), ("hhat_nt", "|n_t|_Hhat-1")):
        gamma = summary["rate_fits"][name]["gamma"]
        assert f"gamma({label}) = {gamma:.3f}" in annotation


def test_missing_column_named(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,mass\n0.0,1.0\n")
    spec = FigureSpec(
        kind="conservation", inputs={"diagnostics": str(bad)}, output="x.png"
    )
    with pytest.raises(PlotDataError, match="missing columns.*energy"):
        build_figure(spec)


def test_empty_csv_names_file(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    spec = FigureSpec(kind="conservation", inputs={"diagnostics": str(empty)}, output="x.png")
    with pytest.raises(PlotDataError, match="empty.csv"):
        build_figure(spec)


def test_unknown_kind_rejected():
    with pytest.raises(PlotDataError, match="unknown figure kind"):
        FigureSpec.from_dict({"kind": "pie", "inputs": {}, "output": "x.png"})


def test_cli_render(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(
        json.dumps(
            [
                {
                    "kind": "conservation",
                    "inputs": {"diagnostics": str(DATA / "diagnostics.csv")},
                    "output": "cons.png",
                }
            ]
        )
    )
    assert main(["render", "--spec", str(spec_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "cons.png").exists()


def test_cli_bad_spec(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({"kind": "nope", "inputs": {}, "output": "x.png"}))
    assert main(["render", "--spec", str(spec_path), "--out", str(tmp_path)]) == 2
