"""Figure rendering for the torus Zakharov toolkit's CSV/JSON artifacts."""

from ztplots.render import FigureSpec, PlotDataError, build_figure, render

__all__ = ["FigureSpec", "PlotDataError", "build_figure", "render"]
__version__ = "0.1.0"
