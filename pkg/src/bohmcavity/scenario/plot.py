"""Deterministic SVG rendering of scenario outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import ValidationError  # noqa: E402

PLOT_KINDS = ("heatmap", "streamlines", "line", "survival")

_RC = {
    "svg.hashsalt": "bohmcavity",
    "svg.fonttype": "path",
    "figure.dpi": 100,
}


def _heat(ax, fig, data):
    vals = np.asarray(data["values"], dtype=float)
    x = np.asarray(data["x"], dtype=float)
    y = np.asarray(data["y"], dtype=float)
    if vals.shape != (y.size, x.size):
        raise ValidationError(f"heatmap values {vals.shape} do not match axes "
                              f"({y.size}, {x.size})")
    im = ax.imshow(vals, origin="lower", aspect="auto", cmap=data.get("cmap", "inferno"),
                   extent=(x[0], x[-1], y[0], y[-1]), interpolation="nearest")
    fig.colorbar(im, ax=ax, label=data.get("clabel", ""))


def _curves(ax, curves, color, lw):
    for c in curves:
        c = np.asarray(c, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValidationError("curves must be (n, 2) arrays")
        if len(c):
            ax.plot(c[:, 0], c[:, 1], color=color, lw=lw)


def emit_plot(data, kind, path):
    """Render ``data`` as an SVG file.

    Parameters
    ----------
    data : dict
        heatmap: ``x``, ``y``, ``values`` (ny, nx);
        streamlines: optional heatmap keys plus ``white`` and ``red`` lists of
        (n, 2) curves;
        line: ``x`` and ``series`` mapping label -> y;
        survival: ``t``, ``fraction``, ``ci_lo``, ``ci_hi``, optional ``analytic``.
        Optional ``title``, ``xlabel``, ``ylabel`` everywhere.
    kind : str
    path : str or Path
    """
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unsupported plot kind {kind!r}")
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=data.get("figsize", (6.4, 4.8)))
        try:
            if kind == "heatmap":
                _heat(ax, fig, data)
            elif kind == "streamlines":
                if "values" in data:
                    _heat(ax, fig, data)
                _curves(ax, data.get("white", []), "white", 1.2)
                _curves(ax, data.get("red", []), "red", 1.0)
                if "xlim" in data:
                    ax.set_xlim(*data["xlim"])
                if "ylim" in data:
                    ax.set_ylim(*data["ylim"])
            elif kind == "line":
                x = np.asarray(data["x"], dtype=float)
                for label in sorted(data["series"]):
                    y = np.asarray(data["series"][label], dtype=float)
                    if y.shape != x.shape:
                        raise ValidationError(f"series {label!r} length mismatch")
                    ax.plot(x, y, label=label)
                if data["series"]:
                    ax.legend()
            else:
                t = np.asarray(data["t"], dtype=float)
                ax.fill_between(t, data["ci_lo"], data["ci_hi"], color="0.8", label="95% CI")
                ax.plot(t, data["fraction"], color="k", label="ensemble")
                if data.get("analytic") is not None:
                    ax.plot(t, data["analytic"], "r--", label="exp(-rate t)")
                ax.legend()
            ax.set_title(data.get("title", ""))
            ax.set_xlabel(data.get("xlabel", ""))
            ax.set_ylabel(data.get("ylabel", ""))
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
