"""Static PNG renderers for run artifacts: point clouds and training curves.

All rendering uses the Agg backend and fixed figure geometry so a rerun over
identical inputs produces identical bytes.
"""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class FigureError(ValueError):
    """Raised for unrenderable inputs (empty clouds, missing columns)."""


_SERIES_STYLE = {
    "source": {"color": "#1f77b4", "marker": "o"},
    "target": {"color": "#d62728", "marker": "x"},
    "predicted": {"color": "#2ca02c", "marker": "^"},
}
_FALLBACK_COLORS = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_SAVE_KW = dict(dpi=110, metadata={"Software": "gla"})


def render_scatter(clouds: dict, path, title: str) -> None:
    """One 2-D scatter panel with a named, styled series per cloud."""
    if not clouds:
        raise FigureError("render_scatter: no point clouds given")
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    fallback = iter(_FALLBACK_COLORS)
    for name in clouds:
        pts = np.asarray(clouds[name], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise FigureError(f"render_scatter: series {name!r} is not an Mx2 cloud")
        style = _SERIES_STYLE.get(name, {"color": next(fallback), "marker": "."})
        ax.scatter(pts[:, 0], pts[:, 1], s=14, alpha=0.7, label=name, **style)
    ax.set_title(title)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.legend(loc="best")
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_loss_curves(rows: list, path, title: str) -> None:
    """Loss columns on a shared panel plus, when present, an accuracy panel."""
    if not rows or "epoch" not in rows[0]:
        raise FigureError("render_loss_curves: rows must carry an 'epoch' column")
    epochs = [row["epoch"] for row in rows]
    loss_cols = [c for c in rows[0] if c not in ("epoch", "accuracy")]
    has_acc = "accuracy" in rows[0]
    n_panels = 1 + int(has_acc)
    fig, axes = plt.subplots(1, n_panels, figsize=(6.0 * n_panels, 4.2), squeeze=False)
    ax = axes[0][0]
    for col, color in zip(loss_cols, _FALLBACK_COLORS * 4):
        ax.plot(epochs, [row[col] for row in rows], label=col, color=color)
    ax.set_title(title)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if loss_cols:
        ax.legend(loc="best", fontsize=8)
    if has_acc:
        ax2 = axes[0][1]
        ax2.plot(epochs, [row["accuracy"] for row in rows], color="#1f77b4")
        ax2.set_title("target accuracy")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]


def render_metrics_csv(csv_path, png_path, title: str = "training curves") -> None:
    render_loss_curves(_read_csv_rows(csv_path), png_path, title=title)


def render_scatter_csv(csv_path, png_path, title: str = "point clouds") -> None:
    """Rebuild named clouds from an x0,x1,series file and render them."""
    clouds = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            clouds.setdefault(row["series"], []).append((float(row["x0"]), float(row["x1"])))
    render_scatter({k: np.asarray(v) for k, v in clouds.items()}, png_path, title=title)
