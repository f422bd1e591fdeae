"""Evaluation metrics, alignment oracles, and the per-run report container."""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .autodiff import Tensor


class MetricError(ValueError):
    """Invalid metric inputs."""


def _as_array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=float)


def accuracy(logits, labels) -> float:
    """Argmax match rate; argmax breaks ties toward the lowest class index."""
    logits = _as_array(logits)
    labels = np.asarray(labels)
    m, c = logits.shape
    if m == 0:
        raise MetricError("accuracy: empty batch")
    if labels.shape != (m,):
        raise MetricError(f"accuracy: labels shape {labels.shape} for {m} rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise MetricError(f"accuracy: labels out of range [0, {c})")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _unit_rows(z):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.maximum(norms, 1e-12)


def feature_space_distance(z_src, labels_src, z_tgt, labels_tgt) -> dict:
    """L2 gaps between per-class centroids of unit-normalized latents, plus "All"."""
    z_src, z_tgt = _as_array(z_src), _as_array(z_tgt)
    labels_src, labels_tgt = np.asarray(labels_src), np.asarray(labels_tgt)
    if len(z_src) == 0 or len(z_tgt) == 0:
        raise MetricError("feature_space_distance: empty batch")
    ns, nt = _unit_rows(z_src), _unit_rows(z_tgt)
    classes = sorted(set(labels_src.tolist()) | set(labels_tgt.tolist()))
    out = {}
    for c in classes:
        src_rows = ns[labels_src == c]
        tgt_rows = nt[labels_tgt == c]
        if len(src_rows) == 0 or len(tgt_rows) == 0:
            raise MetricError(f"feature_space_distance: class {c} absent in one domain")
        out[c] = float(np.linalg.norm(src_rows.mean(axis=0) - tgt_rows.mean(axis=0)))
    out["All"] = float(np.linalg.norm(ns.mean(axis=0) - nt.mean(axis=0)))
    return out


def moment_distance(a, b) -> tuple:
    """(L2 gap between means, Frobenius gap between biased covariances)."""
    a, b = _as_array(a), _as_array(b)
    if len(a) < 2 or len(b) < 2:
        raise MetricError("moment_distance: need at least 2 points per cloud")
    mean_gap = float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
    cov_a = np.cov(a, rowvar=False, bias=True)
    cov_b = np.cov(b, rowvar=False, bias=True)
    return mean_gap, float(np.linalg.norm(cov_a - cov_b))


def _mean_cross_norm(a, b):
    diffs = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).mean())


def energy_distance(a, b) -> float:
    """2 E||a-b|| - E||a-a'|| - E||b-b'|| over all pairs (exact double sums)."""
    a, b = _as_array(a), _as_array(b)
    if len(a) < 1 or len(b) < 1:
        raise MetricError("energy_distance: empty cloud")
    return 2.0 * _mean_cross_norm(a, b) - _mean_cross_norm(a, a) - _mean_cross_norm(b, b)


def latent_histogram(z, bins: int, value_range, dims=()) -> dict:
    """Fixed-range bin counts with underflow/overflow bins at both ends.

    Returns pooled counts over every value in the batch plus per-dimension
    counts for the requested dims; counts always sum to the value count.
    """
    z = _as_array(z)
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1:
        raise MetricError("latent_histogram: bins must be >= 1")
    if lo >= hi:
        raise MetricError("latent_histogram: empty value range")
    edges = np.linspace(lo, hi, bins + 1)

    def count(values):
        idx = np.searchsorted(edges, values.ravel(), side="right")
        return np.bincount(idx, minlength=bins + 2)

    return {
        "edges": edges,
        "pooled": count(z),
        "dims": {int(d): count(z[:, int(d)]) for d in dims},
    }


def _format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class RunReport:
    """Per-epoch rows plus a final summary; serializes deterministically."""

    def __init__(self, config_echo: dict, seed: int):
        self.rows = []
        self.summary = {}
        self.config_echo = dict(config_echo)
        self.seed = seed
        self.artifacts = {}  # in-memory extras (point clouds etc.); never serialized
        self._columns = None

    def add_row(self, **values):
        for key, v in values.items():
            if isinstance(v, (float, np.floating)) and not math.isfinite(float(v)):
                raise MetricError(f"RunReport: non-finite value for {key!r}")
        columns = list(values)
        if self._columns is None:
            self._columns = columns
        elif columns != self._columns:
            raise MetricError(f"RunReport: row columns changed from {self._columns} to {columns}")
        self.rows.append(values)

    def to_csv_text(self) -> str:
        if self._columns is None:
            raise MetricError("RunReport: no rows")
        lines = [",".join(self._columns)]
        for row in self.rows:
            lines.append(",".join(_format_value(row[c]) for c in self._columns))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    def to_summary_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": len(self.rows),
            "config": self.config_echo,
            "summary": self.summary,
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def export_scatter_csv(path, clouds: dict):
    """Write point clouds as x0,x1,series rows (9 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x0", "x1", "series"])
        for series, points in clouds.items():
            for x0, x1 in _as_array(points):
                writer.writerow([format(x0, ".9g"), format(x1, ".9g"), series])
