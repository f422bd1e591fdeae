"""Deterministic 2-D synthetic data: Gaussian clouds, interleaving moons,
isotropic blobs, and labeled domain-shift tasks built from them.

All generators derive their randomness from ``numpy.random.SeedSequence`` so
the same seed always yields bit-identical datasets. Target labels in a
:class:`DomainPair` are reachable only through an explicit evaluation
accessor; training code gets a view without them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "DatasetError",
    "DomainPair",
    "TrainView",
    "Transform",
    "affine_normalize",
    "AffineNormalization",
    "domain_seed",
    "export_dataset_csv",
    "gen_blobs",
    "gen_gaussian2d",
    "gen_moons",
    "import_dataset_csv",
    "make_shifted_task",
]


class DatasetError(ValueError):
    """Invalid generator parameters or malformed dataset files."""


_DOMAIN_STREAMS = {"source": 0, "target": 1}


def domain_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Per-domain child stream of a task seed (name: source | target)."""
    return np.random.SeedSequence(seed, spawn_key=(_DOMAIN_STREAMS[name],))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def gen_gaussian2d(mean, cov, n: int, seed) -> np.ndarray:
    """n i.i.d. draws from N(mean, cov) via the Cholesky factor of cov:
    points = standard_normal(n, 2) @ L.T + mean."""
    if n < 1:
        raise DatasetError("gen_gaussian2d needs n >= 1")
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise DatasetError("covariance must be symmetric positive definite")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DatasetError("covariance must be symmetric positive definite") from exc
    return _rng(seed).standard_normal((n, 2)) @ chol.T + mean


def gen_moons(n: int, noise_std: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaving half circles: (cos t, sin t) labeled 0 and
    (1 - cos t, 0.5 - sin t) labeled 1, t on a uniform grid over [0, pi],
    plus i.i.d. Gaussian coordinate noise."""
    if n < 2:
        raise DatasetError("gen_moons needs n >= 2 (one point per class)")
    if noise_std < 0.0:
        raise DatasetError("noise_std must be non-negative")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    pts = np.concatenate(
        [
            np.column_stack([np.cos(t0), np.sin(t0)]),
            np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
        ]
    )
    pts = pts + _rng(seed).normal(0.0, noise_std, size=(n, 2))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return pts, labels


def gen_blobs(
    centers, std: float, n_per_center: int, seed
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian cloud around each center; label = center index."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if centers.shape[0] == 0:
        raise DatasetError("gen_blobs needs at least one center")
    if std <= 0.0:
        raise DatasetError("std must be positive")
    rng = _rng(seed)
    pts = []
    labels = []
    for idx, center in enumerate(centers):
        pts.append(center + std * rng.standard_normal((n_per_center, 2)))
        labels.append(np.full(n_per_center, idx, dtype=np.int64))
    return np.concatenate(pts), np.concatenate(labels)


@dataclass
class Transform:
    """Rigid-plus-scale map: rotate about the origin, scale, then translate."""

    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def validate(self):
        if abs(self.scale) < 1e-12:
            raise DatasetError("transform is not invertible (scale ~ 0)")

    def apply(self, points: np.ndarray) -> np.ndarray:
        self.validate()
        theta = np.deg2rad(self.rotation_deg)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        return self.scale * (points @ rot.T) + np.asarray(self.translation)

    def as_dict(self) -> dict:
        return {
            "rotation_deg": self.rotation_deg,
            "translation": list(self.translation),
            "scale": self.scale,
        }


class TrainView(NamedTuple):
    """What a training loop is allowed to see: no target labels exist here."""

    source_points: np.ndarray
    source_labels: np.ndarray | None
    target_points: np.ndarray


class DomainPair:
    """Source set (points + labels) and target set whose labels are held out.

    Target labels live behind :meth:`evaluation_target_labels`, which counts
    its reads so tests can audit that training never consumed them;
    :meth:`train_view` is the label-free surface handed to optimization code.
    """

    def __init__(
        self,
        source_points: np.ndarray,
        source_labels: np.ndarray | None,
        target_points: np.ndarray,
        target_labels: np.ndarray | None,
        provenance: dict,
    ):
        if not (np.all(np.isfinite(source_points)) and np.all(np.isfinite(target_points))):
            raise DatasetError("domain points must be finite")
        self.source_points = np.asarray(source_points, dtype=np.float64)
        self.source_labels = (
            None if source_labels is None else np.asarray(source_labels, dtype=np.int64)
        )
        self.target_points = np.asarray(target_points, dtype=np.float64)
        self.__target_labels = (
            None if target_labels is None else np.asarray(target_labels, dtype=np.int64)
        )
        self.provenance = dict(provenance)
        self.eval_label_reads = 0

    def train_view(self) -> TrainView:
        return TrainView(self.source_points, self.source_labels, self.target_points)

    def evaluation_target_labels(self) -> np.ndarray | None:
        self.eval_label_reads += 1
        return self.__target_labels

    @property
    def n_classes(self) -> int:
        if self.source_labels is None:
            raise DatasetError("dataset has no labels")
        return int(self.source_labels.max()) + 1


_TASK_KINDS = ("gauss", "moons", "blobs")

# class clouds for the labeled task kinds (the alignment-only presets keep
# their own parameters in the CLI preset table)
_GAUSS_CLASSES = (
    ((1.0, 1.0), ((0.3, 0.2), (0.2, 0.2))),
    ((5.0, 5.0), ((4.0, 2.0), (2.0, 2.0))),
)
_BLOB_CLASS_CENTERS = ((0.0, 0.0), (3.0, 3.0))
_MOONS_NOISE = 0.1


def _labeled_draw(kind: str, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    if kind == "moons":
        return gen_moons(n, _MOONS_NOISE, seed)
    if kind == "blobs":
        return gen_blobs(_BLOB_CLASS_CENTERS, 1.0, n // 2, seed)
    if kind == "gauss":
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        parts = ss.spawn(len(_GAUSS_CLASSES))
        pts = []
        labels = []
        for idx, ((mean, cov), child) in enumerate(zip(_GAUSS_CLASSES, parts)):
            pts.append(gen_gaussian2d(mean, cov, n // 2, child))
            labels.append(np.full(n // 2, idx, dtype=np.int64))
        return np.concatenate(pts), np.concatenate(labels)
    raise DatasetError(f"unknown task kind {kind!r} (expected one of {_TASK_KINDS})")


def make_shifted_task(kind: str, shift: Transform, n: int, seed: int) -> DomainPair:
    """Labeled domain-shift task: source = generator draw, target = an
    independently re-seeded draw pushed through ``shift`` (labels unchanged)."""
    shift.validate()
    src_pts, src_labels = _labeled_draw(kind, n, domain_seed(seed, "source"))
    tgt_pts, tgt_labels = _labeled_draw(kind, n, domain_seed(seed, "target"))
    tgt_pts = shift.apply(tgt_pts)
    return DomainPair(
        source_points=src_pts,
        source_labels=src_labels,
        target_points=tgt_pts,
        target_labels=tgt_labels,
        provenance={
            "generator": kind,
            "n_per_domain": n,
            "seed": seed,
            "shift": shift.as_dict(),
        },
    )


@dataclass
class AffineNormalization:
    """Per-coordinate map x' = x * scale + offset, with its inverse."""

    scale: np.ndarray
    offset: np.ndarray
    mode: str = "none"

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.offset

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (points - self.offset) / self.scale


def affine_normalize(
    points: np.ndarray, mode: str
) -> tuple[np.ndarray, AffineNormalization]:
    """Normalize a point cloud; returns the points and the recorded
    invertible transform. shift_to_nonneg subtracts the per-coordinate
    minimum and adds a 0.1 margin; standardize maps to mean 0, variance 1."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        raise DatasetError("cannot normalize an empty point set")
    if mode == "none":
        tf = AffineNormalization(np.ones(2), np.zeros(2), mode)
    elif mode == "shift_to_nonneg":
        offset = 0.1 - points.min(axis=0)
        tf = AffineNormalization(np.ones(2), offset, mode)
    elif mode == "standardize":
        std = points.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant column: center only
        tf = AffineNormalization(1.0 / std, -points.mean(axis=0) / std, mode)
    else:
        raise DatasetError(f"unknown normalization mode {mode!r}")
    return tf.apply(points), tf


def _format_value(v: float) -> str:
    return format(v, ".9g")


def export_dataset_csv(path, pair: DomainPair) -> None:
    """Write both domains as `x0,x1,label,domain` rows, floats at 9
    significant digits; unlabeled rows leave the label field empty."""
    rows = []
    for domain, pts, labels in (
        ("source", pair.source_points, pair.source_labels),
        ("target", pair.target_points, pair.evaluation_target_labels()),
    ):
        for i in range(pts.shape[0]):
            label = "" if labels is None else str(int(labels[i]))
            rows.append(
                (_format_value(pts[i, 0]), _format_value(pts[i, 1]), label, domain)
            )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x0", "x1", "label", "domain"])
        writer.writerows(rows)


def import_dataset_csv(path) -> DomainPair:
    """Inverse of :func:`export_dataset_csv`."""
    by_domain = {"source": ([], []), "target": ([], [])}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x0", "x1", "label", "domain"]:
            raise DatasetError(f"unexpected CSV header {header}")
        for row in reader:
            if len(row) != 4 or row[3] not in by_domain:
                raise DatasetError(f"malformed dataset row {row}")
            pts, labels = by_domain[row[3]]
            pts.append((float(row[0]), float(row[1])))
            labels.append(row[2])

    def finish(domain):
        pts, labels = by_domain[domain]
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        if all(l == "" for l in labels):
            return arr, None
        if any(l == "" for l in labels):
            raise DatasetError(f"{domain} rows mix labeled and unlabeled entries")
        return arr, np.asarray([int(l) for l in labels], dtype=np.int64)

    src_pts, src_labels = finish("source")
    tgt_pts, tgt_labels = finish("target")
    return DomainPair(
        source_points=src_pts,
        source_labels=src_labels,
        target_points=tgt_pts,
        target_labels=tgt_labels,
        provenance={"generator": "csv", "path": str(path)},
    )
