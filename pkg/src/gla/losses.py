"""Scalar training objectives, each composed from autodiff primitives.

Batch-fitted means and variances are computed inside the graph (constant
1/M row times the batch) so every loss differentiates end-to-end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    abs_val,
    add,
    add_row_bias,
    constant,
    divide,
    log,
    log_softmax_rows,
    matmul,
    mean_all,
    multiply,
    scale_by_constant,
    softmax_rows,
    sqrt,
    square,
    subtract,
)

_VAR_FLOOR = 1e-12


class LossError(ValueError):
    """Invalid loss inputs (shape, labels, or degenerate batches)."""


@dataclass(frozen=True)
class LossWeights:
    """Objective weights: alpha (KL), beta (DAL), kappa (SAFN), delta_r (norm step)."""

    alpha: float
    beta: float
    kappa: float
    delta_r: float

    def __post_init__(self):
        for name in ("alpha", "beta", "kappa", "delta_r"):
            if getattr(self, name) < 0:
                raise LossError(f"LossWeights.{name} must be >= 0")


def _require(cond, msg):
    if not cond:
        raise LossError(msg)


def _require_same_shape(a, b, op):
    _require(a.data.shape == b.data.shape, f"{op}: shape mismatch ({a.data.shape} vs {b.data.shape})")


def _column_stats(z, op):
    """Batch mean and floored biased variance per dimension, differentiable in z.

    The variance floor keeps a collapsed dimension (a relu unit dead across
    the whole batch, common early in training) a large finite penalty rather
    than an infinity; its gradient is zero regardless, since a constant
    column contributes nothing to the variance derivative.
    """
    m, d = z.data.shape
    _require(m >= 2, f"{op}: need at least 2 samples to fit a variance (got {m})")
    averager = constant(np.full((1, m), 1.0 / m))
    mu = matmul(averager, z)
    centered = add_row_bias(z, scale_by_constant(mu, -1.0))
    var = add(matmul(averager, square(centered)), constant(np.full((1, d), _VAR_FLOOR)))
    return mu, var, d


def _mean_row_l1(a, b, op):
    _require_same_shape(a, b, op)
    return scale_by_constant(mean_all(abs_val(subtract(a, b))), a.data.shape[1])


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    m, c = logits.data.shape
    _require(m >= 1, "softmax_cross_entropy: empty batch")
    _require(labels.ndim == 1 and labels.shape[0] == m, "softmax_cross_entropy: labels/logits length mismatch")
    _require(
        bool(np.all((labels >= 0) & (labels < c))),
        f"softmax_cross_entropy: labels out of range [0, {c})",
    )
    onehot = np.zeros((m, c))
    onehot[np.arange(m), labels.astype(int)] = 1.0
    picked = multiply(log_softmax_rows(logits), constant(onehot))
    return scale_by_constant(mean_all(picked), -float(c))


def kld_to_prior(z: Tensor) -> Tensor:
    """KL between the batch-fitted diagonal Gaussian of z and the standard normal."""
    mu, var, d = _column_stats(z, "kld_to_prior")
    terms = subtract(add(square(mu), var), log(var))
    terms = subtract(terms, constant(np.ones((1, d))))
    return scale_by_constant(mean_all(terms), 0.5 * d)


def dal(xhat_t: Tensor, xhat_n: Tensor) -> Tensor:
    """Mean row-wise L1 between decoded target latents and decoded prior draws."""
    return _mean_row_l1(xhat_t, xhat_n, "dal")


def dal_direct(xhat_s: Tensor, xhat_t: Tensor) -> Tensor:
    """Mean row-wise L1 between the two domains' reconstructions."""
    return _mean_row_l1(xhat_s, xhat_t, "dal_direct")


def recon(xhat: Tensor, x: Tensor) -> Tensor:
    """Paired mean row-wise L1 between a reconstruction and its own input."""
    return _mean_row_l1(xhat, x, "recon")


def entropy_loss(logits: Tensor) -> Tensor:
    """Mean prediction entropy; softmax is applied here."""
    m, c = logits.data.shape
    _require(m >= 1, "entropy_loss: empty batch")
    plogp = multiply(softmax_rows(logits), log_softmax_rows(logits))
    return scale_by_constant(mean_all(plogp), -float(c))


def mcd_discrepancy(p1: Tensor, p2: Tensor) -> Tensor:
    """Mean over batch and classes of |p1 - p2| for two probability batches."""
    _require_same_shape(p1, p2, "mcd_discrepancy")
    return mean_all(abs_val(subtract(p1, p2)))


def kld_direct(z_s: Tensor, z_t: Tensor) -> Tensor:
    """KL between the batch-fitted diagonal Gaussians of the two latent batches."""
    _require(z_s.data.shape[1] == z_t.data.shape[1], "kld_direct: latent width mismatch")
    mu_s, var_s, d = _column_stats(z_s, "kld_direct")
    mu_t, var_t, _ = _column_stats(z_t, "kld_direct")
    log_ratio = scale_by_constant(subtract(log(var_s), log(var_t)), 0.5)
    quad = divide(add(var_t, square(subtract(mu_t, mu_s))), scale_by_constant(var_s, 2.0))
    terms = subtract(add(log_ratio, quad), constant(np.full((1, d), 0.5)))
    return scale_by_constant(mean_all(terms), float(d))


def safn_feature_norm(h_prev, h_curr: Tensor, delta_r: float) -> Tensor:
    """Mean squared gap between current norms and previous norms grown by delta_r.

    h_prev is treated as data: no gradient flows into the stored norms.
    """
    prev = h_prev.data if isinstance(h_prev, Tensor) else np.asarray(h_prev, dtype=float)
    prev = prev.reshape(-1, 1)
    _require(
        h_curr.data.ndim == 2 and h_curr.data.shape[1] == 1,
        "safn_feature_norm: h_curr must be an M x 1 column",
    )
    _require(
        prev.shape[0] == h_curr.data.shape[0],
        f"safn_feature_norm: length mismatch ({prev.shape[0]} vs {h_curr.data.shape[0]})",
    )
    target = constant(prev + float(delta_r))
    return mean_all(square(subtract(h_curr, target)))


def feature_norms(hidden: Tensor) -> Tensor:
    """Per-sample L2 norm of hidden activations as an M x 1 column.

    A 1e-12 shift inside the square root keeps the gradient finite for
    all-zero rows (dead relu samples).
    """
    m, d = hidden.data.shape
    sq_sum = matmul(square(hidden), constant(np.ones((d, 1))))
    return sqrt(add(sq_sum, constant(np.full((m, 1), 1e-12))))
