"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

The engine is intentionally small. A :class:`Tensor` wraps a ``(rows, cols)``
float64 array; a :class:`Tape` records primitive applications in execution
order; :func:`backward` replays the tape in exact reverse order and
accumulates gradients keyed by node id. A parameter consumed several times in
one forward pass (the tied-weight case: W used directly and through its
transpose) therefore receives the sum of its per-use contributions, because
every use references the same node id.

Tapes are ambient: ``with Tape():`` activates one for the current thread and
every primitive applied inside the block is recorded on it. Outside any tape
the same primitives run as pure forward evaluation, which is what inference
paths use. Independent tapes on different threads never share state.

Every forward output and every gradient is checked for NaN/Inf; a non-finite
value is a hard error, never a silent propagation.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "BatchNormState",
    "Tape",
    "Tensor",
    "abs_val",
    "add",
    "add_row_bias",
    "apply_primitive",
    "backward",
    "batchnorm_rows",
    "constant",
    "divide",
    "exp",
    "finite_difference_check",
    "finite_difference_check_params",
    "log",
    "log_softmax_rows",
    "matmul",
    "matmul_with_transposed",
    "mean_all",
    "multiply",
    "relu",
    "scale_by_constant",
    "softmax_rows",
    "sqrt",
    "square",
    "subtract",
]


class AutodiffError(ValueError):
    """Malformed shapes, domain errors, or non-finite values."""


_node_ids = itertools.count(1)
_active = threading.local()


def _current_tape():
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense 2-D float64 value, optionally tracked for gradients.

    ``node`` is a process-unique integer for gradient-tracked tensors and
    ``None`` for constants; because outputs are created after their inputs,
    node ids are automatically topologically ordered on any tape.
    """

    __slots__ = ("data", "requires_grad", "node", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise AutodiffError(f"tensors are 2-D; got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = next(_node_ids) if self.requires_grad else None
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item() on non-scalar shape {self.data.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """Constant copy of this value; no gradient flows through it."""
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        tag = "constant" if self.node is None else f"node {self.node}"
        return f"Tensor(shape={self.data.shape}, {tag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class _Record:
    __slots__ = ("kind", "inputs", "output", "saved", "params")

    def __init__(self, kind, inputs, output, saved, params):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.params = params


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _active.stack.pop()
        return False


class BatchNormState:
    """Running statistics for one batchnorm layer (not trainable)."""

    __slots__ = ("running_mean", "running_var", "eps", "momentum")

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        self.running_mean = np.zeros((1, width))
        self.running_var = np.ones((1, width))
        self.eps = eps
        self.momentum = momentum


def _require_shape(cond: bool, kind: str, msg: str):
    if not cond:
        raise AutodiffError(f"{kind}: shape mismatch ({msg})")


# Each primitive is a (forward, backward) pair. forward(arrays, params) ->
# (out_array, saved); backward(grad_out, arrays, saved, params) -> per-input
# gradient arrays, aligned with the inputs.


def _fwd_matmul(a, params):
    x, y = a
    _require_shape(x.shape[1] == y.shape[0], "matmul", f"{x.shape} @ {y.shape}")
    return x @ y, None


def _bwd_matmul(g, a, saved, params):
    x, y = a
    return [g @ y.T, x.T @ g]


def _fwd_matmul_t(a, params):
    x, w = a
    _require_shape(
        x.shape[1] == w.shape[1], "matmul_with_transposed", f"{x.shape} @ {w.shape}^T"
    )
    return x @ w.T, None


def _bwd_matmul_t(g, a, saved, params):
    x, w = a
    return [g @ w, g.T @ x]


def _fwd_add_row_bias(a, params):
    x, b = a
    _require_shape(
        b.shape == (1, x.shape[1]), "add_row_bias", f"bias {b.shape} for {x.shape}"
    )
    return x + b, None


def _bwd_add_row_bias(g, a, saved, params):
    return [g, g.sum(axis=0, keepdims=True)]


def _same_shape(kind):
    def check(a, params):
        x, y = a
        _require_shape(x.shape == y.shape, kind, f"{x.shape} vs {y.shape}")

    return check


def _fwd_add(a, params):
    _same_shape("add")(a, params)
    return a[0] + a[1], None


def _fwd_subtract(a, params):
    _same_shape("subtract")(a, params)
    return a[0] - a[1], None


def _fwd_multiply(a, params):
    _same_shape("multiply")(a, params)
    return a[0] * a[1], None


def _fwd_divide(a, params):
    _same_shape("divide")(a, params)
    return a[0] / a[1], None


def _fwd_relu(a, params):
    return np.maximum(a[0], 0.0), None


def _fwd_log(a, params):
    if np.any(a[0] <= 0.0):
        raise AutodiffError("log of non-positive value")
    return np.log(a[0]), None


def _fwd_exp(a, params):
    return np.exp(a[0]), None


def _fwd_softmax(a, params):
    x = a[0]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p, None


def _bwd_softmax(g, a, saved, params, out=None):
    p = out
    dot = (g * p).sum(axis=1, keepdims=True)
    return [p * (g - dot)]


def _fwd_log_softmax(a, params):
    x = a[0]
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse, None


def _bwd_log_softmax(g, a, saved, params, out=None):
    p = np.exp(out)
    return [g - p * g.sum(axis=1, keepdims=True)]


def _fwd_mean_all(a, params):
    return np.array([[a[0].mean()]]), None


def _bwd_mean_all(g, a, saved, params):
    x = a[0]
    return [np.full(x.shape, g[0, 0] / x.size)]


def _fwd_abs(a, params):
    return np.abs(a[0]), None


def _bwd_abs(g, a, saved, params):
    # subgradient 0 at the kink, mirroring the ReLU convention
    return [g * np.sign(a[0])]


def _fwd_square(a, params):
    return a[0] * a[0], None


def _fwd_sqrt(a, params):
    if np.any(a[0] < 0.0):
        raise AutodiffError("sqrt of negative value")
    return np.sqrt(a[0]), None


def _fwd_scale(a, params):
    return a[0] * params["c"], None


def _fwd_batchnorm(a, params):
    x, gamma, beta = a
    state: BatchNormState = params["state"]
    mode = params["mode"]
    width = x.shape[1]
    _require_shape(
        gamma.shape == (1, width) and beta.shape == (1, width),
        "batchnorm_rows",
        f"affine {gamma.shape}/{beta.shape} for {x.shape}",
    )
    if mode == "train":
        mu = x.mean(axis=0, keepdims=True)
        var = x.var(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mu) * inv
        if params.get("track", True):
            m = state.momentum
            state.running_mean = (1.0 - m) * state.running_mean + m * mu
            state.running_var = (1.0 - m) * state.running_var + m * var
        return gamma * xhat + beta, (xhat, inv)
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean) * inv
        return gamma * xhat + beta, (xhat, inv)
    raise AutodiffError(f"batchnorm_rows: unknown mode {mode!r}")


def _bwd_batchnorm(g, a, saved, params):
    x, gamma, beta = a
    xhat, inv = saved
    dgamma = (g * xhat).sum(axis=0, keepdims=True)
    dbeta = g.sum(axis=0, keepdims=True)
    dxhat = g * gamma
    if params["mode"] == "eval":
        return [dxhat * inv, dgamma, dbeta]
    m = x.shape[0]
    dx = (
        inv
        / m
        * (
            m * dxhat
            - dxhat.sum(axis=0, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
        )
    )
    return [dx, dgamma, dbeta]


_PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_fwd_matmul, _bwd_matmul),
    "matmul_with_transposed": (_fwd_matmul_t, _bwd_matmul_t),
    "add_row_bias": (_fwd_add_row_bias, _bwd_add_row_bias),
    "add": (_fwd_add, lambda g, a, s, p: [g, g]),
    "subtract": (_fwd_subtract, lambda g, a, s, p: [g, -g]),
    "multiply": (_fwd_multiply, lambda g, a, s, p: [g * a[1], g * a[0]]),
    "divide": (
        _fwd_divide,
        lambda g, a, s, p: [g / a[1], -g * a[0] / (a[1] * a[1])],
    ),
    "relu": (_fwd_relu, lambda g, a, s, p: [g * (a[0] > 0.0)]),
    "log": (_fwd_log, lambda g, a, s, p: [g / a[0]]),
    "exp": (_fwd_exp, None),  # needs the output; handled below
    "softmax_rows": (_fwd_softmax, None),
    "log_softmax_rows": (_fwd_log_softmax, None),
    "mean_all": (_fwd_mean_all, _bwd_mean_all),
    "abs": (_fwd_abs, _bwd_abs),
    "square": (_fwd_square, lambda g, a, s, p: [2.0 * a[0] * g]),
    "sqrt": (_fwd_sqrt, None),
    "batchnorm_rows": (_fwd_batchnorm, _bwd_batchnorm),
    "scale_by_constant": (_fwd_scale, lambda g, a, s, p: [g * p["c"]]),
}

_NEEDS_OUTPUT = {"exp", "softmax_rows", "log_softmax_rows", "sqrt"}


def apply_primitive(kind: str, inputs: Sequence[Tensor], **params) -> Tensor:
    """Run one primitive; record it on the active tape if any input is
    gradient-tracked. Raises on unknown kinds, bad shapes, and non-finite
    results."""
    if kind not in _PRIMITIVES:
        raise AutodiffError(f"unknown primitive kind {kind!r}")
    forward, _ = _PRIMITIVES[kind]
    arrays = [t.data for t in inputs]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out_data, saved = forward(arrays, params)
    if not np.all(np.isfinite(out_data)):
        raise AutodiffError(f"non-finite value produced by {kind}")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    tape = _current_tape()
    if tape is not None and needs_grad:
        out.tape = tape
        tape.records.append(_Record(kind, tuple(inputs), out, saved, params))
    return out


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse the tape that produced ``loss``; return node id -> gradient.

    Every gradient-tracked tensor reachable from the loss appears in the map;
    multiple uses of one tensor accumulate by summation. Also fills ``.grad``
    on each such tensor.
    """
    if loss.data.shape != (1, 1):
        raise AutodiffError(f"backward target must be 1x1, got {loss.data.shape}")
    tape = loss.tape
    if tape is None or not any(r.output is loss for r in tape.records):
        raise AutodiffError("loss is not connected to a recorded tape")
    grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
    for rec in reversed(tape.records):
        g_out = grads.get(rec.output.node)
        if g_out is None:
            continue  # dead branch
        _, bwd = _PRIMITIVES[rec.kind]
        arrays = [t.data for t in rec.inputs]
        if rec.kind in _NEEDS_OUTPUT:
            if rec.kind == "exp":
                in_grads = [g_out * rec.output.data]
            elif rec.kind == "sqrt":
                in_grads = [g_out / (2.0 * rec.output.data)]
            elif rec.kind == "softmax_rows":
                in_grads = _bwd_softmax(g_out, arrays, rec.saved, rec.params,
                                        out=rec.output.data)
            else:
                in_grads = _bwd_log_softmax(g_out, arrays, rec.saved, rec.params,
                                            out=rec.output.data)
        else:
            in_grads = bwd(g_out, arrays, rec.saved, rec.params)
        for tensor, grad in zip(rec.inputs, in_grads):
            if tensor.node is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise AutodiffError(f"non-finite gradient produced by {rec.kind}")
            if tensor.node in grads:
                grads[tensor.node] = grads[tensor.node] + grad
            else:
                grads[tensor.node] = grad
    for rec in tape.records:
        for t in rec.inputs + (rec.output,):
            if t.node is not None and t.node in grads:
                t.grad = grads[t.node]
    return grads


# Thin named wrappers; training and loss code reads much better through
# these than through raw apply_primitive calls.

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def matmul_with_transposed(x: Tensor, w: Tensor) -> Tensor:
    """x @ w^T without materializing the transpose; the shared-parameter path."""
    return apply_primitive("matmul_with_transposed", [x, w])


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add_row_bias", [x, b])


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", [a, b])


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("subtract", [a, b])


def multiply(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("multiply", [a, b])


def divide(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("divide", [a, b])


def relu(x: Tensor) -> Tensor:
    return apply_primitive("relu", [x])


def log(x: Tensor) -> Tensor:
    return apply_primitive("log", [x])


def exp(x: Tensor) -> Tensor:
    return apply_primitive("exp", [x])


def softmax_rows(x: Tensor) -> Tensor:
    return apply_primitive("softmax_rows", [x])


def log_softmax_rows(x: Tensor) -> Tensor:
    return apply_primitive("log_softmax_rows", [x])


def mean_all(x: Tensor) -> Tensor:
    return apply_primitive("mean_all", [x])


def abs_val(x: Tensor) -> Tensor:
    return apply_primitive("abs", [x])


def square(x: Tensor) -> Tensor:
    return apply_primitive("square", [x])


def sqrt(x: Tensor) -> Tensor:
    return apply_primitive("sqrt", [x])


def scale_by_constant(x: Tensor, c: float) -> Tensor:
    return apply_primitive("scale_by_constant", [x], c=float(c))


def batchnorm_rows(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str,
    track: bool = True,
) -> Tensor:
    """Column-wise batch normalization with learnable affine parameters.

    ``train`` normalizes by the batch statistics and (when ``track``) folds
    them into the running statistics with the state's momentum; ``eval`` is a
    pure affine map through the stored running statistics.
    """
    return apply_primitive(
        "batchnorm_rows", [x, gamma, beta], state=state, mode=mode, track=track
    )


def finite_difference_check_params(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    corrupt_factor: float = 1.0,
) -> tuple[bool, float]:
    """Central-difference check of ``build_loss`` against the tape gradient.

    ``build_loss`` must rebuild the full forward pass from the current
    ``.data`` of each parameter on every call; entries are perturbed in
    place by ±step. The relative error uses an absolute floor of 1e-8
    against division by near-zero true gradients. ``corrupt_factor`` scales
    the analytic gradient and exists purely as a negative-control hook.
    """
    if step <= 0.0:
        raise AutodiffError("finite-difference step must be positive")
    with Tape():
        loss = build_loss()
    if loss.data.shape != (1, 1):
        raise AutodiffError("finite_difference_check needs a scalar-valued function")
    grads = backward(loss)
    max_rel = 0.0
    for p in params:
        analytic = grads.get(p.node)
        if analytic is None:
            analytic = np.zeros(p.data.shape)
        analytic = analytic * corrupt_factor
        flat = p.data.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = build_loss().item()
            flat[i] = orig - step
            f_minus = build_loss().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(flat_grad[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(flat_grad[i] - numeric) / denom)
    return max_rel <= tol, max_rel


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    at: Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    corrupt_factor: float = 1.0,
) -> tuple[bool, float]:
    """Gradient-check a single-tensor scalar function at the given point."""
    x = Tensor(at.data.copy(), requires_grad=True)
    return finite_difference_check_params(
        lambda: f(x), [x], step=step, tol=tol, corrupt_factor=corrupt_factor
    )
