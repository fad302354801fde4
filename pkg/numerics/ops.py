"""
Primitive differentiable operations.

Every primitive is a forward function over numpy arrays that returns its result
together with a local backward rule. `forward_op` dispatches by name, wraps the
result in a Tensor and records it on the active tape when any input requires a
gradient.
"""
import logging
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from shared.errors import ContractError, DimensionError, LabelError
from .tensor import Tensor, TapeEntry, active_tape

logger = logging.getLogger(__name__)

TensorLike = Union[Tensor, np.ndarray, float, Sequence[float]]
Primitive = Callable[..., Tuple[np.ndarray, Callable]]

_GELU_C = float(np.sqrt(2.0 / np.pi))
LAYER_NORM_EPS = 1e-5
STDDEV_EPS = 1e-5


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap arrays and scalars as constant (non-trainable) tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _require_matrix(op: str, *arrays: np.ndarray):
    for a in arrays:
        if a.ndim != 2:
            raise DimensionError(op, [x.shape for x in arrays], "expected matrices")


def _row_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> bool:
    """True when b is a length-n vector broadcast across the rows of a."""
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim in (1, 2) and b.size == a.shape[1] and (b.ndim == 1 or b.shape[0] == 1):
        return True
    raise DimensionError(op, [a.shape, b.shape])


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...], broadcast: bool) -> np.ndarray:
    return g.sum(axis=0).reshape(shape) if broadcast else g


# ============================================================================
# Primitives
# ============================================================================

def _matmul(a, b):
    _require_matrix("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", [a.shape, b.shape])
    out = a @ b

    def backward(g):
        return g @ b.T, a.T @ g
    return out, backward


def _add(a, b):
    broadcast = _row_broadcast("add", a, b)
    out = a + b.reshape(-1) if broadcast else a + b

    def backward(g):
        return g, _reduce_to(g, b.shape, broadcast)
    return out, backward


def _mul(a, b):
    broadcast = _row_broadcast("mul", a, b)
    rhs = b.reshape(-1) if broadcast else b
    out = a * rhs

    def backward(g):
        return g * rhs, _reduce_to(g * a, b.shape, broadcast)
    return out, backward


def _concat_rows(*xs):
    _require_matrix("concat_rows", *xs)
    if len({x.shape[1] for x in xs}) != 1:
        raise DimensionError("concat_rows", [x.shape for x in xs], "row widths differ")
    out = np.concatenate(xs, axis=0)
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(xs)))
    return out, backward


def _slice_rows(x, start: int, stop: int):
    _require_matrix("slice_rows", x)
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError("slice_rows", [x.shape], f"rows [{start}, {stop}) out of range")
    out = x[start:stop].copy()

    def backward(g):
        full = np.zeros_like(x)
        full[start:stop] = g
        return (full,)
    return out, backward


def _relu(x):
    positive = x > 0
    out = np.where(positive, x, x.dtype.type(0))

    def backward(g):
        return (np.where(positive, g, g.dtype.type(0)),)
    return out, backward


def _gelu(x):
    # tanh approximation
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)
    return out, backward


def _softmax_rows(x):
    _require_matrix("softmax_rows", x)
    shifted = np.exp(x - x.max(axis=1, keepdims=True))
    y = shifted / shifted.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)
    return y, backward


def _layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS):
    _require_matrix("layer_norm", x)
    d = x.shape[1]
    if gamma.size != d or beta.size != d:
        raise DimensionError("layer_norm", [x.shape, gamma.shape, beta.shape])
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gamma.reshape(-1) + beta.reshape(-1)

    def backward(g):
        gxhat = g * gamma.reshape(-1)
        gx = inv * (
            gxhat
            - gxhat.mean(axis=1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        )
        ggamma = (g * xhat).sum(axis=0).reshape(gamma.shape)
        gbeta = g.sum(axis=0).reshape(beta.shape)
        return gx, ggamma, gbeta
    return out, backward


def _scale(x, factor: float):
    out = x * factor

    def backward(g):
        return (g * factor,)
    return out, backward


def _mean_rows(x):
    _require_matrix("mean_rows", x)
    m = x.shape[0]
    out = x.mean(axis=0, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / m, x.shape).copy(),)
    return out, backward


def _stddev_rows(x, eps: float = STDDEV_EPS):
    _require_matrix("stddev_rows", x)
    m = x.shape[0]
    centered = x - x.mean(axis=0, keepdims=True)
    std = np.sqrt((centered ** 2).mean(axis=0, keepdims=True) + eps)

    def backward(g):
        return (g * centered / (m * std),)
    return std, backward


def _transpose(x):
    _require_matrix("transpose", x)
    out = x.T.copy()

    def backward(g):
        return (g.T.copy(),)
    return out, backward


def _sum_all(x):
    out = np.asarray(x.sum(), dtype=x.dtype)

    def backward(g):
        return (np.full_like(x, g),)
    return out, backward


def _unfold_rows(x, kernel: int, stride: int):
    """Strided framing: row t is x[t*stride : t*stride+kernel] flattened."""
    _require_matrix("unfold_rows", x)
    length, channels = x.shape
    if kernel < 1 or stride < 1 or length < kernel:
        raise DimensionError("unfold_rows", [x.shape], f"kernel {kernel} stride {stride}")
    frames = (length - kernel) // stride + 1
    windows = sliding_window_view(x, kernel, axis=0)[::stride]
    out = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(frames, kernel * channels)
    index = np.arange(frames)[:, None] * stride + np.arange(kernel)[None, :]

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g.reshape(frames, kernel, channels))
        return (gx,)
    return out, backward


def _patchify(x, patch_bins: int, patch_frames: int):
    """Non-overlapping patches in row-major patch order; time is zero-padded."""
    _require_matrix("patchify", x)
    bins, frames = x.shape
    if bins % patch_bins != 0:
        raise DimensionError("patchify", [x.shape], f"{bins} bins not divisible by patch height {patch_bins}")
    padded_frames = -(-frames // patch_frames) * patch_frames
    padded = np.zeros((bins, padded_frames), dtype=x.dtype)
    padded[:, :frames] = x
    rows, cols = bins // patch_bins, padded_frames // patch_frames
    out = (
        padded.reshape(rows, patch_bins, cols, patch_frames)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, patch_bins * patch_frames)
    )

    def backward(g):
        gp = (
            g.reshape(rows, cols, patch_bins, patch_frames)
            .transpose(0, 2, 1, 3)
            .reshape(bins, padded_frames)
        )
        return (gp[:, :frames].copy(),)
    return out, backward


def _masked_add(x, values, mask: np.ndarray):
    if mask.shape != x.shape or values.size != int(mask.sum()):
        raise DimensionError("masked_add", [x.shape, values.shape, mask.shape])
    out = x.astype(np.result_type(x, values))
    out[mask] += values.reshape(-1)

    def backward(g):
        return g, g[mask].reshape(values.shape)
    return out, backward


def _cross_entropy(logits, labels: np.ndarray):
    _require_matrix("cross_entropy", logits)
    batch, classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise DimensionError("cross_entropy", [logits.shape, labels.shape])
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= classes:
        raise LabelError(f"labels must be integers in [0, {classes}), got {labels.tolist()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    out = np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)
    return out, backward


def _sigmoid_bce(logits, targets: np.ndarray):
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise DimensionError("sigmoid_bce", [logits.shape, targets.shape])
    if not np.all((targets == 0) | (targets == 1)):
        raise LabelError("multi-label targets must be 0 or 1")
    per_entry = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    count = logits.size
    out = np.asarray(per_entry.mean(), dtype=logits.dtype)

    def backward(g):
        sigmoid = 0.5 * (1.0 + np.tanh(0.5 * logits))
        return ((sigmoid - targets) * (g / count),)
    return out, backward


_PRIMITIVES: Dict[str, Primitive] = {
    "matmul": _matmul,
    "add": _add,
    "mul": _mul,
    "concat_rows": _concat_rows,
    "slice_rows": _slice_rows,
    "relu": _relu,
    "gelu": _gelu,
    "softmax_rows": _softmax_rows,
    "layer_norm": _layer_norm,
    "scale": _scale,
    "mean_rows": _mean_rows,
    "stddev_rows": _stddev_rows,
    "transpose": _transpose,
    "sum_all": _sum_all,
    "unfold_rows": _unfold_rows,
    "patchify": _patchify,
    "masked_add": _masked_add,
    "cross_entropy": _cross_entropy,
    "sigmoid_bce": _sigmoid_bce,
}

PRIMITIVE_OPS = frozenset(_PRIMITIVES)


def forward_op(op_kind: str, inputs: Sequence[TensorLike], **attrs) -> Tensor:
    """
    Apply a primitive operation.

    Args:
        op_kind: Primitive name (see PRIMITIVE_OPS)
        inputs: Differentiable operands
        **attrs: Non-differentiable attributes (slice bounds, factors, labels...)

    Returns:
        Result tensor, recorded on the active tape when any input requires a gradient
    """
    primitive = _PRIMITIVES.get(op_kind)
    if primitive is None:
        raise ContractError(f"unknown primitive op: {op_kind}")
    tensors = tuple(as_tensor(t) for t in inputs)
    out_data, backward = primitive(*(t.data for t in tensors), **attrs)
    needs_grad = any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=needs_grad, is_leaf=False)
    if needs_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(TapeEntry(op=op_kind, inputs=tensors, output=out, backward=backward))
    return out


# ============================================================================
# Convenience wrappers
# ============================================================================

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    return forward_op("matmul", [a, b])


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return forward_op("add", [a, b])


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return forward_op("mul", [a, b])


def concat_rows(*xs: TensorLike) -> Tensor:
    return forward_op("concat_rows", list(xs))


def slice_rows(x: TensorLike, start: int, stop: int) -> Tensor:
    return forward_op("slice_rows", [x], start=start, stop=stop)


def relu(x: TensorLike) -> Tensor:
    return forward_op("relu", [x])


def gelu(x: TensorLike) -> Tensor:
    return forward_op("gelu", [x])


def softmax_rows(x: TensorLike) -> Tensor:
    return forward_op("softmax_rows", [x])


def layer_norm(x: TensorLike, gamma: TensorLike, beta: TensorLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    return forward_op("layer_norm", [x, gamma, beta], eps=eps)


def scale(x: TensorLike, factor: float) -> Tensor:
    return forward_op("scale", [x], factor=factor)


def mean_rows(x: TensorLike) -> Tensor:
    return forward_op("mean_rows", [x])


def stddev_rows(x: TensorLike, eps: float = STDDEV_EPS) -> Tensor:
    return forward_op("stddev_rows", [x], eps=eps)


def transpose(x: TensorLike) -> Tensor:
    return forward_op("transpose", [x])


def sum_all(x: TensorLike) -> Tensor:
    return forward_op("sum_all", [x])


def unfold_rows(x: TensorLike, kernel: int, stride: int) -> Tensor:
    return forward_op("unfold_rows", [x], kernel=kernel, stride=stride)


def patchify(x: TensorLike, patch_bins: int, patch_frames: int) -> Tensor:
    return forward_op("patchify", [x], patch_bins=patch_bins, patch_frames=patch_frames)


def masked_add(x: TensorLike, values: TensorLike, mask: np.ndarray) -> Tensor:
    return forward_op("masked_add", [x, values], mask=mask)


def linear(x: TensorLike, weight: TensorLike, bias: Optional[TensorLike] = None) -> Tensor:
    """x @ weight (+ bias broadcast over rows)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def columns(x: TensorLike, start: int, stop: int) -> Tensor:
    """Column slice expressed through transpose and slice_rows."""
    return transpose(slice_rows(transpose(x), start, stop))


def concat_cols(*xs: TensorLike) -> Tensor:
    """Column concatenation expressed through transpose and concat_rows."""
    return transpose(concat_rows(*(transpose(x) for x in xs)))
