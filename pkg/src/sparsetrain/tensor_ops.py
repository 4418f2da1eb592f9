"""Instrumented float64 tensor kernels with channel slicing.

All tensors are C-contiguous ``numpy.float64`` arrays. Kernels that multiply
report the exact number of scalar multiplications they perform to every
counter currently active on this thread (see :func:`count_ops`), so callers
can meter the work a masked network *actually* executes. Channel slicing is
done with integer index lists; arrays keep their full shape and pruned
channels simply hold zeros.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, ParameterError

_active = threading.local()


def _counter_stack():
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = _active.stack = []
    return stack


class OpCounter:
    """Tally of scalar multiplies/adds executed while the counter was active."""

    def __init__(self):
        self.multiplies = 0
        self.adds = 0

    def reset(self):
        self.multiplies = 0
        self.adds = 0

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"OpCounter(multiplies={self.multiplies}, adds={self.adds})"


@contextmanager
def count_ops():
    """Context manager yielding an :class:`OpCounter` that accumulates the
    multiply/add counts of every kernel call made inside the block.

    Counters nest: each active counter on the current thread receives every
    count, so an outer counter sees the totals of inner regions too. Counts
    are per-thread; concurrent threads meter their own work.
    """
    counter = OpCounter()
    stack = _counter_stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def record_ops(multiplies, adds=0):
    """Add ``multiplies``/``adds`` to every counter active on this thread."""
    stack = _counter_stack()
    if stack:
        m = int(multiplies)
        a = int(adds)
        for counter in stack:
            counter.multiplies += m
            counter.adds += a


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_index_list(idx, size, name):
    if idx is None:
        return np.arange(size)
    idx = np.asarray(idx, dtype=np.intp).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise DimensionError(f"{name} indices out of range for axis of size {size}")
    return idx


# ---------------------------------------------------------------------------
# dense kernels
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product with exact multiply accounting (M*K*N multiplies)."""
    a = _as_f64(a)
    b = _as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    m, k = a.shape
    n = b.shape[1]
    record_ops(m * k * n, m * max(k - 1, 0) * n)
    return a @ b


def add(a, b):
    a = _as_f64(a)
    b = _as_f64(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    record_ops(0, a.size)
    return a + b


def scale(x, c):
    x = _as_f64(x)
    record_ops(x.size)
    return x * float(c)


def hadamard(a, b):
    a = _as_f64(a)
    b = _as_f64(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shapes differ: {a.shape} vs {b.shape}")
    record_ops(a.size)
    return a * b


def relu(x):
    return np.maximum(_as_f64(x), 0.0)


def relu_backward(grad_out, pre_activation):
    grad_out = _as_f64(grad_out)
    pre_activation = _as_f64(pre_activation)
    if grad_out.shape != pre_activation.shape:
        raise DimensionError(
            f"relu_backward shapes differ: {grad_out.shape} vs {pre_activation.shape}"
        )
    return np.where(pre_activation > 0.0, grad_out, 0.0)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv_args(x, filters, stride, padding):
    if x.ndim != 4:
        raise DimensionError(f"conv input must be [B,C,H,W], got shape {x.shape}")
    if filters.ndim != 4:
        raise DimensionError(f"conv filters must be [Cout,Cin,kh,kw], got shape {filters.shape}")
    if filters.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv filter in-channels {filters.shape[1]} != input channels {x.shape[1]}"
        )
    if int(stride) < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if int(padding) < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    kh, kw = filters.shape[2], filters.shape[3]
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise ParameterError(
            f"kernel {kh}x{kw} exceeds padded input {x.shape[2] + 2 * padding}"
            f"x{x.shape[3] + 2 * padding}"
        )


def _im2col(x, kh, kw, stride, padding):
    """Gather sliding windows: [B,C,H,W] -> [B*Ho*Wo, C*kh*kw]. Pure data
    movement, so it records no multiplies."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, hp, wp = x.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, c * kh * kw), ho, wo


def _col2im(cols, in_shape, kh, kw, stride, padding):
    """Scatter-add inverse of :func:`_im2col` (adds only, no multiplies)."""
    b, c, h, w = in_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((b, c, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    record_ops(0, cols.size)
    if padding:
        return xp[:, :, padding : padding + h, padding : padding + w]
    return xp


def conv2d(x, filters, stride=1, padding=0, active_in=None, active_out=None):
    """2-d cross-correlation restricted to active channel index lists.

    Only filters connecting ``active_in`` to ``active_out`` are touched, so the
    multiply count is exactly ``B * Ho * Wo * |active_in| * kh * kw * |active_out|``.
    Inactive output channels of the result are zero. No bias is applied here.
    """
    x = _as_f64(x)
    filters = _as_f64(filters)
    _check_conv_args(x, filters, stride, padding)
    b = x.shape[0]
    cout, cin, kh, kw = filters.shape
    active_in = _check_index_list(active_in, cin, "active_in")
    active_out = _check_index_list(active_out, cout, "active_out")
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    out = np.zeros((b, cout, ho, wo), dtype=np.float64)
    if active_in.size == 0 or active_out.size == 0:
        return out
    cols, ho, wo = _im2col(x[:, active_in], kh, kw, stride, padding)
    w = filters[np.ix_(active_out, active_in)].reshape(active_out.size, -1)
    res = matmul(cols, w.T)
    out[:, active_out] = res.reshape(b, ho, wo, active_out.size).transpose(0, 3, 1, 2)
    return out


def conv2d_backward(x, filters, grad_out, stride=1, padding=0, active_in=None,
                    active_out=None, need_input_grad=True):
    """Gradients of :func:`conv2d` restricted to the active channel lists.

    Returns ``(grad_filters, grad_input)`` where blocks outside
    ``active_out x active_in`` are exactly zero (they are never written).
    ``grad_input`` is ``None`` when ``need_input_grad`` is false.
    """
    x = _as_f64(x)
    filters = _as_f64(filters)
    grad_out = _as_f64(grad_out)
    _check_conv_args(x, filters, stride, padding)
    b = x.shape[0]
    cout, cin, kh, kw = filters.shape
    active_in = _check_index_list(active_in, cin, "active_in")
    active_out = _check_index_list(active_out, cout, "active_out")
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    if grad_out.shape != (b, cout, ho, wo):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != expected {(b, cout, ho, wo)}"
        )
    grad_filters = np.zeros_like(filters)
    grad_input = np.zeros_like(x) if need_input_grad else None
    if active_in.size == 0 or active_out.size == 0:
        return grad_filters, grad_input
    cols, _, _ = _im2col(x[:, active_in], kh, kw, stride, padding)
    go = grad_out[:, active_out].transpose(0, 2, 3, 1).reshape(-1, active_out.size)
    gw = matmul(cols.T, go)  # [a_in*kh*kw, a_out]
    grad_filters[np.ix_(active_out, active_in)] = gw.T.reshape(
        active_out.size, active_in.size, kh, kw
    )
    if need_input_grad:
        w = filters[np.ix_(active_out, active_in)].reshape(active_out.size, -1)
        gcols = matmul(go, w)  # [B*Ho*Wo, a_in*kh*kw]
        slice_shape = (b, active_in.size, x.shape[2], x.shape[3])
        grad_input[:, active_in] = _col2im(gcols, slice_shape, kh, kw, stride, padding)
    return grad_filters, grad_input


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def maxpool2(x):
    """2x2/stride-2 max pooling. Returns ``(out, argmax)`` where ``argmax``
    indexes the winning corner of each window for the backward pass. Odd
    trailing rows/columns are dropped."""
    x = _as_f64(x)
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 input must be [B,C,H,W], got shape {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise DimensionError(f"maxpool2 input spatial dims too small: {x.shape}")
    v = x[:, :, : ho * 2, : wo * 2].reshape(b, c, ho, 2, wo, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(grad_out, argmax, in_shape):
    """Scatter upstream gradients back to the argmax positions."""
    grad_out = _as_f64(grad_out)
    b, c, h, w = in_shape
    ho, wo = h // 2, w // 2
    if grad_out.shape != (b, c, ho, wo):
        raise DimensionError(
            f"maxpool2_backward grad shape {grad_out.shape} != expected {(b, c, ho, wo)}"
        )
    flat = np.zeros((b, c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(flat, argmax[..., None], grad_out[..., None], axis=-1)
    flat = flat.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    grad_in = np.zeros(in_shape, dtype=np.float64)
    grad_in[:, :, : ho * 2, : wo * 2] = flat.reshape(b, c, ho * 2, wo * 2)
    return grad_in


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Numerically stabilised by the row-max shift, so finite logits always give
    a finite loss. Labels must be integers in ``[0, num_classes)``.
    """
    logits = _as_f64(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [B, classes], got shape {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch of {logits.shape[0]}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ParameterError("labels must be integers")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    # softmax normalisation + the 1/B gradient scaling are the multiply-class work
    record_ops(2 * n * k, 2 * n * k)
    return loss, grad
