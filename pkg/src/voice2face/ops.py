"""Differentiable neural-network operations.

Convolution-style ops route their patch gather/scatter through the kernel
backend and keep the matrix products in BLAS. The 1D convolutions use
ceil-mode output framing (right edge padded as needed) so that a stride-2
chain follows t' = ceil((t - 1) / 2) + 1; the 2D convolutions use the
standard floor-mode framing.
"""

from __future__ import annotations

import numpy as np

from voice2face import backend
from voice2face.errors import NotFiniteError, ShapeError
from voice2face.tensor import Tensor, accumulate, from_op

PROB_EPS = 1e-7  # clamp for log() in the cross-entropy losses


def _require_finite(where, arr):
    # isfinite(sum) catches NaN/Inf in one reduction; values are O(1) so a
    # legitimate overflow of the sum is not a concern at these sizes.
    if not np.isfinite(arr.sum()):
        raise NotFiniteError(f"{where}: non-finite values in input")


def conv1d_out_len(t, kernel, stride, padding):
    """Ceil-mode output length of a 1D convolution."""
    span = t + 2 * padding - kernel
    if span < 0:
        raise ShapeError("conv1d", "time", f">= {kernel - 2 * padding}", t)
    return -(-span // stride) + 1


def conv2d_out_len(h, kernel, stride, padding):
    """Floor-mode output size of a 2D convolution along one axis."""
    span = h + 2 * padding - kernel
    if span < 0:
        raise ShapeError("conv2d", "spatial", f">= {kernel - 2 * padding}", h)
    return span // stride + 1


def deconv2d_out_len(h, kernel, stride, padding, output_padding):
    """Output size of a transposed 2D convolution along one axis."""
    out = (h - 1) * stride - 2 * padding + kernel + output_padding
    if out <= 0:
        raise ShapeError("deconv2d", "spatial output", ">= 1", out)
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """1D convolution over (B, C_in, T) with ceil-mode framing."""
    if x.data.ndim != 3:
        raise ShapeError("conv1d", "input rank", 3, x.data.ndim)
    b, c_in, t = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in != c_in_w:
        raise ShapeError("conv1d", "in_channels", c_in_w, c_in)
    _require_finite("conv1d", x.data)

    t_out = conv1d_out_len(t, k, stride, padding)
    tp = (t_out - 1) * stride + k
    pad_right = tp - t - padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, pad_right)))
    cols = backend.im2col1d(np.ascontiguousarray(xp), k, stride, t_out)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = np.matmul(wmat, cols) + bias.data.reshape(1, c_out, 1)

    def bwd(g):
        accumulate(bias, g.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            accumulate(weight, dw.reshape(weight.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g)
            dxp = backend.col2im1d(np.ascontiguousarray(dcols), k, stride, tp)
            accumulate(x, dxp[:, :, padding:padding + t])

    return from_op(out, (x, weight, bias), bwd)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """2D convolution over (B, C_in, H, W) with floor-mode framing."""
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "input rank", 4, x.data.ndim)
    b, c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if c_in != c_in_w:
        raise ShapeError("conv2d", "in_channels", c_in_w, c_in)
    _require_finite("conv2d", x.data)

    h_out = conv2d_out_len(h, kh, stride, padding)
    w_out = conv2d_out_len(w, kw, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = backend.im2col2d(np.ascontiguousarray(xp), kh, kw, stride, h_out, w_out)
    wmat = weight.data.reshape(c_out, c_in * kh * kw)
    out = (np.matmul(wmat, cols) + bias.data.reshape(1, c_out, 1)).reshape(
        b, c_out, h_out, w_out
    )

    def bwd(g):
        gf = g.reshape(b, c_out, h_out * w_out)
        accumulate(bias, gf.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
            accumulate(weight, dw.reshape(weight.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gf)
            dxp = backend.col2im2d(
                np.ascontiguousarray(dcols), kh, kw, stride, h_out, w_out, hp, wp
            )
            accumulate(x, dxp[:, :, padding:padding + h, padding:padding + w])

    return from_op(out, (x, weight, bias), bwd)


def deconv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: int,
    padding: int,
    output_padding: int,
) -> Tensor:
    """Transposed 2D convolution; weight layout (C_in, C_out, kh, kw)."""
    if x.data.ndim != 4:
        raise ShapeError("deconv2d", "input rank", 4, x.data.ndim)
    b, c_in, h, w = x.data.shape
    c_in_w, c_out, kh, kw = weight.data.shape
    if c_in != c_in_w:
        raise ShapeError("deconv2d", "in_channels", c_in_w, c_in)
    if output_padding >= stride:
        raise ShapeError("deconv2d", "output_padding", f"< stride {stride}", output_padding)
    _require_finite("deconv2d", x.data)

    h_out = deconv2d_out_len(h, kh, stride, padding, output_padding)
    w_out = deconv2d_out_len(w, kw, stride, padding, output_padding)
    hbuf = (h - 1) * stride + kh + output_padding
    wbuf = (w - 1) * stride + kw + output_padding
    wmat = weight.data.reshape(c_in, c_out * kh * kw)
    xflat = np.ascontiguousarray(x.data.reshape(b, c_in, h * w))
    cols = np.matmul(wmat.T, xflat)
    buf = backend.col2im2d(np.ascontiguousarray(cols), kh, kw, stride, h, w, hbuf, wbuf)
    out = buf[:, :, padding:padding + h_out, padding:padding + w_out] + bias.data.reshape(
        1, c_out, 1, 1
    )

    def bwd(g):
        accumulate(bias, g.sum(axis=(0, 2, 3)))
        dbuf = np.zeros((b, c_out, hbuf, wbuf), dtype=g.dtype)
        dbuf[:, :, padding:padding + h_out, padding:padding + w_out] = g
        dcols = backend.im2col2d(dbuf, kh, kw, stride, h, w)
        if weight.requires_grad:
            dw = np.matmul(xflat, dcols.transpose(0, 2, 1)).sum(axis=0)
            accumulate(weight, dw.reshape(weight.data.shape))
        if x.requires_grad:
            dx = np.matmul(wmat, dcols)
            accumulate(x, dx.reshape(b, c_in, h, w))

    return from_op(out, (x, weight, bias), bwd)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (B, C, ...) inputs.

    Train mode standardizes with batch statistics (population variance) and
    folds them into the running statistics with weight `momentum` on the
    new batch value; infer mode standardizes with the running statistics.
    """
    if x.data.ndim < 2:
        raise ShapeError("batchnorm", "input rank", ">= 2", x.data.ndim)
    axes = (0,) + tuple(range(2, x.data.ndim))
    c = x.data.shape[1]
    if gamma.data.shape != (c,):
        raise ShapeError("batchnorm", "gamma", (c,), gamma.data.shape)
    bshape = (1, c) + (1,) * (x.data.ndim - 2)

    if training:
        if x.data.shape[0] < 2:
            raise ShapeError("batchnorm", "batch", ">= 2 in train mode", x.data.shape[0])
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    n = x.data.size // c

    def bwd(g):
        accumulate(beta, g.sum(axis=axes))
        accumulate(gamma, (g * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            dx = (
                dxhat
                - dxhat.mean(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).mean(axis=axes).reshape(bshape)
            ) * inv_std.reshape(bshape)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        accumulate(x, dx)

    return from_op(out, (x, gamma, beta), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        accumulate(x, g * (x.data > 0))

    return from_op(out, (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.data > 0, x.data, x.data * np.asarray(slope, dtype=x.dtype))

    def bwd(g):
        accumulate(x, g * np.where(x.data > 0, 1.0, slope).astype(x.dtype))

    return from_op(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bwd(g):
        accumulate(x, g * out * (1.0 - out))

    return from_op(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        accumulate(x, g * (1.0 - out * out))

    return from_op(out, (x,), bwd)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    """Log-sum-exp stabilized softmax along `axis`."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        accumulate(x, out * (g - inner))

    return from_op(out, (x,), bwd)


def time_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing time axis: (B, C, T) -> (B, C)."""
    if x.data.ndim != 3:
        raise ShapeError("time_avg_pool", "input rank", 3, x.data.ndim)
    t = x.data.shape[2]
    out = x.data.mean(axis=2)

    def bwd(g):
        accumulate(x, np.repeat(g[:, :, None], t, axis=2) / t)

    return from_op(out, (x,), bwd)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over (B, F_in) with weight (F_out, F_in)."""
    if x.data.ndim != 2:
        raise ShapeError("fully_connected", "input rank", 2, x.data.ndim)
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            "fully_connected", "in_features", weight.data.shape[1], x.data.shape[1]
        )
    out = x.data @ weight.data.T + bias.data

    def bwd(g):
        accumulate(bias, g.sum(axis=0))
        if weight.requires_grad:
            accumulate(weight, g.T @ x.data)
        if x.requires_grad:
            accumulate(x, g @ weight.data)

    return from_op(out, (x, weight, bias), bwd)


def binary_cross_entropy(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-sample BCE; predictions clamped to [eps, 1 - eps] before log.

    Gradients vanish where the clamp binds, so a saturated prediction with
    the matching label contributes (numerically) zero loss and gradient.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.data.shape:
        raise ShapeError("binary_cross_entropy", "target shape", pred.data.shape, target.shape)
    p = np.clip(pred.data, PROB_EPS, 1.0 - PROB_EPS)
    active = (pred.data > PROB_EPS) & (pred.data < 1.0 - PROB_EPS)
    out = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))

    def bwd(g):
        accumulate(pred, g * active * (p - target) / (p * (1.0 - p)))

    return from_op(out, (pred,), bwd)


def binary_cross_entropy_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Numerically fused sigmoid + BCE; per-sample losses.

    Same objective value as binary_cross_entropy(sigmoid(z), y) but the
    gradient is sigmoid(z) - y, which stays informative when the sigmoid
    saturates (the composed form's clamp would zero it out).
    """
    target = np.asarray(target, dtype=logits.dtype)
    if target.shape != logits.data.shape:
        raise ShapeError("binary_cross_entropy_with_logits", "target shape",
                         logits.data.shape, target.shape)
    z = logits.data
    out = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))

    def bwd(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        accumulate(logits, g * (p - target))

    return from_op(out, (logits,), bwd)


def categorical_cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Numerically fused log-softmax + NLL; per-sample losses.

    Gradient is softmax(z) - onehot(label), bounded even when the softmax
    saturates.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeError("categorical_cross_entropy_with_logits", "labels",
                         (logits.data.shape[0],), labels.shape)
    k = logits.data.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError("categorical_cross_entropy_with_logits", "label range",
                         f"[0, {k})", (int(labels.min()), int(labels.max())))
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(labels.shape[0])
    out = lse - z[rows, labels]

    def bwd(g):
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[rows, labels] -= 1.0
        accumulate(logits, g[:, None] * soft)

    return from_op(out, (logits,), bwd)


def categorical_cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample -log(probs[label]); probabilities clamped below at eps."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.data.shape[0]:
        raise ShapeError(
            "categorical_cross_entropy", "labels", (probs.data.shape[0],), labels.shape
        )
    k = probs.data.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError("categorical_cross_entropy", "label range", f"[0, {k})", (int(labels.min()), int(labels.max())))
    rows = np.arange(labels.shape[0])
    picked = probs.data[rows, labels]
    p = np.clip(picked, PROB_EPS, None)
    out = -np.log(p)

    def bwd(g):
        dprobs = np.zeros_like(probs.data)
        dprobs[rows, labels] = -g * (picked > PROB_EPS) / p
        accumulate(probs, dprobs)

    return from_op(out, (probs,), bwd)
