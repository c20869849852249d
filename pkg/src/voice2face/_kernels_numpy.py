"""Pure NumPy twin of the compiled gather/scatter kernels.

Used when the voice2face._convkernels extension is unavailable (or forced
via VOICE2FACE_KERNELS=python). Contracts match the extension exactly:
inputs are C-contiguous, already padded, float32 or float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col1d(x, k, stride, t_out):
    b, c, _ = x.shape
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    win = win[:, :, :t_out]  # (B, C, t_out, k)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, c * k, t_out)


def col2im1d(cols, k, stride, tp):
    b, ck, t_out = cols.shape
    c = ck // k
    cols = cols.reshape(b, c, k, t_out)
    out = np.zeros((b, c, tp), dtype=cols.dtype)
    for ki in range(k):
        out[:, :, ki:ki + stride * t_out:stride] += cols[:, :, ki, :]
    return out


def im2col2d(x, kh, kw, stride, h_out, w_out):
    b, c, _, _ = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :h_out, :w_out]  # (B, C, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(b, c * kh * kw, h_out * w_out)


def col2im2d(cols, kh, kw, stride, h_out, w_out, hp, wp):
    b, ckk, _ = cols.shape
    c = ckk // (kh * kw)
    cols = cols.reshape(b, c, kh, kw, h_out, w_out)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    # No overlap within one (ki, kj) offset, so each += is a plain strided add.
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki:ki + stride * h_out:stride,
                kj:kj + stride * w_out:stride] += cols[:, :, ki, kj]
    return out
