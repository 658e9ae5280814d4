"""Forward/backward kernels on NCHW numpy arrays.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes that cache. Kernels are dtype-preserving so the same code runs in
float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument, StateError
from ..fields import interp_matrix

KERNEL = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# im2col buffers above this many elements are processed in batch chunks
_CHUNK_ELEMS = 24_000_000


def _check4(x, what="input"):
    if x.ndim != 4:
        raise InvalidArgument(f"{what} must be a 4-D (batch, channels, height, width) array, "
                              f"got shape {x.shape}")


def conv_output_size(size: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - KERNEL) // stride + 1


def _im2col(xp, stride, ho, wo):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, KERNEL * KERNEL, ho, wo), dtype=xp.dtype)
    for a in range(KERNEL):
        for d in range(KERNEL):
            cols[:, :, a * KERNEL + d] = xp[:, :, a:a + stride * (ho - 1) + 1:stride,
                                            d:d + stride * (wo - 1) + 1:stride]
    return cols.reshape(b, c * KERNEL * KERNEL, ho * wo)


def _col2im_add(dxp, dcols, stride, ho, wo):
    b, c = dxp.shape[:2]
    dcols = dcols.reshape(b, c, KERNEL * KERNEL, ho, wo)
    for a in range(KERNEL):
        for d in range(KERNEL):
            dxp[:, :, a:a + stride * (ho - 1) + 1:stride,
                d:d + stride * (wo - 1) + 1:stride] += dcols[:, :, a * KERNEL + d]


def _batch_chunks(b, per_sample):
    step = max(1, _CHUNK_ELEMS // max(per_sample, 1))
    return [(s, min(b, s + step)) for s in range(0, b, step)]


def conv2d_forward(x, w, bias, stride=1, padding=1):
    """3x3 cross-correlation. ``w`` has shape ``(C_out, C_in, 3, 3)``."""
    _check4(x)
    if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
        raise InvalidArgument(f"conv weight must have shape (C_out, C_in, 3, 3), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise InvalidArgument(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if stride not in (1, 2) or padding not in (0, 1):
        raise InvalidArgument("stride must be 1 or 2 and padding 0 or 1")
    b, c, h, wd = x.shape
    ho, wo = conv_output_size(h, stride, padding), conv_output_size(wd, stride, padding)
    if ho < 1 or wo < 1:
        raise InvalidArgument(f"input {h}x{wd} too small for a 3x3 kernel with padding {padding}")
    if padding:
        xp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:-padding, padding:-padding] = x
    else:
        xp = x
    wmat = w.reshape(w.shape[0], -1)
    out = np.empty((b, w.shape[0], ho * wo), dtype=x.dtype)
    for s, e in _batch_chunks(b, c * 9 * ho * wo):
        out[s:e] = np.matmul(wmat, _im2col(xp[s:e], stride, ho, wo))
    if bias is not None:
        out += bias.reshape(1, -1, 1)
    return out.reshape(b, w.shape[0], ho, wo), (x.shape, xp, w, stride, padding)


def conv2d_backward(dout, cache):
    if cache is None:
        raise StateError("conv2d backward called before forward")
    xshape, xp, w, stride, padding = cache
    b, c, h, wd = xshape
    co, ho, wo = dout.shape[1:]
    d2 = dout.reshape(b, co, ho * wo)
    wmat = w.reshape(co, -1)
    dw = np.zeros_like(wmat)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for s, e in _batch_chunks(b, c * 9 * ho * wo):
        cols = _im2col(xp[s:e], stride, ho, wo)
        dw += np.tensordot(d2[s:e], cols, axes=([0, 2], [0, 2]))
        _col2im_add(dxp[s:e], np.matmul(wmat.T, d2[s:e]), stride, ho, wo)
    db = d2.sum(axis=(0, 2))
    dx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
    return dx, dw.reshape(w.shape), db


def dense_forward(x, w, bias):
    """``z = x W^T + b`` with ``W`` of shape ``(N_out, N_in)``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise InvalidArgument(f"dense: input {x.shape} incompatible with weight {w.shape}")
    return x @ w.T + bias, (x, w)


def dense_backward(dout, cache):
    if cache is None:
        raise StateError("dense backward called before forward")
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, cache):
    if cache is None:
        raise StateError("relu backward called before forward")
    return dout * cache


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x):
    return x * _sigmoid(x)


def swish_forward(x):
    s = _sigmoid(x)
    return x * s, (x, s)


def swish_backward(dout, cache):
    if cache is None:
        raise StateError("swish backward called before forward")
    x, s = cache
    return dout * (s + x * s * (1 - s))


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, tracked):
    """Per-channel batch normalisation over ``(batch, H, W)``.

    ``running_mean``/``running_var`` are updated in place in training mode.
    ``tracked`` is the number of training steps seen so far.
    """
    _check4(x)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise InvalidArgument("batchnorm in training mode needs batch*H*W >= 2")
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu.ravel()
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var.ravel() * (m / (m - 1))
        cache = (xhat, inv, gamma)
    else:
        if tracked == 0:
            raise StateError("batchnorm eval mode requires running statistics from training")
        inv = (1.0 / np.sqrt(running_var + BN_EPS)).astype(x.dtype).reshape(1, -1, 1, 1)
        xhat = (x - running_mean.astype(x.dtype).reshape(1, -1, 1, 1)) * inv
        cache = None
    out = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return out, cache


def batchnorm_backward(dout, cache):
    if cache is None:
        raise StateError("batchnorm backward needs a training-mode forward pass")
    xhat, inv, gamma = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, -1, 1, 1)
    dx = inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
    return dx, dgamma, dbeta


def upsample_forward(x, size):
    """Endpoint-aligned bilinear resize of the two spatial axes to ``size``."""
    _check4(x)
    ho, wo = (size, size) if np.isscalar(size) else size
    h, w = x.shape[2:]
    if ho < h or wo < w:
        raise InvalidArgument(f"upsample_to cannot shrink {h}x{w} to {ho}x{wo}")
    ry = interp_matrix(h, ho, 1).astype(x.dtype)
    rx = interp_matrix(w, wo, 1).astype(x.dtype)
    return np.matmul(np.matmul(ry, x), rx.T), (ry, rx)


def upsample_backward(dout, cache):
    if cache is None:
        raise StateError("upsample backward called before forward")
    ry, rx = cache
    return np.matmul(np.matmul(ry.T, dout), rx)


def concat_channels(a, b):
    _check4(a, "first operand")
    _check4(b, "second operand")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise InvalidArgument(f"cannot concatenate {a.shape} with {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def split_channels(d, ca):
    return d[:, :ca], d[:, ca:]


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise InvalidArgument(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff
