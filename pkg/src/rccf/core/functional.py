"""Neural-network operations built on :class:`~rccf.core.tensor.Tensor`.

Spatial ops accept a single ``C x H x W`` map or a batch ``N x C x H x W``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rccf.core.tensor import Tensor, as_tensor, make_result
from rccf.errors import ShapeError


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Patches of a padded ``N x C x H x W`` array as ``N x Ho x Wo x C x kh x kw``."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def _col2im(cols: np.ndarray, padded_shape: tuple, stride: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the padded grid.

    ``cols`` is laid out ``C x kh x kw x N x Ho x Wo`` so that every tap adds
    contiguous ``Ho x Wo`` rows.
    """
    c, kh, kw, n, ho, wo = cols.shape
    out = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                cols[:, i, j].transpose(1, 0, 2, 3)
    return out


def _batched(x: Tensor) -> tuple:
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` with ``weight`` (``C_out x C_in x kh x kw``).

    Output spatial size is ``floor((H + 2*padding - kh) / stride) + 1``.
    """
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"input {x.shape} and kernels {weight.shape} disagree on C_in")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    n, c, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (+{padding})")

    xp = _pad(x.data, padding)
    cols = _im2col(xp, kh, kw, stride)
    ho, wo = cols.shape[1], cols.shape[2]
    flat = cols.reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out = (flat @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (gm.T @ flat).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm.T).reshape(c, kh, kw, n, ho, wo)
            gx = _col2im(gcols, xp.shape, stride)
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    result = make_result(np.ascontiguousarray(out), parents, back, "conv2d")
    return result.reshape(result.shape[1:]) if squeeze else result


def correlate(kernels: Tensor, features: Tensor, padding: int = 0) -> Tensor:
    """Slide one kernel per sample over that sample's features.

    ``kernels`` is ``N x C x kh x kw`` (or ``C x kh x kw``) and ``features``
    ``N x C x H x W`` (or ``C x H x W``); the result is a single-channel map
    ``N x Ho x Wo`` (or ``Ho x Wo``).
    """
    kernels, features = as_tensor(kernels), as_tensor(features)
    squeeze = features.ndim == 3
    if squeeze:
        kernels = kernels.reshape(1, *kernels.shape)
        features = features.reshape(1, *features.shape)
    if kernels.ndim != 4 or features.ndim != 4:
        raise ShapeError(f"correlate needs 4-d operands, got {kernels.shape} and {features.shape}")
    if kernels.shape[:2] != features.shape[:2]:
        raise ShapeError(f"kernel {kernels.shape} and feature {features.shape} disagree on "
                         "batch/channels")
    n, c, kh, kw = kernels.shape
    k = kernels.data.reshape(n, -1)
    if kh == 1 and kw == 1 and padding == 0:
        f = features.data
        out = np.einsum("nc,nchw->nhw", k, f)

        def back(g):
            return (np.einsum("nhw,nchw->nc", g, f).reshape(kernels.shape),
                    np.einsum("nhw,nc->nchw", g, k))
    else:
        fp = _pad(features.data, padding)
        cols = _im2col(fp, kh, kw, 1)
        ho, wo = cols.shape[1], cols.shape[2]
        flat = cols.reshape(n, ho * wo, -1)
        out = np.einsum("npk,nk->np", flat, k).reshape(n, ho, wo)

        def back(g):
            gp = g.reshape(n, -1)
            gk = np.einsum("np,npk->nk", gp, flat).reshape(kernels.shape)
            gcols = np.einsum("np,nk->knp", gp, k).reshape(c, kh, kw, n, ho, wo)
            gf = _col2im(gcols, fp.shape, 1)
            if padding:
                gf = gf[:, :, padding:-padding, padding:-padding]
            return gk, gf

    result = make_result(out, (kernels, features), back, "correlate")
    return result.reshape(result.shape[1:]) if squeeze else result


@lru_cache(maxsize=64)
def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """``out_size x in_size`` linear-interpolation weights, half-pixel centres."""
    scale = in_size / out_size
    src = np.maximum((np.arange(out_size) + 0.5) * scale - 0.5, 0.0)
    lo = np.minimum(np.floor(src).astype(int), in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    m = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes with bilinear sampling (align_corners=False)."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_h}x{out_w}")
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    ry, rx = resize_matrix(h, out_h), resize_matrix(w, out_w)
    out = ry @ x.data @ rx.T
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,), "resize")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input {x.shape} does not match weight {weight.shape}")
    out = x @ weight.transpose()
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; only the looked-up rows receive gradient."""
    return table[np.asarray(ids, dtype=np.int64)]


def relu(x: Tensor) -> Tensor:
    return as_tensor(x).relu()


def sigmoid(x: Tensor) -> Tensor:
    return as_tensor(x).sigmoid()


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return as_tensor(x).softplus()
    raise ValueError(f"unknown activation {kind!r}")
