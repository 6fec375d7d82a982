"""Neural-network layers on top of the autodiff core.

Layout conventions: images are (H, W, C); convolution kernels are
(Kh, Kw, Cin, Cout) and use cross-correlation semantics (no kernel flip).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Tensor, accumulate_grad, as_tensor, make_op


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


# -- convolution ---------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(H, W, C) -> (oh*ow, kh*kw*C) patch matrix, valid positions only."""
    h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(oh, ow, kh, kw, c), strides=(s0, s1, s0, s1, s2)
    )
    return windows.reshape(oh * ow, kh * kw * c)


def conv2d(x, kernel, padding: str = "zero") -> Tensor:
    """2-D cross-correlation of an (H, W, Cin) image with a (Kh, Kw, Cin, Cout) kernel.

    ``padding="zero"`` preserves the spatial dims; ``padding="none"`` yields
    the valid (H-Kh+1, W-Kw+1) output.  Odd kernel sizes only.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects (H,W,Cin) and (Kh,Kw,Cin,Cout), got {x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {kh}x{kw}")
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    if padding == "zero":
        ph, pw = kh // 2, kw // 2
        xp = np.zeros((x.shape[0] + 2 * ph, x.shape[1] + 2 * pw, cin))
        xp[ph : ph + x.shape[0], pw : pw + x.shape[1], :] = x.data
    elif padding == "none":
        if x.shape[0] < kh or x.shape[1] < kw:
            raise ShapeError("input smaller than kernel with padding='none'")
        xp = x.data
    else:
        raise ShapeError(f"unknown padding {padding!r}")

    oh, ow = xp.shape[0] - kh + 1, xp.shape[1] - kw + 1
    cols = np.ascontiguousarray(_im2col(xp, kh, kw))
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out_data = (cols @ kmat).reshape(oh, ow, cout)

    def bwd(g):
        gmat = g.reshape(oh * ow, cout)
        accumulate_grad(kernel, (cols.T @ gmat).reshape(kernel.shape))
        if x.requires_grad:
            # One GEMM back to patch space, then overlap-add the patches.
            gcols = (gmat @ kmat.T).reshape(oh, ow, kh, kw, cin)
            gpad = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    gpad[ki : ki + oh, kj : kj + ow, :] += gcols[:, :, ki, kj, :]
            if padding == "zero":
                gpad = gpad[ph : ph + x.shape[0], pw : pw + x.shape[1], :]
            accumulate_grad(x, gpad)

    return make_op(out_data, (x, kernel), bwd, "conv2d")


# -- pooling / upsampling ------------------------------------------------------


def maxpool2x2(x) -> Tensor:
    """2x2 max pooling with stride 2; requires even spatial dims."""
    x = as_tensor(x)
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    windows = x.data.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4)
    flat = windows.reshape(h // 2, w // 2, 4, c)
    idx = flat.argmax(axis=2)
    out_data = np.take_along_axis(flat, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[:, :, None, :], g[:, :, None, :], axis=2)
        gx = gflat.reshape(h // 2, w // 2, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
        accumulate_grad(x, gx)

    return make_op(out_data, (x,), bwd, "maxpool2x2")


_UPSAMPLE_CACHE: dict[int, np.ndarray] = {}


def _upsample_matrix(n: int) -> np.ndarray:
    """(2n, n) bilinear interpolation matrix; output centers at (i+0.5)/2 - 0.5."""
    mat = _UPSAMPLE_CACHE.get(n)
    if mat is None:
        mat = np.zeros((2 * n, n))
        for i in range(2 * n):
            pos = (i + 0.5) / 2.0 - 0.5
            i0 = int(np.floor(pos))
            frac = pos - i0
            lo = min(max(i0, 0), n - 1)
            hi = min(max(i0 + 1, 0), n - 1)
            mat[i, lo] += 1.0 - frac
            mat[i, hi] += frac
        _UPSAMPLE_CACHE[n] = mat
    return mat


def _apply_rows(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(M, H) x (H, W, C) -> (M, W, C) along the row axis, via BLAS."""
    h, w, c = x.shape
    return (mat @ x.reshape(h, w * c)).reshape(mat.shape[0], w, c)


def _apply_cols(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(M, W) x (H, W, C) -> (H, M, C) along the column axis, via BLAS."""
    h, w, c = x.shape
    xt = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(w, h * c)
    out = (mat @ xt).reshape(mat.shape[0], h, c)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def upsample2x(x) -> Tensor:
    """2x bilinear upsampling of an (H, W, C) image (half-pixel alignment)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample2x expects (H,W,C), got {x.shape}")
    h, w, _ = x.shape
    wr = _upsample_matrix(h)
    wc = _upsample_matrix(w)
    out_data = _apply_cols(wc, _apply_rows(wr, x.data))

    def bwd(g):
        accumulate_grad(x, _apply_rows(wr.T, _apply_cols(wc.T, g)))

    return make_op(out_data, (x,), bwd, "upsample2x")


# -- normalization / activations -----------------------------------------------


def frn(x, gamma, beta, eps: float = 1e-6, detach_stats: bool = False) -> Tensor:
    """Filter response normalization: y = gamma * x / sqrt(mean_HW(x^2) + eps) + beta.

    ``detach_stats`` freezes the normalization statistic in the backward
    pass (used by receptive-field probing, where the global mean would
    otherwise couple every cell to every other).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    h, w, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("frn gamma/beta must be per-channel vectors")
    nu2 = np.mean(x.data * x.data, axis=(0, 1))  # (C,)
    r = 1.0 / np.sqrt(nu2 + eps)
    xn = x.data * r
    out_data = gamma.data * xn + beta.data

    def bwd(g):
        accumulate_grad(gamma, (g * xn).sum(axis=(0, 1)))
        accumulate_grad(beta, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gx = gamma.data * r * g
            if not detach_stats:
                dot = (g * x.data).sum(axis=(0, 1))
                gx = gx - (gamma.data * dot * r**3 / (h * w)) * x.data
            accumulate_grad(x, gx)

    return make_op(out_data, (x, gamma, beta), bwd, "frn")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def bwd(g):
        accumulate_grad(x, g * s * (1.0 - s))

    return make_op(s, (x,), bwd, "sigmoid")


def silu(x) -> Tensor:
    """SiLU activation x * sigmoid(x)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out_data = x.data * s

    def bwd(g):
        accumulate_grad(x, g * (s + x.data * s * (1.0 - s)))

    return make_op(out_data, (x,), bwd, "silu")


# -- losses ----------------------------------------------------------------------


def bce_with_logits(logits, targets, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy evaluated from logits (numerically stable)."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"targets shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = per.size
    if reduction == "mean":
        out_data = np.asarray(per.mean())
        scale = 1.0 / n
    elif reduction == "sum":
        out_data = np.asarray(per.sum())
        scale = 1.0
    else:
        raise ShapeError(f"unknown reduction {reduction!r}")

    def bwd(g):
        accumulate_grad(logits, (g * scale) * (_sigmoid(z) - t))

    return make_op(out_data, (logits,), bwd, "bce_with_logits")


def binary_cross_entropy(probs, targets, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on probabilities in the open interval (0, 1)."""
    probs = as_tensor(probs)
    t = np.asarray(targets, dtype=np.float64)
    p = probs.data
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    per = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    n = per.size
    if reduction == "mean":
        out_data = np.asarray(per.mean())
        scale = 1.0 / n
    elif reduction == "sum":
        out_data = np.asarray(per.sum())
        scale = 1.0
    else:
        raise ShapeError(f"unknown reduction {reduction!r}")

    def bwd(g):
        accumulate_grad(probs, (g * scale) * ((p - t) / (p * (1.0 - p))))

    return make_op(out_data, (probs,), bwd, "binary_cross_entropy")


def squared_error(pred, target, reduction: str = "mean") -> Tensor:
    """Mean (or summed) squared error against a constant target."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {pred.shape}")
    diff = pred.data - t
    n = diff.size
    if reduction == "mean":
        out_data = np.asarray(np.mean(diff * diff))
        scale = 2.0 / n
    elif reduction == "sum":
        out_data = np.asarray(np.sum(diff * diff))
        scale = 2.0
    else:
        raise ShapeError(f"unknown reduction {reduction!r}")

    def bwd(g):
        accumulate_grad(pred, (g * scale) * diff)

    return make_op(out_data, (pred,), bwd, "squared_error")


# -- structural ops --------------------------------------------------------------


def concat_channels(a, b) -> Tensor:
    """Concatenate two (H, W, C) maps along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"spatial dims differ: {a.shape} vs {b.shape}")
    ca = a.shape[2]
    out_data = np.concatenate([a.data, b.data], axis=2)

    def bwd(g):
        accumulate_grad(a, g[:, :, :ca])
        accumulate_grad(b, g[:, :, ca:])

    return make_op(out_data, (a, b), bwd, "concat_channels")


def gather_rows(x, index) -> Tensor:
    """Select rows of a (N, C) tensor by integer index."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    out_data = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        accumulate_grad(x, gx)

    return make_op(out_data, (x,), bwd, "gather_rows")


def slice2d(x, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    """Slice the leading two (spatial) axes of a tensor."""
    x = as_tensor(x)
    out_data = np.ascontiguousarray(x.data[r0:r1, c0:c1])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[r0:r1, c0:c1] = g
        accumulate_grad(x, gx)

    return make_op(out_data, (x,), bwd, "slice2d")


def apply_offset_maps(maps, z) -> Tensor:
    """Batched linear maps: (B, Dout, K) x (N, K) -> (B, N, Dout).

    Used to apply one selection matrix per spatial offset to the whole
    grid of representation vectors at once.
    """
    maps, z = as_tensor(maps), as_tensor(z)
    if maps.ndim != 3 or z.ndim != 2 or maps.shape[2] != z.shape[1]:
        raise ShapeError(f"incompatible shapes {maps.shape} and {z.shape}")
    b, dout, k = maps.shape
    n = z.shape[0]
    flat = (maps.data.reshape(b * dout, k) @ z.data.T).reshape(b, dout, n)
    out_data = np.ascontiguousarray(flat.transpose(0, 2, 1))

    def bwd(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * dout, n)
        accumulate_grad(maps, (gt @ z.data).reshape(b, dout, k))
        accumulate_grad(z, gt.T @ maps.data.reshape(b * dout, k))

    return make_op(out_data, (maps, z), bwd, "apply_offset_maps")
