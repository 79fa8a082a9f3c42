"""Dense-array substrate for the network.

Arrays are plain numpy ndarrays laid out channel-first (``[C, H, W]``) for
images and ``[L, D]`` for sequences. Every function is pure and preserves
the floating dtype of its main input: float32 on inference paths, float64
when running gradient checks.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "as_float",
    "conv2d",
    "conv2d_backward",
    "batch_norm_inference",
    "bilinear_resize",
    "im2seq",
    "seq2im",
    "flip_seq",
    "relu",
    "sigmoid",
    "softplus",
    "concat_channels",
    "split_channels",
    "global_avg_pool",
    "global_max_pool",
]


def as_float(x, dtype=None) -> np.ndarray:
    """Return ``x`` as a floating ndarray (float32 unless it already is float64)."""
    x = np.asarray(x)
    if dtype is not None:
        return x.astype(dtype, copy=False)
    if x.dtype == np.float64:
        return x
    return x.astype(np.float32, copy=False)


def _check_chw(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 3:
        raise ValueError(f"{name} must be [C, H, W], got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, oh, ow = win.shape[:3]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None) -> np.ndarray:
    """2-D cross-correlation of a single ``[C_in, H, W]`` image.

    ``weight`` is ``[C_out, C_in, kH, kW]`` with odd kernel extents. ``padding``
    defaults to ``kH // 2`` (same-size output at stride 1). Output extents
    follow ``floor((H + 2*pad - kH) / stride) + 1``.
    """
    x = as_float(x)
    weight = np.asarray(weight, dtype=x.dtype)
    _check_chw(x)
    if weight.ndim != 4:
        raise ValueError(f"weight must be [C_out, C_in, kH, kW], got shape {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got kH={kh}, kW={kw}")
    if x.shape[0] != c_in:
        raise ValueError(
            f"channel axis mismatch: input has C_in={x.shape[0]} but weight expects C_in={c_in}"
        )
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding is None:
        padding = kh // 2
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    h, w = x.shape[1:]
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(
            f"spatial axes too small: H={h}, W={w} with padding {padding} "
            f"cannot hold a {kh}x{kw} kernel"
        )
    if kh == 1 and kw == 1 and padding == 0:
        xs = x[:, ::stride, ::stride]
        out = np.tensordot(weight[:, :, 0, 0], xs, axes=(1, 0))
    else:
        cols, oh, ow = _im2col(x, kh, kw, stride, padding)
        out = (cols @ weight.reshape(c_out, -1).T).T.reshape(c_out, oh, ow)
    if bias is not None:
        bias = np.asarray(bias, dtype=x.dtype)
        if bias.shape != (c_out,):
            raise ValueError(f"bias must be [{c_out}], got shape {bias.shape}")
        out = out + bias[:, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward(x, weight, grad_out, stride: int = 1, padding: int | None = None):
    """Gradients of :func:`conv2d` w.r.t. input, weight and bias.

    Returns ``(grad_x, grad_weight, grad_bias)``.
    """
    x = as_float(x)
    weight = np.asarray(weight, dtype=x.dtype)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    c_out, c_in, kh, kw = weight.shape
    if padding is None:
        padding = kh // 2
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    if grad_out.shape != (c_out, oh, ow):
        raise ValueError(f"grad_out must be {(c_out, oh, ow)}, got {grad_out.shape}")
    g = grad_out.reshape(c_out, oh * ow)
    grad_w = (g @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=1)
    dcols = (g.T @ weight.reshape(c_out, -1)).reshape(oh, ow, c_in, kh, kw)
    h, w = x.shape[1:]
    dpad = np.zeros((c_in, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            dpad[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                dcols[:, :, :, i, j].transpose(2, 0, 1)
            )
    grad_x = dpad[:, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def batch_norm_inference(x, gamma, beta, running_mean, running_var, eps: float = 1e-5):
    """Per-channel affine normalisation with frozen statistics."""
    x = as_float(x)
    params = [np.asarray(a, dtype=x.dtype) for a in (gamma, beta, running_mean, running_var)]
    c = x.shape[0]
    for name, a in zip(("gamma", "beta", "running_mean", "running_var"), params):
        if a.shape != (c,):
            raise ValueError(f"{name} must be [{c}] to match the channel axis, got {a.shape}")
    gamma, beta, mean, var = params
    if np.any(var < 0):
        raise ValueError("running_var must be non-negative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    scale = gamma / np.sqrt(var + eps)
    return ((x - mean[expand]) * scale[expand] + beta[expand]).astype(x.dtype, copy=False)


def _resize_axis(x: np.ndarray, out: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    if n == out:
        return x
    dst = np.arange(out, dtype=np.float64)
    src = (dst + 0.5) * (n / out) - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = (src - i0).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = out
    frac = frac.reshape(shape)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    return a + (b - a) * frac


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of ``[C, H, W]`` with half-pixel centres and edge clamping."""
    x = as_float(x)
    _check_chw(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    return np.ascontiguousarray(_resize_axis(_resize_axis(x, out_h, 1), out_w, 2))


def im2seq(x) -> np.ndarray:
    """``[C, H, W]`` -> ``[H*W, C]`` in row-major raster order."""
    x = np.asarray(x)
    _check_chw(x)
    c = x.shape[0]
    return np.ascontiguousarray(x.reshape(c, -1).T)


def seq2im(s, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`im2seq`."""
    s = np.asarray(s)
    if s.ndim != 2:
        raise ValueError(f"sequence must be [L, D], got shape {s.shape}")
    if s.shape[0] != h * w:
        raise ValueError(f"sequence length {s.shape[0]} != H*W = {h}*{w}")
    return np.ascontiguousarray(s.T.reshape(s.shape[1], h, w))


def flip_seq(s) -> np.ndarray:
    """Reverse a sequence along its length axis."""
    return np.ascontiguousarray(np.asarray(s)[::-1])


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x)
    return np.logaddexp(0, x).astype(x.dtype, copy=False)


def concat_channels(*xs) -> np.ndarray:
    return np.concatenate(xs, axis=0)


def split_channels(x) -> list[np.ndarray]:
    """Split ``[C, H, W]`` into ``C`` single-channel ``[1, H, W]`` arrays."""
    return [x[i:i + 1] for i in range(x.shape[0])]


def global_avg_pool(x) -> np.ndarray:
    return x.reshape(x.shape[0], -1).mean(axis=1)


def global_max_pool(x) -> np.ndarray:
    return x.reshape(x.shape[0], -1).max(axis=1)
