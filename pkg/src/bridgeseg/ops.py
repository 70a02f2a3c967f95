"""Forward/backward kernels for every layer the segmentation nets need.

All functions operate on plain numpy arrays in (N, C, H, W) layout and come
in pairs: ``*_forward`` returns the output plus an opaque cache, and
``*_backward`` consumes that cache together with the upstream gradient.
Convolutions are lowered to matrix products via im2col so the heavy lifting
runs in BLAS.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0 or (size + 2 * padding - kernel) % stride != 0:
        raise ConfigError(
            f"convolution geometry invalid: size={size} kernel={kernel} "
            f"stride={stride} padding={padding}"
        )
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold conv patches into a (N*outH*outW, C*kh*kw) matrix."""
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            cols[:, :, i, j, :, :] = x[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Fold patch gradients back onto the input grid, accumulating overlaps."""
    n, c, h, w = x_shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    cols = cols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if padding > 0:
        return img[:, :, padding:padding + h, padding:padding + w]
    return img


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int = 1, padding: int = 0):
    """2D convolution. Kernel layout is (outC, inC, kh, kw)."""
    n, c, h, wd = x.shape
    out_c, in_c, kh, kw = w.shape
    if c != in_c:
        raise ConfigError(f"conv2d channel mismatch: input has {c}, kernel expects {in_c}")
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(wd, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    w_mat = w.reshape(out_c, -1)
    y = cols @ w_mat.T
    if b is not None:
        y += b
    y = y.reshape(n, out_h, out_w, out_c).transpose(0, 3, 1, 2)
    cache = (cols, w, b is not None, x.shape, stride, padding)
    return np.ascontiguousarray(y), cache


def conv2d_backward(cache, gy: np.ndarray):
    """Returns (gx, gw, gb); gb is None when forward ran without bias."""
    cols, w, has_bias, x_shape, stride, padding = cache
    out_c, in_c, kh, kw = w.shape
    gy_mat = gy.transpose(0, 2, 3, 1).reshape(-1, out_c)
    gw = (gy_mat.T @ cols).reshape(w.shape)
    gb = gy_mat.sum(axis=0) if has_bias else None
    gcols = gy_mat @ w.reshape(out_c, -1)
    gx = col2im(gcols, x_shape, kh, kw, stride, padding)
    return gx, gw, gb


def max_pool2_forward(x: np.ndarray):
    """2x2 max pooling with stride 2. Spatial dims must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"max_pool2 requires even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, h // 2, w // 2, 4)
    # argmax picks the first maximum in row-major window order (tie rule)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (idx, x.shape)


def max_pool2_backward(cache, gy: np.ndarray) -> np.ndarray:
    idx, x_shape = cache
    n, c, h, w = x_shape
    flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(flat, idx[..., None], gy[..., None], axis=-1)
    gx = flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gx.reshape(n, c, h, w))


def upsample2_forward(x: np.ndarray):
    """Nearest-neighbor 2x upsampling."""
    y = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    return y, x.shape


def upsample2_backward(cache, gy: np.ndarray) -> np.ndarray:
    n, c, h, w = cache
    return gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def up_conv2_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Nearest 2x upsample followed by a channel-halving 2x2 convolution.

    The upsampled map is padded by one row/column on the bottom-right so the
    2x2 convolution preserves the doubled spatial size: (N, C, H, W) maps to
    (N, C/2, 2H, 2W) with kernel layout (C/2, C, 2, 2).
    """
    n, c, h, wd = x.shape
    if c % 2:
        raise ConfigError(f"up_conv2 requires an even channel count, got {c}")
    if w.shape != (c // 2, c, 2, 2):
        raise ConfigError(f"up_conv2 kernel must be ({c // 2},{c},2,2), got {w.shape}")
    up, up_cache = upsample2_forward(x)
    padded = np.pad(up, ((0, 0), (0, 0), (0, 1), (0, 1)))
    y, conv_cache = conv2d_forward(padded, w, b, stride=1, padding=0)
    return y, (up_cache, conv_cache)


def up_conv2_backward(cache, gy: np.ndarray):
    up_cache, conv_cache = cache
    gpadded, gw, gb = conv2d_backward(conv_cache, gy)
    gup = gpadded[:, :, :-1, :-1]
    gx = upsample2_backward(up_cache, gup)
    return gx, gw, gb


def batch_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                       eps: float, training: bool,
                       running_mean: np.ndarray, running_var: np.ndarray,
                       momentum: float = 0.9):
    """Per-channel batch normalization over the (N, H, W) axes.

    In training mode the batch statistics normalize and the running
    statistics are updated in place with the given momentum; in eval mode
    the running statistics normalize. Returns (y, cache).
    """
    n, c, h, w = x.shape
    if training:
        m = n * h * w
        if m < 2:
            raise ConfigError("batch_norm training mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    if training:
        cache = ("train", x_hat, inv_std, gamma)
    else:
        cache = ("eval", x_hat, inv_std, gamma)
    return y.astype(x.dtype, copy=False), cache


def batch_norm_backward(cache, gy: np.ndarray):
    """Backward through batch norm. Returns (gx, ggamma, gbeta).

    In eval mode the normalization statistics are constants, so the input
    gradient is simply gy * gamma * inv_std.
    """
    mode, x_hat, inv_std, gamma = cache
    ggamma = (gy * x_hat).sum(axis=(0, 2, 3))
    gbeta = gy.sum(axis=(0, 2, 3))
    if mode == "eval":
        gx = gy * (gamma * inv_std)[None, :, None, None]
        return gx, ggamma, gbeta
    n, c, h, w = gy.shape
    m = n * h * w
    gxhat = gy * gamma[None, :, None, None]
    gx = (gxhat - (gbeta / m)[None, :, None, None] * gamma[None, :, None, None]
          - x_hat * (ggamma / m)[None, :, None, None] * gamma[None, :, None, None])
    gx = gx * inv_std[None, :, None, None]
    return gx, ggamma, gbeta


def concat_channels_forward(a: np.ndarray, b: np.ndarray):
    """Concatenate along the channel axis; a's channels come first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ConfigError(f"concat_channels spatial/batch mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(cache, gy: np.ndarray):
    c_a = cache
    return gy[:, :c_a], gy[:, c_a:]


def add_forward(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ConfigError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b, None


def add_backward(cache, gy: np.ndarray):
    return gy, gy
