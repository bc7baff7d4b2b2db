"""Hot inner loops with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``IDSR_DISABLE_NUMBA=1`` to
force the numpy path (also used automatically when numba is missing).
Both paths are always importable as ``numpy_<name>`` / ``numba_<name>`` so
tests and benchmarks can compare them in one process.

Layouts:
    im2col: x[B, C, H, W] -> cols[B, C*kh*kw, Ho*Wo]
    col2im: cols[B, C*kh*kw, Ho*Wo] -> x[B, C, H, W] (overlaps summed)
    blur_rows_replicate: 1-D correlation along the last axis, edges clamped
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("IDSR_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def out_size(n, k, stride):
    return (n - k) // stride + 1


# ---------------------------------------------------------------- numpy path

def numpy_im2col(x, kh, kw, stride):
    B, C, H, W = x.shape
    Ho, Wo = out_size(H, kh, stride), out_size(W, kw, stride)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # [B, C, Ho, Wo, kh, kw] -> [B, C, kh, kw, Ho, Wo]
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(B, C * kh * kw, Ho * Wo)


def numpy_col2im(cols, C, H, W, kh, kw, stride):
    B = cols.shape[0]
    Ho, Wo = out_size(H, kh, stride), out_size(W, kw, stride)
    c = cols.reshape(B, C, kh, kw, Ho, Wo)
    x = np.zeros((B, C, H, W), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += c[:, :, i, j]
    return x


def numpy_blur_rows_replicate(img, kernel):
    r = len(kernel) // 2
    n = img.shape[-1]
    idx = np.clip(np.arange(-r, n + r), 0, n - 1)
    padded = img[..., idx]
    out = np.zeros(img.shape, dtype=np.float64)
    for t, w in enumerate(kernel):
        out += w * padded[..., t:t + n]
    return out


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(x, kh, kw, stride, Ho, Wo):
        B, C = x.shape[0], x.shape[1]
        cols = np.empty((B, C * kh * kw, Ho * Wo), dtype=x.dtype)
        for b in range(B):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oy in range(Ho):
                            src = x[b, c, oy * stride + i]
                            dst = cols[b, row]
                            base = oy * Wo
                            if stride == 1:
                                for ox in range(Wo):
                                    dst[base + ox] = src[ox + j]
                            else:
                                for ox in range(Wo):
                                    dst[base + ox] = src[ox * stride + j]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, C, H, W, kh, kw, stride, Ho, Wo):
        B = cols.shape[0]
        x = np.zeros((B, C, H, W), dtype=cols.dtype)
        span = stride * (Wo - 1) + 1
        for b in range(B):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oy in range(Ho):
                            dst = x[b, c, oy * stride + i, j:j + span:stride]
                            dst += cols[b, row, oy * Wo:(oy + 1) * Wo]
        return x

    @numba.njit(cache=True)
    def _blur_rows_nb(img2d, kernel):
        R, n = img2d.shape
        r = kernel.shape[0] // 2
        out = np.zeros((R, n), dtype=np.float64)
        for row in range(R):
            for i in range(n):
                acc = 0.0
                for t in range(kernel.shape[0]):
                    src = i + t - r
                    if src < 0:
                        src = 0
                    elif src > n - 1:
                        src = n - 1
                    acc += kernel[t] * img2d[row, src]
                out[row, i] = acc
        return out

    def numba_im2col(x, kh, kw, stride):
        B, C, H, W = x.shape
        Ho, Wo = out_size(H, kh, stride), out_size(W, kw, stride)
        return _im2col_nb(np.ascontiguousarray(x), kh, kw, stride, Ho, Wo)

    def numba_col2im(cols, C, H, W, kh, kw, stride):
        Ho, Wo = out_size(H, kh, stride), out_size(W, kw, stride)
        return _col2im_nb(np.ascontiguousarray(cols), C, H, W, kh, kw, stride, Ho, Wo)

    def numba_blur_rows_replicate(img, kernel):
        img = np.asarray(img, dtype=np.float64)
        flat = np.ascontiguousarray(img.reshape(-1, img.shape[-1]))
        out = _blur_rows_nb(flat, np.asarray(kernel, dtype=np.float64))
        return out.reshape(img.shape)

else:  # pragma: no cover
    numba_im2col = numpy_im2col
    numba_col2im = numpy_col2im
    numba_blur_rows_replicate = numpy_blur_rows_replicate


if USE_NUMBA:
    im2col, col2im, blur_rows_replicate = numba_im2col, numba_col2im, numba_blur_rows_replicate
else:
    im2col, col2im, blur_rows_replicate = numpy_im2col, numpy_col2im, numpy_blur_rows_replicate

BACKEND = "numba" if USE_NUMBA else "numpy"
