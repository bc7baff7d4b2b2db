"""Grayscale images, the blur-and-decimate degradation model, bicubic
upsampling and binary PGM I/O.

Images are 2-D float64 arrays (rows, cols) with intensities nominally in
[0, 1]. Intermediate results are not clamped; :func:`write_pgm` clamps.
"""
import math
import os

import numpy as np

from . import _kernels
from .errors import FormatError

DEFAULT_SIGMA = 2.4
DEFAULT_SCALE = 8


def gaussian_kernel(sigma):
    """Normalised 1-D Gaussian with radius ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3.0 * sigma)
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k = k / k.sum()
    # exact symmetry regardless of summation rounding
    return 0.5 * (k + k[::-1])


def blur(img, sigma=DEFAULT_SIGMA):
    """Separable Gaussian blur with clamp-to-edge borders."""
    k = gaussian_kernel(sigma)
    img = np.asarray(img, dtype=np.float64)
    rows = _kernels.blur_rows_replicate(img, k)
    return _kernels.blur_rows_replicate(rows.swapaxes(-1, -2), k).swapaxes(-1, -2)


def degrade(hr, sigma=DEFAULT_SIGMA, d=DEFAULT_SCALE):
    """Blur ``hr`` and keep every ``d``-th pixel from the top-left corner.

    Accepts a single image or a stack ``[..., H, W]``.
    """
    hr = np.asarray(hr, dtype=np.float64)
    if d < 1:
        raise ValueError(f"scale must be a positive integer, got {d}")
    H, W = hr.shape[-2:]
    if H % d or W % d:
        raise ValueError(f"image size {H}x{W} must be a multiple of {d}")
    return np.ascontiguousarray(blur(hr, sigma)[..., ::d, ::d])


def _cubic(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1, (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0))


def bicubic_matrix(n, d, a=-0.5):
    """Resampling matrix ``[n*d, n]`` for 1-D bicubic upsampling.

    Output sample ``i`` sits at source coordinate ``i / d``, so source pixel
    ``j`` lands exactly on output pixel ``j * d``, matching the decimation
    phase of :func:`degrade`.
    """
    u = np.arange(n * d, dtype=np.float64) / d
    base = np.floor(u).astype(int)
    M = np.zeros((n * d, n))
    rows = np.arange(n * d)
    for off in (-1, 0, 1, 2):
        src = base + off
        w = _cubic(u - src, a)
        np.add.at(M, (rows, np.clip(src, 0, n - 1)), w)
    return M


def bicubic_upsample(img, d):
    """Catmull-Rom (a = -0.5) bicubic upsampling by integer factor ``d``."""
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"scale must be a positive integer, got {d}")
    img = np.asarray(img, dtype=np.float64)
    if d == 1:
        return img.copy()
    H, W = img.shape[-2:]
    return bicubic_matrix(H, d) @ img @ bicubic_matrix(W, d).T


# ------------------------------------------------------------------ PGM

def _pgm_token(buf, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        elif c in b" \t\r\n\v\f":
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in b" \t\r\n\v\f#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PGM header", start)
    return buf[start:pos], start, pos


def parse_pgm(buf):
    buf = bytes(buf)
    magic, off, pos = _pgm_token(buf, 0)
    if magic != b"P5":
        raise FormatError(f"expected P5 magic, found {magic[:8]!r}", off)
    fields = []
    for what in ("width", "height", "maxval"):
        tok, off, pos = _pgm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"bad {what} {tok[:16]!r}", off)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", off)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, need 255", off)
    if pos >= len(buf) or buf[pos] not in b" \t\r\n\v\f":
        raise FormatError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width)


def read_pgm(path):
    """Read a binary 8-bit PGM into floats ``v / 255``."""
    with open(path, "rb") as fh:
        raw = parse_pgm(fh.read())
    return raw.astype(np.float64) / 255.0


def to_bytes(img):
    img = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(img):
    if np.ndim(img) != 2:
        raise ValueError(f"PGM holds 2-D images, got shape {np.shape(img)}")
    q = to_bytes(img)
    h, w = q.shape
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def write_pgm(path, img):
    data = encode_pgm(img)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
