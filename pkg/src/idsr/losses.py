"""Training losses for the super-resolution generator.

All batch arguments are ``[B, 1, H, W]`` tensors (or arrays); the super-
resolved batch may carry gradients, the ground-truth batch never does.
Norms are non-squared and smoothed as ``sqrt(sum(delta**2) + NORM_EPS)`` so
they stay differentiable when the residual vanishes.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class SsimConstants:
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    h: int = 8

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")
        if self.h < 2:
            raise ValueError(f"SSIM patch size must be >= 2, got {self.h}")


@dataclass(frozen=True)
class JointWeights:
    alpha: float = 1000.0
    beta: float = 300.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("joint loss weights must be non-negative")


def _pair(sr, hr, what):
    sr = T.as_tensor(sr)
    hr = T.Tensor(hr.data if isinstance(hr, T.Tensor) else np.asarray(hr, dtype=sr.dtype))
    if sr.shape != hr.shape:
        raise ShapeError(f"{what}: SR batch {sr.shape} != HR batch {hr.shape}")
    if sr.ndim < 2 or sr.shape[0] < 1:
        raise ShapeError(f"{what}: need a non-empty batch, got {sr.shape}")
    return sr, hr


def _smooth_norm_rows(diff):
    """Per-sample ``sqrt(sum(diff**2) + eps)`` over all non-batch axes."""
    axes = tuple(range(1, diff.ndim))
    return T.sqrt(T.square(diff).sum(axis=axes) + NORM_EPS)


def _weighted_mean(per_sample, weights):
    if weights is None:
        return per_sample.mean()
    w = np.asarray(weights, dtype=per_sample.dtype)
    if w.shape != per_sample.shape or np.any(w < 0):
        raise ValueError("sample weights must be non-negative, one per batch entry")
    return (per_sample * w).sum()


def loss_recon(sr, hr):
    """Mean Frobenius distance between SR and HR images."""
    sr, hr = _pair(sr, hr, "loss_recon")
    return _smooth_norm_rows(sr - hr).mean()


def ssim_patch(x, y, consts=SsimConstants()):
    """SSIM of two equally shaped patches (population statistics)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ssim_patch: {x.shape} != {y.shape}")
    if x.size == 0:
        raise ValueError("ssim_patch: empty patch")
    mx, my = x.mean(), y.mean()
    vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
    cxy = ((x - mx) * (y - my)).mean()
    num = (2 * mx * my + consts.c1) * (2 * cxy + consts.c2)
    den = (mx * mx + my * my + consts.c1) * (vx + vy + consts.c2)
    return float(num / den)


def _tiles(t, h):
    """``[B, 1, H, W]`` -> ``[B, T, h*h]`` over the non-overlapping h x h grid."""
    B, C, H, W = t.shape
    if C != 1:
        raise ShapeError(f"SSIM expects single-channel images, got {C} channels")
    if H % h or W % h:
        raise ShapeError(f"image size {H}x{W} is not divisible by patch size {h}")
    t = t.reshape(B, H // h, h, W // h, h).transpose(0, 1, 3, 2, 4)
    return t.reshape(B, (H // h) * (W // h), h * h)


def ssim_per_image(sr, hr, consts=SsimConstants()):
    """Patch-mean SSIM per sample, as a ``[B]`` tensor."""
    x, y = _tiles(sr, consts.h), _tiles(hr, consts.h)
    mx, my = x.mean(axis=2, keepdims=True), y.mean(axis=2, keepdims=True)
    dx, dy = x - mx, y - my
    vx, vy = T.square(dx).mean(axis=2), T.square(dy).mean(axis=2)
    cxy = (dx * dy).mean(axis=2)
    mx, my = mx.reshape(mx.shape[:2]), my.reshape(my.shape[:2])
    num = (mx * my * 2.0 + consts.c1) * (cxy * 2.0 + consts.c2)
    den = (T.square(mx) + T.square(my) + consts.c1) * (vx + vy + consts.c2)
    return (num / den).mean(axis=1)


def ssim_image(x, y, consts=SsimConstants()):
    """Mean SSIM over the h x h tiling of two 2-D images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"ssim_image: need equal 2-D images, got {x.shape} and {y.shape}")
    s = ssim_per_image(T.Tensor(x[None, None]), T.Tensor(y[None, None]), consts)
    return float(s.data[0])


def loss_ssim(sr, hr, consts=SsimConstants()):
    """Mean of ``1 - ssim_image`` over the batch."""
    sr, hr = _pair(sr, hr, "loss_ssim")
    return (1.0 - ssim_per_image(sr, hr, consts)).mean()


def loss_recog(sr, hr, extractor, weights=None, hr_descriptors=None):
    """Mean descriptor distance ``|f(SR_i) - f(HR_i)|`` under a frozen extractor.

    ``weights`` overrides the uniform 1/B per-sample weighting.
    ``hr_descriptors`` may carry precomputed ``f(HR)`` rows.
    """
    if not extractor.frozen:
        raise ValueError("loss_recog needs a frozen extractor; call freeze() first")
    sr, hr = _pair(sr, hr, "loss_recog")
    f_sr = extractor.descriptor(sr)
    if hr_descriptors is None:
        hr_descriptors = extractor.descriptor(hr).data
    f_hr = T.Tensor(np.asarray(hr_descriptors, dtype=f_sr.dtype))
    if f_hr.shape != f_sr.shape:
        raise ShapeError(f"loss_recog: HR descriptors {f_hr.shape} != SR descriptors {f_sr.shape}")
    return _weighted_mean(_smooth_norm_rows(f_sr - f_hr), weights)


def loss_joint(sr, hr, extractor, consts=SsimConstants(), weights=JointWeights(), hr_descriptors=None):
    """``loss_recon + alpha * loss_ssim + beta * loss_recog``."""
    total = loss_recon(sr, hr)
    if weights.alpha:
        total = total + T.scale(loss_ssim(sr, hr, consts), weights.alpha)
    if weights.beta:
        total = total + T.scale(loss_recog(sr, hr, extractor, hr_descriptors=hr_descriptors), weights.beta)
    return total


LOSS_KINDS = ("recon", "ssim", "recog", "joint")


def selected_loss(kind, sr, hr, extractor=None, consts=SsimConstants(), weights=JointWeights(),
                  hr_descriptors=None):
    if kind == "recon":
        return loss_recon(sr, hr)
    if kind == "ssim":
        return loss_ssim(sr, hr, consts)
    if kind == "recog":
        return loss_recog(sr, hr, extractor, hr_descriptors=hr_descriptors)
    if kind == "joint":
        return loss_joint(sr, hr, extractor, consts, weights, hr_descriptors)
    raise ValueError(f"unknown loss kind {kind!r}; choose from {', '.join(LOSS_KINDS)}")
