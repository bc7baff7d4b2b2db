"""Independent reference implementations shared by the unit and acceptance tests."""
import numpy as np

from idsr import losses as L
from idsr import tensor as T
from idsr.networks import ExtractorConfig, build_extractor

EPS = L.NORM_EPS


def recon_per_sample(sr, hr):
    d = (sr - hr).reshape(len(sr), -1)
    return np.sqrt(np.sum(d * d, axis=1) + EPS)


def ssim_image_oracle(x, y, h, c1=0.01 ** 2, c2=0.03 ** 2):
    vals = []
    for i in range(0, x.shape[0], h):
        for j in range(0, x.shape[1], h):
            a, b = x[i:i + h, j:j + h].ravel(), y[i:i + h, j:j + h].ravel()
            ma, mb = a.sum() / a.size, b.sum() / b.size
            va = sum((v - ma) ** 2 for v in a) / a.size
            vb = sum((v - mb) ** 2 for v in b) / b.size
            cab = sum((u - ma) * (v - mb) for u, v in zip(a, b)) / a.size
            vals.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def ssim_loss_per_sample(sr, hr, h=8):
    # vectorised tiling written independently of the library's tensor path
    B, _, H, W = sr.shape
    x = sr.reshape(B, H // h, h, W // h, h).swapaxes(2, 3).reshape(B, -1, h * h)
    y = hr.reshape(B, H // h, h, W // h, h).swapaxes(2, 3).reshape(B, -1, h * h)
    mx, my = x.mean(2), y.mean(2)
    vx, vy = x.var(2), y.var(2)
    cxy = ((x - mx[..., None]) * (y - my[..., None])).mean(2)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    s = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return 1.0 - s.mean(1)


def recog_per_sample(f):
    def fn(sr, hr):
        d = f.descriptor(sr).data - f.descriptor(hr).data
        return np.sqrt(np.sum(d * d, axis=1) + EPS)
    return fn


# Small enough that a perturbation rarely crosses a ReLU kink inside the
# extractor, large enough that float64 rounding stays near 1e-10 relative.
FD_STEP = 1e-6


def batched_central_diff(per_sample, sr, hr, step=FD_STEP):
    """Central differences of ``mean_i per_sample(sr, hr)_i`` w.r.t. every SR pixel.

    Perturbing a pixel of sample ``i`` only moves term ``i``, so all
    perturbed copies of a sample are scored in one batch.
    """
    B = len(sr)
    n = sr[0].size
    grad = np.empty_like(sr)
    for i in range(B):
        base = np.repeat(sr[i:i + 1], n, axis=0).reshape(n, -1)
        plus, minus = base.copy(), base.copy()
        idx = np.arange(n)
        plus[idx, idx] += step
        minus[idx, idx] -= step
        shape = (n,) + sr.shape[1:]
        target = np.repeat(hr[i:i + 1], n, axis=0)
        hi = per_sample(plus.reshape(shape), target)
        lo = per_sample(minus.reshape(shape), target)
        grad[i] = ((hi - lo) / (2 * step) / B).reshape(sr.shape[1:])
    return grad


def analytic_grad(loss_fn, sr, hr):
    t = T.Tensor(sr, requires_grad=True)
    with T.Tape() as tape:
        out = loss_fn(t, hr)
    return T.backward(tape, out, wrt=[t])[0]


def small_extractor(size=16, seed=0):
    cfg = ExtractorConfig(input_size=size, channels=(4, 6), strides=(2, 2), descriptor_dim=8, n_classes=3)
    return build_extractor(cfg, seed, dtype=np.float64).freeze()


def mann_whitney_auc(distances, labels):
    """P(d_pos < d_neg) + 0.5 P(tie), counted pair by pair."""
    pos = [d for d, y in zip(distances, labels) if y]
    neg = [d for d, y in zip(distances, labels) if not y]
    score = 0.0
    for p in pos:
        for q in neg:
            score += 1.0 if p < q else 0.5 if p == q else 0.0
    return score / (len(pos) * len(neg))
