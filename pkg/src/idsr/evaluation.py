"""Low-resolution face verification and image-quality reporting."""
import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .image import bicubic_upsample, write_pgm
from .networks import extract_descriptor, super_resolve

METRICS_HEADER = ("method", "loss_recog", "auc", "psnr", "ssim")


@dataclass
class RocCurve:
    thresholds: np.ndarray  # decision is "same" iff distance < threshold
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path=None):
        return _write_csv(path, ("threshold", "fpr", "tpr"),
                          [(_fmt(t), _fmt(f), _fmt(p)) for t, f, p in zip(self.thresholds, self.fpr, self.tpr)])


@dataclass
class EvalReport:
    method: str
    loss_recog: float
    auc: float
    psnr: float
    ssim: float

    def row(self):
        return (self.method, _fmt(self.loss_recog), _fmt(self.auc), _fmt(self.psnr), _fmt(self.ssim))


def _fmt(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def _write_csv(path, header, rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _threads():
    try:
        return max(0, int(os.environ.get("IDSR_THREADS", "0")))
    except ValueError:
        return 0


def _map_chunks(fn, items, chunk=64):
    """Apply ``fn`` to consecutive chunks; results concatenated in input order."""
    chunks = [items[i:i + chunk] for i in range(0, len(items), chunk)]
    n = _threads()
    if n > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts)


def descriptor_distance(f, a, b):
    return float(np.linalg.norm(extract_descriptor(f, a).astype(np.float64)
                                - extract_descriptor(f, b).astype(np.float64)))


def verify_pair(x_L, x_H, G, f, gamma):
    """Same-identity decision for a low-res probe and a high-res gallery.

    Returns ``(decision, distance)``; the decision is ``distance < gamma``.
    """
    if not gamma >= 0:
        raise ValueError(f"threshold must be non-negative, got {gamma}")
    distance = descriptor_distance(f, super_resolve(G, x_L), x_H)
    return distance < gamma, distance


def roc_auc(distances, labels):
    """ROC of the rule ``distance < threshold`` swept over every observed
    distance, with the trapezoidal area under it."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=bool).reshape(-1)
    if d.shape != y.shape:
        raise ValueError(f"{d.size} distances but {y.size} labels")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative pair")
    values, inverse = np.unique(d, return_inverse=True)
    pos = np.bincount(inverse, weights=y, minlength=len(values))
    neg = np.bincount(inverse, weights=~y, minlength=len(values))
    # threshold values[k] accepts every distance strictly below it
    tpr = np.concatenate([[0.0], np.cumsum(pos)]) / n_pos
    fpr = np.concatenate([[0.0], np.cumsum(neg)]) / n_neg
    thresholds = np.concatenate([values, [np.inf]])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def eer_threshold(distances, labels):
    """Threshold where false-accept and false-reject rates are closest."""
    roc = roc_auc(distances, labels)
    k = int(np.argmin(np.abs(roc.fpr - (1.0 - roc.tpr))))
    return float(roc.thresholds[k])


def psnr(x, y, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"psnr: shapes {x.shape} and {y.shape} differ")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------- methods

@dataclass
class Method:
    """A named way of turning probe samples into HR-sized images."""

    name: str
    upsample: object  # callable: list of Sample -> array [n, H, W]


def generator_method(name, G):
    return Method(name, lambda samples: super_resolve(G, np.stack([s.x_L for s in samples])))


def bicubic_method(scale, name="bicubic"):
    return Method(name, lambda samples: np.stack([bicubic_upsample(s.x_L, scale) for s in samples]))


def hr_baseline_method(name="baseline-hr"):
    """Upper bound: the probe's own ground-truth HR image."""
    return Method(name, lambda samples: np.stack([s.x_H for s in samples]))


def _unique_probes(pairs):
    seen = {}
    for p in pairs:
        seen.setdefault(p.probe_index, p.probe)
    return seen


def evaluate_method(pairs, method, f, h=8):
    """Table-style report row for one method over a verification pair list."""
    if not pairs:
        raise ValueError("no verification pairs")
    consts = L.SsimConstants(h=h)
    probes = _unique_probes(pairs)
    keys = list(probes)
    samples = [probes[k] for k in keys]
    sr = _map_chunks(method.upsample, samples)
    hr = np.stack([s.x_H for s in samples])
    f_sr = _map_chunks(lambda imgs: extract_descriptor(f, np.stack(imgs)), list(sr)).astype(np.float64)
    f_hr = _map_chunks(lambda imgs: extract_descriptor(f, np.stack(imgs)), list(hr)).astype(np.float64)
    probe_row = {k: i for i, k in enumerate(keys)}

    galleries = {}
    for p in pairs:
        galleries.setdefault(p.gallery_index, p.gallery)
    g_keys = list(galleries)
    g_desc = _map_chunks(lambda imgs: extract_descriptor(f, np.stack(imgs)),
                         [galleries[k] for k in g_keys]).astype(np.float64)
    gallery_row = {k: i for i, k in enumerate(g_keys)}

    dist = np.array([np.linalg.norm(f_sr[probe_row[p.probe_index]] - g_desc[gallery_row[p.gallery_index]])
                     for p in pairs])
    labels = np.array([p.same_identity for p in pairs])
    roc = roc_auc(dist, labels)

    recog = float(np.mean(np.linalg.norm(f_sr - f_hr, axis=1)))
    psnrs = [psnr(a, b) for a, b in zip(sr, hr)]
    ssims = [L.ssim_image(a, b, consts) for a, b in zip(sr, hr)]
    report = EvalReport(method.name, recog, roc.auc, float(np.mean(psnrs)), float(np.mean(ssims)))
    report.roc = roc
    report.distances = dist
    report.labels = labels
    return report


def write_metrics_csv(path, reports):
    return _write_csv(path, METRICS_HEADER, [r.row() for r in reports])


# ---------------------------------------------------------------- distance matrices

def distance_matrix(probes, galleries, method, f, gallery_labels=None):
    """Descriptor distances between upsampled probes and gallery images.

    ``probes`` are samples; ``galleries`` are HR images or samples. Returns
    ``(distances, same_identity)``; the label matrix is ``None`` when gallery
    labels are unknown.
    """
    if not probes or not len(galleries):
        raise ValueError("distance matrix needs probes and galleries")
    gal_imgs = np.stack([g.x_H if hasattr(g, "x_H") else np.asarray(g) for g in galleries])
    if gallery_labels is None and all(hasattr(g, "y") for g in galleries):
        gallery_labels = [g.y for g in galleries]
    f_p = _map_chunks(lambda s: extract_descriptor(f, method.upsample(s)), list(probes)).astype(np.float64)
    f_g = _map_chunks(lambda imgs: extract_descriptor(f, np.stack(imgs)), list(gal_imgs)).astype(np.float64)
    diff = f_p[:, None, :] - f_g[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    same = None
    if gallery_labels is not None:
        same = np.array([[p.y == g for g in gallery_labels] for p in probes])
    return dist, same


def write_distance_matrix(prefix, dist, same=None):
    """Write ``prefix.csv`` (and ``prefix_labels.csv``) plus a min-max
    normalised heat image ``prefix.pgm``."""
    rows = [[_fmt(v) for v in r] for r in dist]
    _write_csv(f"{prefix}.csv", [f"g{j}" for j in range(dist.shape[1])], rows)
    if same is not None:
        _write_csv(f"{prefix}_labels.csv", [f"g{j}" for j in range(dist.shape[1])],
                   [[int(v) for v in r] for r in same])
    lo, hi = float(dist.min()), float(dist.max())
    heat = np.zeros_like(dist) if hi == lo else (dist - lo) / (hi - lo)
    write_pgm(f"{prefix}.pgm", heat)
    return heat
