"""Procedural face-like identities, identity-disjoint splits and
probe/gallery verification pairs.

Each identity is a vector of shape parameters drawn in normalised units;
renders add per-sample nuisance (illumination gain, a lateral lighting
ramp, sub-pixel translation and pixel noise) before the low-resolution
probe is derived with :func:`idsr.image.degrade`.
"""
import os
from dataclasses import dataclass, field

import numpy as np

from .image import DEFAULT_SCALE, DEFAULT_SIGMA, degrade, read_pgm, write_pgm

# (low, high) physical range for each normalised shape parameter
SHAPE_RANGES = {
    "face_w": (0.542, 0.738),      # face ellipse half-width (fraction of half-frame)
    "face_h": (0.716, 0.884),      # face ellipse half-height
    "skin": (0.5025, 0.7475),      # base face intensity
    "eye_dx": (0.213, 0.367),      # horizontal eye offset from centre
    "eye_y": (-0.2625, -0.0875),   # eye row (negative is up)
    "eye_r": (0.072, 0.128),       # eye radius
    "mouth_y": (0.3375, 0.5125),   # mouth row
    "mouth_w": (0.1845, 0.3455),   # mouth half-width
    "mouth_curve": (-0.084, 0.084),  # smile (+) or frown (-)
    "hair": (-0.875, -0.525),      # hairline row
    "brow": (0.15, 0.85),          # eyebrow darkness
}
PARAM_NAMES = tuple(SHAPE_RANGES)
MIN_SEPARATION = 0.25
BACKGROUND = 0.15


@dataclass(frozen=True)
class Identity:
    label: int
    params: tuple  # normalised values in [0, 1], ordered as PARAM_NAMES

    def physical(self):
        return {name: lo + u * (hi - lo)
                for (name, (lo, hi)), u in zip(SHAPE_RANGES.items(), self.params)}


@dataclass
class Sample:
    x_L: np.ndarray
    x_H: np.ndarray
    y: int


@dataclass(frozen=True)
class RenderSettings:
    hr_size: int = 64
    scale: int = DEFAULT_SCALE
    sigma: float = DEFAULT_SIGMA
    noise: float = 0.02
    gain: tuple = (0.7, 1.3)
    lighting: float = 0.3
    shift: float = 2.0


@dataclass
class VerificationPair:
    probe: Sample
    gallery: np.ndarray
    same_identity: bool
    probe_index: int = -1
    gallery_index: int = -1
    gallery_label: int = field(default=-1)


def make_identities(n, seed, margin=MIN_SEPARATION, labels=None):
    """Draw ``n`` identities whose parameter vectors differ by at least
    ``margin`` in some coordinate (Chebyshev distance)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1D]))
    labels = list(range(n)) if labels is None else list(labels)
    accepted = []
    attempts = 0
    while len(accepted) < n:
        u = rng.uniform(0.0, 1.0, size=len(PARAM_NAMES))
        attempts += 1
        if attempts > 10000 * n:
            raise RuntimeError(f"could not place {n} identities with separation {margin}")
        if all(np.max(np.abs(u - v)) >= margin for v in accepted):
            accepted.append(u)
    return [Identity(lab, tuple(float(v) for v in u)) for lab, u in zip(labels, accepted)]


def _soft(sd, width):
    """Anti-aliased inside mask from a signed distance (positive inside)."""
    return 1.0 / (1.0 + np.exp(-sd / width))


def render_face(identity, size, dx=0.0, dy=0.0):
    """Noise-free face in [0, 1] with the identity's geometry, shifted by
    (dx, dy) pixels."""
    p = identity.physical()
    px = 2.0 / size  # one pixel in normalised units
    c = (np.arange(size) + 0.5) * px - 1.0
    X = c[None, :] - dx * px
    Y = c[:, None] - dy * px
    aa = 0.75 * px

    img = np.full((size, size), BACKGROUND)
    fy = Y - 0.05
    face_r = np.sqrt((X / p["face_w"]) ** 2 + (fy / p["face_h"]) ** 2)
    face = _soft((1.0 - face_r) * min(p["face_w"], p["face_h"]), aa)
    # gentle vertical shading keeps the face from being a flat disc
    skin = p["skin"] * (1.0 - 0.12 * fy)
    img = img * (1 - face) + skin * face

    hair = face * _soft(p["hair"] - Y, aa)
    img = img * (1 - hair) + 0.1 * hair

    for side in (-1.0, 1.0):
        ex = X - side * p["eye_dx"]
        ey = Y - p["eye_y"]
        eye = _soft(p["eye_r"] - np.sqrt(ex ** 2 + (1.4 * ey) ** 2), aa)
        img = img * (1 - eye) + 0.08 * eye
        by = Y - (p["eye_y"] - 1.9 * p["eye_r"])
        brow = _soft(0.035 - np.abs(by), aa) * _soft(1.3 * p["eye_r"] - np.abs(ex), aa)
        img = img * (1 - p["brow"] * brow) + 0.12 * p["brow"] * brow

    nose = _soft(0.05 - np.abs(X), aa) * _soft(0.12 - np.abs(Y - 0.12), aa)
    img = img * (1 - 0.25 * nose)

    mx = X / p["mouth_w"]
    mouth_line = p["mouth_y"] - p["mouth_curve"] * (1.0 - mx ** 2)
    mouth = _soft(0.04 - np.abs(Y - mouth_line), aa) * _soft(1.0 - np.abs(mx), aa / p["mouth_w"])
    img = img * (1 - mouth) + 0.15 * mouth
    return img


def render_sample(identity, seed, settings=RenderSettings(), nuisance=True):
    """Render one high-resolution sample and its degraded low-resolution twin.

    Identical ``(identity, seed)`` always give identical pixels; with
    ``nuisance=False`` the seed is ignored entirely.
    """
    size = settings.hr_size
    if nuisance:
        rng = np.random.default_rng(np.random.SeedSequence([seed, identity.label, 0x5A]))
        dx, dy = rng.uniform(-settings.shift, settings.shift, size=2)
        gain = rng.uniform(*settings.gain)
        ramp = rng.uniform(-settings.lighting, settings.lighting)
        img = render_face(identity, size, dx, dy)
        xs = np.linspace(-1.0, 1.0, size)[None, :]
        img = img * gain * (1.0 + ramp * xs)
        img = img + rng.normal(0.0, settings.noise, size=img.shape)
    else:
        img = render_face(identity, size)
    x_H = np.clip(img, 0.0, 1.0)
    return Sample(degrade(x_H, settings.sigma, settings.scale), x_H, identity.label)


def render_identity_set(identities, samples_per_id, seed, settings=RenderSettings()):
    samples = []
    for ident in identities:
        for j in range(samples_per_id):
            samples.append(render_sample(ident, seed * 1_000_003 + j, settings))
    return samples


def split_identities(labels, train_fraction, seed):
    """Partition a label set into disjoint (train, test) label lists."""
    labels = sorted(set(int(v) for v in labels))
    n_train = int(round(len(labels) * train_fraction))
    if n_train < 1 or n_train >= len(labels):
        raise ValueError(f"train fraction {train_fraction} of {len(labels)} identities leaves an empty split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B]))
    order = rng.permutation(len(labels))
    train = sorted(labels[i] for i in order[:n_train])
    test = sorted(labels[i] for i in order[n_train:])
    return train, test


def build_splits(n_identities, samples_per_id, train_fraction, seed, settings=RenderSettings()):
    """Render a corpus and split it by identity. Returns (train, test) samples."""
    if n_identities < 4:
        raise ValueError(f"need at least 4 identities, got {n_identities}")
    if samples_per_id < 1:
        raise ValueError("need at least one sample per identity")
    identities = make_identities(n_identities, seed)
    train_labels, test_labels = split_identities(range(n_identities), train_fraction, seed)
    by_label = {ident.label: ident for ident in identities}
    train = render_identity_set([by_label[k] for k in train_labels], samples_per_id, seed, settings)
    test = render_identity_set([by_label[k] for k in test_labels], samples_per_id, seed, settings)
    return train, test


def make_verification_pairs(test_set, negatives_per_probe, seed):
    """Probe/gallery pairs over ``test_set``.

    Every probe is paired with all other same-identity samples (positives)
    and with ``negatives_per_probe`` different-identity samples drawn
    without replacement; ``None`` pairs it with every different-identity
    sample.
    """
    labels = np.array([s.y for s in test_set])
    if len(set(labels.tolist())) < 2:
        raise ValueError("verification needs a test set with at least two identities")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C]))
    pairs = []
    for i, probe in enumerate(test_set):
        pos = [j for j in np.flatnonzero(labels == probe.y) if j != i]
        neg = np.flatnonzero(labels != probe.y)
        if negatives_per_probe is not None and negatives_per_probe < len(neg):
            neg = np.sort(rng.choice(neg, size=negatives_per_probe, replace=False))
        for j in pos:
            pairs.append(VerificationPair(probe, test_set[j].x_H, True, i, int(j), test_set[j].y))
        for j in neg:
            pairs.append(VerificationPair(probe, test_set[j].x_H, False, i, int(j), test_set[j].y))
    return pairs


# ---------------------------------------------------------------- disk format

MANIFEST = "manifest.tsv"


def write_dataset(directory, samples):
    """Write PGM files plus a ``label<TAB>hr<TAB>lr`` manifest."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    counts = {}
    for s in samples:
        k = counts.get(s.y, 0)
        counts[s.y] = k + 1
        hr_name, lr_name = f"id{s.y:04d}_{k:03d}_hr.pgm", f"id{s.y:04d}_{k:03d}_lr.pgm"
        write_pgm(os.path.join(directory, hr_name), s.x_H)
        write_pgm(os.path.join(directory, lr_name), s.x_L)
        lines.append(f"{s.y}\t{hr_name}\t{lr_name}\n")
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def read_dataset(directory):
    path = os.path.join(directory, MANIFEST)
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected label<TAB>hr<TAB>lr")
            label, hr, lr = parts
            samples.append(Sample(read_pgm(os.path.join(directory, lr)),
                                  read_pgm(os.path.join(directory, hr)), int(label)))
    if not samples:
        raise ValueError(f"{path}: empty manifest")
    return samples


def write_splits(directory, train, test):
    write_dataset(os.path.join(directory, "train"), train)
    write_dataset(os.path.join(directory, "test"), test)


def read_splits(directory):
    return read_dataset(os.path.join(directory, "train")), read_dataset(os.path.join(directory, "test"))
