"""Two-stage training: the identity classifier first, then the generator
against the frozen classifier's descriptors. Also checkpoint and history
files.
"""
import copy
import csv
import io
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .errors import CheckpointError, ConfigError, NonFiniteError, TrainingDiverged
from .networks import ExtractorConfig, GeneratorConfig, build_extractor, build_generator
from .optim import OptimizerState, rmsprop_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: str = "recog"
    alpha: float = 1000.0
    beta: float = 300.0
    lr: float = 0.001
    lr_decay: float = 0.01
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    lambda1: float = 1e-4
    lambda2: float = 1e-4
    seed: int = 0
    patch: int = 8

    def validate(self):
        if self.loss not in L.LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {', '.join(L.LOSS_KINDS)}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size and epochs must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("weight-decay coefficients must be non-negative")
        return self

    def optimizer(self):
        return OptimizerState(lr=self.lr, rho=self.rho, epsilon=self.epsilon, lr_decay=self.lr_decay)


@dataclass
class History:
    """Per-epoch records; row 0 is the state before any update."""

    rows: list = field(default_factory=list)
    columns: tuple = ()

    def append(self, **values):
        self.rows.append(values)

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self, path=None):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.columns[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


GENERATOR_COLUMNS = ("epoch", "loss_selected", "loss_recon", "loss_ssim", "loss_recog")
EXTRACTOR_COLUMNS = ("epoch", "loss", "accuracy")


def _stack(images, dtype):
    return np.stack(images)[:, None].astype(dtype)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step(net, loss, tape, state, lam):
    params = net.parameters()
    names = list(params)
    grads = T.backward(tape, loss, wrt=[params[k] for k in names])
    grads = {k: g + (2.0 * lam) * params[k].data for k, g in zip(names, grads)}
    rmsprop_step(params, grads, state)


def class_index(labels):
    """Map arbitrary identity labels to contiguous class indices."""
    classes = sorted(set(int(v) for v in labels))
    return {lab: i for i, lab in enumerate(classes)}


def evaluate_extractor(f, images, targets, batch_size=64):
    loss_sum, correct = 0.0, 0
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        y = targets[i:i + batch_size]
        logits = f.logits(x)
        loss_sum += float(T.softmax_cross_entropy(logits, y).data) * len(x)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
    return loss_sum / len(images), correct / len(images)


def train_extractor(train_set, ext_cfg=None, cfg=TrainConfig(), seed=None):
    """Train the descriptor network as an identity classifier on HR images.

    Returns ``(network, history)``; the network is left trainable, call
    ``freeze()`` before handing it to :func:`train_generator`.
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    index = class_index(s.y for s in train_set)
    if len(index) < 2:
        raise ValueError("extractor training needs at least two identities")
    size = train_set[0].x_H.shape[0]
    if ext_cfg is None:
        ext_cfg = ExtractorConfig(input_size=size, n_classes=len(index))
    if ext_cfg.n_classes != len(index):
        raise ConfigError(f"extractor has {ext_cfg.n_classes} classes but training set has {len(index)} identities")
    f = build_extractor(ext_cfg, seed)
    images = _stack([s.x_H for s in train_set], f.dtype)
    targets = np.array([index[s.y] for s in train_set])
    state = cfg.optimizer()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE1]))
    history = History(columns=EXTRACTOR_COLUMNS)
    loss0, acc0 = evaluate_extractor(f, images, targets)
    history.append(epoch=0, loss=loss0, accuracy=acc0)
    good = copy.deepcopy(f)
    for epoch in range(1, cfg.epochs + 1):
        try:
            for idx in _batches(len(images), cfg.batch_size, rng):
                with T.Tape() as tape:
                    loss = T.softmax_cross_entropy(f.logits(images[idx]), targets[idx])
                _step(f, loss, tape, state, cfg.lambda1)
            loss_e, acc_e = evaluate_extractor(f, images, targets)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"extractor diverged in epoch {epoch}: {exc}", good, epoch - 1) from exc
        history.append(epoch=epoch, loss=loss_e, accuracy=acc_e)
        log.info("extractor epoch %d loss %.4f acc %.3f", epoch, loss_e, acc_e)
        good = copy.deepcopy(f)
    f.optimizer_state = state
    f.epoch = cfg.epochs
    return f, history


def hr_descriptors(f, hr, batch_size=64):
    return np.concatenate([f.descriptor(hr[i:i + batch_size]).data
                           for i in range(0, len(hr), batch_size)])


def evaluate_generator(G, f, lr, hr, consts, weights, kind, batch_size=64, f_hr=None):
    """Full-set values of every loss (batch-size weighted means)."""
    if f_hr is None:
        f_hr = hr_descriptors(f, hr, batch_size)
    totals = dict.fromkeys(("recon", "ssim", "recog"), 0.0)
    n = len(lr)
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        sr = G(lr[sl])
        h = hr[sl]
        m = len(h)
        totals["recon"] += float(L.loss_recon(sr, h).data) * m
        totals["ssim"] += float(L.loss_ssim(sr, h, consts).data) * m
        totals["recog"] += float(L.loss_recog(sr, h, f, hr_descriptors=f_hr[sl]).data) * m
    out = {k: v / n for k, v in totals.items()}
    out["joint"] = out["recon"] + weights.alpha * out["ssim"] + weights.beta * out["recog"]
    out["selected"] = out[kind]
    return out


def train_generator(train_set, f, gen_cfg=None, cfg=TrainConfig(), seed=None):
    """Fit the upsampling network to the selected loss with ``f`` frozen.

    Returns ``(network, history)``. The history has one row per epoch
    (plus the initial row 0) with the selected loss and all three
    individual losses evaluated over the whole training set.
    """
    cfg.validate()
    if not getattr(f, "frozen", False):
        raise ValueError("train_generator needs a frozen extractor (stage one must finish first)")
    seed = cfg.seed if seed is None else seed
    h_size, l_size = train_set[0].x_H.shape[0], train_set[0].x_L.shape[0]
    if gen_cfg is None:
        gen_cfg = GeneratorConfig(scale=h_size // l_size, input_size=l_size)
    consts = L.SsimConstants(h=cfg.patch)
    if h_size % cfg.patch:
        raise ConfigError(f"HR size {h_size} is not divisible by SSIM patch size {cfg.patch}")
    weights = L.JointWeights(cfg.alpha, cfg.beta)
    G = build_generator(gen_cfg, seed)
    lr = _stack([s.x_L for s in train_set], G.dtype)
    hr = _stack([s.x_H for s in train_set], G.dtype)
    checksum = f.checksum()
    f_hr = hr_descriptors(f, hr)
    state = cfg.optimizer()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E]))
    history = History(columns=GENERATOR_COLUMNS)

    def record(epoch):
        v = evaluate_generator(G, f, lr, hr, consts, weights, cfg.loss, f_hr=f_hr)
        history.append(epoch=epoch, loss_selected=v["selected"], loss_recon=v["recon"],
                       loss_ssim=v["ssim"], loss_recog=v["recog"])
        return v

    record(0)
    good = copy.deepcopy(G)
    for epoch in range(1, cfg.epochs + 1):
        try:
            for idx in _batches(len(lr), cfg.batch_size, rng):
                with T.Tape() as tape:
                    sr = G(lr[idx])
                    loss = L.selected_loss(cfg.loss, sr, hr[idx], f, consts, weights, f_hr[idx])
                _step(G, loss, tape, state, cfg.lambda2)
            v = record(epoch)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"generator diverged in epoch {epoch}: {exc}", good, epoch - 1) from exc
        log.info("generator[%s] epoch %d loss %.5f", cfg.loss, epoch, v["selected"])
        good = copy.deepcopy(G)
    if f.checksum() != checksum:
        raise AssertionError("frozen extractor parameters changed during generator training")
    G.optimizer_state = state
    G.epoch = cfg.epochs
    G.loss_kind = cfg.loss
    return G, history


# ---------------------------------------------------------------- checkpoints

MAGIC = b"IDSR"
VERSION = 1
_CONFIG_TYPES = {"generator": GeneratorConfig, "extractor": ExtractorConfig}


def _tensor_record(name, arr):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<I", len(name_b)) + name_b + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(net, state=None, epoch=0, extra=None):
    if net.kind not in _CONFIG_TYPES:
        raise CheckpointError(f"cannot checkpoint a {net.kind!r} network")
    tensors = [(k, t.data) for k, t in net.parameters().items()]
    opt = None
    if state is not None:
        opt = {"lr": state.lr, "rho": state.rho, "epsilon": state.epsilon,
               "lr_decay": state.lr_decay, "step": state.step}
        tensors += [(f"opt/{k}", a) for k, a in sorted(state.accumulators.items())]
    header = {"kind": net.kind, "config": asdict(net.config), "epoch": int(epoch),
              "optimizer": opt, "tensors": len(tensors), "extra": extra or {}}
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(payload)), payload]
    out += [_tensor_record(k, a) for k, a in tensors]
    return b"".join(out)


def save_checkpoint(path, net, state=None, epoch=None, extra=None):
    state = getattr(net, "optimizer_state", None) if state is None else state
    epoch = getattr(net, "epoch", 0) if epoch is None else epoch
    data = encode_checkpoint(net, state, epoch, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _config_from(kind, raw):
    cls = _CONFIG_TYPES[kind]
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**fields)
    except TypeError as exc:
        raise CheckpointError(f"config echo does not match {cls.__name__}: {exc}") from None


def decode_checkpoint(buf):
    """Rebuild ``(network, optimizer_state, header)`` from checkpoint bytes."""
    r = _Reader(bytes(buf))
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not an IDSR checkpoint (bad magic)", 0)
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    n = r.u32("config length")
    try:
        header = json.loads(r.take(n, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config echo: {exc}", 12) from None
    kind = header.get("kind")
    if kind not in _CONFIG_TYPES:
        raise CheckpointError(f"unknown network kind {kind!r}", 12)
    cfg = _config_from(kind, header["config"])
    arrays = {}
    for _ in range(header["tensors"]):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4").reshape(shape)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last tensor", r.pos)

    build = build_generator if kind == "generator" else build_extractor
    net = build(cfg, 0)
    params = {k: v for k, v in arrays.items() if not k.startswith("opt/")}
    try:
        net.set_arrays(params)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint tensors do not match the embedded config: {exc}") from None
    state = None
    if header.get("optimizer"):
        o = header["optimizer"]
        state = OptimizerState(lr=o["lr"], rho=o["rho"], epsilon=o["epsilon"],
                               lr_decay=o["lr_decay"], step=o["step"])
        state.accumulators = {k[4:]: v.astype(np.float32) for k, v in arrays.items() if k.startswith("opt/")}
    net.optimizer_state = state
    net.epoch = header.get("epoch", 0)
    return net, state, header


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def load_frozen_extractor(path):
    net, _, header = load_checkpoint(path)
    if header["kind"] != "extractor":
        raise CheckpointError(f"{path} holds a {header['kind']}, not an extractor")
    return net.freeze()


def load_generator(path):
    net, _, header = load_checkpoint(path)
    if header["kind"] != "generator":
        raise CheckpointError(f"{path} holds a {header['kind']}, not a generator")
    return net
