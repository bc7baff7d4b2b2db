"""Generator and feature-extractor networks built from tensor primitives."""
import copy
import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError


@dataclass(frozen=True)
class GeneratorConfig:
    """Upsampling network layout.

    ``channels[0]`` is the width of the head conv; ``channels[1 + i]`` the
    width after upsampling stage ``i``. ``kernel_sizes`` lists the head conv,
    one refinement conv per stage and the tail conv, all odd.
    """

    scale: int = 8
    input_size: int = 8
    channels: tuple = (32, 32, 16, 8)
    kernel_sizes: tuple = (3, 3, 3, 3, 3)
    slope: float = 0.2

    @property
    def stages(self):
        return int(round(math.log2(self.scale))) if self.scale >= 1 else -1

    def validate(self):
        if self.scale < 2 or self.scale & (self.scale - 1):
            raise ValueError(f"generator scale must be a power of two >= 2, got {self.scale}")
        if len(self.channels) != self.stages + 1:
            raise ValueError(f"scale {self.scale} needs {self.stages + 1} channel widths, got {len(self.channels)}")
        if len(self.kernel_sizes) != self.stages + 2:
            raise ValueError(f"scale {self.scale} needs {self.stages + 2} kernel sizes, got {len(self.kernel_sizes)}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if any(c < 1 for c in self.channels) or self.input_size < 1:
            raise ValueError("channel widths and input size must be positive")
        if not 0.0 <= self.slope < 1.0:
            raise ValueError(f"leaky-relu slope must lie in [0, 1), got {self.slope}")


@dataclass(frozen=True)
class ExtractorConfig:
    input_size: int = 64
    channels: tuple = (8, 16, 32, 32)
    kernel_size: int = 3
    strides: tuple = (2, 2, 2, 2)
    descriptor_dim: int = 64
    n_classes: int = 24
    standardize: bool = True

    def validate(self):
        if self.descriptor_dim < 2:
            raise ValueError(f"descriptor dimension must be >= 2, got {self.descriptor_dim}")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("extractor needs one stride per conv stage")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        size = self.input_size
        for s in self.strides:
            size = (size + 2 * (self.kernel_size // 2) - self.kernel_size) // s + 1
            if size < 1:
                raise ValueError(f"input size {self.input_size} collapses to nothing after the conv trunk")

    def trunk_size(self):
        size = self.input_size
        for s in self.strides:
            size = (size + 2 * (self.kernel_size // 2) - self.kernel_size) // s + 1
        return size


# ---------------------------------------------------------------- layers

def glorot(rng, shape, fan_in, fan_out, dtype):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, cin, cout, k, stride=1, pad=None, rng=None, dtype=np.float32):
        self.stride, self.pad = stride, k // 2 if pad is None else pad
        w = glorot(rng, (cout, cin, k, k), cin * k * k, cout * k * k, dtype)
        self.params = {"weight": T.Tensor(w), "bias": T.Tensor(np.zeros(cout, dtype))}

    def __call__(self, x):
        return T.conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad)


class ConvTranspose2d:
    def __init__(self, cin, cout, k, stride, pad=0, rng=None, dtype=np.float32):
        self.stride, self.pad = stride, pad
        w = glorot(rng, (cin, cout, k, k), cin * k * k, cout * k * k, dtype)
        self.params = {"weight": T.Tensor(w), "bias": T.Tensor(np.zeros(cout, dtype))}

    def __call__(self, x):
        return T.conv2d_transpose(x, self.params["weight"], self.params["bias"], self.stride, self.pad)


class Linear:
    def __init__(self, din, dout, rng=None, dtype=np.float32):
        w = glorot(rng, (dout, din), din, dout, dtype)
        self.params = {"weight": T.Tensor(w), "bias": T.Tensor(np.zeros(dout, dtype))}

    def __call__(self, x):
        return T.linear(x, self.params["weight"], self.params["bias"])


class LeakyReLU:
    params = {}

    def __init__(self, slope):
        self.slope = slope

    def __call__(self, x):
        return T.leaky_relu(x, self.slope)


class ReLU:
    params = {}

    def __call__(self, x):
        return T.relu(x)


class Standardize:
    """Per-image zero mean, unit variance; removes global gain and offset."""

    params = {}
    eps = 1e-4

    def __call__(self, x):
        axes = tuple(range(1, x.ndim))
        centred = x - x.mean(axis=axes, keepdims=True)
        var = T.square(centred).mean(axis=axes, keepdims=True)
        return centred / T.sqrt(var + self.eps)


class Flatten:
    params = {}

    def __call__(self, x):
        return T.flatten(x)


# ---------------------------------------------------------------- network

class Network:
    """Ordered layers plus an optional descriptor tap.

    ``descriptor_at`` is the number of leading layers whose output is the
    face descriptor; ``input_shape`` is ``(C, H, W)`` when fixed.
    """

    def __init__(self, kind, layers, config=None, input_shape=None, descriptor_at=None):
        self.kind = kind
        self.layers = list(layers)
        self.config = config
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.descriptor_at = descriptor_at
        self.frozen = False
        self.set_trainable(True)

    def parameters(self):
        return {f"{i}.{name}": t
                for i, layer in enumerate(self.layers)
                for name, t in layer.params.items()}

    def set_trainable(self, flag):
        for name, t in self.parameters().items():
            t.requires_grad = flag
            t.name = name

    def freeze(self):
        """Return a frozen deep copy; the original stays trainable."""
        net = copy.deepcopy(self)
        net.set_trainable(False)
        net.frozen = True
        return net

    def astype(self, dtype):
        net = copy.deepcopy(self)
        for t in net.parameters().values():
            t.data = t.data.astype(dtype)
        return net

    @property
    def dtype(self):
        params = self.parameters()
        return next(iter(params.values())).dtype if params else np.dtype(np.float64)

    def _check_input(self, x):
        if self.input_shape is not None and tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.kind} expects input [B, {', '.join(map(str, self.input_shape))}],"
                             f" got {list(x.shape)}")

    def _prepare(self, x):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4:
            raise ShapeError(f"{self.kind} expects a [B, C, H, W] batch, got shape {x.shape}")
        self._check_input(x)
        return x

    def run(self, x, stop=None):
        x = self._prepare(x)
        for layer in self.layers[:stop]:
            x = layer(x)
        return x

    __call__ = run

    def descriptor(self, x):
        if self.descriptor_at is None:
            raise ValueError(f"{self.kind} network has no descriptor tap")
        return self.run(x, self.descriptor_at)

    def logits(self, x):
        return self.run(x)

    def get_arrays(self):
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def set_arrays(self, arrays):
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ShapeError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for k, t in params.items():
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise ShapeError(f"parameter {k}: shape {a.shape} does not match {t.shape}")
            t.data = a.astype(t.dtype, copy=True)

    def checksum(self):
        h = hashlib.sha256()
        for k, t in sorted(self.parameters().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def config_dict(self):
        return asdict(self.config) if self.config is not None else {}


def build_generator(cfg=GeneratorConfig(), seed=0, dtype=np.float32):
    """Head conv, ``log2(scale)`` x2 upsampling stages, linear tail conv."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    ks, ch = cfg.kernel_sizes, cfg.channels
    layers = [Conv2d(1, ch[0], ks[0], rng=rng, dtype=dtype), LeakyReLU(cfg.slope)]
    for i in range(cfg.stages):
        layers += [
            ConvTranspose2d(ch[i], ch[i + 1], 2, stride=2, rng=rng, dtype=dtype),
            LeakyReLU(cfg.slope),
            Conv2d(ch[i + 1], ch[i + 1], ks[1 + i], rng=rng, dtype=dtype),
            LeakyReLU(cfg.slope),
        ]
    layers.append(Conv2d(ch[-1], 1, ks[-1], rng=rng, dtype=dtype))
    return Network("generator", layers, cfg, (1, cfg.input_size, cfg.input_size))


def build_extractor(cfg=ExtractorConfig(), seed=0, dtype=np.float32):
    """Strided conv trunk -> ReLU descriptor layer -> class logits."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    layers, cin = [Standardize()] if cfg.standardize else [], 1
    for cout, s in zip(cfg.channels, cfg.strides):
        layers += [Conv2d(cin, cout, cfg.kernel_size, stride=s, rng=rng, dtype=dtype), ReLU()]
        cin = cout
    flat = cin * cfg.trunk_size() ** 2
    layers += [Flatten(), Linear(flat, cfg.descriptor_dim, rng=rng, dtype=dtype), ReLU()]
    tap = len(layers)
    layers.append(Linear(cfg.descriptor_dim, cfg.n_classes, rng=rng, dtype=dtype))
    return Network("extractor", layers, cfg, (1, cfg.input_size, cfg.input_size), descriptor_at=tap)


def identity_extractor(input_shape=None):
    """Frozen stub whose descriptor is the flattened image."""
    net = Network("identity", [Flatten()], None, input_shape, descriptor_at=1)
    net.frozen = True
    return net


def extract_descriptor(f, img):
    """Descriptor(s) of an image ``[H, W]`` or batch ``[B, H, W]`` / ``[B, 1, H, W]``."""
    arr = img.data if isinstance(img, T.Tensor) else np.asarray(img)
    single = arr.ndim == 2
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    out = f.descriptor(np.asarray(arr, dtype=f.dtype)).data
    return out[0] if single else out


def super_resolve(G, lr):
    """Apply a generator to an image ``[h, w]`` or stack ``[B, h, w]``."""
    arr = np.asarray(lr)
    single = arr.ndim == 2
    batch = arr[None, None] if single else arr[:, None]
    out = G(np.asarray(batch, dtype=G.dtype)).data[:, 0].astype(np.float64)
    return out[0] if single else out


def identity_generator():
    """Stub generator returning its input unchanged (no upsampling)."""
    net = Network("identity", [], None)
    net.frozen = True
    return net
