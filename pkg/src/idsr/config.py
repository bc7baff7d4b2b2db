"""Run configuration stored as a ``key = value`` text file.

Lines starting with ``#`` are comments; tuple-valued keys take comma
separated integers. Unknown keys are rejected. ``dumps(loads(text))`` is a
fixed point after the first round.
"""
import dataclasses
from dataclasses import dataclass, fields, replace

from .dataset import RenderSettings
from .errors import ConfigError
from .networks import ExtractorConfig, GeneratorConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # dataset
    n_identities: int = 32
    samples_per_id: int = 16
    hr_size: int = 64
    scale: int = 8
    sigma: float = 2.4
    noise: float = 0.02
    train_fraction: float = 0.75
    negatives_per_probe: int = 15
    # generator
    gen_channels: tuple = (32, 32, 16, 8)
    gen_kernels: tuple = (3, 3, 3, 3, 3)
    gen_slope: float = 0.2
    # extractor
    ext_channels: tuple = (8, 16, 32, 32)
    ext_kernel: int = 3
    ext_strides: tuple = (2, 2, 2, 2)
    descriptor_dim: int = 64
    # optimisation
    loss: str = "recog"
    alpha: float = 1000.0
    beta: float = 300.0
    lr: float = 0.001
    lr_decay: float = 0.01
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 8
    extractor_epochs: int = 20
    generator_epochs: int = 20
    lambda1: float = 1e-4
    lambda2: float = 1e-4
    patch: int = 8
    seed: int = 0

    def validate(self):
        if self.hr_size % self.scale:
            raise ConfigError(f"hr_size {self.hr_size} must be a multiple of scale {self.scale}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.negatives_per_probe < 0:
            raise ConfigError("negatives_per_probe must be >= 0 (0 means every negative)")
        self.generator_train_config(self.loss)
        self.generator_config().validate()
        return self

    def render_settings(self):
        return RenderSettings(hr_size=self.hr_size, scale=self.scale, sigma=self.sigma, noise=self.noise)

    def generator_config(self):
        return GeneratorConfig(scale=self.scale, input_size=self.hr_size // self.scale,
                               channels=self.gen_channels, kernel_sizes=self.gen_kernels,
                               slope=self.gen_slope)

    def extractor_config(self, n_classes):
        return ExtractorConfig(input_size=self.hr_size, channels=self.ext_channels,
                               kernel_size=self.ext_kernel, strides=self.ext_strides,
                               descriptor_dim=self.descriptor_dim, n_classes=n_classes)

    def _train(self, loss, epochs):
        return TrainConfig(loss=loss, alpha=self.alpha, beta=self.beta, lr=self.lr,
                           lr_decay=self.lr_decay, rho=self.rho, epsilon=self.epsilon,
                           batch_size=self.batch_size, epochs=epochs, lambda1=self.lambda1,
                           lambda2=self.lambda2, seed=self.seed, patch=self.patch).validate()

    def extractor_train_config(self):
        return self._train(self.loss, self.extractor_epochs)

    def generator_train_config(self, loss=None):
        return self._train(loss or self.loss, self.generator_epochs)

    @property
    def pairs_negatives(self):
        return None if self.negatives_per_probe == 0 else self.negatives_per_probe


def _coerce(name, kind, text):
    try:
        if kind is tuple:
            return tuple(int(p) for p in text.split(",") if p.strip())
        if kind is bool:
            return text.lower() in ("1", "true", "yes")
        return kind(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def loads(text, base=RunConfig()):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, _TYPES[key], value)
    return replace(base, **values).validate()


def dumps(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        text = ", ".join(str(x) for x in v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(path, cfg):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(cfg))


def asdict(cfg):
    return dataclasses.asdict(cfg)
