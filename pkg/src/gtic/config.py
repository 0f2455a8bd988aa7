"""Training configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

from .adversary import LossWeights
from .pipeline import PipelineConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    K: int = 16
    L: int = 2
    B: int = 8
    alpha: tuple[float, float, float] = (0.5, 0.25, 0.25)
    beta: tuple[float, float, float] = (0.5, 0.25, 0.25)
    eta: float = 1.0
    kappa: float = 16.0
    epochs: int = 128
    lr_initial: float = 2e-3
    lr_switch_epoch: int = 64
    lr_final: float = 2e-4
    n_mode: str = "tunable"
    n: float = 0.0
    gan: bool = True
    masker: bool = True
    entropy: bool = True
    seed: int = 0
    width: int = 256
    decoder_blocks: int = 15
    disc_width: int = 256
    crop: int = 0
    generator_loss: str = "saturating"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        self.beta = tuple(float(b) for b in self.beta)
        self.validate()

    def validate(self) -> None:
        if self.B < 1:
            raise ConfigError(f"B must be >= 1, got {self.B}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ConfigError(f"learning rates must be positive, got {self.lr_initial}, {self.lr_final}")
        if self.n_mode not in ("tunable", "fixed"):
            raise ConfigError(f"n_mode must be 'tunable' or 'fixed', got {self.n_mode!r}")
        if self.n_mode == "fixed" and not -2.0 <= self.n <= 2.0:
            raise ConfigError(f"fixed n must lie in [-2, 2], got {self.n}")
        if self.generator_loss not in ("saturating", "non-saturating"):
            raise ConfigError(f"generator_loss must be 'saturating' or 'non-saturating', got {self.generator_loss!r}")
        if self.crop < 0 or self.crop % 8:
            raise ConfigError(f"crop must be 0 or a positive multiple of 8, got {self.crop}")
        if self.disc_width < 4 or self.disc_width % 4:
            raise ConfigError(f"disc_width must be a positive multiple of 4, got {self.disc_width}")
        try:
            self.pipeline()
            self.loss_weights()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(K=self.K, L=self.L, alpha=self.alpha, n=self.n, width=self.width,
                              decoder_blocks=self.decoder_blocks, masker=self.masker)

    def loss_weights(self) -> LossWeights:
        eta = self.eta if self.gan else 0.0
        return LossWeights(self.beta, eta, self.kappa)

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.lr_switch_epoch else self.lr_final

    @classmethod
    def paper(cls, **overrides) -> TrainConfig:
        """Full-scale settings: K=16, L=2, B=8, 128 epochs, lr 2e-3 then 2e-4 after epoch 64."""
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> TrainConfig:
        """Desk-scale profile for 32x32 synthetic images."""
        base = dict(K=4, B=4, epochs=300, lr_initial=5e-4, lr_switch_epoch=225, lr_final=1e-4, width=64,
                    decoder_blocks=15, disc_width=32, crop=32)
        base.update(overrides)
        return cls(**base)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> TrainConfig:
        return cls(**json.loads(text))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _convert(name: str, default, raw: str):
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.split(","))
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Apply ``key=value`` lines on top of ``base``; unknown keys are errors."""
    base = base or TrainConfig.paper()
    values = dataclasses.asdict(base)
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        values[key] = _convert(key, defaults[key], raw)
    return TrainConfig(**values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path) as f:
        return parse_config(f.read(), base)
