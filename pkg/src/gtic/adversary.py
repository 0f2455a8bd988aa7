"""Multiscale discriminator and the loss terms of the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamStore, Sequential
from .pipeline import pyramid_downsample

LOG_FLOOR = 1e-7
SCALES = 3


@dataclass
class LossWeights:
    beta: tuple[float, float, float] = (0.5, 0.25, 0.25)
    eta: float = 1.0
    kappa: float = 16.0

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != SCALES or min(self.beta) <= 0 or abs(sum(self.beta) - 1) > 1e-9:
            raise ValueError(f"beta must be {SCALES} positive weights summing to 1, got {self.beta}")
        if self.eta < 0 or self.kappa < 0:
            raise ValueError(f"eta and kappa must be >= 0, got {self.eta}, {self.kappa}")


def branch_net(prefix: str, width: int) -> Sequential:
    w = width
    return Sequential([
        nn.conv(f"{prefix}.c1", w // 4, 4, 2), nn.leaky_relu(0.2),
        nn.conv(f"{prefix}.c2", w // 2, 4, 2), nn.batchnorm(f"{prefix}.bn2"), nn.leaky_relu(0.2),
        nn.conv(f"{prefix}.c3", w, 4, 2), nn.batchnorm(f"{prefix}.bn3"), nn.leaky_relu(0.2),
        nn.conv(f"{prefix}.out", 1, 3), nn.sigmoid_layer(),
    ])


class Discriminator:
    """One conv branch per pyramid scale; each branch emits the spatial mean of a sigmoid map."""

    def __init__(self, width: int = 256):
        self.width = width
        self.branches = [branch_net(f"d{i + 1}", width) for i in range(SCALES)]

    @classmethod
    def from_params(cls, params: ParamStore) -> Discriminator:
        return cls(params["d1.c3.w"].shape[3])

    def build(self, params: ParamStore, rng: np.random.Generator) -> ParamStore:
        for b in self.branches:
            b.build(params, 3, rng)
        return params

    def forward(self, params: ParamStore, img: np.ndarray, tape: list | None = None) -> np.ndarray:
        """Scores of shape (N, 3), one per scale, each strictly inside (0, 1)."""
        n, h, w, c = img.shape
        if h % 4 or w % 4:
            raise nn.ShapeError(f"discriminator needs H and W divisible by 4, got {h}x{w}")
        scores = np.empty((n, SCALES), dtype=img.dtype)
        for i, branch in enumerate(self.branches):
            t = [] if tape is not None else None
            s = branch.forward(params, pyramid_downsample(img, i + 1), t)
            scores[:, i] = s.mean(axis=(1, 2, 3))
            if tape is not None:
                tape.append((t, s.shape))
        return scores

    def backward(self, params: ParamStore, tape: list, grad_scores: np.ndarray,
                 grads: dict[str, np.ndarray]) -> np.ndarray:
        """Accumulate parameter gradients into ``grads``; return the image gradient."""
        grad_img = None
        for i, (branch, (t, shape)) in enumerate(zip(self.branches, tape)):
            size = shape[1] * shape[2] * shape[3]
            g = np.broadcast_to(grad_scores[:, i, None, None, None] / size, shape).astype(grad_scores.dtype)
            gi = branch.backward(params, t, g, grads)
            for _ in range(i):
                gi = np.repeat(np.repeat(gi, 2, axis=1), 2, axis=2) * 0.25
            grad_img = gi if grad_img is None else grad_img + gi
        return grad_img


def init_discriminator(width: int, seed: int) -> ParamStore:
    return Discriminator(width).build(ParamStore(), np.random.default_rng([seed, 4]))


def discriminator_forward(img: np.ndarray, params: ParamStore) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    single = img.ndim == 3
    scores = Discriminator.from_params(params).forward(params, img[None] if single else img)
    return scores[0] if single else scores


def _clamped_log(p):
    return np.log(np.maximum(p, LOG_FLOOR))


def _clamped_log_grad(p):
    return np.where(p > LOG_FLOOR, 1.0 / np.maximum(p, LOG_FLOOR), 0.0)


def adversarial_loss(real: np.ndarray, fake: np.ndarray, w: LossWeights) -> np.ndarray | float:
    """sum_i beta_i * (log D_i(x) + log(1 - D_i(G(x)))), log arguments floored at 1e-7.

    Score arrays end in an axis of length 3; one loss per leading index.
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    beta = np.asarray(w.beta)
    out = ((_clamped_log(real) + _clamped_log(1.0 - fake)) * beta).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def adversarial_grads(real: np.ndarray, fake: np.ndarray, w: LossWeights) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`adversarial_loss` w.r.t. the real and fake scores."""
    beta = np.asarray(w.beta)
    return beta * _clamped_log_grad(real), -beta * _clamped_log_grad(1.0 - fake)


def generator_adv_term(fake: np.ndarray, w: LossWeights, saturating: bool = True):
    """Per-sample generator-side adversarial term and its gradient w.r.t. the fake scores.

    The saturating form is the fake half of the adversarial loss as printed;
    the non-saturating form replaces it with -sum beta_i log D_i(G(x)).
    """
    fake = np.asarray(fake, dtype=np.float64)
    beta = np.asarray(w.beta)
    if saturating:
        return (beta * _clamped_log(1.0 - fake)).sum(axis=-1), -beta * _clamped_log_grad(1.0 - fake)
    return -(beta * _clamped_log(fake)).sum(axis=-1), -beta * _clamped_log_grad(fake)


def distortion_loss(x: np.ndarray, xhat: np.ndarray) -> float:
    x, xhat = np.asarray(x, dtype=np.float64), np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise nn.ShapeError(f"image shapes differ: {x.shape} vs {xhat.shape}")
    return float(np.mean((x - xhat) ** 2))


def overall_loss(batch: list[tuple[float, float]], w: LossWeights) -> float:
    """(1/B) * sum_j (eta * L_A_j + kappa * L_D_j)."""
    if len(batch) == 0:
        raise ValueError("overall loss needs a non-empty batch")
    return float(sum(w.eta * la + w.kappa * ld for la, ld in batch) / len(batch))
