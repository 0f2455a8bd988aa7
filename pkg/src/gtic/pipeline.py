"""Analysis/synthesis chain: pyramid encoder, masker, quantizer, masking, decoder.

Images are float32 NHWC batches with values in [0, 1]; single HWC images are
accepted by the public helpers and returned without the batch axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import ParamStore, Sequential

log = logging.getLogger(__name__)

SIGMA_EPS = 1e-6
M_CLIP = 1e-12


@dataclass
class PipelineConfig:
    K: int = 16
    L: int = 2
    alpha: tuple[float, float, float] = (0.5, 0.25, 0.25)
    n: float = 0.0
    width: int = 256
    decoder_blocks: int = 15
    masker: bool = True
    # forward with the surrogate functions themselves (used to verify surrogate gradients)
    soft_quantizer: bool = False
    soft_mask: bool = False

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if len(self.alpha) != 3 or min(self.alpha) <= 0 or abs(sum(self.alpha) - 1) > 1e-9:
            raise ValueError(f"alpha must be three positive weights summing to 1, got {self.alpha}")
        if self.width < 4 or self.width % 4:
            raise ValueError(f"width must be a positive multiple of 4, got {self.width}")

    @property
    def qmax(self) -> int:
        return 2 ** self.L - 1


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    return x, False


# ---------------------------------------------------------------------------
# networks


class Encoder:
    """Three-scale encoder; every branch ends at (H/8, W/8, width)."""

    def __init__(self, width: int, K: int, alpha=(0.5, 0.25, 0.25)):
        w = width
        self.alpha = tuple(alpha)
        self.branches = [
            Sequential([
                nn.conv("s1.c1", w // 4, 5, 2), nn.relu(), nn.resblock("s1.r1", w // 4),
                nn.conv("s1.c2", w // 2, 5, 2), nn.relu(), nn.resblock("s1.r2", w // 2),
                nn.conv("s1.c3", w, 5, 2), nn.relu(), nn.resblock("s1.r3", w),
            ]),
            Sequential([
                nn.conv("s2.c1", w // 2, 5, 2), nn.relu(), nn.resblock("s2.r1", w // 2),
                nn.conv("s2.c2", w, 5, 2), nn.relu(), nn.resblock("s2.r2", w),
            ]),
            Sequential([
                nn.conv("s3.c1", w, 5, 2), nn.relu(), nn.resblock("s3.r1", w),
            ]),
        ]
        self.head = Sequential([nn.conv("head.c1", w, 3), nn.relu(), nn.conv("head.c2", K, 3)])

    @classmethod
    def from_params(cls, params: ParamStore, alpha=(0.5, 0.25, 0.25)) -> Encoder:
        return cls(params["s3.c1.w"].shape[3], params["head.c2.w"].shape[3], alpha)

    def build(self, params: ParamStore, rng: np.random.Generator) -> None:
        for b in self.branches:
            b.build(params, 3, rng)
        self.head.build(params, self.branches[0].layers[-1].filters, rng)

    def forward(self, params: ParamStore, x: np.ndarray, tape: dict | None = None) -> np.ndarray:
        n, h, w, c = x.shape
        if c != 3:
            raise nn.ShapeError(f"encoder expects 3 channels, got {c}")
        if h % 8 or w % 8:
            raise nn.ShapeError(f"encoder needs H and W divisible by 8, got {h}x{w}")
        total = None
        for i, branch in enumerate(self.branches):
            xi = pyramid_downsample(x, i + 1)
            t = [] if tape is not None else None
            e = self.alpha[i] * branch.forward(params, xi, t)
            total = e if total is None else total + e
            if tape is not None:
                tape[f"branch{i}"] = t
        t = [] if tape is not None else None
        out = self.head.forward(params, total, t)
        if tape is not None:
            tape["head"] = t
        return out

    def backward(self, params: ParamStore, tape: dict, grad: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        g = self.head.backward(params, tape["head"], grad, grads)
        for i, branch in enumerate(self.branches):
            branch.backward(params, tape[f"branch{i}"], self.alpha[i] * g, grads)
        return grads


def masker_net(width: int) -> Sequential:
    return Sequential([nn.resblock("m.r1", width), nn.resblock("m.r2", width), nn.conv("m.out", 1, 3)])


def decoder_net(width: int, blocks: int) -> Sequential:
    w = width
    layers = [nn.conv("g.c1", w // 2, 3), nn.relu(), nn.conv("g.c2", w, 3), nn.relu()]
    layers += [nn.resblock(f"g.r{i + 1}", w) for i in range(blocks)]
    layers += [
        nn.tconv("g.t1", w // 2), nn.relu(),
        nn.tconv("g.t2", w // 4), nn.relu(),
        nn.tconv("g.t3", 3), nn.sigmoid_layer(),
    ]
    return Sequential(layers)


def _masker_from_params(params: ParamStore) -> Sequential:
    return masker_net(params["m.r1.conv1.w"].shape[3])


def _decoder_from_params(params: ParamStore) -> Sequential:
    blocks = sum(1 for k in params.names() if k.startswith("g.r") and k.endswith(".conv1.w"))
    return decoder_net(params["g.c2.w"].shape[3], blocks)


def init_params(cfg: PipelineConfig, seed: int) -> dict[str, ParamStore]:
    """Fresh encoder, masker and decoder parameters; each store has its own seeded stream."""
    stores = {name: ParamStore() for name in ("encoder", "masker", "decoder")}
    Encoder(cfg.width, cfg.K, cfg.alpha).build(stores["encoder"], np.random.default_rng([seed, 1]))
    masker_net(cfg.width).build(stores["masker"], cfg.K, np.random.default_rng([seed, 2]))
    decoder_net(cfg.width, cfg.decoder_blocks).build(stores["decoder"], cfg.K, np.random.default_rng([seed, 3]))
    return stores


# ---------------------------------------------------------------------------
# operations


def pyramid_downsample(x: np.ndarray, scale_index: int) -> np.ndarray:
    """Average-pool ``x`` by 2**(scale_index - 1); scale 1 is the identity."""
    if scale_index not in (1, 2, 3):
        raise ValueError(f"scale_index must be 1, 2 or 3, got {scale_index}")
    xb, single = _batched(x)
    f = 2 ** (scale_index - 1)
    n, h, w, c = xb.shape
    if h % f or w % f:
        raise nn.ShapeError(f"image {h}x{w} is not divisible by {f} for scale {scale_index}")
    if f > 1:
        xb = xb.reshape(n, h // f, f, w // f, f, c).mean(axis=(2, 4))
    return xb[0] if single else xb


def encode(x: np.ndarray, params: ParamStore, cfg: PipelineConfig) -> np.ndarray:
    xb, single = _batched(x)
    out = Encoder.from_params(params, cfg.alpha).forward(params, xb.astype(np.float32))
    return out[0] if single else out


def masker_logits(omega: np.ndarray, params: ParamStore) -> np.ndarray:
    ob, single = _batched(omega)
    y = _masker_from_params(params).forward(params, ob.astype(np.float32))
    return y[0] if single else y


def importance_map(y: np.ndarray, n: float = 0.0) -> np.ndarray:
    """Per-image z-score of the logits shifted by ``n``, then the logistic function.

    ``y`` is a single map (h, w) / (h, w, 1) or a batch (N, h, w, 1). Statistics
    are taken over each image's spatial positions; the standard deviation is the
    population one, guarded by a small epsilon.
    """
    if not -2.0 <= n <= 2.0:
        log.warning("masker shift n=%g lies outside [-2, 2]", n)
    y = np.asarray(y, dtype=np.float64)
    axes = tuple(range(y.ndim - 3, y.ndim)) if y.ndim == 4 else tuple(range(y.ndim))
    mu = y.mean(axis=axes, keepdims=True)
    sigma = y.std(axis=axes, keepdims=True)
    m = nn.sigmoid((y - mu - n) / (sigma + SIGMA_EPS))
    return np.clip(m, M_CLIP, 1 - M_CLIP)


def _importance_backward(y: np.ndarray, n: float, grad_m: np.ndarray) -> np.ndarray:
    y = y.astype(np.float64)
    axes = (1, 2, 3)
    count = y.shape[1] * y.shape[2] * y.shape[3]
    u = y - y.mean(axis=axes, keepdims=True)
    sigma = np.sqrt((u * u).mean(axis=axes, keepdims=True))
    d = sigma + SIGMA_EPS
    m = nn.sigmoid((u - n) / d)
    gt = grad_m * m * (1 - m)
    gy = (gt - gt.mean(axis=axes, keepdims=True)) / d
    dsigma = -(gt * (u - n)).sum(axis=axes, keepdims=True) / d ** 2
    safe = np.where(sigma > 0, sigma, 1.0)
    gy = gy + np.where(sigma > 0, dsigma * u / (count * safe), 0.0)
    return gy


def expand_importance(m: np.ndarray, K: int) -> np.ndarray:
    """Binary channel-prefix expansion: channel k (1-based) is 1 iff m >= (k-1)/K."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim >= 1 and m.shape[-1] == 1 and m.ndim in (3, 4):
        m = m[..., 0]
    thresholds = np.arange(K) / K
    return (m[..., None] >= thresholds).astype(np.int32)


def soft_expand(m: np.ndarray, K: int) -> np.ndarray:
    """Piecewise-linear surrogate of :func:`expand_importance` (slope K on ((k-1)/K, k/K))."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim in (3, 4) and m.shape[-1] == 1:
        m = m[..., 0]
    return np.clip(m[..., None] * K - np.arange(K), 0.0, 1.0)


def quantize(omega: np.ndarray, L: int) -> np.ndarray:
    """Nearest symbol of {0, ..., 2**L - 1}; exact halves round up, out-of-range clamps."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    q = np.floor(np.asarray(omega, dtype=np.float64) + 0.5)
    return np.clip(q, 0, 2 ** L - 1).astype(np.int32)


def apply_mask(q: np.ndarray, mhat: np.ndarray) -> np.ndarray:
    q, mhat = np.asarray(q), np.asarray(mhat)
    if q.shape != mhat.shape:
        raise nn.ShapeError(f"quantized tensor {q.shape} and importance matrix {mhat.shape} differ")
    return (q * mhat).astype(np.int32)


def decode(z: np.ndarray, params: ParamStore) -> np.ndarray:
    zb, single = _batched(z)
    x = _decoder_from_params(params).forward(params, zb.astype(np.float32))
    return x[0] if single else x


def mask_matrix(omega: np.ndarray, masker: ParamStore | None, K: int, n: float) -> np.ndarray:
    """Importance matrix for a batch of code tensors; all ones when the masker is disabled."""
    if masker is None:
        return np.ones(omega.shape, dtype=np.int32)
    return expand_importance(importance_map(masker_logits(omega, masker), n), K)


def analyze(x: np.ndarray, stores: dict[str, ParamStore], cfg: PipelineConfig, n: float) -> np.ndarray:
    """Non-differentiable encoder side: image batch -> masked code tensor z."""
    omega = encode(x, stores["encoder"], cfg)
    mhat = mask_matrix(omega, stores["masker"] if cfg.masker else None, cfg.K, n)
    return apply_mask(quantize(omega, cfg.L), mhat)


# ---------------------------------------------------------------------------
# differentiable training chain


@dataclass
class Trace:
    x: np.ndarray
    xhat: np.ndarray
    omega: np.ndarray
    m: np.ndarray | None
    mhat: np.ndarray
    q: np.ndarray
    z: np.ndarray
    n: float
    y: np.ndarray | None = None
    tapes: dict = field(default_factory=dict)


def forward_train(x: np.ndarray, stores: dict[str, ParamStore], cfg: PipelineConfig,
                  n: float | None = None) -> Trace:
    """Full chain with a tape for :func:`backward_train`.

    Forward values are the hard quantizer/threshold unless ``cfg.soft_*`` is set;
    gradients use the clipped straight-through and piecewise-linear surrogates.
    """
    n = cfg.n if n is None else n
    xb, _ = _batched(x)
    enc = Encoder.from_params(stores["encoder"], cfg.alpha)
    tapes: dict = {"encoder": {}}
    omega = enc.forward(stores["encoder"], xb, tapes["encoder"])
    dtype = omega.dtype
    m = y = None
    if cfg.masker:
        tapes["masker"] = []
        y = _masker_from_params(stores["masker"]).forward(stores["masker"], omega, tapes["masker"])
        m = importance_map(y, n)
        mhat = soft_expand(m, cfg.K) if cfg.soft_mask else expand_importance(m, cfg.K)
    else:
        mhat = np.ones(omega.shape)
    q = np.clip(omega, 0, cfg.qmax) if cfg.soft_quantizer else quantize(omega, cfg.L)
    mhat = mhat.astype(dtype)
    q = q.astype(dtype)
    z = mhat * q
    tapes["decoder"] = []
    xhat = _decoder_from_params(stores["decoder"]).forward(stores["decoder"], z, tapes["decoder"])
    return Trace(xb, xhat, omega, m, mhat, q, z, n, y, tapes)


def backward_train(trace: Trace, stores: dict[str, ParamStore], cfg: PipelineConfig,
                   grad_xhat: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of ``sum(xhat * grad_xhat)`` for every store touched by the chain."""
    if "decoder" not in trace.tapes:
        raise nn.MissingCacheError("trace has no tapes; use forward_train")
    out: dict[str, dict[str, np.ndarray]] = {"decoder": {}, "encoder": {}}
    dec = _decoder_from_params(stores["decoder"])
    gz = dec.backward(stores["decoder"], trace.tapes["decoder"], grad_xhat, out["decoder"])
    omega = trace.omega
    inside = (omega >= 0) & (omega <= cfg.qmax)
    g_omega = gz * trace.mhat * inside
    if cfg.masker:
        gmhat = (gz * trace.q).astype(np.float64)
        mk = trace.m[..., 0] * cfg.K
        k = np.arange(cfg.K)
        window = (mk[..., None] > k) & (mk[..., None] < k + 1)
        gm = (gmhat * window).sum(axis=-1, keepdims=True) * cfg.K
        gy = _importance_backward(trace.y, trace.n, gm).astype(omega.dtype)
        out["masker"] = {}
        masker = _masker_from_params(stores["masker"])
        g_omega = g_omega + masker.backward(stores["masker"], trace.tapes["masker"], gy, out["masker"])
    enc = Encoder.from_params(stores["encoder"], cfg.alpha)
    out["encoder"] = enc.backward(stores["encoder"], trace.tapes["encoder"], g_omega.astype(omega.dtype))
    return out
