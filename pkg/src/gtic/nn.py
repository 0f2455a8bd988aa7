"""Small deterministic NumPy layer engine.

Tensors are plain ``numpy.ndarray`` objects in NHWC layout. Every layer is a
pair of pure functions, :func:`layer_forward` and :func:`layer_backward`; the
forward pass fills a cache dict that the backward pass consumes. Parameters
live in a :class:`ParamStore` keyed by dotted names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

LAYER_KINDS = (
    "conv",
    "transposed-conv",
    "batchnorm",
    "relu",
    "leaky-relu",
    "sigmoid",
    "avgpool",
    "residual-block",
)


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class MissingCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    kernel: int = 1
    filters: int = 0
    stride: int = 1
    padding: int | None = None
    slope: float | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1:
            raise ValueError(f"kernel size must be >= 1, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.kind == "leaky-relu":
            if self.slope is None or not 0.0 < self.slope < 1.0:
                raise ValueError(f"leaky-relu slope must lie in (0, 1), got {self.slope}")
        elif self.slope is not None:
            raise ValueError(f"slope is only valid for leaky-relu, not {self.kind}")
        if self.kind in ("conv", "transposed-conv", "residual-block") and self.filters < 1:
            raise ValueError(f"{self.kind} {self.name!r} needs filters >= 1")

    @property
    def pad(self) -> int:
        # "same" padding: stride 1 keeps size, stride 2 halves even sizes
        return (self.kernel - 1) // 2 if self.padding is None else self.padding


def conv(name, filters, kernel=3, stride=1, padding=None) -> LayerSpec:
    return LayerSpec("conv", name, kernel, filters, stride, padding)


def tconv(name, filters, kernel=4, stride=2, padding=None) -> LayerSpec:
    return LayerSpec("transposed-conv", name, kernel, filters, stride, padding)


def batchnorm(name) -> LayerSpec:
    return LayerSpec("batchnorm", name)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def leaky_relu(slope=0.2) -> LayerSpec:
    return LayerSpec("leaky-relu", slope=slope)


def sigmoid_layer() -> LayerSpec:
    return LayerSpec("sigmoid")


def avgpool() -> LayerSpec:
    return LayerSpec("avgpool", kernel=2, stride=2)


def resblock(name, filters, kernel=3) -> LayerSpec:
    return LayerSpec("residual-block", name, kernel, filters, 1)


class ParamStore:
    """Named trainable tensors plus batchnorm running statistics."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = value

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        if name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        self.buffers[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def train(self) -> ParamStore:
        self.training = True
        return self

    def eval(self) -> ParamStore:
        self.training = False
        return self

    def copy(self, dtype=None) -> ParamStore:
        out = ParamStore()
        for k, v in self.params.items():
            out.params[k] = v.astype(dtype or v.dtype, copy=True)
        for k, v in self.buffers.items():
            out.buffers[k] = v.astype(dtype or v.dtype, copy=True)
        out.training = self.training
        return out

    def equals(self, other: ParamStore) -> bool:
        """Bitwise equality of names, shapes and values."""
        if list(self.params) != list(other.params) or list(self.buffers) != list(other.buffers):
            return False
        pairs = list(zip(self.params.values(), other.params.values()))
        pairs += list(zip(self.buffers.values(), other.buffers.values()))
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def _check_input(spec: LayerSpec, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{spec.kind} {spec.name!r} expects a rank-4 NHWC tensor, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{spec.kind} {spec.name!r} received non-finite input")


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) -> rows of (kh, kw, C)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def _col2im(cols: np.ndarray, shape: tuple, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, hp, wp, c = shape
    cols = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += cols[:, :, :, i, j, :]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, p:-p, p:-p, :]


def _conv_forward(spec, params, x, cache):
    w, b = params[spec.name + ".w"], params[spec.name + ".b"]
    k, s, p = spec.kernel, spec.stride, spec.pad
    if x.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv {spec.name!r}: input has {x.shape[3]} channels, kernel expects {w.shape[2]}")
    n, h, wd, _ = x.shape
    ho, wo = conv_out_size(h, k, s, p), conv_out_size(wd, k, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv {spec.name!r}: input {h}x{wd} too small for kernel {k}, stride {s}")
    cols = _im2col(_pad(x, p), k, s, ho, wo)
    out = cols @ w.reshape(-1, w.shape[3]) + b
    if cache is not None:
        cache["cols"] = cols
        cache["x_shape"] = x.shape
    return out.reshape(n, ho, wo, w.shape[3])


def _conv_backward(spec, params, g, cache):
    w = params[spec.name + ".w"]
    k, s, p = spec.kernel, spec.stride, spec.pad
    n, ho, wo, f = g.shape
    g2 = g.reshape(-1, f)
    grads = {
        spec.name + ".w": (cache["cols"].T @ g2).reshape(w.shape),
        spec.name + ".b": g2.sum(axis=0),
    }
    dcols = g2 @ w.reshape(-1, f).T
    xs = cache["x_shape"]
    dxp = _col2im(dcols, (xs[0], xs[1] + 2 * p, xs[2] + 2 * p, xs[3]), k, s, ho, wo)
    return _unpad(dxp, p), grads


def _tconv_forward(spec, params, x, cache):
    # weight layout (k, k, F_out, C_in): the adjoint of a conv mapping F_out -> C_in
    w, b = params[spec.name + ".w"], params[spec.name + ".b"]
    k, s, p = spec.kernel, spec.stride, spec.pad
    if x.shape[3] != w.shape[3]:
        raise ShapeError(
            f"transposed-conv {spec.name!r}: input has {x.shape[3]} channels, kernel expects {w.shape[3]}")
    n, h, wd, c = x.shape
    f = w.shape[2]
    hp, wp = (h - 1) * s + k, (wd - 1) * s + k
    if hp - 2 * p < 1 or wp - 2 * p < 1:
        raise ShapeError(f"transposed-conv {spec.name!r}: padding {p} too large for input {h}x{wd}")
    x2 = x.reshape(-1, c)
    cols = x2 @ w.reshape(-1, c).T
    out = _unpad(_col2im(cols, (n, hp, wp, f), k, s, h, wd), p) + b
    if cache is not None:
        cache["x2"] = x2
        cache["x_shape"] = x.shape
    return out


def _tconv_backward(spec, params, g, cache):
    w = params[spec.name + ".w"]
    k, s, p = spec.kernel, spec.stride, spec.pad
    n, h, wd, c = cache["x_shape"]
    gcols = _im2col(_pad(g, p), k, s, h, wd)
    grads = {
        spec.name + ".w": (gcols.T @ cache["x2"]).reshape(w.shape),
        spec.name + ".b": g.sum(axis=(0, 1, 2)),
    }
    dx = (gcols @ w.reshape(-1, c)).reshape(n, h, wd, c)
    return dx, grads


def _bn_forward(spec, params, x, cache):
    gamma, beta = params[spec.name + ".gamma"], params[spec.name + ".beta"]
    if x.shape[3] != gamma.shape[0]:
        raise ShapeError(
            f"batchnorm {spec.name!r}: input has {x.shape[3]} channels, expected {gamma.shape[0]}")
    if params.training:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
    else:
        mean = params.buffers[spec.name + ".running_mean"].astype(x.dtype)
        var = params.buffers[spec.name + ".running_var"].astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    if cache is not None:
        cache["xhat"] = xhat
        cache["inv_std"] = inv_std
        cache["training"] = params.training
        if params.training:
            cache["stats"] = (spec.name, mean, var)
    return xhat * gamma + beta


def _bn_backward(spec, params, g, cache):
    gamma = params[spec.name + ".gamma"]
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    grads = {
        spec.name + ".gamma": (g * xhat).sum(axis=(0, 1, 2)),
        spec.name + ".beta": g.sum(axis=(0, 1, 2)),
    }
    dxhat = g * gamma
    if not cache["training"]:
        return dxhat * inv_std, grads
    m = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
    dx = (inv_std / m) * (
        m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, grads


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _res_parts(spec, params):
    c1 = conv(spec.name + ".conv1", spec.filters, spec.kernel)
    c2 = conv(spec.name + ".conv2", spec.filters, spec.kernel)
    bn = batchnorm(spec.name + ".bn")
    # 1x1 projection on the skip path only when channel counts differ
    proj = conv(spec.name + ".proj", spec.filters, 1) if spec.name + ".proj.w" in params else None
    return c1, c2, bn, proj


def _res_forward(spec, params, x, cache):
    # relu(skip(x) + bn(conv2(relu(conv1(x)))))
    c1, c2, bn, proj = _res_parts(spec, params)
    sub = {k: ({} if cache is not None else None) for k in ("c1", "c2", "bn", "proj")}
    h = _conv_forward(c1, params, x, sub["c1"])
    a = np.maximum(h, 0)
    h2 = _conv_forward(c2, params, a, sub["c2"])
    b = _bn_forward(bn, params, h2, sub["bn"])
    skip = _conv_forward(proj, params, x, sub["proj"]) if proj is not None else x
    if skip.shape != b.shape:
        raise ShapeError(
            f"residual-block {spec.name!r}: skip shape {skip.shape} != branch shape {b.shape}")
    pre = skip + b
    if cache is not None:
        cache.update(sub=sub, h=h, pre=pre)
    return np.maximum(pre, 0)


def _res_backward(spec, params, g, cache):
    c1, c2, bn, proj = _res_parts(spec, params)
    sub = cache["sub"]
    g = g * (cache["pre"] > 0)
    grads = {}
    db, gr = _bn_backward(bn, params, g, sub["bn"])
    grads.update(gr)
    da, gr = _conv_backward(c2, params, db, sub["c2"])
    grads.update(gr)
    dh = da * (cache["h"] > 0)
    dx, gr = _conv_backward(c1, params, dh, sub["c1"])
    grads.update(gr)
    if proj is not None:
        dskip, gr = _conv_backward(proj, params, g, sub["proj"])
        grads.update(gr)
        dx = dx + dskip
    else:
        dx = dx + g
    return dx, grads


def _avgpool_forward(spec, x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool needs even spatial dims, got {h}x{w}")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def layer_forward(spec: LayerSpec, params: ParamStore, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Run one layer. Pass a dict as ``cache`` to enable :func:`layer_backward`."""
    _check_input(spec, x)
    if cache is not None:
        cache["x"] = x
    kind = spec.kind
    if kind == "conv":
        return _conv_forward(spec, params, x, cache)
    if kind == "transposed-conv":
        return _tconv_forward(spec, params, x, cache)
    if kind == "batchnorm":
        return _bn_forward(spec, params, x, cache)
    if kind == "residual-block":
        return _res_forward(spec, params, x, cache)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky-relu":
        return np.where(x > 0, x, spec.slope * x)
    if kind == "sigmoid":
        y = sigmoid(x)
        if cache is not None:
            cache["y"] = y
        return y
    return _avgpool_forward(spec, x)


def layer_backward(spec: LayerSpec, params: ParamStore, x: np.ndarray, grad_output: np.ndarray,
                   cache: dict | None) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradient of ``sum(layer(x) * grad_output)`` w.r.t. ``x`` and the layer's parameters."""
    if not cache or "x" not in cache:
        raise MissingCacheError(f"no cached forward activations for {spec.kind} {spec.name!r}")
    if cache["x"].shape != x.shape or grad_output.shape[:1] != x.shape[:1]:
        raise ShapeError(f"{spec.kind} {spec.name!r}: backward shapes do not match the cached forward")
    kind = spec.kind
    g = grad_output
    if kind == "conv":
        return _conv_backward(spec, params, g, cache)
    if kind == "transposed-conv":
        return _tconv_backward(spec, params, g, cache)
    if kind == "batchnorm":
        return _bn_backward(spec, params, g, cache)
    if kind == "residual-block":
        return _res_backward(spec, params, g, cache)
    if kind == "relu":
        return g * (x > 0), {}
    if kind == "leaky-relu":
        return np.where(x > 0, g, spec.slope * g), {}
    if kind == "sigmoid":
        y = cache["y"]
        return g * y * (1.0 - y), {}
    up = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
    return up * 0.25, {}


def init_layer(spec: LayerSpec, params: ParamStore, in_channels: int, rng: np.random.Generator,
               dtype=np.float32) -> int:
    """Create the layer's parameters in ``params``; return its output channel count."""

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    kind, k = spec.kind, spec.kernel
    if kind == "conv":
        fan_in = k * k * in_channels
        params.add(spec.name + ".w", uniform((k, k, in_channels, spec.filters), fan_in))
        params.add(spec.name + ".b", uniform((spec.filters,), fan_in))
        return spec.filters
    if kind == "transposed-conv":
        # each output pixel sees about (k/stride)^2 input taps
        fan_in = max(1, (k // spec.stride) ** 2) * in_channels
        params.add(spec.name + ".w", uniform((k, k, spec.filters, in_channels), fan_in))
        params.add(spec.name + ".b", uniform((spec.filters,), fan_in))
        return spec.filters
    if kind == "batchnorm":
        params.add(spec.name + ".gamma", np.ones(in_channels, dtype))
        params.add(spec.name + ".beta", np.zeros(in_channels, dtype))
        params.add_buffer(spec.name + ".running_mean", np.zeros(in_channels, dtype))
        params.add_buffer(spec.name + ".running_var", np.ones(in_channels, dtype))
        return in_channels
    if kind == "residual-block":
        c1, c2, bn, _ = _res_parts(spec, {})
        init_layer(c1, params, in_channels, rng, dtype)
        init_layer(c2, params, spec.filters, rng, dtype)
        init_layer(bn, params, spec.filters, rng, dtype)
        if in_channels != spec.filters:
            init_layer(conv(spec.name + ".proj", spec.filters, 1), params, in_channels, rng, dtype)
        return spec.filters
    return in_channels


def iter_bn_stats(cache) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
    """Yield every (name, batch_mean, batch_var) recorded in a nested cache."""
    if isinstance(cache, dict):
        if "stats" in cache:
            yield cache["stats"]
        for v in cache.values():
            if isinstance(v, (dict, list, tuple)):
                yield from iter_bn_stats(v)
    elif isinstance(cache, (list, tuple)):
        for v in cache:
            yield from iter_bn_stats(v)


def commit_bn_stats(params: ParamStore, cache) -> None:
    """Fold batch statistics recorded during a train-mode forward into the running averages."""
    for name, mean, var in iter_bn_stats(cache):
        rm = params.buffers[name + ".running_mean"]
        rv = params.buffers[name + ".running_var"]
        params.buffers[name + ".running_mean"] = (BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mean).astype(rm.dtype)
        params.buffers[name + ".running_var"] = (BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var).astype(rv.dtype)


def accumulate(into: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for k, v in grads.items():
        if k in into:
            into[k] = into[k] + v
        else:
            into[k] = v


@dataclass
class Sequential:
    """A chain of layers sharing one parameter store."""

    layers: list[LayerSpec]

    def build(self, params: ParamStore, in_channels: int, rng: np.random.Generator) -> int:
        c = in_channels
        for spec in self.layers:
            c = init_layer(spec, params, c, rng)
        return c

    def forward(self, params: ParamStore, x: np.ndarray, tape: list | None = None) -> np.ndarray:
        for spec in self.layers:
            cache = {} if tape is not None else None
            x = layer_forward(spec, params, x, cache)
            if tape is not None:
                tape.append(cache)
        return x

    def backward(self, params: ParamStore, tape: list, grad: np.ndarray,
                 grads: dict[str, np.ndarray]) -> np.ndarray:
        if len(tape) != len(self.layers):
            raise MissingCacheError("tape does not match this network; run forward with a tape first")
        for spec, cache in zip(reversed(self.layers), reversed(tape)):
            grad, g = layer_backward(spec, params, cache["x"], grad, cache)
            accumulate(grads, g)
        return grad


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e < self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def __str__(self):
        rows = [f"  {k:<32s} {v:.3e}" for k, v in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        return f"gradient check {status} (tol {self.tol:g})\n" + "\n".join(rows)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max-norm error relative to the larger gradient, floored for identically-zero gradients."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(f, arr: np.ndarray, step: float, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def gradient_check(forward, backward, x: np.ndarray, params: ParamStore, step: float = 1e-5,
                   tol: float = 1e-3, seed: int = 0, max_coords: int | None = None) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``forward``.

    ``forward(params, x) -> out`` and ``backward(params, x, grad_out) -> (dx, grads)``.
    The scalar loss is ``sum(out * R)`` for a fixed random ``R``; a plain sum is
    degenerate for normalizing layers.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"step must lie in [1e-6, 1e-4], got {step}")
    rng = np.random.default_rng(seed)
    params = params.copy(np.float64)
    x = np.array(x, dtype=np.float64)
    proj = rng.standard_normal(forward(params, x).shape)

    def loss():
        return float((forward(params, x) * proj).sum())

    dx, grads = backward(params, x, proj)

    def coords(size):
        if max_coords is None or size <= max_coords:
            return None
        return rng.choice(size, max_coords, replace=False)

    errors = {}
    c = coords(x.size)
    num = numeric_gradient(loss, x, step, c)
    errors["input"] = _masked_error(dx, num, c)
    for name in params.names():
        arr = params.params[name]
        c = coords(arr.size)
        num = numeric_gradient(loss, arr, step, c)
        errors[name] = _masked_error(grads.get(name, np.zeros_like(arr)), num, c)
    return GradCheckReport(errors, tol)


def _masked_error(analytic, numeric, coords):
    if coords is None:
        return relative_error(analytic, numeric)
    return relative_error(analytic.reshape(-1)[coords], numeric.reshape(-1)[coords])


def finite_diff_check(spec: LayerSpec, params: ParamStore, x: np.ndarray, step: float = 1e-5,
                      tol: float = 1e-3, seed: int = 0) -> GradCheckReport:
    """Check :func:`layer_backward` for one layer in 64-bit arithmetic."""

    def fwd(p, inp):
        return layer_forward(spec, p, inp)

    def bwd(p, inp, g):
        cache = {}
        layer_forward(spec, p, inp, cache)
        return layer_backward(spec, p, inp, g, cache)

    return gradient_check(fwd, bwd, x, params, step, tol, seed)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")


def optimizer_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """Update ``params`` in place. Non-finite gradients leave everything untouched."""
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name!r}; parameters not updated")
    state.step += 1
    if state.algorithm == "sgd":
        for name, g in grads.items():
            p = params.params[name]
            params.params[name] = (p - state.lr * g).astype(p.dtype)
        return
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for name, g in grads.items():
        p = params.params[name]
        g = g.astype(p.dtype)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = (b1 * m + (1 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1 - b2) * g * g).astype(p.dtype)
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params.params[name] = (p - update).astype(p.dtype)
