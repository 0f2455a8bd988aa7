"""Rate sweeps over the masker shift n, cubic curve fits, and target-rate inversion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bitstream import bpp

N_RANGE = (-2.0, 2.0)


@dataclass(frozen=True)
class RatePoint:
    n: float
    bpp: float
    psnr: float
    msssim: float


@dataclass(frozen=True)
class CurveFit:
    """bpp as a polynomial in n; ``coefficients[i]`` multiplies n**i."""

    coefficients: tuple[float, ...]
    rmse: float
    r2: float
    n_min: float
    n_max: float

    def __call__(self, n):
        return np.polynomial.polynomial.polyval(n, self.coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = list(self.coefficients)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CurveFit:
        return cls(tuple(float(c) for c in d["coefficients"]), float(d["rmse"]), float(d["r2"]),
                   float(d["n_min"]), float(d["n_max"]))


class RankDeficientError(ValueError):
    pass


class TargetOutOfRangeError(ValueError):
    pass


class NonMonotoneFitError(ValueError):
    pass


def n_grid(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive grid lo, lo+step, ..., hi (endpoint kept when it lands within rounding)."""
    if step <= 0:
        raise ValueError(f"grid step must be positive, got {step}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    if count < 1:
        raise ValueError(f"empty grid {lo}:{hi}:{step}")
    return [round(lo + i * step, 12) for i in range(count)]


def fit_curve(points, degree: int = 3) -> CurveFit:
    """Least-squares polynomial fit of bpp against n via the normal equations."""
    n = np.array([p.n if isinstance(p, RatePoint) else p[0] for p in points], dtype=np.float64)
    b = np.array([p.bpp if isinstance(p, RatePoint) else p[1] for p in points], dtype=np.float64)
    distinct = np.unique(n).size
    if degree < 0 or distinct < degree + 1:
        raise RankDeficientError(
            f"degree {degree} fit needs at least {degree + 1} distinct n values, got {distinct} "
            f"({len(n)} points)")
    X = np.vander(n, degree + 1, increasing=True)
    gram = X.T @ X
    if np.linalg.matrix_rank(gram) < degree + 1:
        raise RankDeficientError(f"normal matrix for degree {degree} on n={sorted(set(n.tolist()))} is singular")
    coef = np.linalg.solve(gram, X.T @ b)
    resid = b - X @ coef
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return CurveFit(tuple(float(c) for c in coef), rmse, r2, float(n.min()), float(n.max()))


def _monotone_direction(fit: CurveFit, samples: int = 2001) -> int:
    grid = np.linspace(fit.n_min, fit.n_max, samples)
    d = np.diff(fit(grid))
    if np.all(d < 0):
        return -1
    if np.all(d > 0):
        return 1
    return 0


def invert_curve(fit: CurveFit, target_bpp: float, tol: float = 1e-6) -> float:
    """n in the fitted range with curve(n) == target_bpp, by bisection."""
    lo, hi = fit.n_min, fit.n_max
    direction = _monotone_direction(fit)
    if direction == 0:
        raise NonMonotoneFitError(
            f"fitted curve is not strictly monotone on [{lo:g}, {hi:g}]; cannot invert")
    f_lo, f_hi = float(fit(lo)), float(fit(hi))
    bmin, bmax = min(f_lo, f_hi), max(f_lo, f_hi)
    if not bmin <= target_bpp <= bmax:
        raise TargetOutOfRangeError(
            f"target {target_bpp:g} bpp is outside the achievable range [{bmin:g}, {bmax:g}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = float(fit(mid))
        if f_mid == target_bpp or hi - lo < 1e-15:
            break
        if (f_mid - target_bpp) * direction < 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(float(fit(mid)) - target_bpp) >= tol:
        raise TargetOutOfRangeError(f"bisection stalled at n={mid:g} for target {target_bpp:g}")
    return mid


def sweep_n(model, images, grid, mode: str | None = None) -> list[RatePoint]:
    """Compress every image at every n; average bpp, PSNR and MS-SSIM per n (grid order)."""
    from .codec import compress, decompress
    from .imageio import to_8bit
    from .metrics import ms_ssim, psnr

    grid = list(grid)
    images = list(images)
    if not grid:
        raise ValueError("n grid is empty")
    if not images:
        raise ValueError("image set is empty")
    points = []
    for n in grid:
        rates, ps, ms = [], [], []
        for img in images:
            bs = compress(img, model, n, mode)
            rec = to_8bit(decompress(bs, model))
            rates.append(bpp(bs, img.shape[0], img.shape[1]))
            ps.append(psnr(img, rec))
            ms.append(ms_ssim(img, rec))
        points.append(RatePoint(float(n), float(np.mean(rates)), float(np.mean(ps)), float(np.mean(ms))))
    return points
