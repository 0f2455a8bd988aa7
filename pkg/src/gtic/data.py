"""Datasets: image folders, padding, deterministic shuffling and the synthetic toy set."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import ImageFormatError, load_image, save_image

log = logging.getLogger(__name__)


def pad_to_multiple(img: np.ndarray, multiple: int = 8) -> np.ndarray:
    """Edge-replicate the bottom/right borders up to the next multiple."""
    h, w = img.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")


@dataclass
class DatasetHandle:
    """Ordered image collection; images are loaded lazily and padded to multiples of 8."""

    paths: list[str] = field(default_factory=list)
    arrays: list[np.ndarray] | None = None
    _cache: list[np.ndarray] | None = field(default=None, repr=False)

    @classmethod
    def from_dir(cls, directory: str | os.PathLike) -> DatasetHandle:
        paths = sorted(str(p) for p in Path(directory).iterdir() if p.suffix.lower() in (".ppm", ".pnm"))
        if not paths:
            raise FileNotFoundError(f"no .ppm images in {directory}")
        return cls(paths)

    @classmethod
    def from_arrays(cls, arrays) -> DatasetHandle:
        return cls([f"<array {i}>" for i in range(len(arrays))], [np.asarray(a, np.float32) for a in arrays])

    def images(self) -> list[np.ndarray]:
        if self._cache is None:
            if self.arrays is not None:
                loaded = list(self.arrays)
            else:
                loaded = []
                for p in self.paths:
                    try:
                        loaded.append(load_image(p))
                    except (OSError, ImageFormatError) as e:
                        log.warning("skipping unreadable image %s: %s", p, e)
                if not loaded:
                    raise ValueError("every image in the dataset was unreadable")
            self._cache = [pad_to_multiple(im) for im in loaded]
        return self._cache

    def __len__(self) -> int:
        return len(self.images())

    @staticmethod
    def order(count: int, seed: int, epoch: int) -> np.ndarray:
        return np.random.default_rng([seed, epoch, 0]).permutation(count)


def crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        img = np.pad(img, ((0, max(0, size - h)), (0, max(0, size - w)), (0, 0)), mode="edge")
        h, w = img.shape[:2]
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return img[i:i + size, j:j + size]


def synthetic_images(count: int = 16, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    """Smooth colour gradients with a soft-edged disc; deterministic in ``seed``."""
    rng = np.random.default_rng([seed, 99])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    out = []
    for _ in range(count):
        c0, c1, c2 = rng.uniform(0.1, 0.9, (3, 3))
        angle = rng.uniform(0, 2 * np.pi)
        t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)
        img = c0 * (1 - t[..., None]) + c1 * t[..., None]
        cy, cx = rng.uniform(0.25, 0.75, 2)
        r = rng.uniform(0.12, 0.3)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        disc = np.clip((r - d) * size / 2 + 0.5, 0, 1)[..., None]
        img = img * (1 - disc) + c2 * disc
        out.append(img.astype(np.float32))
    return out


def write_synthetic(directory: str | os.PathLike, count: int = 16, size: int = 32, seed: int = 0) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, img in enumerate(synthetic_images(count, size, seed)):
        p = os.path.join(directory, f"toy_{i:03d}.ppm")
        save_image(img, p)
        paths.append(p)
    return paths
