import time
from types import SimpleNamespace

import numpy as np
import pytest

from gtic.config import TrainConfig
from gtic.data import DatasetHandle, synthetic_images
from gtic.train import train

# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_images():
    return synthetic_images()


@pytest.fixture(scope="session")
def toy_model(toy_images):
    """No-gan toy profile trained once per session (about 1.5 minutes)."""
    history = []
    t0 = time.perf_counter()
    ckpt = train(DatasetHandle.from_arrays(toy_images), TrainConfig.toy(gan=False),
                 on_epoch=lambda e, s: history.append(s["distortion"]))
    return SimpleNamespace(ckpt=ckpt, history=history, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def tiny_config():
    """A very small model for fast end-to-end plumbing tests."""
    return TrainConfig.toy(K=4, width=8, decoder_blocks=1, disc_width=8, epochs=2, B=4, crop=32)
