"""Alternating adversarial training of encoder, masker, decoder and discriminator."""

from __future__ import annotations

import logging
import os
from typing import Callable

import numpy as np

from .adversary import Discriminator, adversarial_grads, adversarial_loss, generator_adv_term, overall_loss
from .checkpoint import HISTORY_COLUMNS, STORES, Checkpoint, save_model
from .config import TrainConfig
from .data import DatasetHandle, crop
from .nn import NonFiniteError, commit_bn_stats, optimizer_step
from .pipeline import backward_train, forward_train

log = logging.getLogger(__name__)

GENERATOR_STORES = ("encoder", "masker", "decoder")


class TrainingError(RuntimeError):
    pass


def _batch(images, idx, cfg: TrainConfig, epoch: int, b: int) -> np.ndarray:
    if cfg.crop:
        rng = np.random.default_rng([cfg.seed, epoch, b + 1, 7])
        return np.stack([crop(images[i], cfg.crop, rng) for i in idx]).astype(np.float32)
    shapes = {images[i].shape for i in idx}
    if len(shapes) > 1:
        raise ValueError(f"batch mixes image sizes {sorted(shapes)}; set crop to train on mixed sizes")
    return np.stack([images[i] for i in idx]).astype(np.float32)


def sample_n(cfg: TrainConfig, epoch: int, b: int) -> float:
    if cfg.n_mode == "fixed":
        return cfg.n
    return float(np.random.default_rng([cfg.seed, epoch, b + 1, 3]).uniform(-2.0, 2.0))


def train_step(ckpt: Checkpoint, x: np.ndarray, n: float) -> dict[str, float]:
    """One alternating update on batch ``x``; returns the batch's loss terms."""
    cfg = ckpt.config
    pcfg = cfg.pipeline()
    w = cfg.loss_weights()
    stores = ckpt.stores
    for s in stores.values():
        s.train()
    bsz = x.shape[0]
    trace = forward_train(x, stores, pcfg, n)
    xhat = trace.xhat
    diff = xhat.astype(np.float64) - x
    ld = (diff ** 2).mean(axis=(1, 2, 3))
    use_gan = cfg.gan and cfg.eta > 0
    stats = {"real_score": float("nan"), "fake_score": float("nan")}
    grad_xhat = (w.kappa * 2.0 / diff[0].size / bsz) * diff
    la = np.zeros(bsz)
    if use_gan:
        dparams = stores["discriminator"]
        disc = Discriminator.from_params(dparams)
        tape_r, tape_f = [], []
        real = disc.forward(dparams, x, tape_r)
        fake = disc.forward(dparams, xhat, tape_f)
        la = adversarial_loss(real, fake, w)
        g_real, g_fake = adversarial_grads(real, fake, w)
        dgrads: dict[str, np.ndarray] = {}
        # the discriminator ascends L_A
        disc.backward(dparams, tape_r, (-g_real / bsz).astype(x.dtype), dgrads)
        disc.backward(dparams, tape_f, (-g_fake / bsz).astype(x.dtype), dgrads)
        optimizer_step(dparams, dgrads, ckpt.optimizers["discriminator"])
        commit_bn_stats(dparams, tape_r)
        commit_bn_stats(dparams, tape_f)
        tape_g = []
        fake2 = disc.forward(dparams, xhat, tape_g)
        _, g_gen = generator_adv_term(fake2, w, cfg.generator_loss == "saturating")
        grad_xhat = grad_xhat + disc.backward(dparams, tape_g, (w.eta * g_gen / bsz).astype(x.dtype), {})
        stats = {"real_score": float(real.mean()), "fake_score": float(fake.mean())}
    grads = backward_train(trace, stores, pcfg, grad_xhat.astype(x.dtype))
    for s in GENERATOR_STORES:
        if s in grads:
            optimizer_step(stores[s], grads[s], ckpt.optimizers[s])
    commit_bn_stats(stores["encoder"], trace.tapes["encoder"])
    if "masker" in trace.tapes:
        commit_bn_stats(stores["masker"], trace.tapes["masker"])
    commit_bn_stats(stores["decoder"], trace.tapes["decoder"])
    total = overall_loss(list(zip(la.tolist(), ld.tolist())), w)
    return {"distortion": float(ld.mean()), "adversarial": float(la.mean()), "overall": total, **stats}


def train(data: DatasetHandle, cfg: TrainConfig | None = None, *, resume: Checkpoint | None = None,
          out: str | os.PathLike | None = None,
          on_epoch: Callable[[int, dict], None] | None = None) -> Checkpoint:
    """Train until ``cfg.epochs``; resuming from a checkpoint continues bit-identically."""
    ckpt = resume if resume is not None else Checkpoint.initial(cfg)
    cfg = ckpt.config
    images = data.images()
    if not images:
        raise ValueError("dataset is empty")
    count = len(images)
    for epoch in range(ckpt.epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        for s in STORES:
            ckpt.optimizers[s].lr = lr
        order = DatasetHandle.order(count, cfg.seed, epoch)
        sums = dict.fromkeys(HISTORY_COLUMNS, 0.0)
        batches = [order[i:i + cfg.B] for i in range(0, count, cfg.B)]
        for b, idx in enumerate(batches):
            x = _batch(images, idx, cfg, epoch, b)
            try:
                res = train_step(ckpt, x, sample_n(cfg, epoch, b))
            except NonFiniteError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            if not np.isfinite(res["overall"]):
                raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss {res['overall']}")
            for k in HISTORY_COLUMNS:
                sums[k] += res[k]
        row = np.array([sums[k] / len(batches) for k in HISTORY_COLUMNS], dtype=np.float32)
        ckpt.history.append(row)
        ckpt.epoch = epoch + 1
        summary = dict(zip(HISTORY_COLUMNS, row.tolist()), lr=lr)
        log.info("epoch %d: %s", epoch + 1, summary)
        if on_epoch is not None:
            on_epoch(epoch + 1, summary)
        if out is not None and cfg.checkpoint_every and ckpt.epoch % cfg.checkpoint_every == 0:
            save_model(ckpt, out)
    if out is not None:
        save_model(ckpt, out)
    return ckpt
