"""Command-line entry point: ``gtic <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import bitstream
from .bitstream import BitstreamError
from .checkpoint import ModelFormatError, load_model
from .codec import ModelMismatchError, compress, decompress, table_mode
from .config import ConfigError, TrainConfig, load_config
from .data import DatasetHandle, write_synthetic
from .imageio import ImageFormatError, load_image, save_image, to_8bit
from .metrics import ms_ssim, psnr
from .train import TrainingError, train
from .tunability import (CurveFit, NonMonotoneFitError, RankDeficientError, RatePoint, TargetOutOfRangeError,
                         fit_curve, invert_curve, n_grid, sweep_n)

log = logging.getLogger("gtic")

PROFILES = {"paper": TrainConfig.paper, "toy": TrainConfig.toy}


def _write_atomic(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _parse_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"--n-grid expects lo:hi:step, got {text!r}")
    lo, hi, step = (float(p) for p in parts)
    return n_grid(lo, hi, step)


def _dataset_images(directory: str) -> list[tuple[str, np.ndarray]]:
    """Readable images of a folder in sorted order; unreadable ones are skipped with a warning."""
    handle = DatasetHandle.from_dir(directory)
    out = []
    for p in handle.paths:
        try:
            out.append((os.path.basename(p), load_image(p)))
        except (OSError, ImageFormatError) as e:
            log.warning("skipping unreadable image %s: %s", p, e)
    if not out:
        raise ValueError(f"no readable images in {directory}")
    return out


def cmd_train(args) -> int:
    base = PROFILES[args.profile]()
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        cfg.seed = args.seed
    resume = load_model(args.resume) if args.resume else None
    if resume is not None:
        # the stored config wins except for the epoch budget
        resume.config.epochs = cfg.epochs
    train(DatasetHandle.from_dir(args.data), cfg, resume=resume, out=args.out,
          on_epoch=lambda e, s: log.info("epoch %d distortion %.6f", e, s["distortion"]))
    return 0


def cmd_compress(args) -> int:
    model = load_model(args.model)
    img = load_image(args.input)
    bs = compress(img, model, args.n, table_mode(model, args.fixed_code))
    data = bs.to_bytes()
    _write_atomic(args.output, data)
    print(f"{len(data)} bytes, {bitstream.bpp(len(data), img.shape[0], img.shape[1]):.4f} bpp")
    return 0


def cmd_decompress(args) -> int:
    model = load_model(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    img = decompress(data, model)
    save_image(img, args.output)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    rows = []
    for name, img in _dataset_images(args.data):
        data = compress(img, model, args.n).to_bytes()
        rec = to_8bit(decompress(data, model))
        rows.append((name, bitstream.bpp(len(data), img.shape[0], img.shape[1]), psnr(img, rec), ms_ssim(img, rec)))
    with open(args.csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["file", "bpp", "psnr", "msssim"])
        for name, b, p, m in rows:
            w.writerow([name, f"{b:.6f}", f"{p:.6f}", f"{m:.6f}"])
    print(f"mean bpp {np.mean([r[1] for r in rows]):.4f} psnr {np.mean([r[2] for r in rows]):.3f} "
          f"msssim {np.mean([r[3] for r in rows]):.5f} over {len(rows)} images")
    return 0


def cmd_rd_curve(args) -> int:
    model = load_model(args.model)
    images = [img for _, img in _dataset_images(args.data)]
    points = sweep_n(model, images, _parse_grid(args.n_grid))
    with open(args.csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n", "bpp", "psnr", "msssim"])
        for p in points:
            w.writerow([f"{p.n:g}", f"{p.bpp:.6f}", f"{p.psnr:.6f}", f"{p.msssim:.6f}"])
    return 0


def read_points(path: str) -> list[RatePoint]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"n", "bpp"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        pts = []
        for i, row in enumerate(reader, 2):
            try:
                pts.append(RatePoint(float(row["n"]), float(row["bpp"]),
                                     float(row.get("psnr") or "nan"), float(row.get("msssim") or "nan")))
            except ValueError:
                raise ValueError(f"{path}:{i}: non-numeric value in {row}") from None
    if not pts:
        raise ValueError(f"{path}: no data rows")
    return pts


def cmd_fit(args) -> int:
    fit = fit_curve(read_points(args.csv), args.degree)
    with open(args.out, "w") as f:
        json.dump(fit.to_dict(), f, indent=2)
    print(f"rmse {fit.rmse:.6g} r2 {fit.r2:.6f}")
    return 0


def cmd_target(args) -> int:
    with open(args.fit) as f:
        fit = CurveFit.from_dict(json.load(f))
    print(f"{invert_curve(fit, args.bpp):.6f}")
    return 0


def cmd_toy_data(args) -> int:
    paths = write_synthetic(args.out, args.count, args.size, args.seed or 0)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtic", description="Tunable learned image codec.")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model on a folder of .ppm images")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--profile", choices=sorted(PROFILES), default="paper",
                   help="base settings the config file overrides")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="continue from a saved model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("compress")
    s.add_argument("--input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=float, default=0.0)
    s.add_argument("--fixed-code", action="store_true", help="use the fixed unary table instead of Huffman")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("decompress")
    s.add_argument("--input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_decompress)

    s = sub.add_parser("eval")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=float, default=0.0)
    s.add_argument("--csv", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("rd-curve")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--n-grid", default="-2:2:0.5")
    s.add_argument("--csv", required=True)
    s.set_defaults(func=cmd_rd_curve)

    s = sub.add_parser("fit-tunability")
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--degree", type=int, default=3)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("target-bpp")
    s.add_argument("--fit", required=True)
    s.add_argument("--bpp", type=float, required=True)
    s.set_defaults(func=cmd_target)

    s = sub.add_parser("toy-data", help="write the synthetic toy image set")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--size", type=int, default=32)
    s.set_defaults(func=cmd_toy_data)
    return p


EXPECTED = (OSError, ValueError, ConfigError, ImageFormatError, ModelFormatError, ModelMismatchError,
            BitstreamError, TrainingError, RankDeficientError, NonMonotoneFitError, TargetOutOfRangeError)


def _join_option_values(argv: list[str]) -> list[str]:
    # "--n-grid -2:2:0.5" would otherwise read the grid as an option
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--n-grid", "--n", "--bpp") and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_option_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("gtic: error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limit = threadpool_limits(args.threads)
    else:
        limit = nullcontext()
    try:
        with limit:
            return args.func(args)
    except EXPECTED as e:
        print(f"gtic: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
