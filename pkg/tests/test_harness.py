import os

import numpy as np
import pytest

from gtic import cli
from gtic.bitstream import Bitstream, decode_stream, encode_stream
from gtic.checkpoint import VERSION, Checkpoint, ModelFormatError, load_model, read_tensors, save_model, write_tensors
from gtic.codec import ModelMismatchError, analyze_image, compress, decompress
from gtic.config import ConfigError, TrainConfig, parse_config
from gtic.data import DatasetHandle, pad_to_multiple, synthetic_images, write_synthetic
from gtic.imageio import ImageFormatError, decode_ppm, encode_ppm, load_image, save_image
from gtic.train import TrainingError, train


# -- config ------------------------------------------------------------------

def test_paper_profile_values():
    c = TrainConfig.paper()
    assert (c.K, c.L, c.B, c.eta, c.kappa, c.epochs) == (16, 2, 8, 1.0, 16.0, 128)
    assert c.alpha == (0.5, 0.25, 0.25) and c.beta == (0.5, 0.25, 0.25)
    assert (c.lr_initial, c.lr_switch_epoch, c.lr_final) == (2e-3, 64, 2e-4)
    assert c.lr_at(63) == 2e-3 and c.lr_at(64) == 2e-4


def test_toy_profile():
    c = TrainConfig.toy()
    assert (c.K, c.B, c.crop) == (4, 4, 32)
    steps = c.epochs * 16 // c.B
    assert 200 <= steps <= 2000


def test_config_text_roundtrip():
    c = TrainConfig.toy(seed=9, gan=False)
    assert parse_config(c.to_text()) == c
    assert TrainConfig.from_json(c.to_json()) == c


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("Kk=4\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("K=4\nK=5\n")
    with pytest.raises(ConfigError):
        parse_config("B=0\n")
    with pytest.raises(ConfigError):
        parse_config("n_mode=fixed\nn=3\n")
    with pytest.raises(ConfigError):
        parse_config("lr_final=-1\n")
    with pytest.raises(ConfigError):
        parse_config("gan=maybe\n")
    assert parse_config("# comment\n\nK = 8  # trailing\n").K == 8


def test_no_gan_forces_eta_zero():
    assert TrainConfig.toy(gan=False).loss_weights().eta == 0.0


# -- images ------------------------------------------------------------------

def test_ppm_roundtrip(tmp_path, rng):
    img = rng.uniform(0, 1, (5, 7, 3))
    save_image(img, tmp_path / "a.ppm")
    back = load_image(tmp_path / "a.ppm")
    assert back.shape == (5, 7, 3) and np.abs(back - img).max() <= 1 / 510 + 1e-9


def test_ppm_endpoints_and_comments():
    data = b"P6\n# c\n2 1\n255\n" + bytes([255, 255, 255, 0, 0, 0])
    img = decode_ppm(data)
    assert img[0, 0].tolist() == [1.0, 1.0, 1.0] and img[0, 1].tolist() == [0.0, 0.0, 0.0]


def test_ppm_errors():
    with pytest.raises(ImageFormatError, match="P3"):
        decode_ppm(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ImageFormatError, match="magic"):
        decode_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ImageFormatError, match="truncated"):
        decode_ppm(b"P6\n2 2\n255\n\x00\x00")
    with pytest.raises(ImageFormatError, match="maxval"):
        decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")


# -- data --------------------------------------------------------------------

def test_padding():
    img = np.zeros((65, 63, 3))
    assert pad_to_multiple(img).shape == (72, 64, 3)
    x = np.arange(9.0).reshape(3, 3, 1).repeat(3, 2)
    p = pad_to_multiple(x)
    assert p.shape == (8, 8, 3) and p[7, 7, 0] == 8.0


def test_dataset_order_deterministic():
    a, b = DatasetHandle.order(16, 3, 2), DatasetHandle.order(16, 3, 2)
    np.testing.assert_array_equal(a, b)
    assert sorted(a.tolist()) == list(range(16))
    assert not np.array_equal(DatasetHandle.order(16, 3, 3), a)


def test_dataset_skips_unreadable(tmp_path, caplog):
    write_synthetic(tmp_path, 2, 16)
    (tmp_path / "zz_bad.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    imgs = DatasetHandle.from_dir(tmp_path).images()
    assert len(imgs) == 2 and "skipping" in caplog.text
    bad = tmp_path / "only"
    bad.mkdir()
    (bad / "x.ppm").write_bytes(b"junk")
    with pytest.raises(ValueError, match="unreadable"):
        DatasetHandle.from_dir(bad).images()


def test_synthetic_images_deterministic():
    a, b = synthetic_images(3, 16, 5), synthetic_images(3, 16, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(x.min() >= 0 and x.max() <= 1 for x in a)


# -- checkpoint --------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_trained(tiny_config, toy_images):
    return train(DatasetHandle.from_arrays(toy_images), tiny_config)


def test_model_roundtrip(tmp_path, tiny_trained):
    save_model(tiny_trained, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.to_bytes() == tiny_trained.to_bytes()
    assert back.epoch == 2 and len(back.history) == 2 and back.config == tiny_trained.config
    assert (tmp_path / "m").read_bytes()[:7] == b"GTICMDL"


def test_model_format_errors(tiny_trained):
    data = tiny_trained.to_bytes()
    with pytest.raises(ModelFormatError, match="magic"):
        Checkpoint.from_bytes(b"X" + data[1:])
    bumped = data[:7] + bytes([VERSION + 1]) + data[8:]
    with pytest.raises(ModelFormatError, match=f"{VERSION + 1}.*{VERSION}"):
        Checkpoint.from_bytes(bumped)
    with pytest.raises(ModelFormatError, match="truncated|overflow"):
        Checkpoint.from_bytes(data[:-3])
    with pytest.raises(ModelFormatError, match="trailing"):
        Checkpoint.from_bytes(data + b"\x00")
    huge = write_tensors({"a": np.zeros(2, np.float32)})
    huge = huge[:-8 - 4] + (10 ** 6).to_bytes(4, "little") + huge[-8:]
    with pytest.raises(ModelFormatError, match="overflow"):
        read_tensors(huge)


# -- codec -------------------------------------------------------------------

def test_compress_deterministic_and_shapes(tiny_trained, rng):
    img = rng.uniform(0, 1, (65, 63, 3)).astype(np.float32)
    a = compress(img, tiny_trained, 0.5).to_bytes()
    assert a == compress(img, tiny_trained, 0.5).to_bytes()
    bs = Bitstream.from_bytes(a)
    assert (bs.header.orig_h, bs.header.orig_w, bs.header.pad_h, bs.header.pad_w) == (65, 63, 72, 64)
    out = decompress(a, tiny_trained)
    assert out.shape == img.shape


def test_entropy_layer_lossless(tiny_trained, toy_images):
    for mode in ("fixed", "adaptive"):
        bs = compress(toy_images[0], tiny_trained, 0.0, mode)
        z, _ = analyze_image(toy_images[0], tiny_trained, 0.0)
        decoded = decode_stream(bs.to_bytes())
        np.testing.assert_array_equal(decoded, z)
        again = encode_stream(decoded, bs.table, bs.header)
        assert again.payload == bs.payload


def test_n_ordering_fixed_table(tiny_trained, toy_images):
    for img in toy_images[:4]:
        big = len(compress(img, tiny_trained, -2.0, "fixed").to_bytes())
        small = len(compress(img, tiny_trained, 2.0, "fixed").to_bytes())
        assert small <= big


def test_compress_rejects_bad_n(tiny_trained, toy_images):
    with pytest.raises(ValueError):
        compress(toy_images[0], tiny_trained, 2.5)


def test_mismatched_model_rejected(tiny_trained, tiny_config, toy_images):
    data = compress(toy_images[0], tiny_trained, 0.0).to_bytes()
    other = Checkpoint.initial(TrainConfig(**{**tiny_config.__dict__, "K": 8}))
    with pytest.raises(ModelMismatchError, match="K=4.*K=8"):
        decompress(data, other)


def test_no_entropy_ablation_uses_raw(tiny_config, toy_images):
    m = Checkpoint.initial(TrainConfig(**{**tiny_config.__dict__, "entropy": False}))
    bs = compress(toy_images[0], m, 0.0)
    assert bs.header.mode == "raw"
    np.testing.assert_array_equal(decode_stream(bs.to_bytes()), analyze_image(toy_images[0], m, 0.0)[0])


# -- training ----------------------------------------------------------------

def test_train_deterministic(tiny_config, toy_images, tiny_trained):
    again = train(DatasetHandle.from_arrays(toy_images), tiny_config)
    assert again.to_bytes() == tiny_trained.to_bytes()


def test_resume_equivalent(tiny_config, toy_images, tiny_trained):
    data = DatasetHandle.from_arrays(toy_images)
    half = train(data, TrainConfig(**{**tiny_config.__dict__, "epochs": 1}))
    resumed = Checkpoint.from_bytes(half.to_bytes())
    resumed.config.epochs = 2
    done = train(data, resume=resumed)
    assert done.to_bytes() == tiny_trained.to_bytes()


def test_no_gan_leaves_discriminator_untouched(tiny_config, toy_images):
    cfg = TrainConfig(**{**tiny_config.__dict__, "gan": False, "epochs": 1})
    init = Checkpoint.initial(cfg)
    out = train(DatasetHandle.from_arrays(toy_images), cfg)
    assert out.stores["discriminator"].equals(init.stores["discriminator"])
    assert not out.stores["decoder"].equals(init.stores["decoder"])


def test_train_empty_dataset(tiny_config):
    with pytest.raises(ValueError):
        train(DatasetHandle.from_arrays([]), tiny_config)


def test_nonfinite_aborts_with_batch_index(tiny_config, toy_images):
    imgs = [im.copy() for im in toy_images]
    for im in imgs:
        im[0, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="batch 0"):
        train(DatasetHandle.from_arrays(imgs), tiny_config)


def test_checkpoint_interval(tmp_path, tiny_config, toy_images):
    cfg = TrainConfig(**{**tiny_config.__dict__, "epochs": 1, "checkpoint_every": 1})
    train(DatasetHandle.from_arrays(toy_images), cfg, out=tmp_path / "m")
    assert load_model(tmp_path / "m").epoch == 1


# -- command line ------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory, tiny_trained):
    d = tmp_path_factory.mktemp("cli")
    write_synthetic(d / "data", 4, 32)
    save_model(tiny_trained, d / "model")
    return d


def test_cli_roundtrip(workspace, capsys):
    d = workspace
    src = d / "data" / "toy_000.ppm"
    assert cli.main(["compress", "--input", str(src), "--model", str(d / "model"), "--n", "0.5",
                     "--output", str(d / "a.gtc")]) == 0
    assert cli.main(["--seed", "1", "compress", "--input", str(src), "--model", str(d / "model"), "--n", "0.5",
                     "--output", str(d / "b.gtc")]) == 0
    assert (d / "a.gtc").read_bytes() == (d / "b.gtc").read_bytes()
    assert cli.main(["decompress", "--input", str(d / "a.gtc"), "--model", str(d / "model"),
                     "--output", str(d / "a.ppm")]) == 0
    assert load_image(d / "a.ppm").shape == load_image(src).shape
    assert cli.main(["compress", "--fixed-code", "--input", str(src), "--model", str(d / "model"),
                     "--output", str(d / "f.gtc")]) == 0
    assert Bitstream.from_bytes((d / "f.gtc").read_bytes()).header.mode == "fixed"


def test_cli_eval_rd_fit_target(workspace, capsys):
    d = workspace
    assert cli.main(["eval", "--data", str(d / "data"), "--model", str(d / "model"), "--n", "0",
                     "--csv", str(d / "e.csv")]) == 0
    lines = (d / "e.csv").read_text().splitlines()
    assert lines[0] == "file,bpp,psnr,msssim" and len(lines) == 5
    assert cli.main(["--threads", "1", "rd-curve", "--data", str(d / "data"), "--model", str(d / "model"),
                     "--n-grid", "-2:2:1", "--csv", str(d / "rd.csv")]) == 0
    rows = (d / "rd.csv").read_text().splitlines()
    assert rows[0] == "n,bpp,psnr,msssim" and len(rows) == 6
    # a synthetic, strictly monotone characteristic curve
    (d / "pts.csv").write_text("n,bpp,psnr,msssim\n" + "".join(
        f"{n},{0.3 - 0.05 * n},30,0.9\n" for n in (-2, -1, 0, 1, 2)))
    assert cli.main(["fit-tunability", "--csv", str(d / "pts.csv"), "--out", str(d / "fit.json")]) == 0
    capsys.readouterr()
    assert cli.main(["target-bpp", "--fit", str(d / "fit.json"), "--bpp", "0.35"]) == 0
    assert float(capsys.readouterr().out.strip()) == pytest.approx(-1.0, abs=1e-6)


def test_cli_rejections(workspace, tiny_config, capsys):
    d = workspace
    assert cli.main(["target-bpp", "--fit", str(d / "missing.json"), "--bpp", "0.3"]) != 0
    (d / "bad.gtc").write_bytes(b"NOPE" + bytes(40))
    assert cli.main(["decompress", "--input", str(d / "bad.gtc"), "--model", str(d / "model"),
                     "--output", str(d / "bad.ppm")]) != 0
    assert "magic" in capsys.readouterr().err
    other = Checkpoint.initial(TrainConfig(**{**tiny_config.__dict__, "K": 8}))
    save_model(other, d / "k8")
    src = d / "data" / "toy_000.ppm"
    cli.main(["compress", "--input", str(src), "--model", str(d / "model"), "--output", str(d / "c.gtc")])
    out = d / "k8.ppm"
    assert cli.main(["decompress", "--input", str(d / "c.gtc"), "--model", str(d / "k8"),
                     "--output", str(out)]) != 0
    assert not out.exists() and "K=8" in capsys.readouterr().err
    assert cli.main(["compress", "--input", str(src), "--model", str(d / "model"), "--n", "3",
                     "--output", str(d / "x.gtc")]) != 0


def test_cli_train_and_toy_data(tmp_path):
    assert cli.main(["toy-data", "--out", str(tmp_path / "d"), "--count", "4"]) == 0
    (tmp_path / "c.txt").write_text("K=4\nwidth=8\ndecoder_blocks=1\ndisc_width=8\nepochs=1\nB=4\n")
    assert cli.main(["--seed", "3", "train", "--profile", "toy", "--data", str(tmp_path / "d"),
                     "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "m")]) == 0
    m = load_model(tmp_path / "m")
    assert m.config.seed == 3 and m.epoch == 1
    (tmp_path / "bad.txt").write_text("widht=8\n")
    assert cli.main(["train", "--data", str(tmp_path / "d"), "--config", str(tmp_path / "bad.txt"),
                     "--out", str(tmp_path / "m2")]) != 0
