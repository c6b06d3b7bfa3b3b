import numpy as np
import pytest
from PIL import Image

from pggan import checkpoint as ckpt
from pggan.cli import main
from pggan.config import ConfigError, RunConfig, load_config, parse_config_text
from pggan.data import load_dataset, load_folder, procedural, read_image, write_image

TINY = """
# small enough for unit tests
base_channels = 4
disc_channels = 4
num_residual = 2
batch_size = 2
data = stripes:12
holdout = 4
steps = 4
log_every = 1
checkpoint_every = 2
sample_every = 2
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


# ---------------------------------------------------------------------------
# datasets and image files

def test_procedural_stripes():
    ds = procedural("stripes", 64, 32, seed=0)
    assert ds.images.shape == (64, 3, 32, 32)
    assert ds.images.min() >= -1 and ds.images.max() <= 1
    assert len({im.tobytes() for im in ds.images}) == 64
    np.testing.assert_array_equal(ds.images, procedural("stripes", 64, 32, seed=0).images)
    assert not np.array_equal(ds.images, procedural("stripes", 64, 32, seed=1).images)


def test_same_seed_same_first_batch():
    a = load_dataset("textures:40", 32, seed=4)
    b = load_dataset("textures:40", 32, seed=4)
    assert a.checksum() == b.checksum()
    assert a.checksum() != load_dataset("textures:40", 32, seed=5).checksum()


def test_split_is_disjoint_and_deterministic():
    ds = procedural("mixed", 20, 32, 0)
    tr, ho = ds.split(5)
    assert len(tr) == 15 and len(ho) == 5
    rows = {im.tobytes() for im in tr.images}
    assert not rows & {im.tobytes() for im in ho.images}
    np.testing.assert_array_equal(ho.images, ds.split(5)[1].images)


def test_folder_skips_corrupt(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        Image.fromarray(rng.integers(0, 256, size=(40, 48, 3), dtype=np.uint8)).save(tmp_path / f"ok{i}.png")
    (tmp_path / "broken.png").write_bytes(b"not an image")
    ds = load_folder(tmp_path, 32)
    assert len(ds) == 3 and ds.skipped == 1 and ds.images.shape[1:] == (3, 32, 32)


def test_folder_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_folder(tmp_path, 32)
    with pytest.raises(ValueError):
        load_dataset("nonsense", 32)


@pytest.mark.parametrize("suffix", [".ppm", ".png"])
def test_image_round_trip_lossless(tmp_path, suffix):
    px = np.random.default_rng(1).integers(0, 256, size=(12, 10, 3), dtype=np.uint8)
    Image.fromarray(px).save(tmp_path / f"a{suffix}")
    x = read_image(tmp_path / f"a{suffix}")
    write_image(tmp_path / f"b{suffix}", x)
    np.testing.assert_array_equal(read_image(tmp_path / f"b{suffix}"), x)
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / f"b{suffix}")), px)


# ---------------------------------------------------------------------------
# configuration

def test_config_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("variant = res\nseed = 3\nlambda1 = 0.9  # comment\n")
    cfg = load_config(str(path), {"seed": 7, "steps": None})
    assert cfg.variant == "res" and cfg.seed == 7 and cfg.lambda1 == 0.9 and cfg.steps == RunConfig().steps
    assert parse_config_text(cfg.dumps()) == {k: v for k, v in vars(cfg).items()}


@pytest.mark.parametrize("text", ["variant = vgg", "image_size = 48", "lambda2 = -1", "mask = hexagon",
                                  "shared_depth = 5", "bogus = 1", "steps = many", "no equals sign"])
def test_config_rejections(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


# ---------------------------------------------------------------------------
# command line

def test_describe_prints_schedule_and_rf(capsys):
    assert main(["describe", "--variant", "dres"]) == 0
    out = capsys.readouterr().out
    assert "dilation schedule: [1, 2, 4, 8]" in out
    assert "residual stack receptive field: dres 39 px vs type-a stack of equal depth 17 px" in out


def test_invalid_config_exits_nonzero(capsys):
    assert main(["describe", "--image-size", "40"]) == 2
    assert "image_size" in capsys.readouterr().err


def test_train_outputs_and_resume(tmp_path, tiny_cfg):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--out", str(out)]) == 0
    for name in ("config.txt", "losses.csv", "checkpoints/last.ckpt", "checkpoints/step_000002.ckpt",
                 "samples/step_000004.png"):
        assert (out / name).exists(), name
    lines = (out / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,l_rec,l_g_adv,l_p_adv,l_joint" and len(lines) == 5
    grid = np.asarray(Image.open(out / "samples/step_000004.png"))
    assert grid.shape == (2 + 2 * 34, 2 + 5 * 34, 3)

    # resume from the middle checkpoint reproduces the unbroken log
    out2 = tmp_path / "resumed"
    assert main(["train", "--config", tiny_cfg, "--out", str(out2), "--steps", "2"]) == 0
    assert main(["train", "--config", tiny_cfg, "--out", str(out2),
                 "--resume", str(out2 / "checkpoints/last.ckpt")]) == 0
    assert (out2 / "losses.csv").read_text() == (out / "losses.csv").read_text()
    assert (out2 / "checkpoints/last.ckpt").read_bytes() == (out / "checkpoints/last.ckpt").read_bytes()


def test_train_nan_abort_keeps_last_good_checkpoint(tmp_path, tiny_cfg, monkeypatch, capsys):
    import pggan.training as T

    real_step = T.train_step
    calls = {"n": 0}

    def flaky(state, batch, weights=None):
        calls["n"] += 1
        if calls["n"] == 3:
            raise T.NonFiniteLossError("non-finite loss: injected")
        return real_step(state, batch, weights)

    monkeypatch.setattr(T, "train_step", flaky)
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--out", str(out)]) == 3
    assert "diverged" in capsys.readouterr().err
    assert ckpt.checkpoint_load(out / "checkpoints/last.ckpt").step == 2


def test_inpaint_empty_mask_reproduces_input(tmp_path, tiny_cfg):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--out", str(out), "--steps", "1"]) == 0
    px = np.random.default_rng(2).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    Image.fromarray(px).save(tmp_path / "img.png")
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(tmp_path / "empty.png")
    Image.fromarray(np.full((32, 32), 255, np.uint8)).save(tmp_path / "full.png")
    args = ["inpaint", "--checkpoint", str(out / "checkpoints/last.ckpt"), str(tmp_path / "img.png")]
    assert main(args + ["--mask-image", str(tmp_path / "empty.png"), "--out", str(tmp_path / "o1")]) == 0
    got = np.asarray(Image.open(tmp_path / "o1/img.png")).astype(int)
    assert np.abs(got - px).max() <= 1
    assert main(args + ["--mask-image", str(tmp_path / "full.png"), "--out", str(tmp_path / "o2")]) == 0
    assert not np.array_equal(np.asarray(Image.open(tmp_path / "o2/img.png")), px)


def test_eval_emits_four_metric_report(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_cfg, "--out", str(out), "--steps", "1"]) == 0
    ev = tmp_path / "eval"
    assert main(["eval", "--config", tiny_cfg, "--checkpoint", str(out / "checkpoints/last.ckpt"),
                 "--out", str(ev)]) == 0
    text = capsys.readouterr().out
    assert "L1 Loss" in text and "psnr(dB)" in text
    assert (ev / "metrics.csv").read_text().startswith("image_id,l1,l2,psnr,ssim\n")
    assert main(["eval", "--config", tiny_cfg, "--out", str(tmp_path / "base")]) == 0
    assert "constant-mean fill" in (tmp_path / "base/metrics.txt").read_text()


def test_ablate_shared_step_grid(tmp_path, tiny_cfg):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", tiny_cfg, "--out", str(out), "--steps", "3"]) == 0
    grids = []
    for kind in ("global", "patch", "pggan"):
        rows = (out / kind / "losses.csv").read_text().splitlines()
        grids.append([r.split(",")[0] for r in rows])
    assert grids[0] == grids[1] == grids[2] == ["step", "1", "2", "3"]
    # the global run has no patch loss, the patch run no global loss
    assert (out / "global/losses.csv").read_text().splitlines()[1].split(",")[3] == "0.0"
    assert (out / "patch/losses.csv").read_text().splitlines()[1].split(",")[2] == "0.0"
    assert (out / "ablation_grid.png").exists()
    text = (out / "ablation.txt").read_text()
    assert all(f"{k} D" in text for k in ("global", "patch", "pggan"))
