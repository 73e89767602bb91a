import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dkseg import checkpoint, data, head, losses, oracles, optim, train
from dkseg.autodiff import Tensor
from dkseg.config import ConfigError, TrainConfig, format_config, parse_config

TINY = TrainConfig(image_size=32, epochs=2, batch_size=4, channels=(4, 4, 8, 8, 8),
                   blocks_per_stage=1, d_model=8, c_d=4, seed=3)


class TestLosses:
    @pytest.mark.parametrize("seed", range(5))
    def test_match_oracles(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(0, 3, (2, 1, 3, 3))
        t = (rng.random((2, 1, 3, 3)) > 0.5).astype(float)
        assert losses.bce_loss(Tensor(z), t).item() == pytest.approx(oracles.bce(z, t), abs=1e-5)
        assert losses.dice_loss(Tensor(z), t).item() == pytest.approx(oracles.dice_loss(z, t), abs=1e-5)

    def test_coarse_stages_are_upsampled_to_target(self):
        t = np.zeros((1, 1, 8, 8))
        coarse = head.StagePrediction(Tensor(np.full((1, 1, 2, 2), -3.0)), 3)
        ref = losses.stage_loss(Tensor(np.full((1, 1, 8, 8), -3.0)), t).item()
        assert losses.total_loss([coarse], t).item() == pytest.approx(ref, abs=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            losses.dice_loss(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 3, 3)))


class TestOptim:
    @given(st.integers(1, 10_000), st.floats(1e-6, 1.0))
    def test_poly_lr_monotone_and_bounded(self, total, lr0):
        steps = np.linspace(0, total, 7).astype(int)
        lrs = [optim.poly_lr(lr0, s, total) for s in steps]
        assert lrs[0] == lr0 and lrs[-1] == 0.0
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_poly_lr_midpoint(self):
        assert optim.poly_lr(4e-4, 50, 100) == pytest.approx(4e-4 * 0.5 ** 0.9)

    def test_momentum_accumulates(self):
        p = {"a.w": np.zeros(1, np.float32)}
        g = {"a.w": np.ones(1, np.float32)}
        st_ = optim.OptimState(total_steps=10 ** 9, lr0=1.0, momentum=0.5, weight_decay=0.0)
        optim.sgd_step(p, g, st_, 0)
        optim.sgd_step(p, g, st_, 0)
        assert p["a.w"][0] == pytest.approx(-(1 + 1.5))

    def test_weight_decay_skips_biases(self):
        p = {"a.w": np.ones(1, np.float32), "a.b": np.ones(1, np.float32)}
        zero = {k: np.zeros(1, np.float32) for k in p}
        optim.sgd_step(p, zero, optim.OptimState(total_steps=10, lr0=1.0, weight_decay=0.5), 0)
        assert p["a.w"][0] == pytest.approx(0.5) and p["a.b"][0] == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            optim.sgd_step({"a.w": np.ones(2)}, {"a.w": np.ones(3)}, optim.OptimState(total_steps=1), 0)


class TestAugment:
    @given(st.integers(0, 10_000))
    def test_mask_stays_binary_and_aligned(self, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((1, 16, 16)) > 0.6).astype(np.float32)
        # image channel 0 is a copy of the mask, so geometry must agree after any transform
        image = np.concatenate([mask, rng.random((2, 16, 16))]).astype(np.float32)
        out_img, out_mask = train.augment(image, mask, rng, crop=False)
        assert set(np.unique(out_mask)) <= {0.0, 1.0}
        assert np.array_equal(out_img[0], out_mask[0])

    def test_crop_keeps_size(self):
        rng = np.random.default_rng(0)
        img, m = train.augment(np.random.random((3, 20, 20)), np.ones((1, 20, 20)), rng,
                               flip=False, rotate=False, p=1.0)
        assert img.shape == (3, 20, 20) and m.shape == (1, 20, 20) and np.all(m == 1)


class TestConfig:
    def test_roundtrip(self):
        cfg = TrainConfig(lr0=1e-3, channels=(8, 8, 16, 16, 32), use_ea=False)
        assert parse_config(format_config(cfg)) == cfg

    @pytest.mark.parametrize("text,match", [
        ("bogus = 1", "unknown key"),
        ("epochs = ten", "bad value"),
        ("epochs", "key = value"),
        ("image_size = 48", "multiple of 32"),
        ("use_ea = maybe", "bad value"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_comments_and_blanks(self):
        cfg = parse_config("# header\n\nepochs = 3  # short\nchannels = [8, 8, 8, 8, 8]\n")
        assert cfg.epochs == 3 and cfg.channels == (8,) * 5

    def test_defaults_match_reference_recipe(self):
        cfg = TrainConfig()
        assert (cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.poly_power) == (4e-4, 0.9, 1e-5, 0.9)
        assert (cfg.batch_size, cfg.c_d) == (8, 32)


class TestCheckpoint:
    def test_rejects_corruption(self):
        buf = checkpoint.dumps({"a.w": np.arange(6, dtype=np.float32).reshape(2, 3)})
        for bad, match in [(b"XXXX" + buf[4:], "magic"), (buf[:-1], "truncated"),
                           (buf + b"\0", "trailing"), (buf[:4] + b"\x02" + buf[5:], "version")]:
            with pytest.raises(checkpoint.CheckpointError, match=match):
                checkpoint.loads(bad)

    def test_layout_is_little_endian(self):
        buf = checkpoint.dumps({"x": np.array([1.0], np.float32)})
        assert buf[:4] == b"DKSG" and buf[4:8] == (1).to_bytes(4, "little")
        assert buf[-4:] == np.float32(1.0).tobytes()


@pytest.fixture(scope="module")
def tiny_samples(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    data.generate_synthetic(data.SyntheticSpec(count=20, image_size=32, seed=1), root)
    return data.load_dataset(root)


def test_train_writes_outputs_and_log_roundtrips(tiny_samples, tmp_path):
    result = train.train(TINY, tiny_samples, tmp_path)
    assert [r["epoch"] for r in result.history] == [1, 2]
    assert result.history[-1]["step"] == 2 * math.ceil(16 / 4)
    assert checkpoint.load(tmp_path / "checkpoint.dksg").keys() == result.best_params.keys()
    assert parse_config((tmp_path / "config.txt").read_text()) == TINY
    back = train.read_log(tmp_path / "metrics.csv")
    assert [r["step"] for r in back] == [r["step"] for r in result.history]
    assert all(abs(a["train_loss"] - b["train_loss"]) < 1e-6 for a, b in zip(back, result.history))


def test_train_rejects_wrong_image_size(tiny_samples):
    with pytest.raises(ValueError, match="expected 64"):
        train.train(TINY.with_(image_size=64), tiny_samples)


def test_initial_params_depend_only_on_seed():
    a, b = train.initial_params(TINY), train.initial_params(TINY.with_(epochs=9))
    assert all(np.array_equal(a[k], b[k]) for k in a)
