import math

import numpy as np
import pytest
import torch

import ego2front as e2f


def test_schedule_identities():
    s = e2f.NoiseSchedule.linear()
    abar = np.array(s.alpha_bars)
    assert s.steps == 1000
    assert abar[0] == pytest.approx(0.9999, rel=1e-12)
    assert np.all(np.diff(abar) < 0)
    assert np.allclose(abar, np.cumprod(1.0 - np.array(s.betas)), rtol=1e-12)
    c = e2f.NoiseSchedule.from_betas([0.1, 0.1, 0.1])
    assert c.alpha_bar(3) == pytest.approx(0.729, abs=1e-12)
    with pytest.raises(e2f.RangeError):
        s.alpha_bar(1001)


def test_noising_round_trip():
    s = e2f.NoiseSchedule.linear()
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((4, 8, 8))
    eps = rng.standard_normal((4, 8, 8))
    for t in (1, 250, 1000):
        zt = e2f.forward_noise(z0, t, eps, s)
        ab = s.alpha_bar(t)
        assert np.allclose(zt, math.sqrt(ab) * z0 + math.sqrt(1 - ab) * eps)
        assert np.abs(e2f.predict_x0_from_eps(zt, eps, t, s) - z0).max() < 1e-9
    assert e2f.sampling_timesteps(1000, 1) == [1000]
    steps = e2f.sampling_timesteps(1000, 25)
    assert steps[0] == 1000 and steps[-1] == 1 and len(steps) == 25


def test_metrics():
    mask = np.ones((16, 16))
    black, grey = np.zeros((3, 16, 16)), np.full((3, 16, 16), 0.5)
    assert e2f.psnr(black, grey, mask) == pytest.approx(6.0206, abs=1e-3)
    assert e2f.psnr(grey, grey, mask) == 99.0
    x = np.random.default_rng(1).random((3, 16, 16))
    assert e2f.ssim(x, x, mask) == 1.0
    assert e2f.perceptual_distance(x * 2 - 1, x * 2 - 1) == 0.0
    assert e2f.perceptual_distance(x * 2 - 1, -(x * 2 - 1)) > 0.0
    with pytest.raises(e2f.UserError):
        e2f.psnr(black, np.zeros((3, 8, 8)), mask)


def test_split_regions():
    m = np.zeros((1, 20, 10))
    m[0, 2:18, 3:7] = 1
    r = e2f.split_regions(m)
    assert r["upper"].sum() == 8 * 4
    assert r["lower"].sum() == 8 * 4
    assert r["full"].sum() == 16 * 4


def test_borda_and_clothing():
    orders = (
        [["UniAnimate", "StableAnimator", "ExAvatar", "MimicMotion"]] * 23
        + [["StableAnimator", "UniAnimate", "ExAvatar", "MimicMotion"]] * 6
        + [["UniAnimate", "StableAnimator", "MimicMotion", "ExAvatar"]] * 10
        + [["UniAnimate", "ExAvatar", "StableAnimator", "MimicMotion"]] * 2
    )
    scores = e2f.borda_aggregate(orders)
    assert [s["borda_score"] for s in scores] == [117, 86, 33, 10]
    assert scores[0]["mean_rank"] == pytest.approx(4 - 117 / 41)
    truth = [("pants", "tshirt")] * 4
    pred = [("pants", "tshirt"), ("pants", "sweater"), ("shorts", "tshirt"), ("pants", "tshirt")]
    assert e2f.clothing_accuracy(pred, truth)["formatted"] == "75% / 75%"


def test_pairing():
    ego = [{"id": f"e{i}", "timestamp": float(i), "path": f"e{i}.png"} for i in range(20)]
    frontal = [{"id": "f0", "timestamp": 9.5}, {"id": "f1", "timestamp": 100.0}]
    entries, dropped = e2f.pair_samples(ego, frontal, window=5.0, per_frontal=10)
    assert [e["frontal_id"] for e in entries] == ["f0"]
    assert sorted(entries[0]["ego_timestamps"]) == [float(t) for t in range(5, 15)]
    assert dropped[0][0] == "f1"
    assert e2f.assign_split("f0") in ("train", "val")


def test_augmentation():
    rng = np.random.default_rng(2)
    img = rng.random((3, 16, 16)) * 2 - 1
    mask = (rng.random((1, 16, 16)) > 0.5).astype(float)
    out, out_mask, applied, _ = e2f.augment_frontal(img, mask, 0.0, 3)
    assert not applied
    assert np.array_equal(out, img.astype(np.float32)) and np.array_equal(out_mask, mask)
    _, _, applied, tf = e2f.augment_frontal(img, mask, 1.0, 3)
    assert applied and 1.0 <= tf["zoom"] <= 1.15
    a = e2f.augment_ego(img, 1.0, 9)
    b = e2f.augment_ego(img, 1.0, 9)
    assert np.array_equal(a[0], b[0]) and a[2] == b[2] and abs(a[2]) <= 10.0


def test_config_digest():
    assert e2f.config_digest("train.steps = 10") == e2f.config_digest("train.steps = 20")
    assert e2f.config_digest("") != e2f.config_digest("loss.lambda_perc = 0")
    with pytest.raises(e2f.UserError):
        e2f.config_digest("nonsense.key = 1")


class HalfL1(torch.nn.Module):
    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return 0.5 * (a - b).abs().flatten(1).mean(1)


def test_torchscript_metric(tmp_path):
    path = str(tmp_path / "metric.pt")
    torch.jit.script(HalfL1()).save(path)
    rng = np.random.default_rng(3)
    a = rng.random((3, 8, 8)) * 2 - 1
    b = rng.random((3, 8, 8)) * 2 - 1
    expected = 0.5 * np.abs(a - b).mean()
    assert e2f.perceptual_distance(a, b, scripted_module=path) == pytest.approx(expected, rel=1e-5)
