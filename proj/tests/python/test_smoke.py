import math

import numpy as np
import pytest

import cardiogen as cg


def test_ecg_phantom_peaks():
    signal, r_peaks, t_peaks = cg.gen_ecg(bpm=60, duration_s=10, sample_rate_hz=100, seed=1)
    assert signal.shape == (1, 1000)
    assert len(r_peaks) == 10
    assert all(t > r for r, t in zip(r_peaks, t_peaks))


def test_sample_and_metrics():
    s = cg.make_sample(3, 0)
    clip = s["clip"]
    assert clip.shape == (5, 32, 32, 1)
    assert clip.min() >= 0 and clip.max() <= 1
    assert s["ef_truth"] == pytest.approx(cg.ef_from_radii(s["r_ed"], s["r_es"]))
    assert cg.mse(clip, clip) == 0
    assert cg.ssim(clip, clip) == 1
    shifted = np.clip(clip + 0.1, 0, 1)
    assert cg.mae(clip, shifted) > 0
    est = cg.estimate_ef(clip)
    assert abs(est["ef"] - s["ef_truth"]) < 0.1
    assert min(abs(est["ed_frame"] - r) for r in s["r_frames"]) <= 1


def test_sample_overrides_and_errors():
    s = cg.make_sample(1, 2, height=16, width=16, r_ed_lo=5, r_ed_hi=6)
    assert s["clip"].shape[1:3] == (16, 16)
    with pytest.raises(cg.ConfigError):
        cg.make_sample(1, 0, no_such_key=1)
    with pytest.raises(cg.ShapeError):
        cg.mse(np.zeros((2, 4, 4), np.float32), np.zeros((2, 4, 5), np.float32))
    with pytest.raises(cg.NumericError):
        cg.estimate_ef(np.zeros((3, 8, 8), np.float32))


def test_ef_agreement():
    r = cg.ef_agreement([0.4, 0.6, 0.5], [0.3, 0.5, 0.4])
    assert r["mae"] == pytest.approx(0.1)
    assert r["rmse"] == pytest.approx(0.1)
    assert r["unit"] == "fraction"
    assert cg.ef_agreement([0.1, 0.2], [0.4, 0.4])["r2"] is None


def test_config_hash_is_stable():
    a, ha = cg.resolved_config({"seed": "3"})
    b, hb = cg.resolved_config({"seed": "3"})
    assert a == b and ha == hb
    assert "seed = 3" in a
    with pytest.raises(cg.ConfigError):
        cg.resolved_config({"bogus": "1"})


def test_cli_errors_and_missing_tokenizer(tmp_path):
    code, _, err = cg.run_cli(["train-generator", "--out", str(tmp_path / "g"),
                                "--set", "paths.tokenizer=" + str(tmp_path / "none")])
    assert code == 1
    assert err.startswith("error: missing-artifact:")
    assert "tokenizer" in err
    code, _, _ = cg.run_cli([])
    assert code == 2


def test_tiny_tokenizer_round_trip(tmp_path):
    sets = ["data.n_clips=4", "data.height=16", "data.width=16", "data.r_ed_lo=5", "data.r_ed_hi=6",
            "tokenizer.dim=16", "tokenizer.depth_spatial=1", "tokenizer.depth_temporal=1",
            "tokenizer.heads=2", "tokenizer.head_dim=8", "tokenizer.bits=6", "disc.width1=8",
            "disc.width2=8", "percep.width=8", "tok_train.steps=2", "tok_train.batch=2"]
    args = [a for s in sets for a in ("--set", s)]
    corpus, tok = tmp_path / "corpus", tmp_path / "tok"
    assert cg.run_cli(["datagen", "--out", str(corpus)] + args)[0] == 0
    code, out, err = cg.run_cli(["train-tokenizer", "--out", str(tok), "--set",
                                 "paths.corpus=" + str(corpus)] + args)
    assert code == 0, err
    assert "progress train-tokenizer" in out
    t = cg.Tokenizer.load(str(tok))
    assert t.grid == (3, 2, 2)
    assert t.vocab == 64
    clip = cg.load_clip(str(corpus / "clips" / "clip_00000" / "frames"))
    codes = t.tokenize(clip)
    assert codes.shape == (3, 2, 2)
    assert codes.max() < 64
    recon = t.decode(codes)
    assert recon.shape == clip.shape
    assert np.array_equal(t.tokenize(recon).shape, codes.shape)
    path = str(tmp_path / "r.ept")
    cg.save_clip(path, recon)
    assert np.array_equal(cg.load_clip(path), recon)
    assert math.isfinite(cg.mse(clip, recon))
