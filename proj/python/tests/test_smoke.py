import json
import os
import subprocess

import numpy as np
import pytest

import pydfv


def test_coc_example():
    r = pydfv.coc_radius_pixels(2.0, 1.0, focal_length=0.05, aperture=0.025, pixel_pitch=1e-5)
    assert r == pytest.approx(32.894736842, abs=1e-8)
    assert pydfv.coc_radius_pixels(1.0, 1.0) == 0.0
    with pytest.raises(pydfv.ConfigError):
        pydfv.coc_radius_pixels(1.0, 0.01)


def test_synthesize_and_measure():
    s = pydfv.synthesize_sample(3, {"width": 32, "height": 32, "num_frames": 5})
    assert s["frames"].shape == (5, 3, 32, 32)
    assert list(s["focal_distances"]) == sorted(s["focal_distances"])
    assert s["depth"].shape == (32, 32)
    fm = pydfv.laplacian_focus_measure(s["frames"][0])
    assert fm.shape == (32, 32)
    assert np.all(fm >= 0)


def test_differentiate_volume_matches_numpy():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(2, 4, 6, 5, 5))
    d = pydfv.differentiate_volume(v)
    expected = v.copy()
    expected[:, :, :-1] = v[:, :, :-1] - v[:, :, 1:]
    np.testing.assert_array_equal(d, expected)


def test_regression_bounds():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(2, 5, 4, 4))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    l = np.array([0.5, 0.6, 0.8, 1.1, 2.0])
    depth, unc = pydfv.regress_depth(p, l)
    assert depth.shape == (2, 4, 4)
    assert np.all((depth >= 0.5) & (depth <= 2.0))
    assert np.all((unc >= 0) & (unc <= 0.75))
    np.testing.assert_allclose(depth, np.einsum("bnhw,n->bhw", p, l), rtol=1e-12)


def test_evaluate_perfect_prediction():
    gt = np.linspace(0.5, 2.0, 64).reshape(8, 8)
    m = pydfv.evaluate(gt, gt, np.ones_like(gt))
    assert m["mse"] == 0.0
    assert m["delta1"] == m["delta3"] == 100.0


def test_sampling():
    assert pydfv.sample_indices(10, 5) == [0, 2, 5, 7, 9]
    with pytest.raises(pydfv.ConfigError):
        pydfv.sample_indices(3, 5)


def test_model_predicts_within_range():
    model = pydfv.Model({"num_scales": 2, "spp3d_levels": 2}, seed=0)
    assert model.parameter_count > 0
    s = pydfv.synthesize_sample(5, {"width": 32, "height": 32})
    depth, unc = model.predict(s["frames"], s["focal_distances"])
    lo, hi = s["focal_distances"][0], s["focal_distances"][-1]
    assert depth.shape == (32, 32)
    assert np.all((depth >= lo) & (depth <= hi))
    probs = model.forward(s["frames"][None])
    np.testing.assert_allclose(probs[0].sum(axis=1), 1.0, atol=1e-9)


def test_cli_roundtrip(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"width": 16, "height": 16, "num_samples": 2}))
    code, out, err = pydfv.run_cli(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert code == 0, err
    assert "wrote 2 samples" in out
    stack = pydfv.read_stack(str(tmp_path / "d" / "sample_0000"))
    assert stack["frames"].shape[0] == 5
    code, _, err = pydfv.run_cli(["synth", "--config", str(tmp_path / "missing.json"), "--out", "x"])
    assert code == 2


@pytest.mark.skipif("DFV_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not_a_key": 1}))
    r = subprocess.run([os.environ["DFV_CLI"], "synth", "--config", str(bad), "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "not_a_key" in r.stderr
