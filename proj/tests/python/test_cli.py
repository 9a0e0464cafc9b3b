import json
import subprocess

import numpy as np
import pytest


def run(cli, *args, check=True):
    r = subprocess.run([cli, *map(str, args)], capture_output=True, text=True)
    if check and r.returncode != 0:
        raise AssertionError(f"exit {r.returncode}\n{r.stdout}\n{r.stderr}")
    return r


def read_pfm(path):
    with open(path, "rb") as f:
        assert f.readline().strip() == b"PF"
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w, 3)[::-1]


def test_version(cli):
    assert run(cli, "--version").stdout.strip()


def test_synth_toy_layout(cli, scenes_dir, tmp_path):
    out = tmp_path / "toy"
    run(cli, "synth", scenes_dir / "toy_hdr.json", out, "--threads", 2)
    train = json.loads((out / "train" / "poses.json").read_text())
    test = json.loads((out / "test" / "poses.json").read_text())
    assert len(train["frames"]) == 20
    assert len(test["frames"]) == 5
    assert (out / "gt_cloud.nhgc").exists()
    img = read_pfm(out / "train" / train["frames"][0]["file"])
    assert img.shape == (64, 64, 3)
    assert np.isfinite(img).all() and img.min() >= 0


def test_synth_refuses_overwrite(cli, small_spec, tmp_path):
    out = tmp_path / "d"
    run(cli, "synth", small_spec, out)
    r = run(cli, "synth", small_spec, out, check=False)
    assert r.returncode == 2
    assert "--force" in r.stderr
    run(cli, "synth", small_spec, out, "--force")


def test_synth_bayer(cli, small_spec, tmp_path):
    out = tmp_path / "raw"
    run(cli, "synth", small_spec, out, "--mode", "bayer")
    frames = json.loads((out / "train" / "poses.json").read_text())["frames"]
    assert frames[0]["file"].endswith(".pgm")


def test_train_render_eval(cli, small_spec, tmp_path):
    data, run_dir, renders = tmp_path / "d", tmp_path / "run", tmp_path / "renders"
    run(cli, "synth", small_spec, data)
    run(cli, "train", data, run_dir, "--iterations", 20, "--log-every", 5,
        "--num-gaussians", 64, "--seed", 1)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert manifest["scene_spec_hash"]
    records = [json.loads(l) for l in (run_dir / "metrics.ndjson").read_text().splitlines()]
    assert [r["iter"] for r in records][-1] == 20
    assert all(np.isfinite(r["loss"]) for r in records)

    run(cli, "render", run_dir / "cloud.nhgc", data / "test" / "poses.json", renders, "--preview")
    assert len(list(renders.glob("*.pfm"))) == 2
    assert len(list(renders.glob("*.ppm"))) == 2

    r = run(cli, "eval", run_dir / "cloud.nhgc", data, "--split", "test")
    metrics = json.loads((run_dir / "eval_test.json").read_text())
    assert "mu-PSNR" in r.stdout
    assert len(metrics["views"]) == 2


def test_train_zero_iterations(cli, small_spec, tmp_path):
    run(cli, "synth", small_spec, tmp_path / "d")
    run(cli, "train", tmp_path / "d", tmp_path / "run", "--iterations", 0)
    assert (tmp_path / "run" / "cloud.nhgc").exists()


def test_eval_ground_truth_is_capped(cli, small_spec, tmp_path):
    data = tmp_path / "d"
    run(cli, "synth", small_spec, data)
    out = tmp_path / "gt_eval.json"
    run(cli, "eval", data / "gt_cloud.nhgc", data, "--json", out)
    metrics = json.loads(out.read_text())
    assert metrics["mean"]["mu_psnr"] == pytest.approx(99.0)


def test_render_ground_truth_matches_dataset(cli, small_spec, tmp_path):
    data = tmp_path / "d"
    run(cli, "synth", small_spec, data)
    run(cli, "render", data / "gt_cloud.nhgc", data / "test" / "poses.json", tmp_path / "r")
    frame = json.loads((data / "test" / "poses.json").read_text())["frames"][0]["file"]
    stem = frame.rsplit(".", 1)[0]
    # The dataset is rendered in double precision, the CLI in float.
    np.testing.assert_allclose(read_pfm(tmp_path / "r" / f"{stem}.pfm"),
                               read_pfm(data / "test" / frame), rtol=1e-5, atol=1e-7)


def test_render_background_and_empty_poses(cli, small_spec, tmp_path):
    data = tmp_path / "d"
    run(cli, "synth", small_spec, data)
    empty = tmp_path / "empty.json"
    poses = json.loads((data / "test" / "poses.json").read_text())
    empty.write_text(json.dumps(dict(poses, frames=[])))
    r = run(cli, "render", data / "gt_cloud.nhgc", empty, tmp_path / "none")
    assert "rendered 0 views" in r.stdout

    run(cli, "render", data / "gt_cloud.nhgc", data / "test" / "poses.json", tmp_path / "bg",
        "--background", "0.25,0.5,1")
    img = read_pfm(next((tmp_path / "bg").glob("*.pfm")))
    corner = img[0, 0]
    assert img.max() > 0
    assert np.allclose(corner, [0.25, 0.5, 1.0], atol=1e-3)


def test_exit_codes(cli, small_spec, tmp_path):
    data = tmp_path / "d"
    run(cli, "synth", small_spec, data)

    # Configuration problems: 2
    assert run(cli, "train", data, tmp_path / "a", "--sh-degree", 9, check=False).returncode == 2
    assert run(cli, "train", data, tmp_path / "b", "--color-model", "rgb", check=False).returncode == 2
    assert run(cli, "frobnicate", check=False).returncode == 2

    # Missing or malformed inputs: 3
    assert run(cli, "eval", tmp_path / "missing.nhgc", data, check=False).returncode == 3
    bad = tmp_path / "bad.nhgc"
    bad.write_bytes(b"not a cloud")
    assert run(cli, "eval", bad, data, check=False).returncode == 3

    # Diverging optimization: 4
    cfg = tmp_path / "diverge.json"
    cfg.write_text(json.dumps({"lr": {"luminance": 1e30, "opacity": 1e30}, "iterations": 50}))
    r = run(cli, "train", data, tmp_path / "c", "--config", cfg, check=False)
    assert r.returncode == 4, r.stderr
    assert "iteration" in r.stderr
