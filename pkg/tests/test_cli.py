import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from ssgrasp.cli import run
from ssgrasp.io import hash_tree, read_json, read_ssgt, write_ssgt

DATA_CFG = {"version": 1, "seed": 0,
            "dataset": {"shapes_per_category": 2, "scales_per_shape": 2, "n_points": 64}}
TRAIN_CFG = {"version": 1,
             "model": {"n_points": 64, "embed_dim": 8, "encoder_widths": [16],
                       "decoder_widths": [32], "batch_size": 4},
             "loss": {"theta_chamfer": 0.05, "theta_nn": 0.1}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    dc, tc = _write(root / "data.json", DATA_CFG), _write(root / "train.json", TRAIN_CFG)
    out = {"root": root, "data_cfg": dc, "train_cfg": tc}
    assert run(["generate-data", "--config", dc, "--out", str(root / "d")]) == 0
    assert run(["train-ae", "--config", tc, "--data", str(root / "d"), "--out", str(root / "ck"),
                "--steps", "8", "--threads", "1"]) == 0
    assert run(["synth-scene", "--data", str(root / "d"), "--ckpt", str(root / "ck"),
                "--out", str(root / "sc"), "--frames", "2", "--objects", "3"]) == 0
    scenes = sorted(str(p) for p in (root / "sc").glob("scene_*.ssgt"))
    assert run(["compose-scene", "--scene", *scenes, "--ckpt", str(root / "ck"),
                "--out", str(root / "pr")]) == 0
    assert run(["eval-metrics", "--pred", str(root / "pr" / "scene.json"),
                "--gt", str(root / "sc" / "gt.json"), "--out", str(root / "ev" / "r.json")]) == 0
    return out


def test_pipeline_artifacts(pipeline):
    root = pipeline["root"]
    man = read_json(root / "d" / "manifest.json")
    assert len(man["samples"]) == 12
    for d in ("d", "ck", "sc", "pr", "ev"):
        prov = read_json(root / d / "provenance.json")
        assert prov["package_version"] and len(prov["config_hash"]) == 64
    ck = read_json(root / "ck" / "checkpoint.json")
    assert ck["dataset_hash"] == man["hash"]
    log = [json.loads(line) for line in open(root / "ck" / "train_log.jsonl")]
    assert sum(e["type"] == "step" for e in log) == 8
    scene = read_json(root / "pr" / "scene.json")
    assert len(scene["objects"]) == 6
    report = read_json(root / "ev" / "r.json")
    assert set(report["pose_ap"]) == {"5deg5cm", "5deg10cm", "10deg5cm", "10deg10cm"}
    assert set(report["iou_ap"]) == {"iou25", "iou50"}
    assert (root / "ev" / "r.csv").read_text().startswith("iou25,iou50")


def test_scene_tensor_layout(pipeline):
    T = read_ssgt(pipeline["root"] / "sc" / "scene_000.ssgt")
    assert T.ndim == 3 and T.shape[:2] == (60, 80) and T.shape[2] == 2 + 10 + 8
    assert T[..., 0].max() <= 1.0


def test_eval_ae_and_export(pipeline, tmp_path):
    root = pipeline["root"]
    assert run(["eval-ae", "--data", str(root / "d"), "--ckpt", str(root / "ck"),
                "--out", str(tmp_path / "ae.json")]) == 0
    rep = read_json(tmp_path / "ae.json")
    assert rep["n_samples"] == 12 and 0 <= rep["gs_agreement_mean"] <= 1
    assert run(["export", "--data", str(root / "d"), "--sample", "3", "--ckpt",
                str(root / "ck"), "--out", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "sample_000003.ply").exists()
    assert (tmp_path / "ex" / "sample_000003_recon_grasps.json").exists()
    assert run(["export", "--data", str(root / "d"), "--sample", "99",
                "--out", str(tmp_path / "ex")]) == 2


def test_label_grasps_is_idempotent(pipeline, tmp_path):
    d = tmp_path / "d"
    shutil.copytree(pipeline["root"] / "d", d)
    before = read_json(d / "manifest.json")["hash"]
    assert run(["label-grasps", "--data", str(d)]) == 0
    assert read_json(d / "manifest.json")["hash"] == before


def test_determinism_generate_train_eval(pipeline, tmp_path):
    root = pipeline["root"]
    for k in (1, 2):
        base = tmp_path / f"run{k}"
        assert run(["generate-data", "--config", pipeline["data_cfg"],
                    "--out", str(base / "d")]) == 0
        assert run(["train-ae", "--config", pipeline["train_cfg"], "--data", str(base / "d"),
                    "--out", str(base / "ck"), "--steps", "8", "--threads", "1"]) == 0
        assert run(["eval-metrics", "--pred", str(root / "pr" / "scene.json"),
                    "--gt", str(root / "sc" / "gt.json"), "--out", str(base / "ev" / "r.json")]) == 0
    for sub in ("d", "ck", "ev"):
        assert hash_tree(tmp_path / "run1" / sub) == hash_tree(tmp_path / "run2" / sub)
    assert hash_tree(tmp_path / "run1" / "d") == hash_tree(root / "d")


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", {"version": 1, "dataset": {"shapes_per_categry": 2}})
    assert run(["generate-data", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "dataset.shapes_per_categry" in capsys.readouterr().err
    wrong = _write(tmp_path / "v.json", {"version": 7})
    assert run(["generate-data", "--config", wrong, "--out", str(tmp_path / "x")]) == 2
    sect = _write(tmp_path / "s.json", {"model": {}})
    assert run(["generate-data", "--config", sect, "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "j.json").write_text("{not json")
    assert run(["generate-data", "--config", str(tmp_path / "j.json"),
                "--out", str(tmp_path / "x")]) == 2
    assert run(["generate-data", "--threads", "0", "--out", str(tmp_path / "x")]) == 2


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SSG_THREADS", "many")
    assert run(["generate-data", "--out", str(tmp_path / "x")]) == 2


def test_io_errors_exit_3(tmp_path):
    assert run(["train-ae", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    (tmp_path / "s.ssgt").write_bytes(b"garbage")
    assert run(["compose-scene", "--scene", str(tmp_path / "s.ssgt"), "--ckpt",
                str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3


def test_numeric_failure_exit_4(pipeline, tmp_path):
    d = tmp_path / "d"
    shutil.copytree(pipeline["root"] / "d", d)
    f = d / "samples" / "000000_cloud.ssgt"
    a = read_ssgt(f)
    a[0, 0] = np.nan
    write_ssgt(f, a, "<f4")
    assert run(["train-ae", "--config", pipeline["train_cfg"], "--data", str(d),
                "--out", str(tmp_path / "ck"), "--steps", "2"]) == 4


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "ssgrasp.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("generate-data", "label-grasps", "train-ae", "eval-ae", "compose-scene",
                "eval-metrics", "export"):
        assert cmd in out
