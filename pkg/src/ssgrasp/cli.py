"""Command-line entry points.

Every subcommand takes an optional versioned JSON ``--config``, writes a
``provenance.json`` next to its outputs, and exits with 0 (ok), 2 (config
error), 3 (I/O or format error) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import load_config, provenance
from .dataset import load_dataset, write_dataset, DatasetConfig, build_dataset
from .errors import ConfigError, DivergenceDetected, FormatError, NonFiniteInput
from .grasp_core import grasp_poses_batch
from .io import read_json, read_ply, read_ssgt, write_json, write_ply, write_ssgt
from .labeler import LabelParams, evaluate_grasp_poses, label_dense_grasps
from .metrics import (
    COVERAGE_LEVELS,
    Detection,
    EvalReport,
    chamfer_eval,
    coverage_success,
    detection_iou_ap,
    detection_pose_ap,
    match_detections,
)
from .model import encode, load_checkpoint, reconstruct, save_checkpoint, train
from .scene import GraspSet, Heatmap, build_scene, synth_heatmap
from .shapes import CATEGORIES

log = logging.getLogger("ssgrasp")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _threads(args):
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("SSG_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"SSG_THREADS must be an integer, got {env!r}", "SSG_THREADS")
    if n < 1:
        raise ConfigError("--threads must be >= 1", "threads")
    return n


def _write_provenance(out_dir, run, threads, **extra):
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "provenance.json"), provenance(run, threads, extra))


def _out_dir_of(path):
    return os.path.dirname(os.path.abspath(path))


# ------------------------------------------------------------------ data

def cmd_generate_data(args, run, threads):
    d = run["dataset"]
    build_dataset(d, run.seed, args.out, threads=threads, spec=run["gripper"],
                  label_params=run["labeler"])
    _write_provenance(args.out, run, threads)
    print(f"wrote {d.size} samples to {args.out}")


def cmd_label_grasps(args, run, threads):
    samples, manifest = load_dataset(args.data)
    spec, lp = run["gripper"], run["labeler"]
    for s in samples:
        s.labels = label_dense_grasps(s.cloud, s.scale, spec, lp)
    write_dataset(samples, args.data, DatasetConfig(**manifest["config"]), manifest["seed"],
                  spec, lp)
    _write_provenance(args.data, run, threads, relabeled=len(samples))
    print(f"relabeled {len(samples)} samples in {args.data}")


# ------------------------------------------------------------------ model

def cmd_train_ae(args, run, threads):
    samples, manifest = load_dataset(args.data)
    cfg = run["model"]
    cfg.seed = run.seed
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w") as f:
        def emit(entry):
            f.write(json.dumps(entry, sort_keys=True) + "\n")

        result = train(samples, cfg, run["gripper"], run["loss"], steps=args.steps, callback=emit)
    epochs = [e for e in result.log if e["type"] == "epoch"]
    save_checkpoint(result.params, args.out, {
        "seed": run.seed,
        "epoch": epochs[-1]["epoch"] + 1 if epochs else 0,
        "dataset_hash": manifest["hash"],
        "gripper": run.materialized()["gripper"],
    })
    _write_provenance(args.out, run, threads, dataset_hash=manifest["hash"])
    print(f"checkpoint written to {args.out}")


def cmd_eval_ae(args, run, threads):
    from . import kernels

    samples, _ = load_dataset(args.data)
    params = load_checkpoint(args.ckpt)
    spec = run["gripper"]
    os.makedirs(_out_dir_of(args.out), exist_ok=True)
    per = {}
    for s in samples:
        r = reconstruct(s.cloud.points, s.scale, params, spec)
        idx, _ = kernels.nearest(r.positions, s.cloud.points)
        agree = float(np.mean((r.gs > 0.5) == s.labels.gs[idx]))
        per.setdefault(s.category, []).append((chamfer_eval(r.positions, s.cloud.points), agree))
    report = {
        "n_samples": len(samples),
        "chamfer_unit": {c: float(np.mean([v[0] for v in vs])) for c, vs in sorted(per.items())},
        "gs_agreement": {c: float(np.mean([v[1] for v in vs])) for c, vs in sorted(per.items())},
    }
    allv = [v for vs in per.values() for v in vs]
    report["chamfer_unit_mean"] = float(np.mean([v[0] for v in allv]))
    report["gs_agreement_mean"] = float(np.mean([v[1] for v in allv]))
    write_json(args.out, report)
    _write_provenance(_out_dir_of(args.out), run, threads)
    print(json.dumps(report, indent=1, sort_keys=True))


# ------------------------------------------------------------------ scenes

def _heatmap_to_tensor(hm: Heatmap):
    cls = hm.classes if hm.classes is not None else np.full(hm.confidence.shape, -1)
    return np.concatenate([hm.confidence[..., None], cls[..., None].astype(np.float64),
                           hm.descriptors], axis=2)


def _tensor_to_heatmap(T):
    if T.ndim != 3 or T.shape[2] < 12:
        raise FormatError("scene tensor must be H x W x (2 + descriptor)")
    T = T.astype(np.float64)
    return Heatmap(T[..., 0], T[..., 2:], np.rint(T[..., 1]).astype(np.int64))


def _category(class_id):
    return CATEGORIES[class_id] if 0 <= class_id < len(CATEGORIES) else None


def cmd_synth_scene(args, run, threads):
    """Scenes built from dataset samples with GT-packed descriptors (testing aid)."""
    samples, _ = load_dataset(args.data)
    params = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(run.seed)
    os.makedirs(args.out, exist_ok=True)
    gt_objects, scene_files = [], []
    for frame in range(args.frames):
        picks = rng.choice(len(samples), size=args.objects, replace=False)
        objs = []
        for k, i in enumerate(picks):
            s = samples[i]
            ang = rng.uniform(0, 2 * np.pi)
            R = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0], [-np.sin(ang), 0, np.cos(ang)]])
            # spread objects on a horizontal band in front of the camera
            t = np.array([-0.3 + 0.6 * (k + 0.5) / args.objects, rng.uniform(-0.05, 0.05),
                          rng.uniform(0.8, 1.0)])
            objs.append({"t": t, "R": R, "scale": s.scale, "embedding": encode(s.cloud.points, params),
                         "confidence": 0.9 - 0.1 * k, "class_id": CATEGORIES.index(s.category),
                         "sample": s})
        hm, _ = synth_heatmap(objs)
        name = f"scene_{frame:03d}.ssgt"
        write_ssgt(os.path.join(args.out, name), _heatmap_to_tensor(hm), "<f8")
        scene_files.append(name)
        for k, o in enumerate(objs):
            s = o["sample"]
            stem = f"gt_{frame:03d}_{k:02d}"
            cam = (s.scale * s.cloud.points) @ o["R"].T + o["t"]
            write_ply(os.path.join(args.out, stem + ".ply"), cam, s.cloud.normals @ o["R"].T)
            gt, gR, gw = s.grasp_poses(run["gripper"]) if s.labels.gs.any() else (
                np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0))
            gs = GraspSet(gt @ o["R"].T + o["t"], o["R"] @ gR, gw, np.ones(len(gw)))
            write_json(os.path.join(args.out, stem + "_grasps.json"), gs.to_json())
            M = np.eye(4)
            M[:3, :3], M[:3, 3] = o["R"], o["t"]
            gt_objects.append({
                "frame": frame, "class_id": o["class_id"], "category": s.category,
                "pose": M.ravel().tolist(), "scale": s.scale,
                "extents": np.ptp(s.cloud.points, axis=0).tolist(),
                "cloud": stem + ".ply", "grasps": stem + "_grasps.json",
                "sample_id": s.sample_id,
            })
    write_json(os.path.join(args.out, "gt.json"), {"objects": gt_objects, "scenes": scene_files})
    _write_provenance(args.out, run, threads)
    print(f"wrote {args.frames} scenes to {args.out}")


def cmd_compose_scene(args, run, threads):
    params = load_checkpoint(args.ckpt)
    spec, th = run["gripper"], run["scene"]
    os.makedirs(args.out, exist_ok=True)
    objects = []
    for frame, path in enumerate(args.scene):
        hm = _tensor_to_heatmap(read_ssgt(path))
        for k, obj in enumerate(build_scene(hm, params, spec, th)):
            stem = f"obj_{frame:03d}_{k:02d}"
            write_ply(os.path.join(args.out, stem + ".ply"), obj.cloud)
            write_json(os.path.join(args.out, stem + "_grasps.json"), obj.grasps.to_json())
            objects.append({
                "frame": frame, "class_id": obj.class_id, "category": _category(obj.class_id),
                "confidence": obj.confidence, "pixel": list(obj.pixel),
                "pose": obj.pose_matrix.ravel().tolist(), "scale": obj.scale,
                "extents": np.ptp(obj.decoded.positions, axis=0).tolist(),
                "cloud": stem + ".ply", "grasps": stem + "_grasps.json",
            })
    write_json(os.path.join(args.out, "scene.json"), {"objects": objects})
    _write_provenance(args.out, run, threads)
    print(f"composed {len(objects)} objects into {args.out}")


def _detections(doc):
    out = []
    for o in doc["objects"]:
        M = np.asarray(o["pose"], dtype=np.float64).reshape(4, 4)
        out.append(Detection(o["frame"], o["class_id"], M[:3, :3], M[:3, 3], o["scale"],
                             np.asarray(o["extents"]), o.get("confidence", 1.0),
                             o.get("category")))
    return out


def _load_grasps(base, ref):
    items = read_json(os.path.join(base, ref))
    if not items:
        return np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0), np.zeros(0)
    M = np.array([g["pose"] for g in items], dtype=np.float64).reshape(-1, 4, 4)
    return (M[:, :3, 3], M[:, :3, :3], np.array([g["width"] for g in items]),
            np.array([g.get("confidence", 1.0) for g in items]))


def cmd_eval_metrics(args, run, threads):
    pred_doc, gt_doc = read_json(args.pred), read_json(args.gt)
    pbase, gbase = _out_dir_of(args.pred), _out_dir_of(args.gt)
    preds, gts = _detections(pred_doc), _detections(gt_doc)
    report = EvalReport()
    report.pose_ap = detection_pose_ap(preds, gts)
    report.iou_ap = detection_iou_ap(preds, gts)
    spec, lp = run["gripper"], run["labeler"]
    match = match_detections(preds, gts)
    ch = {}
    pooled = {"pt": [], "pR": [], "pc": [], "ok": [], "gt": [], "gR": []}
    for i, m in enumerate(match):
        if m < 0:
            continue
        po, go = pred_doc["objects"][i], gt_doc["objects"][m]
        if "cloud" in po and "cloud" in go:
            pc = read_ply(os.path.join(pbase, po["cloud"]))
            gc = read_ply(os.path.join(gbase, go["cloud"]))
            P = np.stack([pc["x"], pc["y"], pc["z"]], axis=1).astype(np.float64)
            G = np.stack([gc["x"], gc["y"], gc["z"]], axis=1).astype(np.float64)
            ch.setdefault(go.get("category") or str(go["class_id"]), []).append(chamfer_eval(P, G))
            if "grasps" in po and "grasps" in go and "nx" in gc:
                pt, pR, pw, pcf = _load_grasps(pbase, po["grasps"])
                gt, gR, _, _ = _load_grasps(gbase, go["grasps"])
                N = np.stack([gc["nx"], gc["ny"], gc["nz"]], axis=1).astype(np.float64)
                ok, _ = evaluate_grasp_poses(pt, pR, pw, G, N, spec, lp) if len(pw) else (
                    np.zeros(0, bool), None)
                for key, v in zip(("pt", "pR", "pc", "ok", "gt", "gR"), (pt, pR, pcf, ok, gt, gR)):
                    pooled[key].append(v)
    report.chamfer = {k: float(np.mean(v)) for k, v in sorted(ch.items())}
    os.makedirs(_out_dir_of(args.out), exist_ok=True)
    if pooled["gt"]:
        cat = {k: np.concatenate(v) for k, v in pooled.items()}
        curve = coverage_success(cat["pt"], cat["pR"], cat["pc"], cat["gt"], cat["gR"], cat["ok"],
                                 args.radius, spec, COVERAGE_LEVELS)
        report.coverage = curve.table
    write_json(args.out, report.to_dict())
    with open(os.path.splitext(args.out)[0] + ".csv", "w") as f:
        f.write(report.to_csv())
    _write_provenance(_out_dir_of(args.out), run, threads)
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))


def cmd_export(args, run, threads):
    samples, _ = load_dataset(args.data)
    by_id = {s.sample_id: s for s in samples}
    if args.sample not in by_id:
        raise ConfigError(f"no sample with id {args.sample}", "sample")
    s = by_id[args.sample]
    spec = run["gripper"]
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"sample_{s.sample_id:06d}")
    if args.ckpt:
        params = load_checkpoint(args.ckpt)
        r = reconstruct(s.cloud.points, s.scale, params, spec)
        write_ply(stem + "_recon.ply", r.positions, extra={"gs": r.gs})
        idx = np.nonzero((r.gs > run["scene"].gs_threshold) & r.valid)[0]
        t, R = grasp_poses_batch(s.scale * r.positions[idx], r.approach[idx], r.baseline[idx],
                                 np.minimum(r.width[idx], spec.w_max), spec)
        write_json(stem + "_recon_grasps.json",
                   GraspSet(t, R, r.width[idx], r.gs[idx]).to_json())
    write_ply(stem + ".ply", s.cloud.points, s.cloud.normals,
              extra={"gs": s.labels.gs.astype(np.float32)})
    t, R, w = s.grasp_poses(spec)
    write_json(stem + "_grasps.json", GraspSet(t, R, w, np.ones(len(w))).to_json())
    _write_provenance(args.out, run, threads, sample_id=s.sample_id)
    print(f"exported sample {s.sample_id} to {args.out}")


COMMANDS = {
    "generate-data": cmd_generate_data,
    "label-grasps": cmd_label_grasps,
    "train-ae": cmd_train_ae,
    "eval-ae": cmd_eval_ae,
    "synth-scene": cmd_synth_scene,
    "compose-scene": cmd_compose_scene,
    "eval-metrics": cmd_eval_metrics,
    "export": cmd_export,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default $SSG_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ssgrasp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-data", parents=[common], help="synthesize and label a dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("label-grasps", parents=[common], help="relabel a dataset in place")
    s.add_argument("--data", required=True)

    s = sub.add_parser("train-ae", parents=[common], help="train the autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, help="stop after this many optimizer steps")

    s = sub.add_parser("eval-ae", parents=[common], help="reconstruction and gs agreement")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("synth-scene", parents=[common], help="synthetic scenes with GT descriptors")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--objects", type=int, default=3)

    s = sub.add_parser("compose-scene", parents=[common], help="heatmap + descriptors to objects")
    s.add_argument("--scene", required=True, nargs="+", help="SSGT scene tensors, one per frame")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval-metrics", parents=[common], help="AP, chamfer and coverage report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", default="report.json")
    s.add_argument("--radius", type=float, default=0.02)

    s = sub.add_parser("export", parents=[common], help="PLY cloud and grasp JSON of a sample")
    s.add_argument("--data", required=True)
    s.add_argument("--sample", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ckpt")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args)
        cfg = load_config(args.command, args.config, args.seed)
        with threadpool_limits(threads):
            COMMANDS[args.command](args, cfg, threads)
    except ConfigError as e:
        print(f"config error [{e.key}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceDetected, NonFiniteInput, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
