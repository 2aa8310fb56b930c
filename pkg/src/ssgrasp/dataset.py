"""Desk-scale dataset build: shapes x scales, labeled, with a hashed manifest.

Every sample gets its own seed derived from ``(seed, category index, shape
index)``, so results do not depend on worker scheduling. Clouds are rounded
to float32 before labeling; what is written to disk is exactly what was
labeled.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .grasp_core import GripperSpec
from .io import canonical_json, read_json, read_ssgt, sha256_bytes, sha256_file, write_json, write_ssgt
from .labeler import CanonicalObjectSample, DenseGraspLabel, LabelParams, label_dense_grasps
from .shapes import (
    CATEGORIES,
    DEFAULT_SCALE_MU,
    ScaleDistribution,
    UnitCanonicalCloud,
    make_canonical_shape,
    sample_scales,
    sample_shape_params,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class DatasetConfig:
    categories: tuple = ("bottle", "bowl", "can")
    shapes_per_category: int = 100
    scales_per_shape: int = 5
    n_points: int = 256
    scale_sigma: float = 0.25
    scale_low: float = 0.05
    scale_high: float = 0.8
    # per-category log-mean overrides, meters
    scale_mu: dict = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        for c in self.categories:
            if c not in CATEGORIES:
                raise ValueError(f"unknown category {c!r}")
        if self.shapes_per_category < 1 or self.scales_per_shape < 1:
            raise ValueError("counts must be >= 1")
        for c in self.scale_mu:
            if c not in CATEGORIES:
                raise ValueError(f"unknown category {c!r} in scale_mu")

    def scale_distribution(self, category) -> ScaleDistribution:
        mu = self.scale_mu.get(category)
        mu = DEFAULT_SCALE_MU[category] if mu is None else math.log(mu)
        return ScaleDistribution(category, mu, self.scale_sigma, self.scale_low, self.scale_high)

    def to_dict(self):
        d = asdict(self)
        d["categories"] = list(self.categories)
        return d

    @property
    def size(self):
        return len(self.categories) * self.shapes_per_category * self.scales_per_shape


def _shape_seed(seed, ci, k):
    return np.random.SeedSequence([seed, ci, k])


def _make_shape(config, seed, ci, k):
    category = config.categories[ci]
    ss = _shape_seed(seed, ci, k)
    s_params, s_cloud, s_scale = ss.spawn(3)
    params = sample_shape_params(category, np.random.default_rng(s_params))
    cloud = make_canonical_shape(category, params, config.n_points,
                                 seed=int(s_cloud.generate_state(1)[0]))
    cloud = UnitCanonicalCloud(category, cloud.points.astype(np.float32).astype(np.float64),
                               cloud.normals.astype(np.float32).astype(np.float64))
    scales = sample_scales(config.scale_distribution(category), config.scales_per_shape,
                           seed=int(s_scale.generate_state(1)[0]))
    return category, params, cloud, scales


def _label_shape(args):
    config, seed, ci, k, spec, lparams = args
    category, params, cloud, scales = _make_shape(config, seed, ci, k)
    return [(category, params, cloud, s, label_dense_grasps(cloud, s, spec, lparams))
            for s in scales]


def build_dataset(config: DatasetConfig, seed: int = 0, out_dir=None, threads: int = 1,
                  spec: GripperSpec = GripperSpec(), label_params: LabelParams = LabelParams()):
    """Generate and label ``config.size`` samples; optionally write them under ``out_dir``.

    Returns the list of :class:`CanonicalObjectSample` in manifest order.
    """
    jobs = [(config, seed, ci, k, spec, label_params)
            for ci in range(len(config.categories)) for k in range(config.shapes_per_category)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(_label_shape, jobs))
    else:
        results = [_label_shape(j) for j in jobs]
    samples = []
    shape_id = 0
    for group in results:
        for category, params, cloud, scale, labels in group:
            samples.append(CanonicalObjectSample(category, cloud, float(scale), labels, params,
                                                 len(samples), shape_id))
        shape_id += 1
    if out_dir is not None:
        write_dataset(samples, out_dir, config, seed, spec, label_params)
    return samples


def scale_stats(samples):
    s = np.array([x.scale for x in samples], dtype=np.float64)
    std = float(s.std())
    return float(s.mean()), std if std > 1e-12 else 1.0


def write_dataset(samples, out_dir, config: DatasetConfig, seed, spec: GripperSpec,
                  label_params: LabelParams):
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    entries = []
    for s in samples:
        stem = f"samples/{s.sample_id:06d}"
        cloud_rel, lab_rel = stem + "_cloud.ssgt", stem + "_labels.ssgt"
        write_ssgt(os.path.join(out_dir, cloud_rel),
                   np.concatenate([s.cloud.points, s.cloud.normals], axis=1), "<f4")
        # labels stay float64 so they re-verify against the oracle bit-exactly
        write_ssgt(os.path.join(out_dir, lab_rel), s.labels.as_array(), "<f8")
        entries.append({
            "sample_id": s.sample_id,
            "shape_id": s.shape_id,
            "category": s.category,
            "shape_params": {k: float(v) for k, v in sorted(s.shape_params.items())},
            "scale": float(s.scale),
            "cloud": cloud_rel,
            "labels": lab_rel,
            "cloud_sha256": sha256_file(os.path.join(out_dir, cloud_rel)),
            "labels_sha256": sha256_file(os.path.join(out_dir, lab_rel)),
            "n_positive": int(s.labels.gs.sum()),
        })
    mean, std = scale_stats(samples)
    manifest = {
        "format": "ssgrasp-dataset",
        "version": 1,
        "package_version": __version__,
        "seed": int(seed),
        "config": config.to_dict(),
        "gripper": asdict(spec),
        "label_params": asdict(label_params),
        "scale_mean": mean,
        "scale_std": std,
        "samples": entries,
    }
    manifest["hash"] = sha256_bytes(canonical_json(manifest).encode())
    write_json(os.path.join(out_dir, MANIFEST), manifest)
    return manifest


def manifest_hash(out_dir) -> str:
    return read_json(os.path.join(out_dir, MANIFEST))["hash"]


def load_dataset(data_dir):
    """Read samples back from a dataset directory; returns ``(samples, manifest)``."""
    manifest = read_json(os.path.join(data_dir, MANIFEST))
    samples = []
    for e in manifest["samples"]:
        cloud = read_ssgt(os.path.join(data_dir, e["cloud"])).astype(np.float64)
        labels = DenseGraspLabel.from_array(read_ssgt(os.path.join(data_dir, e["labels"])))
        s = CanonicalObjectSample(
            e["category"], UnitCanonicalCloud(e["category"], cloud[:, :3], cloud[:, 3:]),
            e["scale"], labels, dict(e["shape_params"]), e["sample_id"], e["shape_id"])
        samples.append(s)
    return samples, manifest
