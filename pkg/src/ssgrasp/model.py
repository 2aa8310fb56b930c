"""Scale-conditioned shape/grasp autoencoder in plain numpy.

Encoder: shared per-point MLP (ReLU hidden layers, linear output) followed by
a coordinate-wise max over points. Decoder: fully connected stack on
``[embedding, standardized scale]`` producing ``N x (3 + 1 + 3 + 3 + n_bins)``
raw channels. Backpropagation is written out by hand; training uses Adam on
the chamfer-gated objective from :mod:`ssgrasp.losses`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import DivergenceDetected, FormatError, NonFiniteInput
from .grasp_core import GripperSpec, orthonormalize_batch
from .losses import (
    BCE_EPS, GS, POS, WB, Z1, Z2, LossConfig, prepare_target, sigmoid, softmax, total_loss,
)

log = logging.getLogger(__name__)


@dataclass
class AEConfig:
    n_points: int = 256
    embed_dim: int = 64
    encoder_widths: tuple = (64, 128)
    decoder_widths: tuple = (256, 512)
    n_width_bins: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    log_samples: bool = False

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.embed_dim < 8:
            raise ValueError("embed_dim must be >= 8")
        if self.n_points < 64:
            raise ValueError("n_points must be >= 64")
        if any(w < 1 for w in self.encoder_widths + self.decoder_widths):
            raise ValueError("layer widths must be >= 1")

    @property
    def n_channels(self):
        return 10 + self.n_width_bins

    def to_dict(self):
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d


@dataclass
class ModelParams:
    config: AEConfig
    weights: dict
    scale_mean: float = 0.0
    scale_std: float = 1.0

    def names(self):
        return list(self.weights)

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                           self.scale_mean, self.scale_std)

    def flat(self):
        return np.concatenate([self.weights[k].ravel() for k in self.names()])

    def n_layers(self, prefix):
        return sum(1 for k in self.weights if k.startswith(prefix + "_W"))

    def standardize(self, scale):
        return (np.asarray(scale, dtype=np.float64) - self.scale_mean) / self.scale_std


@dataclass
class DenseGraspCloud:
    """Decoded autoencoder output for one object."""

    raw: np.ndarray
    positions: np.ndarray
    gs: np.ndarray
    baseline: np.ndarray
    approach: np.ndarray
    width_probs: np.ndarray
    width: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.positions)


def init_params(config: AEConfig, scale_mean=0.0, scale_std=1.0) -> ModelParams:
    """Uniform fan-in initialization from the config seed."""
    rng = np.random.default_rng(config.seed)
    weights = {}
    enc = (3,) + config.encoder_widths + (config.embed_dim,)
    dec = (config.embed_dim + 1,) + config.decoder_widths + (config.n_points * config.n_channels,)
    for prefix, dims in (("enc", enc), ("dec", dec)):
        last = len(dims) - 2
        for l, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            # ReLU layers get the He bound, the linear output layer the plain fan-in bound
            bound = math.sqrt(6.0 / fi) if l < last else math.sqrt(1.0 / fi)
            weights[f"{prefix}_W{l}"] = rng.uniform(-bound, bound, (fi, fo))
            weights[f"{prefix}_b{l}"] = np.zeros(fo)
    return ModelParams(config, weights, float(scale_mean), float(scale_std))


# ------------------------------------------------------------------ forward

def _mlp_forward(x, weights, prefix, n):
    acts = [x]
    for l in range(n):
        z = acts[-1] @ weights[f"{prefix}_W{l}"] + weights[f"{prefix}_b{l}"]
        acts.append(np.maximum(z, 0.0) if l < n - 1 else z)
    return acts


def _mlp_backward(acts, g, weights, grads, prefix, n, need_input_grad=True):
    for l in range(n - 1, -1, -1):
        if l < n - 1:
            g = g * (acts[l + 1] > 0)
        grads[f"{prefix}_W{l}"] += acts[l].T @ g
        grads[f"{prefix}_b{l}"] += g.sum(axis=0)
        if l > 0 or need_input_grad:
            g = g @ weights[f"{prefix}_W{l}"].T
    return g


def encode_batch(clouds, params: ModelParams, _cache=None):
    X = np.asarray(clouds, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("encoder input contains non-finite values")
    B, N, _ = X.shape
    n = params.n_layers("enc")
    acts = _mlp_forward(X.reshape(B * N, 3), params.weights, "enc", n)
    H = acts[-1].reshape(B, N, -1)
    arg = np.argmax(H, axis=1)
    emb = np.take_along_axis(H, arg[:, None, :], axis=1)[:, 0, :]
    if _cache is not None:
        _cache.update(enc_acts=acts, enc_arg=arg, B=B, N=N)
    return emb


def encode(cloud, params: ModelParams):
    """Embedding of one ``(N, 3)`` unit-canonical cloud."""
    return encode_batch(np.asarray(cloud)[None], params)[0]


def decode_raw_batch(embeddings, scales, params: ModelParams, _cache=None):
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    s = params.standardize(np.atleast_1d(scales))
    inp = np.concatenate([E, s[:, None]], axis=1)
    n = params.n_layers("dec")
    acts = _mlp_forward(inp, params.weights, "dec", n)
    if _cache is not None:
        _cache.update(dec_acts=acts)
    cfg = params.config
    return acts[-1].reshape(len(E), cfg.n_points, cfg.n_channels)


def heads(raw, spec: GripperSpec) -> DenseGraspCloud:
    """Apply the output heads to one raw ``(N, C)`` array."""
    raw = np.asarray(raw, dtype=np.float64)
    b, a, valid = orthonormalize_batch(raw[:, Z1], raw[:, Z2])
    # clip so saturated logits still report a probability strictly inside (0, 1)
    gs = np.clip(sigmoid(raw[:, GS]), BCE_EPS, 1 - BCE_EPS)
    gs = np.where(valid, gs, 0.0)
    probs = softmax(raw[:, WB])
    width = (np.argmax(probs, axis=1) + 0.5) * spec.bin_size
    return DenseGraspCloud(raw, raw[:, POS].copy(), gs, b, a, probs, width, valid)


def decode(embedding, scale, params: ModelParams, spec: GripperSpec = GripperSpec()):
    if not scale > 0:
        raise ValueError("scale must be > 0")
    return heads(decode_raw_batch(embedding, [scale], params)[0], spec)


def decode_batch(embeddings, scales, params: ModelParams, spec: GripperSpec = GripperSpec()):
    raw = decode_raw_batch(embeddings, scales, params)
    return [heads(r, spec) for r in raw]


def reconstruct(cloud, scale, params: ModelParams, spec: GripperSpec = GripperSpec()):
    return decode(encode(cloud, params), scale, params, spec)


# ------------------------------------------------------------------ backward

def batch_loss_and_grad(params: ModelParams, clouds, scales, targets, loss_cfg: LossConfig,
                        spec: GripperSpec):
    """Mean gated loss over a batch and its gradient w.r.t. every weight."""
    cache = {}
    emb = encode_batch(clouds, params, cache)
    raw = decode_raw_batch(emb, scales, params, cache)
    B = len(raw)
    g_raw = np.zeros_like(raw)
    reports = []
    for b in range(B):
        rep, g = total_loss(raw[b], targets[b], loss_cfg, spec)
        reports.append(rep)
        g_raw[b] = g / B
    loss = float(np.mean([r.total for r in reports]))

    grads = {k: np.zeros_like(v) for k, v in params.weights.items()}
    g_out = g_raw.reshape(B, -1)
    g_in = _mlp_backward(cache["dec_acts"], g_out, params.weights, grads, "dec",
                         params.n_layers("dec"))
    g_emb = g_in[:, :-1]
    # max-pool routes the gradient to the winning point of each channel
    N = cache["N"]
    g_H = np.zeros((B, N, g_emb.shape[1]))
    np.put_along_axis(g_H, cache["enc_arg"][:, None, :], g_emb[:, None, :], axis=1)
    _mlp_backward(cache["enc_acts"], g_H.reshape(B * N, -1), params.weights, grads, "enc",
                  params.n_layers("enc"), need_input_grad=False)
    return loss, grads, reports


class Adam:
    def __init__(self, params: ModelParams, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.t = 0

    def step(self, params: ModelParams, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            kernels.adam_update(params.weights[k].reshape(-1), np.ascontiguousarray(g).reshape(-1),
                                self.m[k].reshape(-1), self.v[k].reshape(-1), self.lr / c1,
                                self.b1, self.b2, 1.0 / math.sqrt(c2), self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)


def _scale_stats(samples):
    s = np.array([x.scale for x in samples], dtype=np.float64)
    std = float(s.std())
    return float(s.mean()), std if std > 1e-12 else 1.0


def train(dataset, config: AEConfig = AEConfig(), spec: GripperSpec = GripperSpec(),
          loss_cfg: LossConfig = LossConfig(), params: ModelParams = None, steps: int = None,
          callback=None) -> TrainResult:
    """Fit the autoencoder on labeled samples.

    ``steps`` caps the number of optimizer steps (default: full epochs).
    ``callback(entry)`` receives each log record as it is produced.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    if any(s.labels is None for s in samples):
        raise ValueError("every sample must be labeled")
    for s in samples:
        if len(s.cloud) != config.n_points:
            raise ValueError(f"sample {s.sample_id} has {len(s.cloud)} points, "
                             f"model expects {config.n_points}")
    if params is None:
        params = init_params(config, *_scale_stats(samples))
    targets = [prepare_target(s, spec) for s in samples]
    clouds = np.stack([s.cloud.points for s in samples])
    scales = np.array([s.scale for s in samples])
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed + 1)
    out = []

    def emit(entry):
        out.append(entry)
        if callback is not None:
            callback(entry)

    n = len(samples)
    bs = min(config.batch_size, n)
    step = 0
    total_steps = steps if steps is not None else config.epochs * math.ceil(n / bs)
    epoch = 0
    while step < total_steps:
        order = rng.permutation(n)
        ep_reports = []
        for s0 in range(0, n, bs):
            if step >= total_steps:
                break
            idx = order[s0:s0 + bs]
            loss, grads, reports = batch_loss_and_grad(
                params, clouds[idx], scales[idx], [targets[i] for i in idx], loss_cfg, spec)
            if not np.isfinite(loss) or not np.isfinite(sum(float(g.sum()) for g in grads.values())):
                raise DivergenceDetected(f"non-finite loss or gradient at step {step}")
            opt.step(params, grads)
            ep_reports.extend(reports)
            entry = {
                "type": "step", "epoch": epoch, "step": step, "total": loss,
                "chamfer": float(np.mean([r.chamfer for r in reports])),
                "gs": float(np.mean([r.gs for r in reports])),
                "gw": float(np.mean([r.gw for r in reports])),
                "sixdof": float(np.mean([r.sixdof for r in reports])),
                "gate_open_frac": float(np.mean([r.gate_open for r in reports])),
            }
            if config.log_samples:
                entry["samples"] = [dict(r.to_dict(), sample_id=int(samples[i].sample_id))
                                    for r, i in zip(reports, idx)]
            emit(entry)
            step += 1
        if ep_reports:
            emit({
                "type": "epoch", "epoch": epoch, "steps": step,
                "total": float(np.mean([r.total for r in ep_reports])),
                "chamfer": float(np.mean([r.chamfer for r in ep_reports])),
                "gs": float(np.mean([r.gs for r in ep_reports])),
                "gw": float(np.mean([r.gw for r in ep_reports])),
                "sixdof": float(np.mean([r.sixdof for r in ep_reports])),
                "gate_open_frac": float(np.mean([r.gate_open for r in ep_reports])),
            })
            log.info("epoch %d: total %.5f chamfer %.5f gate %.2f", epoch, out[-1]["total"],
                     out[-1]["chamfer"], out[-1]["gate_open_frac"])
        epoch += 1
    return TrainResult(params, out)


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(params: ModelParams, out_dir, extra=None):
    """Write every tensor as float64 SSGT plus a JSON header; returns the header."""
    from .io import sha256_file, write_json, write_ssgt

    os.makedirs(os.path.join(out_dir, "tensors"), exist_ok=True)
    tensors = {}
    for name, w in params.weights.items():
        rel = f"tensors/{name}.ssgt"
        write_ssgt(os.path.join(out_dir, rel), w, "<f8")
        tensors[name] = {"file": rel, "shape": list(w.shape),
                         "sha256": sha256_file(os.path.join(out_dir, rel))}
    header = {
        "format": "ssgrasp-checkpoint",
        "version": 1,
        "config": params.config.to_dict(),
        "scale_mean": params.scale_mean,
        "scale_std": params.scale_std,
        "tensors": tensors,
    }
    header.update(extra or {})
    write_json(os.path.join(out_dir, "checkpoint.json"), header)
    return header


def load_checkpoint(ckpt_dir) -> ModelParams:
    from .io import read_json, read_ssgt

    header = read_json(os.path.join(ckpt_dir, "checkpoint.json"))
    if header.get("format") != "ssgrasp-checkpoint":
        raise FormatError(f"{ckpt_dir}: not a checkpoint")
    config = AEConfig(**header["config"])
    weights = {name: read_ssgt(os.path.join(ckpt_dir, t["file"]))
               for name, t in header["tensors"].items()}
    ref = init_params(config)
    for name, w in ref.weights.items():
        if name not in weights or weights[name].shape != w.shape:
            raise FormatError(f"{ckpt_dir}: tensor {name} missing or mis-shaped")
    return ModelParams(config, weights, header["scale_mean"], header["scale_std"])
