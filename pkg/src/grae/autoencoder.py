"""Fully connected autoencoder with hand-written backpropagation.

The geometry-regularised objective adds ``lambda * mean ||e_i - f(x_i)||^2``
to the reconstruction MSE, with lambda relaxed over epochs by a logistic
schedule. Setting the mode to ``"vanilla"`` drops the geometric term.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import make_rng
from .mds import Embedding
from .numerics import as_matrix

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

FULL_WIDTHS = (800, 400, 200)
DESK_WIDTHS = (256, 128, 64)


class AutoencoderError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    """Raised when a loss component becomes NaN or infinite."""


@dataclass
class TrainConfig:
    lambda_max: float = 100.0
    schedule_alpha: float = 0.2
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 128
    weight_decay: float = 1e-5
    seed: int = 0
    mode: str = "grae"
    standardize_reference: bool = True

    def __post_init__(self):
        if self.mode not in ("vanilla", "grae"):
            raise AutoencoderError(f"unknown mode {self.mode!r}")
        if self.lambda_max < 0:
            raise AutoencoderError("lambda_max must be >= 0")
        if self.epochs < 1:
            raise AutoencoderError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise AutoencoderError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise AutoencoderError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise AutoencoderError("weight_decay must be >= 0")


@dataclass
class LossReport:
    reconstruction: float
    geometric: float
    lambda_current: float
    epoch: int
    total: float = 0.0


class Network:
    """Symmetric MLP ``widths[0] -> ... -> latent -> ... -> widths[-1]``.

    ReLU on every hidden layer; identity at the bottleneck and the output.
    ``weights[l]`` has shape ``(fan_in, fan_out)``.
    """

    def __init__(self, widths: Sequence[int], weights, biases):
        self.widths = [int(w) for w in widths]
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.m = [np.zeros_like(p) for p in self.params()]
        self.v = [np.zeros_like(p) for p in self.params()]
        self.step = 0
        self._validate()

    def _validate(self):
        w = self.widths
        if len(w) < 3 or len(w) % 2 == 0 or w != w[::-1]:
            raise AutoencoderError(f"widths must be a symmetric odd-length list, got {w}")
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise AutoencoderError("one weight matrix and bias per layer required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[l], w[l + 1]) or b.shape != (w[l + 1],):
                raise AutoencoderError(f"layer {l} parameters do not match widths")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_encoder_layers(self) -> int:
        return self.n_layers // 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def latent_dim(self) -> int:
        return self.widths[len(self.widths) // 2]

    def params(self) -> List[np.ndarray]:
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def _relu_after(self, layer: int) -> bool:
        return layer not in (self.n_encoder_layers - 1, self.n_layers - 1)


def init_network(widths: Sequence[int], seed: int = 0) -> Network:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 3 or len(widths) % 2 == 0 or widths != widths[::-1]:
        raise AutoencoderError(f"widths must be a symmetric odd-length list, got {widths}")
    if min(widths) < 1:
        raise AutoencoderError("widths must be positive")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(widths, weights, biases)


def desk_widths(input_dim: int, latent_dim: int = 2, hidden: Sequence[int] = DESK_WIDTHS) -> List[int]:
    hidden = list(hidden)
    return [input_dim, *hidden, latent_dim, *hidden[::-1], input_dim]


def _run_layers(net: Network, h: np.ndarray, layers: range, cache: Optional[list] = None) -> np.ndarray:
    for l in layers:
        if cache is not None:
            cache.append(h)
        h = h @ net.weights[l] + net.biases[l]
        if net._relu_after(l):
            h = np.maximum(h, 0.0)
    return h


def encode(net: Network, x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != net.input_dim:
        raise AutoencoderError(f"input has {x.shape[1]} columns, network expects {net.input_dim}")
    return _run_layers(net, x, range(net.n_encoder_layers))


def decode(net: Network, z) -> np.ndarray:
    z = as_matrix(z, "z")
    if z.shape[1] != net.latent_dim:
        raise AutoencoderError(f"latent has {z.shape[1]} columns, network expects {net.latent_dim}")
    return _run_layers(net, z, range(net.n_encoder_layers, net.n_layers))


def reconstruct(net: Network, x) -> np.ndarray:
    return decode(net, encode(net, x))


def grae_loss_and_grads(
    net: Network,
    x_batch,
    e_batch,
    lambda_current: float,
    weight_decay: float = 0.0,
    epoch: int = 0,
) -> Tuple[LossReport, List[np.ndarray]]:
    """Loss components and parameter gradients for one mini-batch.

    total = mean_i mean_j (xhat_ij - x_ij)^2
            + lambda * mean_i ||z_i - e_i||^2
            + weight_decay * sum ||theta||^2

    ``e_batch`` may be ``None`` only when ``lambda_current`` is zero. The
    reported reconstruction and geometric parts exclude the weight penalty.
    Gradients are returned in :meth:`Network.params` order.
    """
    x = as_matrix(x_batch, "x_batch")
    if x.shape[1] != net.input_dim:
        raise AutoencoderError("x_batch width does not match the network")
    if lambda_current < 0:
        raise AutoencoderError("lambda_current must be >= 0")
    if e_batch is None and lambda_current != 0:
        raise AutoencoderError("a reference embedding is needed when lambda > 0")
    bsz = x.shape[0]
    cache: list = []
    z = _run_layers(net, x, range(net.n_encoder_layers), cache)
    xhat = _run_layers(net, z, range(net.n_encoder_layers, net.n_layers), cache)
    cache.append(xhat)

    resid = xhat - x
    rec = float(np.mean(resid * resid))
    geo = 0.0
    geo_grad = None
    if e_batch is not None:
        e = as_matrix(e_batch, "e_batch")
        if e.shape != z.shape:
            raise AutoencoderError(f"e_batch shape {e.shape} does not align with latent {z.shape}")
        dz = z - e
        geo = float(np.mean(np.sum(dz * dz, axis=1)))
        if lambda_current != 0:
            geo_grad = (2.0 * lambda_current / bsz) * dz

    penalty = 0.0
    if weight_decay:
        penalty = weight_decay * sum(float(np.sum(p * p)) for p in net.params())
    total = rec + lambda_current * geo + penalty

    grads: List[np.ndarray] = [None] * (2 * net.n_layers)
    delta = (2.0 / resid.size) * resid
    for l in range(net.n_layers - 1, -1, -1):
        out = cache[l + 1]
        if net._relu_after(l):
            delta = delta * (out > 0.0)
        if l == net.n_encoder_layers - 1 and geo_grad is not None:
            delta = delta + geo_grad
        grads[2 * l] = cache[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = delta @ net.weights[l].T
    if weight_decay:
        for g, p in zip(grads, net.params()):
            g += (2.0 * weight_decay) * p
    report = LossReport(rec, geo, float(lambda_current), epoch, total)
    return report, grads


def lambda_at(epoch: float, cfg: TrainConfig) -> float:
    """Logistic relaxation from ``lambda_max`` (early) towards 0 (late)."""
    arg = (epoch - cfg.epochs / 2.0) * cfg.schedule_alpha
    # -lmax * e^a / (1 + e^a) + lmax, written via the logistic to avoid overflow
    if arg >= 0:
        frac = 1.0 / (1.0 + math.exp(-arg))
    else:
        ea = math.exp(arg)
        frac = ea / (1.0 + ea)
    return -cfg.lambda_max * frac + cfg.lambda_max


def adam_step(net: Network, gradients: Sequence[np.ndarray], learning_rate: float) -> Network:
    """One bias-corrected Adam update, applied in place; returns ``net``."""
    params = net.params()
    if len(gradients) != len(params):
        raise AutoencoderError("gradient list does not match parameters")
    for g, p in zip(gradients, params):
        if g.shape != p.shape:
            raise AutoencoderError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    net.step += 1
    c1 = 1.0 - ADAM_BETA1**net.step
    c2 = 1.0 - ADAM_BETA2**net.step
    for p, g, m, v in zip(params, gradients, net.m, net.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return net


def standardize_embedding(coords) -> np.ndarray:
    """Zero mean, unit average row norm."""
    c = as_matrix(coords)
    c = c - c.mean(axis=0)
    scale = float(np.mean(np.linalg.norm(c, axis=1)))
    if scale == 0.0:
        raise AutoencoderError("reference embedding is degenerate")
    return c / scale


def train(
    net: Network,
    train_features,
    reference: Optional[Embedding | np.ndarray],
    cfg: TrainConfig,
    on_epoch_end: Optional[Callable[[int, Network, LossReport], None]] = None,
) -> Tuple[Network, List[LossReport]]:
    """Mini-batch Adam training; returns a trained copy and per-epoch losses.

    In ``"vanilla"`` mode the reference is never read. In ``"grae"`` mode
    lambda follows :func:`lambda_at` once per epoch.
    """
    x = as_matrix(train_features, "train_features")
    n = x.shape[0]
    target = None
    if cfg.mode == "grae":
        if reference is None:
            raise AutoencoderError("grae mode needs a reference embedding")
        target = reference.coords if isinstance(reference, Embedding) else as_matrix(reference)
        if target.shape != (n, net.latent_dim):
            raise AutoencoderError(
                f"reference shape {target.shape} does not match ({n}, {net.latent_dim})"
            )
        if cfg.standardize_reference:
            target = standardize_embedding(target)
    net = net.copy()
    rng = make_rng(cfg.seed)
    history: List[LossReport] = []
    for epoch in range(cfg.epochs):
        lam = lambda_at(epoch, cfg) if cfg.mode == "grae" else 0.0
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            e_batch = None if target is None else target[idx]
            rep, grads = grae_loss_and_grads(net, x[idx], e_batch, lam, cfg.weight_decay, epoch)
            if not (math.isfinite(rep.reconstruction) and math.isfinite(rep.geometric) and math.isfinite(rep.total)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}: reconstruction={rep.reconstruction}, "
                    f"geometric={rep.geometric}, total={rep.total}"
                )
            adam_step(net, grads, cfg.learning_rate)
            sums += len(idx) * np.array([rep.reconstruction, rep.geometric, rep.total])
        rec, geo, tot = sums / n
        report = LossReport(rec, geo, lam, epoch, tot)
        history.append(report)
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, report)
    return net, history


def interpolate_path(net: Network, z_a, z_b, steps: int) -> np.ndarray:
    """Decode ``steps`` evenly spaced latent points from ``z_a`` to ``z_b``."""
    if steps < 2:
        raise AutoencoderError("steps must be >= 2")
    za = np.asarray(z_a, dtype=np.float64).ravel()
    zb = np.asarray(z_b, dtype=np.float64).ravel()
    if za.shape != (net.latent_dim,) or zb.shape != (net.latent_dim,):
        raise AutoencoderError("endpoints must match the latent dimension")
    s = np.linspace(0.0, 1.0, steps)[:, None]
    return decode(net, (1.0 - s) * za + s * zb)


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"GRAECKPT"
#   uint32    format version (1)
#   uint32    header length H
#   H bytes   UTF-8 JSON: {"widths", "step", "config", "n_values"}
#   float64s  W0, b0, W1, b1, ... (row-major), then Adam m in the same
#             order, then Adam v in the same order
CHECKPOINT_MAGIC = b"GRAECKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path, cfg: Optional[TrainConfig] = None) -> None:
    params = np.concatenate([p.ravel() for p in net.params()])
    m = np.concatenate([a.ravel() for a in net.m])
    v = np.concatenate([a.ravel() for a in net.v])
    header = json.dumps(
        {
            "widths": net.widths,
            "step": net.step,
            "config": dataclasses.asdict(cfg) if cfg is not None else None,
            "n_values": int(params.size),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for arr in (params, m, v):
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Tuple[Network, Optional[TrainConfig]]:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise AutoencoderError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise AutoencoderError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    count = header["n_values"]
    values = np.frombuffer(blob[16 + hlen :], dtype="<f8").astype(np.float64)
    if values.size != 3 * count:
        raise AutoencoderError(f"{path}: truncated checkpoint")
    widths = header["widths"]
    shapes = []
    for fi, fo in zip(widths[:-1], widths[1:]):
        shapes.extend([(fi, fo), (fo,)])

    def unpack(flat):
        out, pos = [], 0
        for s in shapes:
            size = int(np.prod(s))
            out.append(flat[pos : pos + size].reshape(s).copy())
            pos += size
        return out

    params = unpack(values[:count])
    net = Network(widths, params[0::2], params[1::2])
    net.m = unpack(values[count : 2 * count])
    net.v = unpack(values[2 * count :])
    net.step = int(header["step"])
    cfg = TrainConfig(**header["config"]) if header["config"] else None
    return net, cfg
