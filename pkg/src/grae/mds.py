"""Metric multidimensional scaling: classical MDS and SMACOF.

The reference embedding used to regularise the autoencoder comes from
:func:`reference_embed`, which chains the diffusion pipeline, classical MDS
(as initialiser) and SMACOF on the potential distances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffusion
from .numerics import as_matrix, pairwise_distances, symmetric_eigen

DEFAULT_MAX_ITER = 500
DEFAULT_REL_TOL = 1e-6
EMBEDDING_SOURCES = ("mds", "stitched", "encoder")


class MDSError(ValueError):
    pass


class StressIncreaseError(ArithmeticError):
    """SMACOF stress went up, which majorization forbids."""


@dataclass
class Embedding:
    coords: np.ndarray
    source: str = "mds"
    seed: int = 0
    stress: float = 0.0
    stress_history: list = field(default_factory=list, repr=False)
    n_iter: int = 0
    diffusion: Optional[diffusion.DiffusionModel] = field(default=None, repr=False)

    def __post_init__(self):
        self.coords = as_matrix(self.coords, "coords")
        if self.source not in EMBEDDING_SOURCES:
            raise MDSError(f"unknown embedding source {self.source!r}")
        if not np.all(np.isfinite(self.coords)):
            raise MDSError("embedding coordinates must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def _check_distances(distances) -> np.ndarray:
    d = as_matrix(distances, "distances")
    if d.shape[0] != d.shape[1]:
        raise MDSError("distance matrix must be square")
    return d


def normalized_stress(coords: np.ndarray, distances: np.ndarray) -> float:
    """sum_{i<j} (|x_i - x_j| - delta_ij)^2 / sum_{i<j} delta_ij^2."""
    dhat = pairwise_distances(coords)
    return float(np.sum((dhat - distances) ** 2) / np.sum(distances**2))


def classical_mds(distances, d: int = 2, seed: int = 0) -> Embedding:
    """Torgerson scaling: top eigenpairs of the double-centred -D^2/2."""
    dist = _check_distances(distances)
    n = dist.shape[0]
    if d >= n:
        raise MDSError(f"target dimension {d} must be smaller than n = {n}")
    sq = dist**2
    b = -0.5 * (sq - sq.mean(axis=0)[None, :] - sq.mean(axis=1)[:, None] + sq.mean())
    w, v = symmetric_eigen(0.5 * (b + b.T))
    w = np.maximum(w[:d], 0.0)
    v = v[:, :d]
    # fix the sign of each axis so the output is reproducible
    signs = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(d)])
    signs[signs == 0] = 1.0
    coords = v * signs * np.sqrt(w)
    denom = np.sum(dist**2)
    stress = normalized_stress(coords, dist) if denom > 0 else 0.0
    return Embedding(coords, source="mds", seed=seed, stress=stress)


def smacof(
    distances,
    init: Embedding,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
    strict: bool = True,
) -> Embedding:
    """Unweighted SMACOF via repeated Guttman transforms.

    Stops when the relative stress decrease falls below ``rel_tol`` or after
    ``max_iter`` transforms. With ``strict`` set, any stress increase larger
    than 1e-12 raises :class:`StressIncreaseError`.
    """
    delta = _check_distances(distances)
    x = as_matrix(init.coords, "init").copy()
    n = delta.shape[0]
    if x.shape[0] != n:
        raise MDSError("init rows do not match the distance matrix")
    if rel_tol <= 0:
        raise MDSError("rel_tol must be positive")
    off = delta[~np.eye(n, dtype=bool)]
    if not np.any(off != 0):
        raise MDSError("all off-diagonal distances are zero")
    delta = 0.5 * (delta + delta.T)
    np.fill_diagonal(delta, 0.0)
    norm = float(np.vdot(delta, delta))

    def raw_stress(coords, dist):
        # sum (d - delta)^2 = sum d^2 - 2 sum d*delta + sum delta^2, with sum d^2 from coordinates
        centred = coords - coords.mean(axis=0)
        sum_d2 = 2.0 * n * float(np.vdot(centred, centred))
        return max(sum_d2 - 2.0 * float(np.vdot(dist, delta)) + norm, 0.0)

    dist = pairwise_distances(x)
    prev = raw_stress(x, dist) / norm
    history = [prev]
    it = 0
    for it in range(1, max_iter + 1):
        np.fill_diagonal(dist, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.divide(delta, dist)
        if not np.all(np.isfinite(ratio)):
            ratio[~np.isfinite(ratio)] = 0.0
        # Guttman transform: X <- B(X) X / n with B = diag(rowsum) - ratio
        x = (ratio.sum(axis=1)[:, None] * x - ratio @ x) / n
        dist = pairwise_distances(x)
        cur = raw_stress(x, dist) / norm
        history.append(cur)
        if strict and cur > prev + 1e-12:
            raise StressIncreaseError(f"stress rose from {prev!r} to {cur!r} at iteration {it}")
        if prev <= 0.0 or (prev - cur) / prev < rel_tol:
            break
        prev = cur
    return Embedding(
        x,
        source="mds",
        seed=init.seed,
        stress=history[-1],
        stress_history=history,
        n_iter=it,
    )


def reference_embed(
    features,
    d: int = 2,
    knn_k: int = diffusion.DEFAULT_KNN,
    decay_alpha: float = diffusion.DEFAULT_DECAY,
    t_max: int = diffusion.DEFAULT_T_MAX,
    log_floor: float = diffusion.DEFAULT_LOG_FLOOR,
    t: int | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
    seed: int = 0,
    knee: str = "two_segment",
) -> Embedding:
    """Diffusion potential distances -> classical MDS -> SMACOF."""
    model = diffusion.build_diffusion_model(
        features, knn_k=knn_k, decay_alpha=decay_alpha, t_max=t_max, log_floor=log_floor, t=t, knee=knee
    )
    init = classical_mds(model.potential, d, seed=seed)
    emb = smacof(model.potential, init, max_iter=max_iter, rel_tol=rel_tol)
    emb.diffusion = model
    return emb


def save_embedding_csv(emb: Embedding | np.ndarray, path, header: bool = True) -> None:
    coords = emb.coords if isinstance(emb, Embedding) else as_matrix(emb)
    head = ",".join(f"z{i}" for i in range(coords.shape[1])) if header else ""
    np.savetxt(path, coords, delimiter=",", header=head, comments="", fmt="%.17g")


def load_embedding_csv(path, header: bool = True, source: str = "mds") -> Embedding:
    coords = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    return Embedding(coords, source=source)
