"""Mini-batch embedding with shared anchor points and Procrustes stitching.

Large datasets are split into batches that all contain the same anchor
rows. Each batch is embedded on its own; the batch embeddings are then
aligned onto batch 0 through their anchors and merged.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from .datasets import make_rng
from .mds import Embedding
from .numerics import as_matrix, symmetric_eigen

RESIDUAL_WARN_FRACTION = 0.25


class StitchError(ValueError):
    pass


class AnchorResidualWarning(UserWarning):
    pass


@dataclass
class StitchPlan:
    batches: List[np.ndarray]
    anchor_indices: np.ndarray

    @property
    def batch_count(self) -> int:
        return len(self.batches)

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_indices)

    def unique_indices(self, i: int) -> np.ndarray:
        return self.batches[i][self.n_anchors :]

    @property
    def n(self) -> int:
        return self.n_anchors + sum(len(b) - self.n_anchors for b in self.batches)


@dataclass
class SimilarityTransform:
    rotation: np.ndarray
    scale: float
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * (as_matrix(points) @ self.rotation) + self.translation

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``inner`` first, then ``self``."""
        return SimilarityTransform(
            rotation=inner.rotation @ self.rotation,
            scale=self.scale * inner.scale,
            translation=self.scale * (inner.translation @ self.rotation) + self.translation,
        )


def default_anchor_count(n: int) -> int:
    return max(50, int(math.ceil(0.02 * n)))


def make_plan(n: int, batch_size: int, anchor_count: int, seed: int = 0) -> StitchPlan:
    """Sample anchors, then deal the remaining rows round-robin into batches.

    Each batch index array lists the anchors first (in a shared order)
    followed by the batch's own rows.
    """
    if not 0 < anchor_count < batch_size:
        raise StitchError("need 0 < anchor_count < batch_size")
    if n <= batch_size:
        raise StitchError("need n > batch_size")
    rng = make_rng(seed)
    anchors = np.sort(rng.choice(n, size=anchor_count, replace=False))
    mask = np.ones(n, dtype=bool)
    mask[anchors] = False
    rest = rng.permutation(np.flatnonzero(mask))
    n_batches = math.ceil((n - anchor_count) / (batch_size - anchor_count))
    batches = [np.concatenate([anchors, np.sort(rest[b::n_batches])]) for b in range(n_batches)]
    return StitchPlan(batches=batches, anchor_indices=anchors)


def _orthogonal_polar_factor(m: np.ndarray) -> np.ndarray:
    """Orthogonal U V^T from M = U S V^T, using only a symmetric eigensolver.

    Rank-deficient directions are completed with an orthonormal basis of
    the left null space.
    """
    dim = m.shape[0]
    w, v = symmetric_eigen(m.T @ m)
    sing = np.sqrt(np.maximum(w, 0.0))
    tol = max(sing[0], 1.0) * 1e-12 if dim else 0.0
    keep = sing > tol
    u = np.zeros_like(m)
    u[:, keep] = (m @ v[:, keep]) / sing[keep]
    if not keep.all():
        # complete U with directions orthogonal to the retained columns
        basis = u[:, keep]
        for col in np.flatnonzero(~keep):
            for e in np.eye(dim):
                cand = e - basis @ (basis.T @ e)
                nrm = np.linalg.norm(cand)
                if nrm > 1e-8:
                    cand /= nrm
                    u[:, col] = cand
                    basis = np.column_stack([basis, cand])
                    break
    return u @ v.T


def procrustes(source, target) -> SimilarityTransform:
    """Least-squares similarity transform with ``s * source @ R + t ~ target``.

    Reflections are allowed (``det R`` may be -1).
    """
    a = as_matrix(source, "source")
    b = as_matrix(target, "target")
    if a.shape != b.shape:
        raise StitchError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < a.shape[1] + 1:
        raise StitchError("need at least d + 1 corresponding points")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    a0, b0 = a - mu_a, b - mu_b
    norm_a = float(np.sum(a0 * a0))
    if norm_a <= 1e-300:
        raise StitchError("degenerate source configuration")
    cross = a0.T @ b0
    rotation = _orthogonal_polar_factor(cross)
    scale = float(np.trace(rotation.T @ cross)) / norm_a
    if scale <= 0:
        raise StitchError("non-positive scale; configurations are unrelated")
    translation = mu_b - scale * (mu_a @ rotation)
    return SimilarityTransform(rotation, scale, translation)


def procrustes_residual(source, target, transform: SimilarityTransform) -> float:
    """Root-mean-square distance between transformed source and target rows."""
    diff = transform.apply(source) - as_matrix(target)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def diameter(coords) -> float:
    c = as_matrix(coords)
    return float(np.linalg.norm(c.max(axis=0) - c.min(axis=0)))


def stitch_embeddings(
    plan: StitchPlan,
    batch_embeddings: Sequence[Embedding],
    warn_fraction: float = RESIDUAL_WARN_FRACTION,
) -> Embedding:
    """Align every batch onto batch 0 through the anchors and merge.

    Anchor coordinates are the mean of their aligned copies; the output is
    ordered by original row index.
    """
    if len(batch_embeddings) != plan.batch_count:
        raise StitchError("need one embedding per batch")
    coords = [as_matrix(e.coords if isinstance(e, Embedding) else e) for e in batch_embeddings]
    dim = coords[0].shape[1]
    for i, (c, idx) in enumerate(zip(coords, plan.batches)):
        if c.shape != (len(idx), dim):
            raise StitchError(f"batch {i}: embedding shape {c.shape} does not match plan")
    k = plan.n_anchors
    n = int(max(int(b.max()) for b in plan.batches)) + 1
    out = np.full((n, dim), np.nan)
    ref_anchor = coords[0][:k]
    anchor_sum = ref_anchor.copy()
    out[plan.batches[0][k:]] = coords[0][k:]
    residuals = [0.0]
    for i in range(1, plan.batch_count):
        tr = procrustes(coords[i][:k], ref_anchor)
        aligned = tr.apply(coords[i])
        res = procrustes_residual(coords[i][:k], ref_anchor, tr)
        residuals.append(res)
        limit = warn_fraction * diameter(ref_anchor)
        if res > limit:
            warnings.warn(
                f"batch {i}: anchor RMS residual {res:.4g} exceeds {limit:.4g}",
                AnchorResidualWarning,
                stacklevel=2,
            )
        anchor_sum += aligned[:k]
        out[plan.batches[i][k:]] = aligned[k:]
    out[plan.anchor_indices] = anchor_sum / plan.batch_count
    if np.isnan(out).any():
        raise StitchError("plan does not cover every row")
    seed = batch_embeddings[0].seed if isinstance(batch_embeddings[0], Embedding) else 0
    emb = Embedding(out, source="stitched", seed=seed)
    emb.anchor_residuals = residuals
    return emb


def embed_batches(features, plan: StitchPlan, embed: Callable[[np.ndarray], Embedding]) -> List[Embedding]:
    """Embed every batch independently with ``embed``."""
    x = as_matrix(features, "features")
    return [embed(x[idx]) for idx in plan.batches]


def stitched_reference(features, plan: StitchPlan, embed: Callable[[np.ndarray], Embedding]) -> Embedding:
    return stitch_embeddings(plan, embed_batches(features, plan, embed))


def write_plan(plan: StitchPlan, path) -> None:
    """Plain-text manifest: one ``anchors:`` line, then ``batch <i>:`` lines.

    Indices are whitespace separated; batch lines list anchors first.
    """
    lines = ["# stitch plan v1", "anchors: " + " ".join(map(str, plan.anchor_indices))]
    for i, idx in enumerate(plan.batches):
        lines.append(f"batch {i}: " + " ".join(map(str, idx)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_plan(path) -> StitchPlan:
    anchors, batches = None, {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(":")
        values = np.array([int(v) for v in rest.split()], dtype=np.int64)
        if key == "anchors":
            anchors = values
        elif key.startswith("batch"):
            batches[int(key.split()[1])] = values
        else:
            raise StitchError(f"bad plan line: {raw!r}")
    if anchors is None or not batches:
        raise StitchError("plan manifest lacks anchors or batches")
    ordered = [batches[i] for i in range(len(batches))]
    k = len(anchors)
    for b in ordered:
        if not np.array_equal(b[:k], anchors):
            raise StitchError("every batch must start with the anchor indices")
    return StitchPlan(batches=ordered, anchor_indices=anchors)
