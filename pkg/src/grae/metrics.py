"""Evaluation: linear-probe R^2 (planar, circular and per-cluster),
reconstruction MSE and MSE relative to a baseline model.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .numerics import as_matrix, least_squares

ANGLE_GRID = 720
TWO_PI = 2.0 * np.pi


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    r2: float
    mse: float
    rel_mse_pct: Optional[float]
    n_test: int
    dataset_name: str
    model_name: str
    seed: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _r2_column(design: np.ndarray, y: np.ndarray) -> Optional[float]:
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return None
    beta = least_squares(design, y)
    ssr = float(np.sum((design @ beta - y) ** 2))
    return 1.0 - ssr / sst


def r2_linear(embedding, factors) -> float:
    """Mean over factor columns of the R^2 of an OLS fit (with intercept)."""
    e = as_matrix(embedding, "embedding")
    f = np.asarray(factors, dtype=np.float64)
    f = f.reshape(-1, 1) if f.ndim == 1 else f
    if e.shape[0] != f.shape[0]:
        raise MetricsError("embedding and factors differ in row count")
    design = np.column_stack([np.ones(e.shape[0]), e])
    scores = []
    for j in range(f.shape[1]):
        r2 = _r2_column(design, f[:, j])
        if r2 is None:
            warnings.warn(f"factor column {j} is constant; scored as R^2 = 0", RuntimeWarning, stacklevel=2)
            r2 = 0.0
        scores.append(r2)
    return float(np.mean(scores))


def _simple_r2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise R^2 of regressing ``y`` on each row of ``x`` (squared correlation)."""
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean()
    sxx = np.sum(xc * xc, axis=-1)
    sxy = xc @ yc
    syy = float(yc @ yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(sxx > 0, sxy * sxy / (sxx * syy), 0.0)
    return r2


def _unwrap_to_fit(pred: np.ndarray, truth: np.ndarray, max_rounds: int = 10) -> np.ndarray:
    """Move each predicted angle by a multiple of 2*pi towards the fitted line."""
    for _ in range(max_rounds):
        slope, intercept = np.polyfit(pred, truth, 1)
        shifts = np.array([-TWO_PI, 0.0, TWO_PI])
        cand = pred[:, None] + shifts[None, :]
        err = np.abs(truth[:, None] - (intercept + slope * cand))
        new = cand[np.arange(pred.size), np.argmin(err, axis=1)]
        if np.array_equal(new, pred):
            break
        pred = new
    return pred


def r2_circular(embedding, angles, grid: int = ANGLE_GRID) -> float:
    """R^2 between ground-truth angles and polar angles of a centred 2-D embedding.

    The embedded angles are aligned to the ground truth by searching a
    global offset (``grid`` steps) and an orientation sign; angles that
    land on the wrong side of the branch cut are then unwrapped towards
    the fitted line before the final regression.
    """
    e = as_matrix(embedding, "embedding")
    g = np.mod(np.asarray(angles, dtype=np.float64).ravel(), TWO_PI)
    if e.shape[1] != 2:
        raise MetricsError("circular R^2 needs a 2-D embedding")
    if e.shape[0] != g.size:
        raise MetricsError("embedding and angles differ in row count")
    c = e - e.mean(axis=0)
    radius = np.hypot(c[:, 0], c[:, 1])
    if radius.max() <= 1e-12 * max(1.0, float(np.abs(e).max())):
        raise MetricsError("degenerate embedding: all points at the centre")
    theta = np.arctan2(c[:, 1], c[:, 0])
    offsets = np.arange(grid) * (TWO_PI / grid)
    best_r2, best = -np.inf, None
    for sign in (1.0, -1.0):
        aligned = np.mod(sign * theta[None, :] + offsets[:, None], TWO_PI)
        scores = _simple_r2(aligned, g)
        k = int(np.argmax(scores))
        if scores[k] > best_r2:
            best_r2, best = float(scores[k]), aligned[k]
    pred = _unwrap_to_fit(best, g)
    return float(_simple_r2(pred[None, :], g)[0])


def r2_clustered(embedding, factors_or_angles, class_labels, circular: bool = False) -> float:
    """Unweighted mean of per-class R^2 (circular or linear)."""
    e = as_matrix(embedding, "embedding")
    f = np.asarray(factors_or_angles, dtype=np.float64)
    labels = np.asarray(class_labels)
    if labels.shape[0] != e.shape[0] or f.shape[0] != e.shape[0]:
        raise MetricsError("labels, factors and embedding must share row count")
    scores = []
    for cls in np.unique(labels):
        mask = labels == cls
        if mask.sum() < e.shape[1] + 2:
            warnings.warn(f"class {cls} has only {int(mask.sum())} points; excluded", RuntimeWarning, stacklevel=2)
            continue
        if circular:
            scores.append(r2_circular(e[mask], f[mask].ravel() if f.ndim > 1 else f[mask]))
        else:
            scores.append(r2_linear(e[mask], f[mask]))
    if not scores:
        raise MetricsError("no class large enough to score")
    return float(np.mean(scores))


def reconstruction_mse(x, x_hat) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(x_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def relative_mse(mse_model: float, mse_baseline: float) -> float:
    """Percent change of ``mse_model`` relative to ``mse_baseline``."""
    if mse_baseline <= 0:
        raise MetricsError("baseline MSE must be positive")
    return 100.0 * (mse_model - mse_baseline) / mse_baseline


def score_embedding(latent, dataset) -> float:
    """Dispatch to the R^2 variant matching ``dataset.factor_kind``."""
    kind = dataset.factor_kind
    if kind == "planar":
        if dataset.class_labels is not None:
            return r2_clustered(latent, dataset.factors, dataset.class_labels)
        return r2_linear(latent, dataset.factors)
    if kind == "circular":
        return r2_circular(latent, dataset.factors[:, 0])
    return r2_clustered(latent, dataset.factors[:, 0], dataset.class_labels, circular=True)


def write_jsonl(reports: Iterable[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_jsonl(path) -> List[MetricsReport]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(MetricsReport(**json.loads(line)))
    return out


TABLE_COLUMNS = ["dataset", "model", "runs", "r2_mean", "r2_std", "mse_mean", "mse_std", "rel_mse_pct"]


def aggregate(reports: Sequence[MetricsReport], baseline_model: str = "AE") -> List[dict]:
    """Per (dataset, model) mean and std over seeds, one row per model.

    Relative MSE compares mean MSE against the baseline model's mean MSE
    on the same dataset.
    """
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.dataset_name, r.model_name), []).append(r)
    base = {
        ds: float(np.mean([r.mse for r in rs]))
        for (ds, model), rs in groups.items()
        if model == baseline_model
    }
    rows = []
    for (ds, model), rs in sorted(groups.items()):
        r2 = np.array([r.r2 for r in rs])
        mse = np.array([r.mse for r in rs])
        rel = relative_mse(float(mse.mean()), base[ds]) if ds in base and base[ds] > 0 else None
        rows.append(
            {
                "dataset": ds,
                "model": model,
                "runs": len(rs),
                "r2_mean": float(r2.mean()),
                "r2_std": float(r2.std()),
                "mse_mean": float(mse.mean()),
                "mse_std": float(mse.std()),
                "rel_mse_pct": rel,
            }
        )
    return rows


def write_table(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in TABLE_COLUMNS})
