"""Synthetic manifold generators, CSV ingestion and train/test splitting.

All generators draw from ``numpy.random.Generator(PCG64(seed))`` so a given
``(parameters, seed)`` pair always yields the same dataset.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

FACTOR_KINDS = ("planar", "circular", "clustered-circular")
SWISS_ROLL_HEIGHT = 21.0


class DatasetError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide seeded generator (PCG64, 64-bit state)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass
class LabeledDataset:
    features: np.ndarray
    factors: np.ndarray
    factor_kind: str = "planar"
    class_labels: Optional[np.ndarray] = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        factors = np.asarray(self.factors, dtype=np.float64)
        self.factors = factors.reshape(-1, 1) if factors.ndim == 1 else factors
        if self.features.ndim != 2:
            raise DatasetError("features must be 2-D")
        if self.features.shape[0] != self.factors.shape[0]:
            raise DatasetError(
                f"features have {self.features.shape[0]} rows, factors have {self.factors.shape[0]}"
            )
        if self.factor_kind not in FACTOR_KINDS:
            raise DatasetError(f"unknown factor_kind {self.factor_kind!r}")
        if self.class_labels is not None:
            self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
            if self.class_labels.shape != (self.n,):
                raise DatasetError("class_labels must have one entry per row")
        if self.factor_kind == "clustered-circular" and self.class_labels is None:
            raise DatasetError("clustered-circular datasets need class_labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.class_labels is None else self.class_labels[idx]
        return dataclasses.replace(
            self,
            features=self.features[idx],
            factors=self.factors[idx],
            class_labels=labels,
            meta=dict(self.meta),
        )


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    test_fraction: Optional[float] = None
    slice_count: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "random_fraction":
            if self.test_fraction is None or self.slice_count is not None:
                raise DatasetError("random_fraction split needs test_fraction only")
            if not 0.0 < self.test_fraction < 1.0:
                raise DatasetError("test_fraction must lie in (0, 1)")
        elif self.kind == "middle_slice":
            if self.slice_count is None or self.test_fraction is not None:
                raise DatasetError("middle_slice split needs slice_count only")
            if self.slice_count < 1:
                raise DatasetError("slice_count must be positive")
        else:
            raise DatasetError(f"unknown split kind {self.kind!r}")


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix from a QR factorisation."""
    rng = make_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def swiss_roll_coordinates(u, h) -> np.ndarray:
    """Map uniform draws ``u`` in [0, 1) and heights ``h`` onto the roll."""
    u = np.asarray(u, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    t = 1.5 * np.pi * (1.0 + 2.0 * u)
    return np.column_stack([t * np.cos(t), h, t * np.sin(t)])


def make_swiss_roll(n: int, seed: int, rotation_seed: int = 0) -> LabeledDataset:
    """Swiss Roll standardised to unit variance per axis, then rotated.

    Factors are ``(t, h)``: the roll parameter and the height.
    """
    if n < 10:
        raise DatasetError("swiss roll needs n >= 10")
    rng = make_rng(seed)
    u = rng.random(n)
    h = SWISS_ROLL_HEIGHT * rng.random(n)
    raw = swiss_roll_coordinates(u, h)
    white = (raw - raw.mean(axis=0)) / raw.std(axis=0)
    rotation = random_orthogonal(3, rotation_seed)
    t = 1.5 * np.pi * (1.0 + 2.0 * u)
    return LabeledDataset(
        features=white @ rotation,
        factors=np.column_stack([t, h]),
        factor_kind="planar",
        name="swiss_roll",
        meta={"rotation": rotation, "seed": seed},
    )


def _blob_pattern(side: int, rng: np.random.Generator, n_blobs: int = 4) -> np.ndarray:
    """Asymmetric sum of Gaussian blobs, tapered to zero outside the inscribed disc."""
    c = (side - 1) / 2.0
    radius = side / 2.0
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.zeros((side, side))
    for _ in range(n_blobs):
        r = radius * 0.45 * np.sqrt(rng.random())
        phi = 2.0 * np.pi * rng.random()
        cx, cy = c + r * np.cos(phi), c + r * np.sin(phi)
        sigma = radius * (0.12 + 0.12 * rng.random())
        amp = 0.4 + 0.6 * rng.random()
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))
    rr = np.hypot(xx - c, yy - c) / radius
    taper = np.clip((0.95 - rr) / 0.25, 0.0, 1.0)
    img *= np.sin(0.5 * np.pi * taper) ** 2
    return img / img.max()


def rotate_image(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate ``img`` counter-clockwise about its centre with bilinear sampling."""
    side = img.shape[0]
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    ca, sa = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source location
    sx = ca * (xx - c) + sa * (yy - c) + c
    sy = -sa * (xx - c) + ca * (yy - c) + c
    out = ndimage.map_coordinates(img, [sy, sx], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def make_rotating_object(
    n_angles: int, image_side: int, n_objects: int = 1, seed: int = 0
) -> LabeledDataset:
    """Full rotations of ``n_objects`` seeded blob images.

    Rows are object-major; factor column 0 is the rotation angle
    ``k * 2*pi / n_angles``.
    """
    if n_angles < 8 or image_side < 8 or n_objects < 1:
        raise DatasetError("need n_angles >= 8, image_side >= 8, n_objects >= 1")
    rng = make_rng(seed)
    angles = np.arange(n_angles) * (2.0 * np.pi / n_angles)
    rows, labels = [], []
    for obj in range(n_objects):
        base = _blob_pattern(image_side, rng)
        for a in angles:
            rows.append(rotate_image(base, a).ravel())
        labels.extend([obj] * n_angles)
    clustered = n_objects > 1
    return LabeledDataset(
        features=np.array(rows),
        factors=np.tile(angles, n_objects).reshape(-1, 1),
        factor_kind="clustered-circular" if clustered else "circular",
        class_labels=np.array(labels) if clustered else None,
        name="rotating_object",
        meta={"seed": seed, "n_angles": n_angles, "image_side": image_side},
    )


def make_object_tracking(
    n: int,
    bg_side: int = 32,
    sprite_side: int = 8,
    noise_sd: float = 0.1,
    seed: int = 0,
    background: float = 0.5,
) -> LabeledDataset:
    """A fixed sprite pasted at random offsets on a noisy grey background.

    Factors are the ``(x, y)`` offsets of the sprite's top-left corner.
    """
    if sprite_side >= bg_side:
        raise DatasetError("sprite must be smaller than the background")
    if noise_sd < 0 or n < 1:
        raise DatasetError("noise_sd must be >= 0 and n >= 1")
    rng = make_rng(seed)
    sprite = rng.random((sprite_side, sprite_side))
    span = bg_side - sprite_side
    offsets = rng.integers(0, span + 1, size=(n, 2))
    noise = rng.standard_normal((n, bg_side, bg_side))
    frames = np.clip(background + noise_sd * noise, 0.0, 1.0)
    for k, (x, y) in enumerate(offsets):
        frames[k, y : y + sprite_side, x : x + sprite_side] = sprite
    return LabeledDataset(
        features=frames.reshape(n, -1),
        factors=offsets.astype(np.float64),
        factor_kind="planar",
        name="object_tracking",
        meta={"seed": seed, "bg_side": bg_side, "sprite_side": sprite_side},
    )


def split_indices(ds: LabeledDataset, spec: SplitSpec):
    """Sorted ``(train_idx, test_idx)`` row indices for ``spec``."""
    n = ds.n
    if spec.kind == "random_fraction":
        n_test = int(round(spec.test_fraction * n))
        if not 0 < n_test < n:
            raise DatasetError("split leaves an empty partition")
        perm = make_rng(spec.seed).permutation(n)
        test_idx = np.sort(perm[:n_test])
    else:
        if ds.factor_kind != "planar":
            raise DatasetError("middle_slice split needs planar factors")
        if spec.slice_count >= n:
            raise DatasetError("slice_count must be smaller than the dataset")
        first = ds.factors[:, 0]
        gap = np.abs(first - np.median(first))
        test_idx = np.sort(np.argsort(gap, kind="stable")[: spec.slice_count])
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return np.flatnonzero(~mask), test_idx


def split(ds: LabeledDataset, spec: SplitSpec):
    """Partition ``ds`` into ``(train, test)``; both keep original row order."""
    train_idx, test_idx = split_indices(ds, spec)
    return ds.subset(train_idx), ds.subset(test_idx)


def load_csv_dataset(
    features_path,
    factors_path=None,
    header: bool = False,
    factor_kind: str = "planar",
    name: Optional[str] = None,
) -> LabeledDataset:
    """Read a feature CSV and an optional factor sidecar CSV (same row count)."""
    skip = 1 if header else 0
    x = np.loadtxt(features_path, delimiter=",", skiprows=skip, ndmin=2)
    if factors_path is not None:
        f = np.loadtxt(factors_path, delimiter=",", skiprows=skip, ndmin=2)
    else:
        f = np.zeros((x.shape[0], 1))
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"{features_path}: non-finite feature values")
    return LabeledDataset(x, f, factor_kind=factor_kind, name=name or Path(features_path).stem)


def save_csv_dataset(ds: LabeledDataset, features_path, factors_path, header: bool = False):
    fh = ",".join(f"x{i}" for i in range(ds.ambient_dim)) if header else ""
    gh = ",".join(f"factor{i}" for i in range(ds.factors.shape[1])) if header else ""
    np.savetxt(features_path, ds.features, delimiter=",", header=fh, comments="", fmt="%.17g")
    np.savetxt(factors_path, ds.factors, delimiter=",", header=gh, comments="", fmt="%.17g")
