"""Pipeline configuration: a line-oriented ``section.key = value`` format.

Blank lines and ``#`` comments are ignored. Every value is validated
against the preconditions of the module that consumes it before any
computation starts, so a bad file fails fast with exit code 1.

Example::

    dataset.name = swiss_roll
    dataset.n = 3250
    split.kind = middle_slice
    split.slice_count = 250
    train.epochs = 200
    run.seeds = 0,1,2
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import diffusion
from .autoencoder import DESK_WIDTHS, FULL_WIDTHS, TrainConfig
from .datasets import SplitSpec
from .mds import DEFAULT_MAX_ITER, DEFAULT_REL_TOL

DATASET_NAMES = ("swiss_roll", "rotating_object", "object_tracking", "csv")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetParams:
    name: str = "swiss_roll"
    n: int = 3250
    rotation_seed: int = 0
    n_angles: int = 360
    image_side: int = 16
    n_objects: int = 1
    bg_side: int = 32
    sprite_side: int = 8
    noise_sd: float = 0.1
    features_path: str = ""
    factors_path: str = ""
    header: bool = False
    factor_kind: str = "planar"


@dataclass
class SplitParams:
    kind: str = "middle_slice"
    test_fraction: float = 0.2
    slice_count: int = 250


@dataclass
class DiffusionParams:
    knn_k: int = diffusion.DEFAULT_KNN
    decay_alpha: float = diffusion.DEFAULT_DECAY
    t_max: int = diffusion.DEFAULT_T_MAX
    log_floor: float = diffusion.DEFAULT_LOG_FLOOR
    t: int = 0  # 0 selects t from the entropy curve
    knee: str = "two_segment"


@dataclass
class MDSParams:
    d: int = 2
    max_iter: int = DEFAULT_MAX_ITER
    rel_tol: float = DEFAULT_REL_TOL


@dataclass
class TrainParams:
    lambda_max: float = 100.0
    schedule_alpha: float = 0.2
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 128
    weight_decay: float = 1e-5
    widths: str = "desk"
    standardize_reference: bool = True


@dataclass
class StitchParams:
    enabled: bool = False
    batch_size: int = 1000
    anchor_count: int = 0  # 0 means max(50, 2% of n)


@dataclass
class PipelineConfig:
    dataset: DatasetParams = field(default_factory=DatasetParams)
    split: SplitParams = field(default_factory=SplitParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    mds: MDSParams = field(default_factory=MDSParams)
    train: TrainParams = field(default_factory=TrainParams)
    stitch: StitchParams = field(default_factory=StitchParams)
    output_dir: str = "runs/default"
    seeds: List[int] = field(default_factory=lambda: [0])

    def split_spec(self, seed: int) -> SplitSpec:
        if self.split.kind == "middle_slice":
            return SplitSpec("middle_slice", slice_count=self.split.slice_count, seed=seed)
        return SplitSpec("random_fraction", test_fraction=self.split.test_fraction, seed=seed)

    def train_config(self, mode: str, seed: int) -> TrainConfig:
        t = self.train
        return TrainConfig(
            lambda_max=t.lambda_max,
            schedule_alpha=t.schedule_alpha,
            epochs=t.epochs,
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            weight_decay=t.weight_decay,
            seed=seed,
            mode=mode,
            standardize_reference=t.standardize_reference,
        )

    def hidden_widths(self) -> Tuple[int, ...]:
        return parse_widths(self.train.widths)

    def to_text(self) -> str:
        lines = []
        for section in ("dataset", "split", "diffusion", "mds", "train", "stitch"):
            for f in dataclasses.fields(getattr(self, section)):
                lines.append(f"{section}.{f.name} = {_format(getattr(getattr(self, section), f.name))}")
        lines.append(f"output.dir = {self.output_dir}")
        lines.append("run.seeds = " + ",".join(str(s) for s in self.seeds))
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_widths(text: str) -> Tuple[int, ...]:
    if text == "desk":
        return DESK_WIDTHS
    if text == "full":
        return FULL_WIDTHS
    try:
        widths = tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError:
        raise ConfigError(f"train.widths: expected desk, full or a comma list, got {text!r}") from None
    if not widths or min(widths) < 1:
        raise ConfigError("train.widths must list positive layer sizes")
    return widths


def parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seed list has duplicates")
    return seeds


def _coerce(raw: str, current, where: str):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def parse_config(text: str) -> PipelineConfig:
    cfg = PipelineConfig()
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: {key} already set on line {seen[key]}")
        seen[key] = lineno
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"{where}: key {key!r} lacks a section")
        if key == "output.dir":
            cfg.output_dir = value
        elif key == "run.seeds":
            cfg.seeds = parse_seeds(value)
        elif section in ("dataset", "split", "diffusion", "mds", "train", "stitch"):
            block = getattr(cfg, section)
            if not hasattr(block, name):
                raise ConfigError(f"{where}: unknown key {key!r}")
            setattr(block, name, _coerce(value, getattr(block, name), f"{where} ({key})"))
        else:
            raise ConfigError(f"{where}: unknown section {section!r}")
    validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def dataset_size(cfg: PipelineConfig) -> Optional[int]:
    ds = cfg.dataset
    if ds.name == "rotating_object":
        return ds.n_angles * ds.n_objects
    if ds.name == "csv":
        return None
    return ds.n


def validate(cfg: PipelineConfig) -> None:
    """Check every parameter against its consumer's preconditions."""
    ds = cfg.dataset
    _need(ds.name in DATASET_NAMES, f"dataset.name must be one of {DATASET_NAMES}")
    if ds.name == "swiss_roll":
        _need(ds.n >= 10, "dataset.n must be >= 10 for swiss_roll")
    elif ds.name == "rotating_object":
        _need(ds.n_angles >= 8, "dataset.n_angles must be >= 8")
        _need(ds.image_side >= 8, "dataset.image_side must be >= 8")
        _need(ds.n_objects >= 1, "dataset.n_objects must be >= 1")
    elif ds.name == "object_tracking":
        _need(ds.n >= 2, "dataset.n must be >= 2")
        _need(0 < ds.sprite_side < ds.bg_side, "need 0 < dataset.sprite_side < dataset.bg_side")
        _need(ds.noise_sd >= 0, "dataset.noise_sd must be >= 0")
    else:
        _need(bool(ds.features_path), "dataset.features_path is required for csv datasets")
        _need(bool(ds.factors_path), "dataset.factors_path is required for csv datasets")
        _need(ds.factor_kind in ("planar", "circular"), "dataset.factor_kind must be planar or circular")

    sp = cfg.split
    _need(sp.kind in ("middle_slice", "random_fraction"), "split.kind must be middle_slice or random_fraction")
    kind = ds.factor_kind if ds.name == "csv" else ("planar" if ds.name in ("swiss_roll", "object_tracking") else "circular")
    n = dataset_size(cfg)
    if sp.kind == "middle_slice":
        _need(kind == "planar", "split.kind = middle_slice needs planar factors")
        _need(sp.slice_count >= 1, "split.slice_count must be >= 1")
        if n is not None:
            _need(sp.slice_count < n, "split.slice_count must be smaller than the dataset")
    else:
        _need(0.0 < sp.test_fraction < 1.0, "split.test_fraction must be in (0, 1)")

    df = cfg.diffusion
    _need(df.knn_k >= 1, "diffusion.knn_k must be >= 1")
    _need(df.decay_alpha > 0, "diffusion.decay_alpha must be > 0")
    _need(df.t_max >= 3, "diffusion.t_max must be >= 3")
    _need(df.log_floor > 0, "diffusion.log_floor must be > 0")
    _need(df.t >= 0, "diffusion.t must be >= 0 (0 = automatic)")
    _need(df.knee in diffusion.KNEE_STRATEGIES, f"diffusion.knee must be one of {sorted(diffusion.KNEE_STRATEGIES)}")

    md = cfg.mds
    _need(md.d >= 1, "mds.d must be >= 1")
    _need(md.max_iter >= 1, "mds.max_iter must be >= 1")
    _need(md.rel_tol > 0, "mds.rel_tol must be > 0")

    tr = cfg.train
    parse_widths(tr.widths)
    try:
        TrainConfig(
            lambda_max=tr.lambda_max,
            schedule_alpha=tr.schedule_alpha,
            epochs=tr.epochs,
            learning_rate=tr.learning_rate,
            batch_size=tr.batch_size,
            weight_decay=tr.weight_decay,
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    st = cfg.stitch
    if st.enabled:
        _need(st.batch_size >= 2, "stitch.batch_size must be >= 2")
        anchors = st.anchor_count
        if n is not None and anchors == 0:
            from .stitch import default_anchor_count

            anchors = default_anchor_count(n)
        _need(anchors < st.batch_size, "stitch.anchor_count must be smaller than stitch.batch_size")
        _need(anchors == 0 or anchors > md.d, "stitch.anchor_count must exceed mds.d")
        _need(st.batch_size > df.knn_k + 1, "stitch.batch_size must exceed diffusion.knn_k + 1")
    _need(bool(cfg.output_dir), "output.dir must not be empty")
    _need(len(cfg.seeds) >= 1, "run.seeds must list at least one seed")
