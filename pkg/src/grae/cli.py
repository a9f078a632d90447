"""Command-line pipeline runner.

Subcommands share one configuration file and one run directory::

    grae generate --config swiss.cfg --out runs/swiss
    grae embed    --config swiss.cfg --dump-intermediates
    grae stitch   --config swiss.cfg
    grae train    --config swiss.cfg --seed 0,1
    grae evaluate --config swiss.cfg
    grae plot     --config swiss.cfg
    grae run      --config swiss.cfg          # all of the above

Each seed writes into ``<out>/seed_<s>/``; later stages reuse artifacts
left there by earlier ones. Exit codes: 0 success, 1 configuration or
input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autoencoder as ae
from . import datasets, diffusion, mds, metrics, plotting, stitch
from .config import ConfigError, PipelineConfig, load_config, parse_seeds, validate
from .numerics import NumericsError

log = logging.getLogger("grae")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
MODELS = (("GRAE", "grae"), ("AE", "vanilla"))
NUMERIC_ERRORS = (
    NumericsError,
    diffusion.DiffusionError,
    mds.MDSError,
    mds.StressIncreaseError,
    stitch.StitchError,
    ae.TrainingDivergedError,
    metrics.MetricsError,
    ArithmeticError,
    np.linalg.LinAlgError,
)
INPUT_ERRORS = (ConfigError, datasets.DatasetError, ae.AutoencoderError, OSError)


class RunContext:
    """Run directory bookkeeping: config copy, manifest and artifact list."""

    def __init__(self, cfg: PipelineConfig, command: str, config_text: str):
        self.cfg = cfg
        self.command = command
        self.root = Path(cfg.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.txt").write_text(config_text, encoding="utf-8")
        self.artifacts: Dict[str, List[str]] = {}
        self.complete = False
        self.error: Optional[str] = None

    def seed_dir(self, seed: int) -> Path:
        d = self.root / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        return d

    def record(self, seed, path: Path) -> Path:
        key = "run" if seed is None else str(seed)
        rel = str(Path(path).relative_to(self.root))
        bucket = self.artifacts.setdefault(key, [])
        if rel not in bucket:
            bucket.append(rel)
        return path

    def write_manifest(self) -> None:
        manifest = {
            "command": self.command,
            "complete": self.complete,
            "error": self.error,
            "seeds": list(self.cfg.seeds),
            "dataset": self.cfg.dataset.name,
            "artifacts": self.artifacts,
        }
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _save_matrix(path: Path, arr: np.ndarray, header: str = "") -> Path:
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", header=header, comments="", fmt="%.17g")
    return path


# ---- stage 1: data -------------------------------------------------------

def build_dataset(cfg: PipelineConfig, seed: int) -> datasets.LabeledDataset:
    ds = cfg.dataset
    if ds.name == "swiss_roll":
        return datasets.make_swiss_roll(ds.n, seed, rotation_seed=ds.rotation_seed)
    if ds.name == "rotating_object":
        return datasets.make_rotating_object(ds.n_angles, ds.image_side, n_objects=ds.n_objects, seed=seed)
    if ds.name == "object_tracking":
        return datasets.make_object_tracking(
            ds.n, bg_side=ds.bg_side, sprite_side=ds.sprite_side, noise_sd=ds.noise_sd, seed=seed
        )
    return datasets.load_csv_dataset(ds.features_path, ds.factors_path, header=ds.header, factor_kind=ds.factor_kind)


def factor_kind_of(cfg: PipelineConfig) -> str:
    ds = cfg.dataset
    if ds.name == "rotating_object":
        return "clustered-circular" if ds.n_objects > 1 else "circular"
    if ds.name == "csv":
        return ds.factor_kind
    return "planar"


def stage_generate(ctx: RunContext, seed: int):
    cfg = ctx.cfg
    out = ctx.seed_dir(seed)
    data = build_dataset(cfg, seed)
    train_idx, test_idx = datasets.split_indices(data, cfg.split_spec(seed))
    ctx.record(seed, _save_matrix(out / "features.csv", data.features))
    ctx.record(seed, _save_matrix(out / "factors.csv", data.factors))
    if data.class_labels is not None:
        ctx.record(seed, _save_matrix(out / "labels.csv", data.class_labels[:, None].astype(np.float64)))
    is_test = np.zeros(data.n)
    is_test[test_idx] = 1.0
    ctx.record(seed, _save_matrix(out / "split.csv", is_test[:, None]))
    return data, train_idx, test_idx


def load_or_generate(ctx: RunContext, seed: int):
    out = ctx.root / f"seed_{seed}"
    if (out / "features.csv").exists() and (out / "split.csv").exists():
        x = np.loadtxt(out / "features.csv", delimiter=",", ndmin=2)
        f = np.loadtxt(out / "factors.csv", delimiter=",", ndmin=2)
        labels = None
        if (out / "labels.csv").exists():
            labels = np.loadtxt(out / "labels.csv", delimiter=",", ndmin=1).astype(np.int64)
        kind = factor_kind_of(ctx.cfg)
        data = datasets.LabeledDataset(x, f, factor_kind=kind, class_labels=labels, name=ctx.cfg.dataset.name)
        is_test = np.loadtxt(out / "split.csv", delimiter=",", ndmin=1) > 0.5
        return data, np.flatnonzero(~is_test), np.flatnonzero(is_test)
    return stage_generate(ctx, seed)


# ---- stage 2: reference embedding ----------------------------------------

def _embed_fn(cfg: PipelineConfig, seed: int):
    df, md = cfg.diffusion, cfg.mds

    def embed(x):
        return mds.reference_embed(
            x,
            d=md.d,
            knn_k=df.knn_k,
            decay_alpha=df.decay_alpha,
            t_max=df.t_max,
            log_floor=df.log_floor,
            t=df.t or None,
            max_iter=md.max_iter,
            rel_tol=md.rel_tol,
            seed=seed,
            knee=df.knee,
        )

    return embed


def stage_embed(ctx: RunContext, seed: int, data, train_idx, dump: bool = False, stitched: Optional[bool] = None):
    cfg = ctx.cfg
    out = ctx.seed_dir(seed)
    x = data.features[train_idx]
    embed = _embed_fn(cfg, seed)
    use_stitch = cfg.stitch.enabled if stitched is None else stitched
    if use_stitch:
        n = x.shape[0]
        anchors = cfg.stitch.anchor_count or stitch.default_anchor_count(n)
        plan = stitch.make_plan(n, cfg.stitch.batch_size, anchors, seed=seed)
        stitch.write_plan(plan, ctx.record(seed, out / "plan.txt"))
        batches = stitch.embed_batches(x, plan, embed)
        for i, b in enumerate(batches):
            mds.save_embedding_csv(b, ctx.record(seed, out / f"batch_{i}.csv"))
        ref = stitch.stitch_embeddings(plan, batches)
        log.info("seed %d: stitched %d batches, anchor residuals %s", seed, plan.batch_count,
                 ", ".join(f"{r:.3g}" for r in ref.anchor_residuals))
    else:
        ref = embed(x)
        model = ref.diffusion
        log.info("seed %d: reference t=%d, %d SMACOF iterations, stress %.4g", seed, model.t, ref.n_iter, ref.stress)
        if dump:
            ctx.record(seed, _save_matrix(out / "potential.csv", model.potential))
            t_col = np.arange(1, model.vne_curve.size + 1)
            ctx.record(seed, _save_matrix(out / "vne.csv", np.column_stack([t_col, model.vne_curve]), "t,entropy"))
            ctx.record(seed, _save_matrix(out / "stress.csv", np.asarray(ref.stress_history)[:, None], "stress"))
            (out / "diffusion.json").write_text(
                json.dumps({"t": model.t, "knn_k": model.knn_k, "decay_alpha": model.decay_alpha}) + "\n",
                encoding="utf-8",
            )
            ctx.record(seed, out / "diffusion.json")
    mds.save_embedding_csv(ref, ctx.record(seed, out / "reference.csv"))
    return ref


def load_or_embed(ctx: RunContext, seed: int, data, train_idx, dump: bool = False):
    path = ctx.root / f"seed_{seed}" / "reference.csv"
    if path.exists() and not dump:
        ref = mds.load_embedding_csv(path)
        if ref.n == len(train_idx):
            return ref
    return stage_embed(ctx, seed, data, train_idx, dump=dump)


# ---- stage 3: training ---------------------------------------------------

def stage_train(ctx: RunContext, seed: int, data, train_idx, reference):
    cfg = ctx.cfg
    out = ctx.seed_dir(seed)
    x = data.features[train_idx]
    widths = ae.desk_widths(x.shape[1], cfg.mds.d, cfg.hidden_widths())
    nets, histories = {}, {}
    for label, mode in MODELS:
        tcfg = cfg.train_config(mode, seed)
        start = time.perf_counter()
        net, history = ae.train(ae.init_network(widths, seed), x, reference if mode == "grae" else None, tcfg)
        log.info("seed %d: trained %s in %.1fs, final reconstruction %.4g", seed, label,
                 time.perf_counter() - start, history[-1].reconstruction)
        stem = label.lower()
        ae.save_checkpoint(net, ctx.record(seed, out / f"{stem}.ckpt"), tcfg)
        hist = np.array([[h.epoch, h.reconstruction, h.geometric, h.lambda_current, h.total] for h in history])
        ctx.record(seed, _save_matrix(out / f"{stem}_history.csv", hist, "epoch,reconstruction,geometric,lambda,total"))
        latent = ae.encode(net, data.features)
        mds.save_embedding_csv(latent, ctx.record(seed, out / f"{stem}_latent.csv"))
        nets[label], histories[label] = net, history
    return nets, histories


def load_nets(ctx: RunContext, seed: int):
    out = ctx.root / f"seed_{seed}"
    nets = {}
    for label, _ in MODELS:
        path = out / f"{label.lower()}.ckpt"
        if not path.exists():
            raise ConfigError(f"{path} missing; run 'train' first")
        nets[label], _ = ae.load_checkpoint(path)
    return nets


def load_histories(ctx: RunContext, seed: int):
    out = ctx.root / f"seed_{seed}"
    histories = {}
    for label, _ in MODELS:
        path = out / f"{label.lower()}_history.csv"
        if path.exists():
            rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            histories[label] = [ae.LossReport(r[1], r[2], r[3], int(r[0]), r[4]) for r in rows]
    return histories


# ---- stage 4: evaluation -------------------------------------------------

def stage_evaluate(ctx: RunContext, seed: int, data, test_idx, nets) -> List[metrics.MetricsReport]:
    test = data.subset(test_idx)
    scores = {}
    for label, _ in MODELS:
        z = ae.encode(nets[label], test.features)
        scores[label] = (metrics.score_embedding(z, test), metrics.reconstruction_mse(test.features, ae.decode(nets[label], z)))
    base = scores["AE"][1]
    reports = [
        metrics.MetricsReport(
            r2=r2,
            mse=mse,
            rel_mse_pct=metrics.relative_mse(mse, base) if base > 0 else None,
            n_test=test.n,
            dataset_name=ctx.cfg.dataset.name,
            model_name=label,
            seed=seed,
        )
        for label, (r2, mse) in scores.items()
    ]
    metrics.write_jsonl(reports, ctx.record(seed, ctx.seed_dir(seed) / "metrics.jsonl"))
    for r in reports:
        log.info("seed %d: %s R2=%.4f MSE=%.4g", seed, r.model_name, r.r2, r.mse)
    return reports


def write_aggregate(ctx: RunContext, reports: List[metrics.MetricsReport]) -> None:
    metrics.write_jsonl(reports, ctx.record(None, ctx.root / "metrics.jsonl"))
    metrics.write_table(metrics.aggregate(reports), ctx.record(None, ctx.root / "table.csv"))


# ---- stage 5: plots ------------------------------------------------------

def stage_plot(ctx: RunContext, seed: int, data, train_idx, test_idx, nets, histories=None) -> None:
    out = ctx.seed_dir(seed)
    mask = np.zeros(data.n, dtype=bool)
    mask[test_idx] = True
    colors = data.factors[:, 0]
    panels = []
    for label, _ in MODELS:
        z = ae.encode(nets[label], data.features)
        if z.shape[1] != 2:
            log.warning("seed %d: latent dimension %d, skipping scatter plots", seed, z.shape[1])
            return
        plotting.emit_scatter(z, colors, ctx.record(seed, out / f"{label.lower()}_scatter.svg"), test_mask=mask)
        panels.append((label, z[train_idx], z[test_idx], colors[test_idx]))
    fig = out / "report.png"
    plotting.save_report_figure(fig, panels, history=histories or None, title=f"{ctx.cfg.dataset.name}, seed {seed}")
    ctx.record(seed, fig)


# ---- command dispatch ----------------------------------------------------

def _cmd_generate(ctx, args):
    for seed in ctx.cfg.seeds:
        stage_generate(ctx, seed)


def _cmd_embed(ctx, args, stitched=None):
    for seed in ctx.cfg.seeds:
        data, train_idx, _ = load_or_generate(ctx, seed)
        if stitched is None:
            stage_embed(ctx, seed, data, train_idx, dump=args.dump_intermediates)
        else:
            stage_embed(ctx, seed, data, train_idx, dump=args.dump_intermediates, stitched=stitched)


def _cmd_stitch(ctx, args):
    _cmd_embed(ctx, args, stitched=True)


def _cmd_train(ctx, args):
    for seed in ctx.cfg.seeds:
        data, train_idx, _ = load_or_generate(ctx, seed)
        ref = load_or_embed(ctx, seed, data, train_idx, dump=args.dump_intermediates)
        stage_train(ctx, seed, data, train_idx, ref)


def _cmd_evaluate(ctx, args):
    reports = []
    for seed in ctx.cfg.seeds:
        data, _, test_idx = load_or_generate(ctx, seed)
        reports += stage_evaluate(ctx, seed, data, test_idx, load_nets(ctx, seed))
    write_aggregate(ctx, reports)


def _cmd_plot(ctx, args):
    for seed in ctx.cfg.seeds:
        data, train_idx, test_idx = load_or_generate(ctx, seed)
        stage_plot(ctx, seed, data, train_idx, test_idx, load_nets(ctx, seed), load_histories(ctx, seed))


def _cmd_run(ctx, args):
    reports = []
    for seed in ctx.cfg.seeds:
        data, train_idx, test_idx = stage_generate(ctx, seed)
        ref = stage_embed(ctx, seed, data, train_idx, dump=args.dump_intermediates)
        nets, histories = stage_train(ctx, seed, data, train_idx, ref)
        reports += stage_evaluate(ctx, seed, data, test_idx, nets)
        stage_plot(ctx, seed, data, train_idx, test_idx, nets, histories)
    write_aggregate(ctx, reports)


COMMANDS = {
    "generate": (_cmd_generate, "generate datasets and train/test splits"),
    "embed": (_cmd_embed, "compute the diffusion reference embedding of the training split"),
    "stitch": (_cmd_stitch, "compute the reference embedding by mini-batch stitching"),
    "train": (_cmd_train, "train the regularised and vanilla autoencoders"),
    "evaluate": (_cmd_evaluate, "score trained models on the test split"),
    "run": (_cmd_run, "full pipeline: generate, embed, train, evaluate, plot"),
    "plot": (_cmd_plot, "write SVG scatter plots and PNG report figures"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grae", description="Geometry-regularised autoencoder pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline configuration file")
        p.add_argument("--seed", help="comma-separated seed list, overrides run.seeds")
        p.add_argument("--out", help="run directory, overrides output.dir")
        p.add_argument("--dump-intermediates", action="store_true",
                       help="also write potential distances, entropy curve and stress history")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _thread_limit():
    raw = os.environ.get("GRAE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GRAE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("GRAE_THREADS must be a positive integer")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ctx = None
    try:
        limiter = _thread_limit()
        cfg = load_config(args.config)
        if args.seed:
            cfg.seeds = parse_seeds(args.seed)
        if args.out:
            cfg.output_dir = args.out
        validate(cfg)
        ctx = RunContext(cfg, args.command, Path(args.config).read_text(encoding="utf-8"))
        try:
            COMMANDS[args.command][0](ctx, args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
        ctx.complete = True
        return EXIT_OK
    except NUMERIC_ERRORS as exc:
        print(f"grae {args.command}: numerical failure: {exc}", file=sys.stderr)
        if ctx is not None:
            ctx.error = f"{type(exc).__name__}: {exc}"
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"grae {args.command}: {exc}", file=sys.stderr)
        if ctx is not None:
            ctx.error = f"{type(exc).__name__}: {exc}"
        return EXIT_CONFIG
    finally:
        if ctx is not None:
            ctx.write_manifest()


if __name__ == "__main__":
    sys.exit(main())
