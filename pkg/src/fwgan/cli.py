"""Command-line front end: ``fwgan train | eval | ratio | curves``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, datasets, evalkit, trainer
from .trainer import ConfigError, TrainConfig, TrainingAbort

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ABORT = 3

CONFIG_SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "FWGAN_OUTPUT_ROOT"


class InputError(Exception):
    """Bad user input that maps to exit code 2."""


# ---------------------------------------------------------------------------
# helpers


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def config_to_json(cfg: TrainConfig) -> str:
    return json.dumps({"schema_version": CONFIG_SCHEMA_VERSION, **cfg.to_dict()}, indent=2, sort_keys=True) + "\n"


def build_config(config_path: str | None, overrides: list[str]) -> TrainConfig:
    data: dict = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{config_path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InputError(f"{config_path}: expected a JSON object")
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise InputError(f"{config_path}: unsupported schema_version {version}")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise InputError(f"override {item!r} is not of the form key=value")
        data[key.strip()] = _parse_value(raw.strip())
    try:
        cfg = TrainConfig.from_dict(data)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    return cfg.validate()


def default_run_dir(cfg: TrainConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    name = Path(cfg.data_path).stem if cfg.is_tabular else cfg.dataset
    return root / f"{name}_{cfg.loss_variant}_seed{cfg.seed}"


def _load_checkpoint(path: str) -> trainer.TrainState:
    p = Path(path)
    if (p / "checkpoint" / "state.json").is_file():
        p = p / "checkpoint"
    if not (p / "state.json").is_file():
        raise InputError(f"no checkpoint found at {path}")
    try:
        return trainer.TrainState.load(p)
    except (ValueError, KeyError) as exc:
        raise InputError(f"unreadable checkpoint {path}: {exc}") from None


def _eval_data(state: trainer.TrainState, dataset: str | None, has_header: bool = False) -> trainer.DataBundle:
    cfg = state.config
    if dataset:
        if dataset in datasets.SYNTHETIC_NAMES:
            cfg = TrainConfig.from_dict({**cfg.to_dict(), "dataset": dataset, "data_path": None})
        else:
            # only the validation split matters here, so training-batch limits are relaxed
            changes = {"dataset": "csv", "data_path": dataset, "csv_has_header": has_header, "batch_size": 2, "critic_steps": 1}
            cfg = TrainConfig.from_dict({**cfg.to_dict(), **changes})
    cfg.validate()
    data = trainer.load_data(cfg)
    out_dim = state.generator.widths[-1]
    if data.valid.shape[1] != out_dim or state.critic.widths[0] != out_dim:
        raise InputError(
            f"checkpoint architecture emits {out_dim}-d samples but the dataset has {data.valid.shape[1]} columns"
        )
    return data


# ---------------------------------------------------------------------------
# commands


def _train_one(cfg: TrainConfig, run_dir: Path, checkpoint_every: int) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(run_dir / "config.json", config_to_json(cfg))
    start = time.perf_counter()
    result = trainer.train(
        cfg,
        checkpoint_dir=run_dir / "checkpoints" if checkpoint_every else None,
        checkpoint_every=checkpoint_every,
    )
    elapsed = time.perf_counter() - start
    evalkit.write_metrics_csv(run_dir / "metrics.csv", result.log)
    result.state.save(run_dir / "checkpoint")
    final = result.log[-1]
    manifest = {
        "config": cfg.to_dict(),
        "schema_version": CONFIG_SCHEMA_VERSION,
        "library_version": __version__,
        "wall_clock_seconds": elapsed,
        "artifacts": {
            "config": "config.json",
            "metrics": "metrics.csv",
            "checkpoint": "checkpoint",
            "checkpoints": "checkpoints" if checkpoint_every else None,
        },
        "bandwidths": {"h_kde": result.data.h_kde, "h_mmd": result.data.h_mmd},
        "final": {
            "epoch": final.epoch,
            "nll": None if math.isnan(final.nll) else final.nll,
            "mmd_x1e3": None if math.isnan(final.mmd) else final.mmd,
            "negative_estimates": evalkit.negative_estimate_count(result.log),
        },
    }
    _atomic_write(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _train_job(args: tuple[dict, str, int]) -> tuple[str, int, str]:
    cfg_dict, run_dir, every = args
    try:
        _train_one(TrainConfig.from_dict(cfg_dict), Path(run_dir), every)
    except TrainingAbort as exc:
        return run_dir, EXIT_ABORT, str(exc)
    return run_dir, EXIT_OK, ""


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.override or [])
    if args.print_config:
        sys.stdout.write(config_to_json(cfg))
        return EXIT_OK
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    jobs = []
    for seed in seeds:
        seeded = TrainConfig.from_dict({**cfg.to_dict(), "seed": seed})
        if args.out:
            run_dir = Path(args.out) if len(seeds) == 1 else Path(args.out) / f"seed{seed}"
        else:
            run_dir = default_run_dir(seeded)
        jobs.append((seeded.to_dict(), str(run_dir), args.checkpoint_every))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_train_job, jobs))
    else:
        outcomes = [_train_job(j) for j in jobs]
    code = EXIT_OK
    for run_dir, status, message in outcomes:
        if status == EXIT_OK:
            print(f"run_dir={run_dir}")
        else:
            print(f"error: training aborted in {run_dir}: {message}", file=sys.stderr)
            code = EXIT_ABORT
    return code


def cmd_eval(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    data = _eval_data(state, args.dataset, args.csv_has_header)
    h_kde = args.h_kde or data.h_kde
    h_mmd = args.h_mmd or data.h_mmd
    rng = np.random.default_rng(args.seed)
    gen = trainer.generate(state.generator, args.samples, state.config.latent_dim, rng)
    if not np.all(np.isfinite(gen)):
        print("error: generator produced non-finite samples", file=sys.stderr)
        return EXIT_ABORT
    nll = evalkit.kde_nll(gen, data.valid, h_kde)
    mmd = evalkit.mmd2_gaussian(gen, data.valid, h_mmd) * evalkit.MMD_REPORT_SCALE
    print(f"nll={nll!r} mmd_x1e3={mmd!r} h_kde={h_kde!r} h_mmd={h_mmd!r}")
    if args.out:
        values = [nll, mmd, h_kde, h_mmd]
        text = "nll,mmd_x1e3,h_kde,h_mmd\n" + ",".join(format(v, ".17g") for v in values) + "\n"
        _atomic_write(Path(args.out), text)
    return EXIT_OK


def _parse_box(text: str) -> tuple[float, float, float, float]:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        parts = []
    if len(parts) != 4 or parts[0] >= parts[1] or parts[2] >= parts[3]:
        raise InputError(f"--box expects xmin,xmax,ymin,ymax with min < max, got {text!r}")
    return parts[0], parts[1], parts[2], parts[3]


def cmd_ratio(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    if state.generator.widths[-1] != 2:
        raise InputError(f"ratio fields need a 2-D model; checkpoint emits {state.generator.widths[-1]}-d samples")
    if args.res < 2:
        raise InputError("--res must be at least 2")
    x0, x1, y0, y1 = _parse_box(args.box)
    grid = evalkit.Grid2D((x0, x1), (y0, y1), args.res, args.res)
    temp = args.temp if args.temp is not None else state.config.temp
    h = args.h_kde or state.config.h_kde or evalkit.DEFAULT_H_KDE
    rng = np.random.default_rng(args.seed)
    latent = state.config.latent_dim
    reference = trainer.generate(state.generator, args.samples, latent, rng)
    kde_samples = trainer.generate(state.generator, args.samples, latent, rng)
    points = grid.points()
    q_density = np.exp(evalkit.kde_log_density(kde_samples, points, h))
    ratio = evalkit.ratio_field(lambda x: trainer.critic_scores(state.critic, x), points, reference, temp)
    evalkit.write_ratio_csv(args.out, points, q_density, ratio)
    print(f"wrote {len(points)} rows to {args.out}")
    return EXIT_OK


def cmd_curves(args) -> int:
    run = Path(args.run)
    path = run if run.is_file() else run / "metrics.csv"
    if not path.is_file():
        raise InputError(f"no metrics.csv at {args.run}")
    if args.window < 1:
        raise InputError("--window must be at least 1")
    try:
        log = evalkit.read_metrics_csv(path)
    except (ValueError, IndexError) as exc:
        raise InputError(str(exc)) from None
    if not log:
        raise InputError(f"{path} holds no records")
    smooth = evalkit.divergence_curve(log, args.window)
    out = Path(args.out) if args.out else path.with_name("curve.csv")
    lines = ["epoch,divergence,smoothed"]
    lines += [f"{r.epoch},{format(r.divergence_estimate, '.17g')},{format(s, '.17g')}" for r, s in zip(log, smooth)]
    _atomic_write(out, "\n".join(lines) + "\n")
    print(f"negative_estimates={evalkit.negative_estimate_count(log)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwgan", description="Toy KL-WGAN / f-WGAN experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--config", help="JSON config file (fields default when absent)")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="override a config field; repeatable")
    p.add_argument("--out", help=f"run directory (default: ${OUTPUT_ROOT_ENV} or ./runs, named by dataset/variant/seed)")
    p.add_argument("--seeds", help="comma-separated seeds; one run directory per seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes when several seeds are given")
    p.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N epochs")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="NLL and MMD of a checkpoint's generator")
    p.add_argument("--checkpoint", required=True, help="run directory or checkpoint directory")
    p.add_argument("--dataset", help="synthetic dataset name or CSV path (default: from the checkpoint config)")
    p.add_argument("--csv-has-header", action="store_true", help="skip the first line of a --dataset CSV")
    p.add_argument("--h-kde", type=float, help="KDE bandwidth")
    p.add_argument("--h-mmd", type=float, help="MMD kernel bandwidth")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the metrics as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ratio", help="density-ratio field on a 2-D grid as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--box", default="-4,4,-4,4", help="xmin,xmax,ymin,ymax")
    p.add_argument("--res", type=int, default=100, help="grid points per axis")
    p.add_argument("--temp", type=float, help="temperature (default: from the checkpoint config)")
    p.add_argument("--h-kde", type=float, help="bandwidth of the generator-density KDE")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("curves", help="smoothed divergence curve and negative-estimate count")
    p.add_argument("--run", required=True, help="run directory or metrics.csv path")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--out", help="output CSV (default: curve.csv next to metrics.csv)")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, datasets.DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingAbort as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
