"""Alternating critic/generator training for WGAN, KL-WGAN and KL f-GAN."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import datasets, evalkit, netkit, objectives
from . import gradcore as gc
from .evalkit import MetricRecord, divergence_curve  # noqa: F401 - re-exported

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("wgan", "klwgan", "fgan_kl")


class ConfigError(ValueError):
    """A :class:`TrainConfig` field is invalid; ``field`` names it."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class TrainingAbort(RuntimeError):
    """A loss or gradient became non-finite; carries batch statistics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}; diagnostics={json.dumps(diagnostics, sort_keys=True)}")
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    dataset: str = "MoG"
    data_path: str | None = None
    csv_has_header: bool = False
    valid_fraction: float = 0.2
    data_seed: int = 1234
    n_train: int = datasets.DEFAULT_N_SAMPLES
    n_valid: int = datasets.DEFAULT_N_SAMPLES
    loss_variant: str = "klwgan"
    temp: float = 1.0
    batch_size: int = 256
    epochs: int = 500
    critic_steps: int = 1
    lr: float = 0.2
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    latent_dim: int = 2
    hidden: list[int] = field(default_factory=lambda: [100, 100])
    leaky_slope: float = gc.DEFAULT_LEAKY_SLOPE
    spectral_critic: bool = True
    # a 1-Lipschitz generator cannot stretch a unit-variance latent onto wider targets
    spectral_generator: bool = False
    power_iters: int = 1
    stop_weight_grad: bool = False
    force_unit_weights: bool = False
    seed: int = 0
    eval_every: int = 50
    eval_samples: int = 5000
    divergence_batch: int = 256
    h_kde: float | None = None
    h_mmd: float | None = None

    @property
    def is_tabular(self) -> bool:
        return self.dataset == "csv"

    def validate(self) -> "TrainConfig":
        if self.dataset != "csv" and self.dataset not in datasets.SYNTHETIC_NAMES:
            raise ConfigError("dataset", f"expected 'csv' or one of {datasets.SYNTHETIC_NAMES}")
        if self.is_tabular:
            if not self.data_path:
                raise ConfigError("data_path", "required when dataset is 'csv'")
            if not Path(self.data_path).is_file():
                raise ConfigError("data_path", f"file not found: {self.data_path}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError("loss_variant", f"expected one of {LOSS_VARIANTS}")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be at least 2")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be at least 1")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps", "must be at least 1")
        if self.temp <= 0:
            raise ConfigError("temp", "must be positive")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay", "must lie in [0, 1)")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim", "must be positive")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden", "needs at least one positive width")
        if self.power_iters < 1:
            raise ConfigError("power_iters", "must be positive")
        if self.eval_every < 0:
            raise ConfigError("eval_every", "must be nonnegative")
        if self.divergence_batch < 1 or self.eval_samples < 1:
            raise ConfigError("eval_samples", "sample counts must be positive")
        for name in ("h_kde", "h_mmd"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(name, "must be positive")
        if self.n_train < self.batch_size * self.critic_steps and not self.is_tabular:
            raise ConfigError("n_train", "fewer samples than one training step consumes")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        cfg = cls(**data)
        cfg.hidden = [int(h) for h in cfg.hidden]
        return cfg


def tabular_defaults(**overrides) -> TrainConfig:
    """Config preset for UCI-style tables: 300-unit layers, 10-d latent code."""
    base = dict(dataset="csv", hidden=[300, 300], latent_dim=10)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# data


@dataclass
class DataBundle:
    train: np.ndarray
    valid: np.ndarray
    h_kde: float
    h_mmd: float


def load_data(config: TrainConfig) -> DataBundle:
    if config.is_tabular:
        table = datasets.load_csv(config.data_path, has_header=config.csv_has_header)
        split = datasets.standardize_split(table, config.valid_fraction, config.data_seed)
        train, valid = split.train, split.valid
        if len(train) < config.batch_size * config.critic_steps:
            raise ConfigError("batch_size", f"larger than the {len(train)}-row training split")
        default_h = evalkit.median_heuristic(train, seed=config.data_seed)
        h_kde = config.h_kde or default_h
        h_mmd = config.h_mmd or default_h
    else:
        train = datasets.sample_synthetic(config.dataset, config.n_train, config.data_seed)
        valid = datasets.sample_synthetic(config.dataset, config.n_valid, config.data_seed + 1)
        h_kde = config.h_kde or evalkit.DEFAULT_H_KDE
        h_mmd = config.h_mmd or evalkit.DEFAULT_H_MMD
    return DataBundle(train, valid, h_kde, h_mmd)


# ---------------------------------------------------------------------------
# state


_STREAMS = ("init_gen", "init_critic", "shuffle", "latent", "eval")


@dataclass
class TrainState:
    config: TrainConfig
    generator: netkit.Mlp
    critic: netkit.Mlp
    gen_opt: netkit.RmsPropState
    critic_opt: netkit.RmsPropState
    rngs: dict[str, np.random.Generator]
    epoch: int = 0
    log: list[MetricRecord] = field(default_factory=list)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        netkit.save_mlp(self.generator, directory / "generator.csv")
        netkit.save_mlp(self.critic, directory / "critic.csv")
        netkit.save_rmsprop(self.gen_opt, directory / "generator_opt.csv")
        netkit.save_rmsprop(self.critic_opt, directory / "critic_opt.csv")
        meta = {
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "rngs": {k: g.bit_generator.state for k, g in self.rngs.items()},
        }
        (directory / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        evalkit.write_metrics_csv(directory / "metrics.csv", self.log)

    @classmethod
    def load(cls, directory: str | Path) -> "TrainState":
        directory = Path(directory)
        meta = json.loads((directory / "state.json").read_text())
        rngs = {}
        for name, st in meta["rngs"].items():
            g = np.random.default_rng()
            g.bit_generator.state = st
            rngs[name] = g
        return cls(
            config=TrainConfig.from_dict(meta["config"]),
            generator=netkit.load_mlp(directory / "generator.csv"),
            critic=netkit.load_mlp(directory / "critic.csv"),
            gen_opt=netkit.load_rmsprop(directory / "generator_opt.csv"),
            critic_opt=netkit.load_rmsprop(directory / "critic_opt.csv"),
            rngs=rngs,
            epoch=int(meta["epoch"]),
            log=evalkit.read_metrics_csv(directory / "metrics.csv"),
        )


def init_state(config: TrainConfig, data_dim: int) -> TrainState:
    config.validate()
    children = np.random.SeedSequence(config.seed).spawn(len(_STREAMS))
    rngs = {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}
    gen = netkit.build_mlp(
        [config.latent_dim, *config.hidden, data_dim],
        spectral=config.spectral_generator,
        n_power_iters=config.power_iters,
        alpha=config.leaky_slope,
        seed=rngs["init_gen"],
    )
    critic = netkit.build_mlp(
        [data_dim, *config.hidden, 1],
        spectral=config.spectral_critic,
        n_power_iters=config.power_iters,
        alpha=config.leaky_slope,
        seed=rngs["init_critic"],
    )

    def opt():
        return netkit.RmsPropState(config.lr, config.rmsprop_decay, config.rmsprop_eps)

    return TrainState(config, gen, critic, opt(), opt(), rngs)


# ---------------------------------------------------------------------------
# one step


@dataclass
class StepMetrics:
    critic_loss: float
    gen_loss: float
    divergence_estimate: float


def divergence_estimate(variant: str, t_p, t_q, temp: float = 1.0) -> float:
    """Raw (non-hinge) critic objective that each variant optimizes."""
    if variant == "klwgan":
        return objectives.estimator_dv(np.asarray(t_p) / temp, np.asarray(t_q) / temp)
    if variant == "wgan":
        return objectives.estimator_ipm(t_p, t_q)
    return objectives.estimator_nwj(objectives.KL, t_p, t_q)


def _critic_objective(cfg: TrainConfig, t_p: gc.Tensor, t_q: gc.Tensor) -> gc.Tensor:
    if cfg.loss_variant == "fgan_kl":
        return objectives.fgan_critic_loss(t_p, t_q)
    real, fake = objectives.critic_loss(
        cfg.loss_variant,
        t_p,
        t_q,
        cfg.temp,
        stop_weight_grad=cfg.stop_weight_grad,
        force_unit_weights=cfg.force_unit_weights,
    )
    return gc.add(real, fake)


def _generator_objective(cfg: TrainConfig, t_q: gc.Tensor) -> gc.Tensor:
    if cfg.loss_variant == "fgan_kl":
        return objectives.fgan_gen_loss(t_q)
    return objectives.gen_loss(
        cfg.loss_variant,
        t_q,
        cfg.temp,
        stop_weight_grad=cfg.stop_weight_grad,
        force_unit_weights=cfg.force_unit_weights,
    )


def _diagnostics(**arrays) -> dict:
    out = {}
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        finite = a[np.isfinite(a)]
        out[name] = {
            "shape": list(a.shape),
            "n_nonfinite": int(a.size - finite.size),
            "min": float(finite.min()) if finite.size else None,
            "max": float(finite.max()) if finite.size else None,
            "mean": float(finite.mean()) if finite.size else None,
        }
    return out


def _check_finite(what: str, loss: gc.Tensor, grads: dict[str, np.ndarray], **batch) -> None:
    bad = not math.isfinite(loss.item()) or any(not np.all(np.isfinite(g)) for g in grads.values())
    if bad:
        raise TrainingAbort(f"non-finite {what} loss or gradient", _diagnostics(loss=loss.data, **batch))


def _descend(net: netkit.Mlp, opt: netkit.RmsPropState, leaves: dict, loss: gc.Tensor, what: str, **batch) -> None:
    names = list(leaves)
    grads = dict(zip(names, gc.backward(loss, [leaves[n] for n in names])))
    _check_finite(what, loss, grads, **batch)
    net.load_parameters(netkit.rmsprop_step(opt, net.named_parameters(), grads))


def train_step(state: TrainState, real_batch) -> StepMetrics:
    """Critic update(s) followed by one generator update.

    ``real_batch`` is one ``m x d`` array, or a sequence of ``critic_steps``
    of them (one fresh real batch per critic update).
    """
    cfg = state.config
    batches = [real_batch] if isinstance(real_batch, np.ndarray) else list(real_batch)
    if len(batches) != cfg.critic_steps:
        raise ValueError(f"expected {cfg.critic_steps} real batches, got {len(batches)}")
    latent = state.rngs["latent"]
    c_loss = math.nan
    t_p = t_q = None
    for real in batches:
        real = np.asarray(real, dtype=np.float64)
        m = real.shape[0]
        if m != cfg.batch_size:
            raise ValueError(f"real batch has {m} rows, batch_size is {cfg.batch_size}")
        z = netkit.sample_latent(m, cfg.latent_dim, latent)
        fake = netkit.mlp_forward(state.generator, z).data
        leaves = netkit.parameter_leaves(state.critic)
        scores = netkit.mlp_forward(state.critic, gc.concat_rows([real, fake]), leaves)
        t_p, t_q = gc.slice_rows(scores, 0, m), gc.slice_rows(scores, m, 2 * m)
        loss = _critic_objective(cfg, t_p, t_q)
        _descend(state.critic, state.critic_opt, leaves, loss, "critic", real=real, fake=fake, scores=scores.data)
        c_loss = loss.item()

    z = netkit.sample_latent(cfg.batch_size, cfg.latent_dim, latent)
    gen_leaves = netkit.parameter_leaves(state.generator)
    fake_t = netkit.mlp_forward(state.generator, z, gen_leaves)
    scores_q = netkit.mlp_forward(state.critic, fake_t)
    g_loss = _generator_objective(cfg, scores_q)
    _descend(state.generator, state.gen_opt, gen_leaves, g_loss, "generator", fake=fake_t.data, scores=scores_q.data)

    div = divergence_estimate(cfg.loss_variant, t_p.data, t_q.data, cfg.temp)
    return StepMetrics(c_loss, g_loss.item(), float(div))


# ---------------------------------------------------------------------------
# evaluation helpers


def generate(generator: netkit.Mlp, n: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    z = netkit.sample_latent(n, latent_dim, rng)
    return netkit.mlp_forward(generator, z, update_spectral=False).data


def critic_scores(critic: netkit.Mlp, x: np.ndarray) -> np.ndarray:
    """Critic outputs without advancing its power-iteration state."""
    return netkit.mlp_forward(critic, x, update_spectral=False).data[:, 0]


def heldout_divergence(state: TrainState, valid: np.ndarray) -> float:
    cfg = state.config
    rng = state.rngs["eval"]
    k = min(cfg.divergence_batch, len(valid))
    real = valid[rng.choice(len(valid), size=k, replace=False)]
    fake = generate(state.generator, k, cfg.latent_dim, rng)
    return float(
        divergence_estimate(
            cfg.loss_variant, critic_scores(state.critic, real), critic_scores(state.critic, fake), cfg.temp
        )
    )


def sample_metrics(state: TrainState, data: DataBundle) -> tuple[float, float]:
    """(KDE NLL, MMD x 1e3) of fresh generator samples against validation data."""
    cfg = state.config
    gen = generate(state.generator, cfg.eval_samples, cfg.latent_dim, state.rngs["eval"])
    if not np.all(np.isfinite(gen)):
        return math.inf, math.inf
    nll = evalkit.kde_nll(gen, data.valid, data.h_kde)
    mmd = evalkit.mmd2_gaussian(gen, data.valid, data.h_mmd) * evalkit.MMD_REPORT_SCALE
    return nll, mmd


# ---------------------------------------------------------------------------
# full loop


@dataclass
class TrainResult:
    state: TrainState
    log: list[MetricRecord]
    data: DataBundle


def run_epoch(state: TrainState, data: DataBundle) -> MetricRecord:
    cfg = state.config
    n = len(data.train)
    perm = state.rngs["shuffle"].permutation(n)
    m, k = cfg.batch_size, cfg.critic_steps
    n_batches = n // m
    for start in range(0, n_batches - k + 1, k):
        group = [data.train[perm[(start + j) * m:(start + j + 1) * m]] for j in range(k)]
        train_step(state, group[0] if k == 1 else group)
    state.epoch += 1
    record = MetricRecord(state.epoch, heldout_divergence(state, data.valid))
    last = state.epoch == cfg.epochs
    if last or (cfg.eval_every and state.epoch % cfg.eval_every == 0):
        record.nll, record.mmd = sample_metrics(state, data)
    state.log.append(record)
    return record


def train(
    config: TrainConfig,
    *,
    state: TrainState | None = None,
    data: DataBundle | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
    on_epoch: Callable[[MetricRecord], None] | None = None,
) -> TrainResult:
    """Run (or resume) training for ``config.epochs`` epochs."""
    config.validate()
    data = data or load_data(config)
    if state is None:
        state = init_state(config, data.train.shape[1])
    else:
        # a resumed run may extend the epoch budget or change eval settings
        state.config = config
    while state.epoch < config.epochs:
        record = run_epoch(state, data)
        if on_epoch is not None:
            on_epoch(record)
        if checkpoint_dir and checkpoint_every and state.epoch % checkpoint_every == 0:
            state.save(Path(checkpoint_dir) / f"epoch_{state.epoch:04d}")
    logger.info("finished %d epochs (%s, seed %d)", state.epoch, config.loss_variant, config.seed)
    return TrainResult(state, state.log, data)
