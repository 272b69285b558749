"""Minibatch training of the velocity network on the conditional guided loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, NonFiniteError, SizingError
from .netcore import AdamState, VelocityNet
from .pathkit import PredictionTarget, SourceMode, draw_source, target_g
from .rng import stream
from .scheduler import Scheduler, interpolate

logger = logging.getLogger(__name__)

VAL_T_GRID = np.round(np.arange(1, 10) / 10.0, 12)


@dataclass
class TrainConfig:
    scheduler: Scheduler = field(default_factory=lambda: Scheduler("poly", 3))
    target: PredictionTarget = PredictionTarget.X1
    source: SourceMode = field(default_factory=SourceMode)
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    max_steps: int | None = None
    patience: int = 10
    val_every: int = 200
    val_windows: int = 256
    hidden: tuple = (256, 256)
    time_freqs: int = 8
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when given")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")


@dataclass
class CouplingBatch:
    """A batch of coupling samples with per-row times; arrays are ``(B, C, ·)``."""

    h: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray

    @classmethod
    def build(cls, s: Scheduler, h, x0, x1, t) -> "CouplingBatch":
        t = np.asarray(t, dtype=np.float64)
        return cls(h, x0, x1, t, interpolate(s, t, x0, x1))

    def __len__(self) -> int:
        return len(self.t)


def cgm_loss(net: VelocityNet, batch: CouplingBatch, s: Scheduler, target: PredictionTarget, step: int | None = None):
    """Mean squared error between ``g_t(x0, x1)`` and the network output, with exact gradients."""
    if len(batch) == 0:
        raise SizingError("empty batch")
    g = target_g(target, s, batch.t, batch.x0, batch.x1)
    out, cache = net.forward_cache(batch.t, batch.xt, batch.h)
    resid = out - g
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite training loss at step {step}")
    grads = net.backward_cache(cache, (2.0 / resid.size) * resid)
    return loss, grads


def cgm_loss_value(net: VelocityNet, batch: CouplingBatch, s: Scheduler, target: PredictionTarget) -> float:
    g = target_g(target, s, batch.t, batch.x0, batch.x1)
    resid = net.forward(batch.t, batch.xt, batch.h) - g
    return float(np.mean(resid * resid))


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_step: int = 0
    best_val: float = float("inf")
    stopped_early: bool = False

    def add(self, step, train_loss, val_loss, wall_ms):
        self.rows.append((step, train_loss, val_loss, wall_ms))

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def val_losses(self) -> list[tuple[int, float]]:
        return [(r[0], r[2]) for r in self.rows if r[2] is not None]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss", "val_loss", "wall_ms"])
            for step, tl, vl, ms in self.rows:
                w.writerow([step, f"{tl:.17g}", "" if vl is None else f"{vl:.17g}", f"{ms:.3f}"])


def validation_batch(dataset, aux, config: TrainConfig) -> CouplingBatch:
    """Fixed validation couplings: one source draw per window, repeated over the t-grid."""
    idx = dataset.indices("val")
    if len(idx) == 0:
        raise SizingError("validation split is empty")
    if len(idx) > config.val_windows:
        idx = idx[np.linspace(0, len(idx) - 1, config.val_windows).round().astype(int)]
    h, x1 = dataset.histories(idx), dataset.futures(idx)
    x0 = draw_source(config.source, x1.shape, stream(config.seed, "val-source"), aux, idx)
    k = len(VAL_T_GRID)
    t = np.repeat(VAL_T_GRID, len(idx))
    rep = lambda a: np.tile(a, (k, 1, 1))  # noqa: E731
    return CouplingBatch.build(config.scheduler, rep(h), rep(x0), rep(x1), t)


def train(dataset, aux, config: TrainConfig, net: VelocityNet | None = None):
    """Run the training loop; returns ``(best-validation net, TrainLog)``.

    Each step draws a minibatch of train windows (shuffled per epoch), fresh
    sources, and one ``t ~ U(0, 1)`` per sample, then takes an Adam step.
    """
    train_idx = dataset.indices("train")
    if len(train_idx) == 0:
        raise SizingError("train split is empty")
    if config.source.uses_aux and aux is None:
        raise ConfigError("auxiliary source mode requires auxiliary predictions")

    with threadpool_limits(limits=max(1, int(config.threads))):
        return _train(dataset, aux, config, net, train_idx)


def _train(dataset, aux, config, net, train_idx):
    s, target = config.scheduler, config.target
    if net is None:
        net = VelocityNet.init(
            dataset.channels, dataset.history, dataset.horizon, config.hidden, config.time_freqs,
            rng=stream(config.seed, "init"),
        )
    opt = AdamState(lr=config.lr)
    shuffle_rng = stream(config.seed, "shuffle")
    source_rng = stream(config.seed, "source")
    time_rng = stream(config.seed, "time")
    val = validation_batch(dataset, aux, config)

    log = TrainLog()
    best = net.copy()
    bad_evals = 0
    step = 0
    t_start = time.perf_counter()
    max_steps = config.max_steps if config.max_steps is not None else float("inf")
    bs = config.batch_size

    def evaluate(step, train_loss):
        nonlocal best, bad_evals
        vl = cgm_loss_value(net, val, s, target)
        if not np.isfinite(vl):
            raise NonFiniteError(f"non-finite validation loss at step {step}")
        log.add(step, train_loss, vl, 1e3 * (time.perf_counter() - t_start))
        if vl < log.best_val:
            log.best_val, log.best_step = vl, step
            best = net.copy()
            bad_evals = 0
        else:
            bad_evals += 1
        return bad_evals > config.patience

    done = False
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(train_idx)
        for lo in range(0, len(order), bs):
            idx = order[lo : lo + bs]
            h, x1 = dataset.histories(idx), dataset.futures(idx)
            x0 = draw_source(config.source, x1.shape, source_rng, aux, idx)
            t = time_rng.random(len(idx))
            batch = CouplingBatch.build(s, h, x0, x1, t)
            step += 1
            loss, grads = cgm_loss(net, batch, s, target, step)
            opt.update(net.params(), grads)
            last = step >= max_steps or (epoch == config.epochs - 1 and lo + bs >= len(order))
            if step % config.val_every == 0 or last:
                if evaluate(step, loss):
                    log.stopped_early = True
                    done = True
            else:
                log.add(step, loss, None, 1e3 * (time.perf_counter() - t_start))
            if done or last:
                done = True
                break
        if done:
            break
    logger.info("trained %d steps; best val %.6g at step %d", step, log.best_val, log.best_step)
    return best, log
