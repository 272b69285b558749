"""Midpoint-rule ODE sampling of a trained network under any prediction target."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import ConfigError, NonFiniteError
from .pathkit import PredictionTarget, SourceMode, draw_source
from .rng import stream
from .scheduler import Scheduler

logger = logging.getLogger(__name__)


@dataclass
class SampleConfig:
    steps: int = 20
    target: PredictionTarget = PredictionTarget.X1
    source: SourceMode = field(default_factory=SourceMode)
    eps_den: float = 1e-6
    num_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("sampling needs at least one step (N >= 1)")
        if not self.eps_den > 0:
            raise ConfigError("eps_den must be > 0")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")


def time_grid(n: int) -> np.ndarray:
    """Uniform grid ``t_i = i / n`` for ``i = 0..n``."""
    if n < 1:
        raise ConfigError("time grid needs N >= 1")
    return np.arange(n + 1, dtype=np.float64) / n


def velocity_from_prediction(target: PredictionTarget, s: Scheduler, t: float, x, out, eps_den: float = 1e-6):
    """Convert a network output at ``(t, x)`` to a velocity.

    - ``UT``: the output is the velocity.
    - ``X1``: ``(b'/b) x + (a' - a b'/b) x1_hat``
    - ``X0``: ``(a'/a) x + (b' - b a'/a) x0_hat``

    The divisor (``b`` or ``a``) is floored at ``eps_den``.
    """
    if target is PredictionTarget.UT:
        return out
    a, b, da, db = s.eval(t)
    if target is PredictionTarget.X1:
        den = max(b, eps_den)
        if den != b:
            logger.warning("beta(t=%g)=%g floored to %g in x1 velocity", t, b, eps_den)
        return (db / den) * x + (da - a * db / den) * out
    den = max(a, eps_den)
    if den != a:
        logger.warning("alpha(t=%g)=%g floored to %g in x0 velocity", t, a, eps_den)
    return (da / den) * x + (db - b * da / den) * out


def evaluation_time(target: PredictionTarget, s: Scheduler, t: float, eps_den: float = 1e-6) -> float:
    """Time at which the network is queried for a stage nominally at ``t``.

    The x0 form divides by ``alpha_t``; where ``alpha_t < eps_den`` while
    ``alpha'_t > 0`` (t = 0 for condot, vp, cosine) its value is a 0/0 limit
    the floor cannot recover, so the query moves forward to where alpha
    reaches ``eps_den``. Elsewhere ``t`` is used as is.
    """
    if target is not PredictionTarget.X0:
        return t
    a, _, da, _ = s.eval(t)
    if a >= eps_den or da <= 0.0:
        return t
    return t + (eps_den - a) / da


def integrate(predict, x0, h, s: Scheduler, target: PredictionTarget, steps: int, eps_den: float = 1e-6, on_eval=None):
    """Integrate ``dx/dt = u_t(x | h)`` from ``t = 0`` to ``1`` with the midpoint rule.

    ``predict(t, x, h)`` returns the raw network output for the chosen
    target. ``on_eval(t)`` is called with each evaluation time, for
    instrumentation.
    """
    grid = time_grid(steps)
    x = np.array(x0, dtype=np.float64)

    def velocity(t, x):
        t = evaluation_time(target, s, t, eps_den)
        if on_eval is not None:
            on_eval(t)
        return velocity_from_prediction(target, s, t, x, predict(t, x, h), eps_den)

    for i in range(steps):
        t, dt = grid[i], grid[i + 1] - grid[i]
        tm = t + 0.5 * dt
        x_mid = x + 0.5 * dt * velocity(t, x)
        x = x + dt * velocity(tm, x_mid)
        if not np.isfinite(x).all():
            raise NonFiniteError(f"non-finite state at integration step {i} (t={grid[i + 1]:g})")
    return x


def _predictor(net):
    return net if callable(net) else net.forward


def sample(net, h, config: SampleConfig, s: Scheduler, aux=None, index=None, rng=None):
    """Forecast ``C x Fh`` (or a batch ``(B, C, Fh)`` when ``h`` is batched).

    The start point is drawn from the source (smoothed auxiliary output or
    standard normal); with ``num_samples > 1`` the result is the entrywise
    mean of independent runs.
    """
    h = np.asarray(h, dtype=np.float64)
    predict = _predictor(net)
    shape = h.shape[:-2] + (net.channels, net.horizon)
    rng = rng if rng is not None else stream(config.seed, "sample")
    total = np.zeros(shape)
    for _ in range(config.num_samples):
        x0 = draw_source(config.source, shape, rng, aux, index)
        total += integrate(predict, x0, h, s, config.target, config.steps, config.eps_den)
    return total / config.num_samples


def forecast_split(net, dataset, split: str, config: SampleConfig, s: Scheduler, aux=None, batch: int = 1024):
    """Forecast every window of ``split``; returns ``(window_ids, preds (n, C, Fh))``."""
    idx = dataset.indices(split)
    preds = np.empty((len(idx), dataset.channels, dataset.horizon))
    rng = stream(config.seed, "forecast", split)
    for lo in range(0, len(idx), batch):
        part = idx[lo : lo + batch]
        preds[lo : lo + batch] = sample(net, dataset.histories(part), config, s, aux, part, rng)
    return idx, preds


def velocity_field(net, s: Scheduler, target: PredictionTarget, eps_den: float = 1e-6):
    """Wrap a predictor as a velocity callable ``(t, x, h) -> u``."""
    predict = _predictor(net)

    def u(t, x, h):
        t = evaluation_time(target, s, t, eps_den)
        return velocity_from_prediction(target, s, t, x, predict(t, x, h), eps_den)

    return u

