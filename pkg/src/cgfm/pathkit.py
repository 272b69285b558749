"""Coupling draws, noise smoothing and regression targets for the two-sided path."""

from __future__ import annotations

from dataclasses import dataclass
import enum

import numpy as np

from .errors import AuxLookupError, ConfigError
from .scheduler import Scheduler, broadcast_time, interpolate


class PredictionTarget(enum.Enum):
    """What the network regresses: the velocity, the source or the target."""

    UT = "u"
    X0 = "x0"
    X1 = "x1"

    @classmethod
    def parse(cls, value) -> "PredictionTarget":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"u": cls.UT, "ut": cls.UT, "velocity": cls.UT, "x0": cls.X0, "x1": cls.X1}
        if key not in aliases:
            raise ConfigError(f"unknown prediction target {value!r}; expected u, x0 or x1")
        return aliases[key]

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SourceMode:
    """Source distribution ``p(x0 | h)``.

    ``kind == "noise"`` draws standard normal sources and ignores ``sigma``;
    ``kind == "aux"`` uses the auxiliary prediction plus ``sigma * eps``.
    """

    kind: str = "noise"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("noise", "aux"):
            raise ConfigError(f"source mode must be 'noise' or 'aux', got {self.kind!r}")
        if not (self.sigma >= 0.0):
            raise ConfigError(f"smoothing sigma must be >= 0, got {self.sigma}")

    @property
    def uses_aux(self) -> bool:
        return self.kind == "aux"

    def __str__(self) -> str:
        return "noise" if self.kind == "noise" else f"aux(sigma={self.sigma!r})"


@dataclass
class CouplingSample:
    h: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    t: float | np.ndarray | None = None
    xt: np.ndarray | None = None

    def at(self, s: Scheduler, t) -> "CouplingSample":
        """Attach a time (scalar, or one per batch row) and the matching path point."""
        return CouplingSample(self.h, self.x0, self.x1, t, interpolate(s, t, self.x0, self.x1))


def smooth(x0: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Return ``x0 + sigma * eps`` with ``eps`` standard normal per entry."""
    x0 = np.asarray(x0, dtype=np.float64)
    if sigma == 0.0:
        return x0.copy()
    return x0 + sigma * rng.standard_normal(x0.shape)


def _aux_rows(aux, index):
    try:
        if np.ndim(index) == 0:
            return np.asarray(aux[int(index)], dtype=np.float64)
        return np.stack([np.asarray(aux[int(i)], dtype=np.float64) for i in index])
    except (KeyError, IndexError) as exc:
        raise AuxLookupError(f"no auxiliary prediction for window {exc.args[0] if exc.args else index}") from None


def draw_source(mode: SourceMode, shape, rng: np.random.Generator, aux=None, index=None) -> np.ndarray:
    """Draw ``x0 ~ p(x0 | h)`` for one window or a batch of windows.

    ``aux`` is anything indexable by window index returning a ``C x Fh``
    prediction; ``index`` is a window index or a sequence of them.
    """
    if mode.kind == "noise":
        return rng.standard_normal(shape)
    if aux is None:
        raise AuxLookupError("auxiliary source mode requires auxiliary predictions")
    base = _aux_rows(aux, index)
    if base.shape != tuple(shape):
        raise AuxLookupError(f"auxiliary prediction shape {base.shape} does not match {tuple(shape)}")
    return smooth(base, mode.sigma, rng)


def draw_coupling(h, x1, mode: SourceMode, rng: np.random.Generator, aux=None, index=None) -> CouplingSample:
    """Conditional independent coupling: ``x1`` is the observed future of ``h``
    and ``x0`` comes from the source given ``h`` with its own randomness."""
    x1 = np.asarray(x1, dtype=np.float64)
    x0 = draw_source(mode, x1.shape, rng, aux, index)
    return CouplingSample(np.asarray(h, dtype=np.float64), x0, x1)


def target_g(target: PredictionTarget, s: Scheduler, t, x0, x1) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if target is PredictionTarget.X1:
        return x1.copy()
    if target is PredictionTarget.X0:
        return x0.copy()
    return conditional_velocity(s, t, x0, x1)


def conditional_velocity(s: Scheduler, t, x0, x1) -> np.ndarray:
    """``d/dt (alpha_t x1 + beta_t x0)`` for fixed endpoints."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _, _, da, db = s.eval(t)
    return broadcast_time(da, x1) * x1 + broadcast_time(db, x0) * x0
