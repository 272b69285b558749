"""Affine path schedulers.

A scheduler is a pair of functions ``(alpha_t, beta_t)`` on ``[0, 1]`` with
``alpha_0 = beta_1 = 0`` and ``alpha_1 = beta_0 = 1`` that defines the path
point ``x_t = alpha_t * x1 + beta_t * x0``. Four closed forms are provided:

========  ===================  =========================
kind      alpha_t              beta_t
========  ===================  =========================
condot    t                    1 - t
poly      t**n                 1 - t**n
vp        t                    sqrt(1 - t**2)
cosine    sin(pi t / 2)        cos(pi t / 2)
========  ===================  =========================
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

KINDS = ("condot", "poly", "vp", "cosine")

# vp has beta' -> -inf at t = 1; derivatives are evaluated no later than this.
VP_DERIV_CLAMP = 1.0 - 1e-9


@dataclass(frozen=True)
class Scheduler:
    kind: str = "condot"
    n: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scheduler kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "poly" and (int(self.n) != self.n or self.n < 2):
            raise ConfigError(f"poly scheduler degree must be an integer n >= 2, got {self.n}")

    @classmethod
    def parse(cls, text: str) -> "Scheduler":
        """Build from a config string: ``condot``, ``poly:<n>``, ``vp`` or ``cosine``."""
        text = text.strip().lower()
        if text.startswith("poly"):
            _, _, deg = text.partition(":")
            try:
                n = int(deg) if deg else 3
            except ValueError:
                raise ConfigError(f"poly scheduler degree must be an integer n >= 2, got {deg!r}") from None
            return cls("poly", n)
        if text in ("condot", "vp", "cosine"):
            return cls(text)
        raise ConfigError(f"unknown scheduler {text!r}; expected condot, poly:<n>, vp or cosine")

    def __str__(self) -> str:
        return f"poly:{self.n}" if self.kind == "poly" else self.kind

    def eval(self, t):
        """Return ``(alpha, beta, d_alpha, d_beta)`` at ``t``.

        ``t`` may be a float or an array; every output has the shape of ``t``.
        """
        scalar = np.ndim(t) == 0
        t = np.asarray(t, dtype=np.float64)
        if np.any(~(t >= 0.0)) or np.any(~(t <= 1.0)):
            raise DomainError(f"scheduler time must lie in [0, 1], got {t.min() if t.size else t}")

        if self.kind == "condot":
            a, b = t, 1.0 - t
            da, db = np.ones_like(t), -np.ones_like(t)
        elif self.kind == "poly":
            n = self.n
            tn = t**n
            a, b = tn, 1.0 - tn
            da = n * t ** (n - 1)
            db = -da
        elif self.kind == "vp":
            a, b = t, np.sqrt(1.0 - t * t)
            tc = np.minimum(t, VP_DERIV_CLAMP)
            da = np.ones_like(t)
            db = -tc / np.sqrt(1.0 - tc * tc)
        else:
            half_pi = 0.5 * math.pi
            # sin of the complementary angle keeps beta(1) exactly 0
            a, b = np.sin(half_pi * t), np.sin(half_pi * (1.0 - t))
            da = half_pi * np.cos(half_pi * t)
            db = -half_pi * np.sin(half_pi * t)

        if scalar:
            return float(a), float(b), float(da), float(db)
        return a, b, da, db

    __call__ = eval

    def alpha(self, t):
        return self.eval(t)[0]

    def beta(self, t):
        return self.eval(t)[1]


def broadcast_time(v, x: np.ndarray):
    """Reshape a per-sample coefficient of shape ``(B,)`` to broadcast over ``x``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim))


def interpolate(s: Scheduler, t, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Path point ``alpha_t * x1 + beta_t * x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    a, b, _, _ = s.eval(t)
    return broadcast_time(a, x1) * x1 + broadcast_time(b, x0) * x0
