"""Closed-form and brute-force references for one-dimensional toy problems.

These are independent of the training and sampling code paths: posterior
means come from Gaussian conditioning or exact Bayes sums over atom pairs,
expectations from enumeration with Gauss-Hermite quadrature, and gradients
from central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ConfigError, DegenerateError, DomainError, UnderflowError
from .pathkit import PredictionTarget
from .scheduler import Scheduler

# log of the smallest positive float64 (subnormal)
LOG_TINY = np.log(np.nextafter(0.0, 1.0))


# -- Gaussian toy -------------------------------------------------------------


def _gauss_terms(s, t, mu0, var0, mu1, var1):
    a, b, _, _ = s.eval(t)
    den = a * a * var1 + b * b * var0
    if np.any(np.asarray(den) <= 0.0):
        raise DegenerateError("X_t has zero variance (both endpoint variances vanish)")
    return a, b, den


def gaussian_posterior_mean(s: Scheduler, t, x, mu0, var0, mu1, var1):
    """``E[X1 | X_t = x]`` for independent ``X0 ~ N(mu0, var0)``, ``X1 ~ N(mu1, var1)``."""
    a, b, den = _gauss_terms(s, t, mu0, var0, mu1, var1)
    return mu1 + (a * var1 / den) * (np.asarray(x) - a * mu1 - b * mu0)


def gaussian_posterior_x0(s: Scheduler, t, x, mu0, var0, mu1, var1):
    """``E[X0 | X_t = x]`` for the same Gaussian pair."""
    a, b, den = _gauss_terms(s, t, mu0, var0, mu1, var1)
    return mu0 + (b * var0 / den) * (np.asarray(x) - a * mu1 - b * mu0)


def gaussian_oracle(s: Scheduler, target: PredictionTarget, mu0, var0, mu1, var1):
    """Exact predictor ``(t, x, h) -> E[g_t | X_t = x]`` for the Gaussian toy."""

    def predict(t, x, h=None):
        x1 = gaussian_posterior_mean(s, t, x, mu0, var0, mu1, var1)
        x0 = gaussian_posterior_x0(s, t, x, mu0, var0, mu1, var1)
        if target is PredictionTarget.X1:
            return x1
        if target is PredictionTarget.X0:
            return x0
        _, _, da, db = s.eval(t)
        return da * x1 + db * x0

    return predict


# -- discrete coupling toy ----------------------------------------------------


@dataclass(frozen=True)
class DiscreteCouplingToy:
    """Source atoms smoothed by ``N(0, sigma^2)`` coupled independently with target atoms."""

    source_atoms: tuple
    source_weights: tuple
    target_atoms: tuple
    target_weights: tuple
    sigma: float
    scheduler: Scheduler = Scheduler("condot")

    def __post_init__(self):
        for atoms, w, side in (
            (self.source_atoms, self.source_weights, "source"),
            (self.target_atoms, self.target_weights, "target"),
        ):
            if len(atoms) != len(w) or len(atoms) == 0:
                raise ConfigError(f"{side} atoms and weights must be non-empty and aligned")
            if min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise ConfigError(f"{side} weights must be nonnegative and sum to 1")
        if not self.sigma > 0:
            raise ConfigError("toy needs sigma > 0 so the source has a positive density")

    @property
    def a(self):
        return np.asarray(self.source_atoms, dtype=np.float64)

    @property
    def c(self):
        return np.asarray(self.target_atoms, dtype=np.float64)

    @property
    def log_pair_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.source_weights)[:, None] + np.log(self.target_weights)[None, :]

    def sample_source(self, n: int, rng: np.random.Generator) -> np.ndarray:
        i = rng.choice(len(self.source_atoms), size=n, p=self.source_weights)
        return self.a[i] + self.sigma * rng.standard_normal(n)


def _pair_posterior(toy: DiscreteCouplingToy, t: float, x):
    """Posterior over atom pairs given ``X_t = x``; shapes ``(..., I, J)``."""
    if not 0.0 <= t < 1.0:
        raise DomainError(f"discrete posterior needs 0 <= t < 1, got {t}")
    a, b, _, _ = toy.scheduler.eval(t)
    x = np.asarray(x, dtype=np.float64)
    sd = b * toy.sigma
    mean = a * toy.c[None, :] + b * toy.a[:, None]
    z = (x[..., None, None] - mean) / sd
    logw = toy.log_pair_weights - 0.5 * z * z
    log_norm = np.log(sd * np.sqrt(2.0 * np.pi))
    top = logw.max(axis=(-2, -1), keepdims=True)
    log_density = top[..., 0, 0] + np.log(np.exp(logw - top).sum(axis=(-2, -1))) - log_norm
    if np.any(log_density < LOG_TINY):
        bad = np.flatnonzero(np.atleast_1d(log_density) < LOG_TINY)[0]
        raise UnderflowError(f"marginal density underflows at x={np.atleast_1d(x)[bad]!r}, t={t}")
    post = np.exp(logw - top)
    post /= post.sum(axis=(-2, -1), keepdims=True)
    # given the pair, X1 = c_j exactly, so X0 = (x - alpha c_j) / beta
    x0 = (x[..., None, None] - a * toy.c[None, :]) / b
    x1 = np.broadcast_to(toy.c[None, :], post.shape)
    return post, x0, x1


def discrete_marginal_target(toy: DiscreteCouplingToy, t: float, x, target: PredictionTarget = PredictionTarget.UT):
    """Exact ``E[g_t(X0, X1) | X_t = x]`` by Bayes' rule over all atom pairs."""
    post, x0, x1 = _pair_posterior(toy, t, x)
    if target is PredictionTarget.X1:
        g = x1
    elif target is PredictionTarget.X0:
        g = x0
    else:
        _, _, da, db = toy.scheduler.eval(t)
        g = da * x1 + db * x0
    return (post * g).sum(axis=(-2, -1))


def discrete_marginal_velocity(toy: DiscreteCouplingToy, t: float, x):
    """Marginal velocity ``u_t(x)`` of the toy's affine path."""
    return discrete_marginal_target(toy, t, x, PredictionTarget.UT)


def nearest_atom_fractions(x, atoms) -> np.ndarray:
    atoms = np.asarray(atoms, dtype=np.float64)
    nearest = np.argmin(np.abs(np.asarray(x)[:, None] - atoms[None, :]), axis=1)
    return np.bincount(nearest, minlength=len(atoms)) / len(nearest)


# -- loss enumeration ---------------------------------------------------------


@dataclass
class EnumeratedLosses:
    loss_gm: float
    loss_cgm: float
    grad_gm: dict
    grad_cgm: dict

    def max_grad_gap(self) -> float:
        return max(float(np.max(np.abs(self.grad_gm[k] - self.grad_cgm[k]))) for k in self.grad_gm)


def enumeration_nodes(toy: DiscreteCouplingToy, t_grid, n_nodes: int = 16, budget: int = 10**4):
    """All ``(t, i, j, eps)`` combinations with their probability weights.

    ``t`` is averaged uniformly over ``t_grid`` and the smoothing noise is
    integrated by ``n_nodes``-point Gauss-Hermite quadrature. Returns flat
    arrays ``t, x0, x1, xt, weight``.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    I, J = len(toy.source_atoms), len(toy.target_atoms)
    total = len(t_grid) * I * J * n_nodes
    if total > budget:
        raise BudgetError(f"enumeration needs {total} combinations, budget is {budget}")
    eps, w_eps = np.polynomial.hermite_e.hermegauss(n_nodes)
    w_eps = w_eps / np.sqrt(2.0 * np.pi)
    T, A, Cc, E = np.meshgrid(np.arange(len(t_grid)), np.arange(I), np.arange(J), np.arange(n_nodes), indexing="ij")
    t = t_grid[T].ravel()
    x0 = (toy.a[A] + toy.sigma * eps[E]).ravel()
    x1 = toy.c[Cc].ravel()
    w = (np.asarray(toy.source_weights)[A] * np.asarray(toy.target_weights)[Cc] * w_eps[E]).ravel() / len(t_grid)
    al, be, _, _ = toy.scheduler.eval(t)
    return t, x0, x1, al * x1 + be * x0, w


def _pair_targets(toy, target, t, xt):
    """Per-node, per-pair regression targets ``g`` and joint weights, shapes ``(N, I*J)``.

    The joint weight of pair ``(i, j)`` at node ``x`` is
    ``w_i w_j N(x; alpha c_j + beta a_i, (beta sigma)^2)`` normalized over pairs,
    evaluated directly (no log-domain shortcuts).
    """
    al, be, da, db = toy.scheduler.eval(t)
    al, be, da, db = (np.asarray(v)[:, None] for v in (al, be, da, db))
    A, Cc = np.meshgrid(toy.a, toy.c, indexing="ij")
    WA, WC = np.meshgrid(np.asarray(toy.source_weights), np.asarray(toy.target_weights), indexing="ij")
    A, Cc, Wp = A.ravel()[None, :], Cc.ravel()[None, :], (WA * WC).ravel()[None, :]
    sd = be * toy.sigma
    x = xt[:, None]
    dens = Wp * np.exp(-0.5 * ((x - al * Cc - be * A) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
    rho = dens / dens.sum(axis=1, keepdims=True)
    x0 = (x - al * Cc) / be
    if target is PredictionTarget.X1:
        g = np.broadcast_to(Cc, rho.shape)
    elif target is PredictionTarget.X0:
        g = x0
    else:
        g = da * Cc + db * x0
    return g, rho


def enumerate_loss_grads(net, toy: DiscreteCouplingToy, t_grid, target=PredictionTarget.UT, n_nodes=16, budget=10**4):
    """Exact expectations of the guided (marginal-target) and conditional losses and their gradients.

    Path points are the enumerated ``(t, pair, eps)`` nodes. The guided loss
    regresses on ``discrete_marginal_target`` at each node; the conditional
    loss enumerates every atom pair at each node with its joint weight, so
    both integrate over the same ``X_t`` quadrature and differ only in the
    regression target. ``net`` must have ``C = Fh = 1``; its history input
    is held at zero.
    """
    if net.channels != 1 or net.horizon != 1:
        raise ConfigError("enumeration toy needs a network with C = Fh = 1")
    t, _, _, xt, w = enumeration_nodes(toy, t_grid, n_nodes, budget)
    marginal = np.empty_like(xt)
    for tv in np.unique(t):
        m = t == tv
        marginal[m] = discrete_marginal_target(toy, float(tv), xt[m], target)
    g, rho = _pair_targets(toy, target, t, xt)

    h = np.zeros((len(t), 1, net.history))
    out, cache = net.forward_cache(t, xt[:, None, None], h)
    out = out[:, 0, 0]

    r_gm = out - marginal
    loss_gm = float(np.sum(w * r_gm * r_gm))
    grad_gm = net.backward_cache(cache, (2.0 * w * r_gm)[:, None, None])

    r_cgm = out[:, None] - g
    loss_cgm = float(np.sum(w[:, None] * rho * r_cgm * r_cgm))
    up = 2.0 * w * np.sum(rho * r_cgm, axis=1)
    grad_cgm = net.backward_cache(cache, up[:, None, None])
    return EnumeratedLosses(loss_gm, loss_cgm, grad_gm, grad_cgm)


# -- finite differences -------------------------------------------------------


def finite_diff_grad(loss_fn, params, h: float = 1e-5):
    """Central-difference gradient of ``loss_fn(params)``.

    ``params`` is an array or a dict of arrays; entries are perturbed in
    place and restored. The result has the same structure as ``params``.
    """
    if isinstance(params, dict):
        return {name: _fd_array(lambda: loss_fn(params), p, h) for name, p in params.items()}
    return _fd_array(lambda: loss_fn(params), params, h)


def _fd_array(f, p, h):
    grad = np.zeros(p.shape)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-7) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` entrywise."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
