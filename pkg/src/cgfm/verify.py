"""Numerical verification suite run by ``cgfm verify`` and the acceptance tests."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import inspect
import math
import time

import numpy as np

from .netcore import VelocityNet
from .oracle import (
    DiscreteCouplingToy,
    discrete_marginal_velocity,
    enumerate_loss_grads,
    finite_diff_grad,
    gaussian_oracle,
    nearest_atom_fractions,
    relative_error,
)
from .pathkit import PredictionTarget, conditional_velocity
from .rng import stream
from .sampling import integrate
from .scheduler import Scheduler, interpolate

ALL_SCHEDULERS = (Scheduler("condot"), Scheduler("poly", 3), Scheduler("vp"), Scheduler("cosine"))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ""
    skipped: bool = False

    def line(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"[{status}] {self.name}: value={self.value:.6g} threshold={self.threshold:.6g} ({self.seconds:.2f}s) {self.detail}"


def check_scheduler_suite(seed: int = 0) -> CheckResult:
    """Boundary values exact to 1e-12; analytic vs central-difference derivatives within 1e-5."""
    rng = stream(seed, "verify", "scheduler")
    worst_bc, worst_fd = 0.0, 0.0
    h = 1e-6
    for s in ALL_SCHEDULERS:
        a0, b0, _, _ = s.eval(0.0)
        a1, b1, _, _ = s.eval(1.0)
        worst_bc = max(worst_bc, abs(a0), abs(b0 - 1), abs(a1 - 1), abs(b1))
        hi = 1 - 1e-3 if s.kind == "vp" else 1.0
        t = rng.uniform(h, hi - h, 1000)
        a, b, da, db = s.eval(t)
        ap, bp, _, _ = s.eval(t + h)
        am, bm, _, _ = s.eval(t - h)
        worst_fd = max(worst_fd, np.max(np.abs((ap - am) / (2 * h) - da)), np.max(np.abs((bp - bm) / (2 * h) - db)))
    passed = worst_bc <= 1e-12 and worst_fd < 1e-5
    return CheckResult("scheduler_suite", passed, worst_fd, 1e-5, detail=f"boundary_err={worst_bc:.3g}")


def check_velocity_consistency(seed: int = 0) -> CheckResult:
    """Conditional velocity equals the time derivative of the path point."""
    rng = stream(seed, "verify", "velocity")
    h = 1e-6
    worst = 0.0
    for s in ALL_SCHEDULERS:
        for _ in range(100):
            t = rng.uniform(h, 0.99)
            x0, x1 = rng.standard_normal((2, 3, 4))
            fd = (interpolate(s, t + h, x0, x1) - interpolate(s, t - h, x0, x1)) / (2 * h)
            worst = max(worst, np.max(np.abs(conditional_velocity(s, t, x0, x1) - fd)))
    return CheckResult("velocity_consistency", worst < 1e-5, worst, 1e-5)


def random_small_net(rng) -> VelocityNet:
    C = int(rng.integers(1, 4))
    Fh = int(rng.integers(1, 12 // C + 1))
    L = int(rng.integers(1, 6))
    hidden = tuple(int(w) for w in rng.integers(2, 33, size=int(rng.integers(1, 3))))
    K = int(rng.integers(0, 3))
    net = VelocityNet.init(C, L, Fh, hidden, K, rng=rng)
    for b in net.biases:
        b[...] = 0.1 * rng.standard_normal(b.shape)
    return net


def gradient_error(net: VelocityNet, rng, batch: int = 3) -> float:
    """Max relative error between ``net.backward`` and central differences (h = 1e-5)."""
    t = rng.uniform(0, 1, batch)
    xt = rng.standard_normal((batch, net.channels, net.horizon))
    hist = rng.standard_normal((batch, net.channels, net.history))
    up = rng.standard_normal((batch, net.channels, net.horizon))
    analytic = net.backward(t, xt, hist, up)
    numeric = finite_diff_grad(lambda _p: float(np.sum(net.forward(t, xt, hist) * up)), net.params(), 1e-5)
    return max(relative_error(analytic[k], numeric[k]) for k in analytic)


def check_gradient_oracle(seed: int = 0, n_nets: int = 20) -> CheckResult:
    rng = stream(seed, "verify", "gradient")
    worst = max(gradient_error(random_small_net(rng), rng) for _ in range(n_nets))
    return CheckResult("gradient_oracle", worst < 1e-4, worst, 1e-4, detail=f"{n_nets} random nets")


def enumeration_toy(s: Scheduler | None = None, sigma: float = 0.3) -> DiscreteCouplingToy:
    return DiscreteCouplingToy((-1.0, 1.0), (0.5, 0.5), (-2.0, 2.0), (0.3, 0.7), sigma, s or Scheduler("condot"))


def check_gradient_equivalence(seed: int = 0, repeats: int = 5) -> CheckResult:
    """Guided and conditional losses have equal gradients at random parameters."""
    rng = stream(seed, "verify", "equivalence")
    t_grid = np.linspace(0.05, 0.95, 10)
    worst, min_gap = 0.0, np.inf
    for s in ALL_SCHEDULERS:
        toy = enumeration_toy(s)
        for _ in range(repeats):
            net = VelocityNet.init(1, 1, 1, (5,), 1, rng=rng)
            for target in PredictionTarget:
                res = enumerate_loss_grads(net, toy, t_grid, target)
                worst = max(worst, res.max_grad_gap())
                min_gap = min(min_gap, res.loss_cgm - res.loss_gm)
    passed = worst < 1e-6 and min_gap > 0
    return CheckResult("gradient_equivalence", passed, worst, 1e-6, detail=f"min loss gap={min_gap:.4g}")


def transport_toy() -> DiscreteCouplingToy:
    return DiscreteCouplingToy((-1.0, 1.0), (0.5, 0.5), (-2.0, 2.0), (0.3, 0.7), 0.1, Scheduler("condot"))


def check_marginal_transport(seed: int = 0, n: int = 10_000, steps: int = 100) -> CheckResult:
    """Integrating the exact marginal velocity carries the smoothed source onto the target atoms."""
    toy = transport_toy()
    x0 = toy.sample_source(n, stream(seed, "verify", "transport"))
    xT = integrate(lambda t, x, h: discrete_marginal_velocity(toy, t, x), x0, None, toy.scheduler, PredictionTarget.UT, steps)
    frac = nearest_atom_fractions(xT, toy.target_atoms)
    err = float(np.max(np.abs(frac - np.asarray(toy.target_weights))))
    return CheckResult("marginal_transport", err < 0.02, err, 0.02, detail=f"fractions={np.round(frac, 4).tolist()}")


def check_gaussian_parameterizations(seed: int = 0, n: int = 10_000, steps: int = 40) -> CheckResult:
    """N(0,1) -> N(3,1) under CondOT with the closed-form posterior, all three targets."""
    s = Scheduler("condot")
    x0 = stream(seed, "verify", "gaussian").standard_normal(n)
    ends = {}
    for target in PredictionTarget:
        ends[target] = integrate(gaussian_oracle(s, target, 0.0, 1.0, 3.0, 1.0), x0, None, s, target, steps)
    x1 = ends[PredictionTarget.X1]
    agree = max(float(np.max(np.abs(ends[k] - x1))) for k in ends)
    mean, std = float(x1.mean()), float(x1.std())
    passed = abs(mean - 3) <= 0.05 and abs(std - 1) <= 0.05 and agree < 1e-8
    return CheckResult(
        "gaussian_parameterizations", passed, agree, 1e-8, detail=f"mean={mean:.4f} std={std:.4f}"
    )


def linear_field_error(steps: int) -> float:
    """Endpoint error of the midpoint rule on ``dx/dt = x`` from ``x(0) = 1`` (exact ``e``)."""
    x = integrate(lambda t, x, h: x, np.array([1.0]), None, Scheduler("condot"), PredictionTarget.UT, steps)
    return float(abs(x[0] - np.e))


def check_integrator_order() -> CheckResult:
    errs = [linear_field_error(n) for n in (10, 20, 40, 80)]
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    passed = all(3.0 <= r <= 5.0 for r in ratios)
    return CheckResult("integrator_order", passed, min(ratios), 3.0, detail=f"ratios={np.round(ratios, 4).tolist()}")


CHECKS = {
    "scheduler_suite": check_scheduler_suite,
    "velocity_consistency": check_velocity_consistency,
    "gradient_oracle": check_gradient_oracle,
    "gradient_equivalence": check_gradient_equivalence,
    "marginal_transport": check_marginal_transport,
    "gaussian_parameterizations": check_gaussian_parameterizations,
    "integrator_order": check_integrator_order,
}


def run_verify(budget_s: float | None = None, names=None, seed: int = 0) -> list[CheckResult]:
    """Run the checks in order; once ``budget_s`` is spent the rest are marked skipped."""
    results = []
    start = time.perf_counter()
    for name in names or CHECKS:
        if budget_s is not None and time.perf_counter() - start > budget_s:
            results.append(CheckResult(name, False, float("nan"), float("nan"), detail="budget exhausted", skipped=True))
            continue
        t0 = time.perf_counter()
        fn = CHECKS[name]
        res = fn(seed=seed) if "seed" in inspect.signature(fn).parameters else fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return None if math.isnan(v) else float(v)
    return v


def results_json(results) -> list[dict]:
    """JSON-ready dicts; NaN (skipped checks) becomes null."""
    return [{k: _plain(v) for k, v in asdict(r).items()} for r in results]
