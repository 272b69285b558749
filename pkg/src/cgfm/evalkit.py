"""Metrics, multi-seed aggregation, synthetic series and the PCA trajectory diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .dataio import AuxPredictions, WindowedDataset
from .errors import DegenerateError, FingerprintError, ShapeError
from .rng import stream


def mse_mae(pred, truth) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    err = pred - truth
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


@dataclass
class ForecastReport:
    fingerprint: dict
    mse: float
    mae: float
    n_windows: int
    seed: int
    wall_ms: float | None = None
    window_sq_err: np.ndarray | None = field(default=None, repr=False)
    window_abs_err: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_predictions(cls, pred, truth, fingerprint: dict, seed: int, wall_ms=None) -> "ForecastReport":
        mse, mae = mse_mae(pred, truth)
        err = np.asarray(pred) - np.asarray(truth)
        n = err.shape[0]
        return cls(
            fingerprint=dict(fingerprint),
            mse=mse,
            mae=mae,
            n_windows=n,
            seed=int(seed),
            wall_ms=wall_ms,
            window_sq_err=(err**2).reshape(n, -1).mean(axis=1),
            window_abs_err=np.abs(err).reshape(n, -1).mean(axis=1),
        )

    def to_dict(self, with_wall: bool = False) -> dict:
        out = {
            "fingerprint": self.fingerprint,
            "mse": self.mse,
            "mae": self.mae,
            "n_windows": self.n_windows,
            "seed": self.seed,
        }
        if with_wall:
            out["wall_ms"] = self.wall_ms
        return out

    def to_json(self, with_wall: bool = False) -> str:
        """Report JSON. Wall time is left out by default so reruns compare byte-for-byte."""
        return json.dumps(self.to_dict(with_wall), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ForecastReport":
        d = json.loads(text)
        return cls(d["fingerprint"], d["mse"], d["mae"], d["n_windows"], d["seed"], d.get("wall_ms"))


def aggregate(reports) -> dict:
    """Mean and sample standard deviation of MSE/MAE across seeds.

    All reports must share one configuration fingerprint. With a single
    report the std is 0 and ``single`` is set.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    fp = reports[0].fingerprint
    for r in reports[1:]:
        if r.fingerprint != fp:
            diff = sorted(k for k in set(fp) | set(r.fingerprint) if fp.get(k) != r.fingerprint.get(k))
            raise FingerprintError(f"reports differ in configuration fields {diff}")
    n = len(reports)
    out = {"fingerprint": fp, "n": n, "single": n == 1, "seeds": [r.seed for r in reports]}
    for metric in ("mse", "mae"):
        vals = np.array([getattr(r, metric) for r in reports])
        out[metric] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if n > 1 else 0.0}
    return out


# -- synthetic data -----------------------------------------------------------


def sinmix_params(C: int, seed: int) -> dict:
    """Per-channel components of the sinusoid mixture.

    Channel ``c`` has base period ``P ~ U(24, 48)`` and components with
    periods ``P``, ``P / (2 + d2)``, ``P / (3 + d3)`` where ``d ~ U(-0.05, 0.05)``,
    amplitudes ``U(0.8, 1.2)``, ``U(0.3, 0.6)``, ``U(0.1, 0.3)`` and phases
    ``U(0, 2 pi)``. Continuous detunings make the periods incommensurate.
    """
    rng = stream(seed, "sinmix", "params")
    base = rng.uniform(24.0, 48.0, size=C)
    detune = rng.uniform(-0.05, 0.05, size=(C, 2))
    periods = np.stack([base, base / (2.0 + detune[:, 0]), base / (3.0 + detune[:, 1])], axis=1)
    amps = np.stack(
        [rng.uniform(0.8, 1.2, C), rng.uniform(0.3, 0.6, C), rng.uniform(0.1, 0.3, C)], axis=1
    )
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(C, 3))
    return {"periods": periods, "amplitudes": amps, "phases": phases}


def synth_sinmix(T: int, C: int, seed: int, noise_std: float = 0.05) -> np.ndarray:
    """``x[t, c] = sum_k A_ck sin(2 pi t / P_ck + phi_ck) + noise_std * eps`` (see ``sinmix_params``)."""
    if T < 200:
        raise ValueError(f"synth_sinmix needs T >= 200, got {T}")
    p = sinmix_params(C, seed)
    t = np.arange(T, dtype=np.float64)[:, None, None]
    x = (p["amplitudes"] * np.sin(2.0 * np.pi * t / p["periods"] + p["phases"])).sum(axis=2)
    if noise_std > 0:
        x = x + noise_std * stream(seed, "sinmix", "noise").standard_normal((T, C))
    return x


def aux_bias(histories: np.ndarray, horizon: int, tail: int = 8) -> np.ndarray:
    """``0.5 * tanh(mean of the last `tail` history steps)`` per channel, broadcast over the horizon."""
    b = 0.5 * np.tanh(histories[..., -tail:].mean(axis=-1))
    return np.repeat(b[..., None], horizon, axis=-1)


def synth_biased_aux(dataset: WindowedDataset) -> AuxPredictions:
    """Auxiliary predictions equal to the true future plus a history-dependent bias."""
    idx = np.arange(dataset.n_windows)
    fut = dataset.futures(idx)
    pred = fut + aux_bias(dataset.histories(idx), dataset.horizon)
    return AuxPredictions(pred.reshape(len(idx), -1), idx, dataset.channels, dataset.horizon, "synth-biased")


def persistence_forecast(dataset: WindowedDataset, idx) -> np.ndarray:
    """Repeat the last observed value of each channel over the horizon."""
    last = dataset.histories(idx)[..., -1]
    return np.repeat(last[..., None], dataset.horizon, axis=-1)


# -- PCA ----------------------------------------------------------------------


def _power_top(M, v, ortho, iters, tol):
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        for u in ortho:
            w -= (u @ w) * u
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        new_lam = float(w @ M @ w)
        converged = abs(new_lam - lam) <= tol * max(abs(new_lam), 1e-300) and np.linalg.norm(w - v) < math.sqrt(tol)
        v, lam = w, new_lam
        if converged:
            break
    return v, lam


def principal_components(X: np.ndarray, k: int = 2, iters: int = 500, tol: float = 1e-9):
    """Top-``k`` covariance eigenpairs by power iteration with deflation.

    Returns ``(components (k, d), eigenvalues (k,), total_variance)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    total = float(np.trace(cov))
    if not total > 0.0:
        raise DegenerateError("input has zero variance (rank 0); no principal components")
    d = cov.shape[0]
    M = cov.copy()
    comps, vals = [], []
    for _ in range(min(k, d)):
        v = np.ones(d) / math.sqrt(d)
        for u in comps:
            v -= (u @ v) * u
        # all-ones start can be (near-)orthogonal to the remaining spectrum
        if np.linalg.norm(M @ v) <= 1e-12 * total:
            v = np.zeros(d)
            v[int(np.argmax(np.diag(M)))] = 1.0
            for u in comps:
                v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            break
        v, lam = _power_top(M, v / nv, comps, iters, tol)
        v = v * np.sign(v[np.argmax(np.abs(v))])
        comps.append(v)
        vals.append(max(lam, 0.0))
        M = M - lam * np.outer(v, v)
    while len(comps) < k:
        comps.append(np.zeros(d))
        vals.append(0.0)
    return np.array(comps), np.array(vals), total


def pca_trajectory(pred: np.ndarray):
    """Project ``n x d`` predictions onto their first two principal components.

    Returns ``(proj (n, 2), explained_ratio (2,), components (2, d))``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    pred = pred.reshape(pred.shape[0], -1)
    if pred.shape[0] < 3:
        raise DegenerateError(f"PCA trajectory needs at least 3 rows, got {pred.shape[0]}")
    comps, vals, total = principal_components(pred, 2)
    proj = (pred - pred.mean(axis=0)) @ comps.T
    return proj, vals / total, comps
