"""CSV ingestion, chronological windowing, normalization and auxiliary predictions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
import json
import logging
import math

import numpy as np

from .errors import AlignmentError, AuxLookupError, ConfigError, DimensionError, InputError, SizingError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DATETIME_NAMES = {"date", "datetime", "time", "timestamp"}


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, datetime_column: str | None = None):
    """Read a time-major CSV with a header row.

    The datetime column is dropped: either the one named by
    ``datetime_column`` or, when not given, a first column whose header is a
    common timestamp name or whose first value is not numeric.

    Returns ``(raw, names)`` with ``raw`` of shape ``(T, C)``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise InputError(f"{path}: no data rows")

    if datetime_column is not None:
        if datetime_column not in header:
            raise InputError(f"{path}: datetime column {datetime_column!r} not in header {header}")
        dt_col = header.index(datetime_column)
    elif header[0].lower() in DATETIME_NAMES or not _is_number(body[0][0]):
        dt_col = 0
    else:
        dt_col = None

    keep = [j for j in range(len(header)) if j != dt_col]
    names = [header[j] for j in keep]
    raw = np.empty((len(body), len(keep)))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for k, j in enumerate(keep):
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise InputError(f"{path}: cannot parse {cell!r} at row {r}, column {header[j]!r}") from None
            if not math.isfinite(value):
                raise InputError(f"{path}: missing or non-finite value {cell!r} at row {r}, column {header[j]!r}")
            raw[r - 1, k] = value

    if dt_col is not None:
        _check_monotone([row[dt_col] for row in body], path)
    return raw, names


def _check_monotone(stamps, path) -> None:
    try:
        parsed = [datetime.fromisoformat(s.strip()) for s in stamps]
    except ValueError:
        return
    for r in range(1, len(parsed)):
        if parsed[r] <= parsed[r - 1]:
            logger.warning("%s: timestamps not increasing at row %d; file order kept", path, r + 1)
            return


@dataclass
class WindowedDataset:
    """Normalized series plus stride-1 windows that never cross a split boundary.

    Window ``i`` has history ``data[s:s+L].T`` and future
    ``data[s+L:s+L+Fh].T`` where ``s = starts[i]``. Windows are numbered
    train first, then val, then test.
    """

    data: np.ndarray
    names: list[str]
    history: int
    horizon: int
    mean: np.ndarray
    std: np.ndarray
    bounds: dict[str, tuple[int, int]]
    starts: np.ndarray
    split_of: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_windows(self) -> int:
        return len(self.starts)

    def indices(self, split: str) -> np.ndarray:
        if split not in self._index:
            if split not in SPLITS:
                raise ConfigError(f"unknown split {split!r}")
            self._index[split] = np.flatnonzero(self.split_of == SPLITS.index(split))
        return self._index[split]

    def histories(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx))
        offs = self.starts[idx][:, None] + np.arange(self.history)
        return self.data[offs].transpose(0, 2, 1)

    def futures(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx))
        offs = self.starts[idx][:, None] + self.history + np.arange(self.horizon)
        return self.data[offs].transpose(0, 2, 1)

    def history_of(self, i: int) -> np.ndarray:
        return self.histories([i])[0]

    def future_of(self, i: int) -> np.ndarray:
        return self.futures([i])[0]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Map normalized values with channels on axis -2 back to raw units."""
        return x * self.std[:, None] + self.mean[:, None]

    def stats_json(self) -> str:
        return json.dumps(
            {"channels": self.names, "mean": self.mean.tolist(), "std": self.std.tolist()}, indent=2
        )


def make_windows(raw, history: int, horizon: int, ratios=(0.6, 0.2, 0.2), names=None) -> WindowedDataset:
    """Split ``raw`` chronologically, z-score with train statistics, and window each segment."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise InputError(f"raw series must be (T, C), got shape {raw.shape}")
    T, C = raw.shape
    names = list(names) if names is not None else [f"ch{c}" for c in range(C)]
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if history < 1 or horizon < 1:
        raise ConfigError("history and horizon must be >= 1")

    n_train = int(math.floor(T * ratios[0] + 1e-9))
    n_val = int(math.floor(T * ratios[1] + 1e-9))
    bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, T)}
    span = history + horizon
    for split, (lo, hi) in bounds.items():
        if hi - lo < span:
            need = math.ceil(span / min(ratios))
            raise SizingError(
                f"{split} segment has {hi - lo} rows but a window needs {span}; "
                f"need roughly T >= {need} with ratios {tuple(ratios)} (T={T})"
            )

    train = raw[:n_train]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for c in range(C):
        if not std[c] > 0.0:
            raise InputError(f"channel {names[c]!r} is constant on the train segment; cannot normalize")
    data = (raw - mean) / std

    starts, split_of = [], []
    for k, split in enumerate(SPLITS):
        lo, hi = bounds[split]
        s = np.arange(lo, hi - span + 1)
        starts.append(s)
        split_of.append(np.full(len(s), k))
    return WindowedDataset(
        data=data,
        names=names,
        history=int(history),
        horizon=int(horizon),
        mean=mean,
        std=std,
        bounds=bounds,
        starts=np.concatenate(starts),
        split_of=np.concatenate(split_of).astype(np.int8),
    )


@dataclass
class AuxPredictions:
    """Auxiliary forecasts in normalized units, one row per window.

    ``window_ids[r]`` is the dataset window index of row ``r``; indexing the
    object by window index returns that row reshaped to ``(C, Fh)``.
    """

    values: np.ndarray
    window_ids: np.ndarray
    channels: int
    horizon: int
    provenance: str = "file"
    _rows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.window_ids = np.asarray(self.window_ids, dtype=np.int64)
        if self.values.shape != (len(self.window_ids), self.channels * self.horizon):
            raise DimensionError(
                f"aux values shape {self.values.shape}, expected ({len(self.window_ids)}, {self.channels * self.horizon})"
            )
        if not np.isfinite(self.values).all():
            raise InputError("auxiliary predictions contain non-finite values")
        self._rows = {int(w): r for r, w in enumerate(self.window_ids)}

    def __len__(self) -> int:
        return len(self.window_ids)

    def __getitem__(self, window: int) -> np.ndarray:
        try:
            r = self._rows[int(window)]
        except KeyError:
            raise AuxLookupError(f"no auxiliary prediction for window {window}") from None
        return self.values[r].reshape(self.channels, self.horizon)

    def rows(self, idx) -> np.ndarray:
        return np.stack([self[i] for i in np.atleast_1d(idx)])


def _instance_norm(x):
    m = x.mean(axis=1, keepdims=True)
    s = x.std(axis=1, keepdims=True) + 1e-5
    return m, s


def fit_linear_aux(dataset: WindowedDataset, lam: float = 1e-3) -> AuxPredictions:
    """Per-channel ridge map from instance-normalized history to future.

    Fitted on train windows by the normal equations, then applied to every
    window. Deterministic.
    """
    train = dataset.indices("train")
    if len(train) == 0:
        raise SizingError("no train windows to fit the linear auxiliary on")
    all_idx = np.arange(dataset.n_windows)
    H = dataset.histories(all_idx)
    F = dataset.futures(all_idx)
    pred = np.empty_like(F)
    L = dataset.history
    for c in range(dataset.channels):
        m, s = _instance_norm(H[:, c, :])
        Xn = (H[:, c, :] - m) / s
        Yn = (F[:, c, :] - m) / s
        Xt, Yt = Xn[train], Yn[train]
        W = np.linalg.solve(Xt.T @ Xt + lam * np.eye(L), Xt.T @ Yt)
        pred[:, c, :] = (Xn @ W) * s + m
    return AuxPredictions(pred.reshape(len(all_idx), -1), all_idx, dataset.channels, dataset.horizon, "builtin-linear")


def flat_header(channels: int, horizon: int) -> list[str]:
    return ["window_idx"] + [f"c{c}_f{f}" for c in range(channels) for f in range(horizon)]


def write_matrix_csv(path, window_ids, values, channels: int, horizon: int) -> None:
    """Rows of ``window_idx`` followed by ``C*Fh`` values at 17 significant digits."""
    values = np.asarray(values, dtype=np.float64).reshape(len(window_ids), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(flat_header(channels, horizon))
        for i, row in zip(window_ids, values):
            w.writerow([int(i)] + [f"{v:.17g}" for v in row])


def read_matrix_csv(path):
    """Inverse of ``write_matrix_csv``; returns ``(window_ids, values, header)``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "window_idx":
        raise InputError(f"{path}: expected header starting with 'window_idx'")
    header = rows[0]
    ids = np.empty(len(rows) - 1, dtype=np.int64)
    values = np.empty((len(rows) - 1, len(header) - 1))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DimensionError(f"{path}: row {r + 1} has {len(row) - 1} values, header declares {len(header) - 1}")
        ids[r] = int(row[0])
        values[r] = [float(v) for v in row[1:]]
    return ids, values, header


def save_aux_csv(aux: AuxPredictions, path) -> None:
    write_matrix_csv(path, aux.window_ids, aux.values, aux.channels, aux.horizon)


def load_aux_csv(path, dataset: WindowedDataset) -> AuxPredictions:
    """Load auxiliary predictions aligned to ``dataset``'s windows.

    The file must hold one row per dataset window, each with
    ``C * Fh`` values in normalized units.
    """
    ids, values, _ = read_matrix_csv(path)
    width = dataset.channels * dataset.horizon
    if values.shape[1] != width:
        raise DimensionError(f"{path}: expected {width} values per row (C*Fh), found {values.shape[1]}")
    if len(ids) != dataset.n_windows:
        raise AlignmentError(f"{path}: expected {dataset.n_windows} rows (one per window), found {len(ids)}")
    if not np.array_equal(np.sort(ids), np.arange(dataset.n_windows)):
        raise AlignmentError(f"{path}: window_idx column does not cover windows 0..{dataset.n_windows - 1}")
    return AuxPredictions(values, ids, dataset.channels, dataset.horizon, "file")
