"""Command line entry point: ``cgfm {train,forecast,evaluate,verify,pca}``.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataio, evalkit, verify
from .errors import CGFMError, ConfigError, DimensionError, InputError
from .netcore import load_params, save_params
from .pathkit import PredictionTarget, SourceMode
from .sampling import SampleConfig, forecast_split
from .scheduler import Scheduler
from .training import TrainConfig, train

logger = logging.getLogger("cgfm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CGFM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    """Everything a train/forecast run needs; round-trips through JSON."""

    data: str | None = None
    datetime_column: str | None = None
    history: int = 96
    horizon: int = 96
    ratios: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    scheduler: str = "poly:3"
    target: str = "x1"
    source: str = "aux"
    aux: str = "builtin-linear"
    ridge_lambda: float = 1e-3
    sigma: float = 1.0
    sample_sigma: float | None = None
    seed: int = 0
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    max_steps: int | None = None
    patience: int = 10
    val_every: int = 200
    val_windows: int = 256
    hidden: list = field(default_factory=lambda: [256, 256])
    time_freqs: int = 8
    steps: int = 20
    num_samples: int = 1
    eps_den: float = 1e-6
    threads: int = 1
    out: str = "runs/cgfm"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def scheduler_obj(self) -> Scheduler:
        return Scheduler.parse(self.scheduler)

    def target_obj(self) -> PredictionTarget:
        return PredictionTarget.parse(self.target)

    def source_obj(self, sampling: bool = False) -> SourceMode:
        if self.source not in ("aux", "noise"):
            raise ConfigError(f"--source must be 'aux' or 'noise', got {self.source!r}")
        sigma = self.sample_sigma if sampling and self.sample_sigma is not None else self.sigma
        return SourceMode(self.source, float(sigma))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            scheduler=self.scheduler_obj(),
            target=self.target_obj(),
            source=self.source_obj(),
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            max_steps=self.max_steps,
            patience=self.patience,
            val_every=self.val_every,
            val_windows=self.val_windows,
            hidden=tuple(self.hidden),
            time_freqs=self.time_freqs,
            threads=self.threads,
        )

    def sample_config(self) -> SampleConfig:
        return SampleConfig(
            steps=self.steps,
            target=self.target_obj(),
            source=self.source_obj(sampling=True),
            eps_den=self.eps_den,
            num_samples=self.num_samples,
            seed=self.seed,
        )

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("a data file is required (--data or 'data' in the config file)")
        self.scheduler_obj()
        self.target_obj()
        self.train_config()
        self.sample_config()


# flag name -> (config field, argparse kwargs)
TRAIN_FLAGS = {
    "--data": ("data", dict(type=str)),
    "--datetime-column": ("datetime_column", dict(type=str)),
    "--history": ("history", dict(type=int)),
    "--horizon": ("horizon", dict(type=int)),
    "--ratios": ("ratios", dict(type=float, nargs=3)),
    "--scheduler": ("scheduler", dict(type=str, help="condot | poly:<n> | vp | cosine")),
    "--target": ("target", dict(type=str, choices=["u", "x0", "x1"])),
    "--source": ("source", dict(type=str, choices=["aux", "noise"])),
    "--aux": ("aux", dict(type=str, help="builtin-linear | synth-biased | path to aux CSV")),
    "--ridge-lambda": ("ridge_lambda", dict(type=float)),
    "--sigma": ("sigma", dict(type=float)),
    "--sample-sigma": ("sample_sigma", dict(type=float)),
    "--seed": ("seed", dict(type=int)),
    "--epochs": ("epochs", dict(type=int)),
    "--batch-size": ("batch_size", dict(type=int)),
    "--lr": ("lr", dict(type=float)),
    "--max-steps": ("max_steps", dict(type=int)),
    "--patience": ("patience", dict(type=int)),
    "--val-every": ("val_every", dict(type=int)),
    "--val-windows": ("val_windows", dict(type=int)),
    "--hidden": ("hidden", dict(type=int, nargs="+")),
    "--time-freqs": ("time_freqs", dict(type=int)),
    "--steps": ("steps", dict(type=int)),
    "--num-samples": ("num_samples", dict(type=int)),
    "--eps-den": ("eps_den", dict(type=float)),
    "--threads": ("threads", dict(type=int)),
    "--out": ("out", dict(type=str)),
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig(threads=default_threads())
    for _flag, (name, _kw) in TRAIN_FLAGS.items():
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, list(value) if isinstance(value, list) else value)
    cfg.threads = min(cfg.threads, default_threads()) if "CGFM_THREADS" in os.environ else cfg.threads
    return cfg


def load_dataset(cfg: RunConfig):
    raw, names = dataio.load_csv(cfg.data, cfg.datetime_column)
    return dataio.make_windows(raw, cfg.history, cfg.horizon, tuple(cfg.ratios), names)


def build_aux(cfg: RunConfig, ds):
    if cfg.source != "aux":
        return None
    if cfg.aux == "builtin-linear":
        return dataio.fit_linear_aux(ds, cfg.ridge_lambda)
    if cfg.aux == "synth-biased":
        return evalkit.synth_biased_aux(ds)
    if not Path(cfg.aux).exists():
        raise ConfigError(f"auxiliary prediction file {cfg.aux} does not exist")
    return dataio.load_aux_csv(cfg.aux, ds)


def _write(path: Path, text: str) -> None:
    path.write_text(text)


# -- subcommands --------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.resolved", cfg.to_json())
    ds = load_dataset(cfg)
    aux = build_aux(cfg, ds)
    if aux is not None:
        dataio.save_aux_csv(aux, out / "aux.csv")
    net, log = train(ds, aux, cfg.train_config())
    save_params(net, out / "params.bin")
    log.write_csv(out / "train_log.csv")
    _write(out / "norm_stats.json", ds.stats_json() + "\n")
    print(f"trained {log.rows[-1][0]} steps, best val loss {log.best_val:.6g} at step {log.best_step}; artifacts in {out}")
    return EXIT_OK


def _run_config(run_dir: Path) -> RunConfig:
    path = run_dir / "config.resolved"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no config.resolved; is it a training output directory?")
    return RunConfig.from_file(path)


def cmd_forecast(args) -> int:
    run_dir = Path(args.run)
    cfg = _run_config(run_dir)
    for name in ("steps", "num_samples", "sample_sigma", "seed"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    params = Path(args.params) if args.params else run_dir / "params.bin"
    if not params.exists():
        raise ConfigError(f"parameter file {params} not found; train first or pass --params")
    net = load_params(params)
    ds = load_dataset(cfg)
    aux = None
    if cfg.source == "aux":
        aux_path = run_dir / "aux.csv"
        aux = dataio.load_aux_csv(aux_path, ds) if aux_path.exists() else build_aux(cfg, ds)
    sc = cfg.sample_config()
    with threadpool_limits(limits=max(1, cfg.threads)):
        ids, preds = forecast_split(net, ds, args.split, sc, cfg.scheduler_obj(), aux)
    out = Path(args.out) if args.out else run_dir / "forecast.csv"
    dataio.write_matrix_csv(out, ids, preds, ds.channels, ds.horizon)
    _write(out.with_name(out.stem + ".norm_stats.json"), ds.stats_json() + "\n")
    meta = {"split": args.split, "steps": sc.steps, "num_samples": sc.num_samples, "seed": sc.seed,
            "sigma": sc.source.sigma}
    _write(out.with_name(out.stem + ".meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(ids)} {args.split} forecasts to {out}")
    return EXIT_OK


def _report_for(run_dir: Path, forecast_name: str) -> evalkit.ForecastReport:
    cfg = _run_config(run_dir)
    path = run_dir / forecast_name
    if not path.exists():
        raise ConfigError(f"forecast file {path} not found")
    ids, values, _ = dataio.read_matrix_csv(path)
    ds = load_dataset(cfg)
    if values.shape[1] != ds.channels * ds.horizon:
        raise DimensionError(
            f"{path}: {values.shape[1]} value columns, dataset needs {ds.channels} x {ds.horizon} = {ds.channels * ds.horizon}"
        )
    if np.any(ids < 0) or np.any(ids >= ds.n_windows):
        raise InputError(f"{path}: window ids outside 0..{ds.n_windows - 1}")
    truth = ds.futures(ids).reshape(len(ids), -1)
    meta_path = path.with_name(path.stem + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    fp = {
        "scheduler": cfg.scheduler,
        "target": cfg.target,
        "source": cfg.source,
        "sigma": meta.get("sigma", cfg.sigma),
        "steps": meta.get("steps", cfg.steps),
        "num_samples": meta.get("num_samples", cfg.num_samples),
        "split": meta.get("split", "test"),
    }
    return evalkit.ForecastReport.from_predictions(values, truth, fp, meta.get("seed", cfg.seed))


def _expand_runs(paths) -> list[Path]:
    """Run directories; a directory without ``config.resolved`` contributes its run subdirectories."""
    runs = []
    for p in map(Path, paths):
        if (p / "config.resolved").exists() or not p.is_dir():
            runs.append(p)
        else:
            found = sorted(d for d in p.iterdir() if (d / "config.resolved").exists())
            if not found:
                raise ConfigError(f"{p} holds no run directories")
            runs.extend(found)
    return runs


def cmd_evaluate(args) -> int:
    reports = []
    runs = _expand_runs(args.runs)
    for run in runs:
        t0 = time.perf_counter()
        rep = _report_for(Path(run), args.forecast)
        rep.wall_ms = 1e3 * (time.perf_counter() - t0)
        _write(Path(run) / "report.json", rep.to_json())
        print(f"{run}: mse={rep.mse:.6g} mae={rep.mae:.6g} n_windows={rep.n_windows}")
        reports.append(rep)
    if len(reports) > 1:
        agg = evalkit.aggregate(reports)
        out = Path(args.out) if args.out else runs[0].parent / "aggregate.json"
        _write(out, json.dumps(agg, indent=2, sort_keys=True) + "\n")
        print(f"aggregate over {agg['n']} seeds: mse={agg['mse']['mean']:.6g}±{agg['mse']['std']:.3g} "
              f"mae={agg['mae']['mean']:.6g}±{agg['mae']['std']:.3g} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_verify(args.budget, args.checks, args.seed)
    for r in results:
        print(r.line())
    if args.out:
        _write(Path(args.out), json.dumps(verify.results_json(results), indent=2) + "\n")
    failed = [r for r in results if not r.passed and not r.skipped]
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_pca(args) -> int:
    ids, values, _ = dataio.read_matrix_csv(args.forecast)
    proj, ratio, _ = evalkit.pca_trajectory(values)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["idx", "pc1", "pc2"])
        for i, (p1, p2) in zip(ids, proj):
            w.writerow([int(i), f"{p1:.17g}", f"{p2:.17g}"])
    print(f"explained variance: pc1={ratio[0]:.6f} pc2={ratio[1]:.6f}; wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgfm", description="Conditional guided flow matching forecaster")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a velocity network")
    tr.add_argument("--config", help="JSON config file; flags override it")
    for flag, (name, kw) in TRAIN_FLAGS.items():
        tr.add_argument(flag, dest=name, default=None, **kw)
    tr.set_defaults(func=cmd_train)

    fc = sub.add_parser("forecast", help="sample forecasts for a split")
    fc.add_argument("--run", required=True, help="training output directory")
    fc.add_argument("--params", help="parameter file (default RUN/params.bin)")
    fc.add_argument("--split", default="test", choices=dataio.SPLITS)
    fc.add_argument("--steps", type=int)
    fc.add_argument("--num-samples", dest="num_samples", type=int)
    fc.add_argument("--sample-sigma", dest="sample_sigma", type=float)
    fc.add_argument("--seed", type=int)
    fc.add_argument("--out", help="forecast CSV (default RUN/forecast.csv)")
    fc.set_defaults(func=cmd_forecast)

    ev = sub.add_parser("evaluate", help="score forecasts; aggregates when given several runs")
    ev.add_argument("runs", nargs="+", help="run directories holding config.resolved and a forecast CSV")
    ev.add_argument("--forecast", default="forecast.csv", help="forecast file name inside each run")
    ev.add_argument("--out", help="aggregate JSON path when several runs are given")
    ev.add_argument("--seed", type=int, help="accepted for uniformity; evaluation draws no random numbers")
    ev.set_defaults(func=cmd_evaluate)

    vf = sub.add_parser("verify", help="run the numerical oracle suite")
    vf.add_argument("--budget", type=float, help="seconds; checks not started in time are skipped")
    vf.add_argument("--checks", nargs="+", choices=list(verify.CHECKS))
    vf.add_argument("--seed", type=int, default=0)
    vf.add_argument("--out", help="write results JSON here")
    vf.set_defaults(func=cmd_verify)

    pc = sub.add_parser("pca", help="PCA trajectory of a forecast CSV")
    pc.add_argument("--forecast", required=True)
    pc.add_argument("--out", required=True)
    pc.add_argument("--seed", type=int, help="accepted for uniformity; PCA is deterministic")
    pc.set_defaults(func=cmd_pca)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"cgfm {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CGFMError, OSError) as exc:
        print(f"cgfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
