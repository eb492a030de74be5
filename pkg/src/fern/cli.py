"""Command line runner.

    fern generate --scenario LORENZ_BASE --out data/
    fern inspect data/ETTh2.csv --interval 1h [--apply --out clean/]
    fern run --scenario ROSSLER_BASE --protocol shock --model fern --out runs/
    fern ablate --scenario LORENZ_BASE --grid no_rotation,no_patch,R=2,R=24 --out abl/
    fern diagnose --checkpoint runs/checkpoints/x.json --scenario LORENZ_BASE --out diag/

Experiment settings resolve in this order, later layers winning: protocol
defaults, ``--config`` JSON file, environment (``FERN_SEED``, ``FERN_OUT``),
command line flags.  The JSON file may hold ``scenario``, ``csv``,
``columns``, ``protocol``, ``model``, ``seeds``, ``horizons``,
``input_len``, ``steps``, ``out`` and two override objects, ``fern``
(FernConfig fields) and ``train`` (TrainConfig fields).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import fern
from fern import dataio, diagnostics, generators, training
from fern.model import ConfigError, Fern, FernConfig

log = logging.getLogger("fern.cli")

MODELS = ("fern", "mean", "persistence", "ridge")
RESULT_COLUMNS = ["row_type", "scenario", "model", "protocol", "horizon", "seed", "n_seeds",
                  "mse", "mae", "wd", "swd", "ept", "mse_se", "mae_se", "wd_se", "swd_se",
                  "ept_se", "best_epoch", "config_hash", "code_version", "status"]
ABLATION_COLUMNS = ["variant", "reflections", "n_params", "mse", "mae", "wd", "swd", "ept",
                    "wall_time", "reflection_madds", "seeds", "config_hash", "code_version",
                    "status"]
METRICS = ("mse", "mae", "wd", "swd", "ept")
ABLATIONS = ("no_rotation", "no_patch", "only_encoder", "no_encoder_no_mu")


@dataclass
class ExperimentConfig:
    scenario: str | None = None
    csv: str | None = None
    columns: list[str] | None = None
    protocol: str = "shock"
    model: str = "fern"
    seeds: list[int] = field(default_factory=list)
    horizons: list[int] = field(default_factory=list)
    input_len: int = 336
    steps: int | None = None
    out: str = "fern-out"
    fern: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in training.PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if not self.seeds:
            self.seeds = list(training.PROTOCOL_SEEDS[self.protocol])
        if not self.horizons:
            self.horizons = list(training.PROTOCOL_HORIZONS[self.protocol])
        if (self.scenario is None) == (self.csv is None):
            raise ValueError("give exactly one of a scenario id or a CSV path")

    @property
    def source(self) -> str:
        return self.scenario.upper() if self.scenario else Path(self.csv).stem

    def train_config(self, seed: int) -> training.TrainConfig:
        return training.protocol_config(self.protocol, seed=seed, **self.train)

    def fern_config(self, horizon: int, **extra) -> FernConfig:
        kw = {**self.fern, **extra}
        return FernConfig(input_len=self.input_len, horizon=horizon, **kw)


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    layers: dict = {}
    if getattr(args, "config", None):
        layers.update(json.loads(Path(args.config).read_text()))
    layers.setdefault("fern", {})
    layers.setdefault("train", {})
    if os.environ.get("FERN_SEED"):
        layers["seeds"] = _int_list(os.environ["FERN_SEED"])
    if os.environ.get("FERN_OUT"):
        layers["out"] = os.environ["FERN_OUT"]
    flat = {"scenario": "scenario", "csv": "csv", "protocol": "protocol", "model": "model",
            "input_len": "input_len", "steps": "steps", "out": "out"}
    for attr, key in flat.items():
        v = getattr(args, attr, None)
        if v is not None:
            layers[key] = v
    if getattr(args, "columns", None):
        layers["columns"] = args.columns.split(",")
    if getattr(args, "seeds", None):
        layers["seeds"] = _int_list(args.seeds)
    if getattr(args, "horizon", None):
        layers["horizons"] = _int_list(args.horizon)
    if layers.get("scenario") and getattr(args, "csv", None):
        layers.pop("scenario")
    for attr in ("patch", "reflections", "hidden", *ABLATIONS):
        v = getattr(args, attr, None)
        if v is not None:
            layers["fern"][attr] = v
    for attr in ("grace", "epochs", "lr", "batch_size", "patience"):
        v = getattr(args, attr, None)
        if v is not None:
            layers["train"][attr] = v
    cfg = ExperimentConfig(**layers)
    defaults = training.PROTOCOLS[cfg.protocol]
    for k, v in cfg.train.items():
        if k in defaults and defaults[k] != v:
            log.info("override %s: %s -> %s (protocol %s)", k, defaults[k], v, cfg.protocol)
    return cfg


# ---------------------------------------------------------------- data


def load_frame(cfg: ExperimentConfig) -> dataio.SeriesFrame:
    if cfg.csv:
        frame = dataio.read_csv(cfg.csv)
        return frame.select(cfg.columns) if cfg.columns else frame
    overrides = {"steps": cfg.steps} if cfg.steps else {}
    frame = dataio.from_trajectory(generators.generate(cfg.scenario, **overrides))
    return frame.select(cfg.columns) if cfg.columns else frame


def make_dataset(frame, cfg: ExperimentConfig, horizon: int) -> dataio.WindowedDataset:
    spec = dataio.SplitSpec(training.PROTOCOL_SPLITS[cfg.protocol], cfg.input_len, horizon)
    return dataio.split_and_window(frame, spec, cfg.source)


# ---------------------------------------------------------------- runs


def _report_row(report: dict) -> dict:
    return {"mse": report["mse"], "mae": report["mae"], "wd": report["wd"],
            "swd": report["swd"], "ept": report["ept_avg"]}


def reflection_madds(fc: FernConfig) -> int:
    """Counted reflection multiply-adds for one forecast window."""
    model = Fern(fc, seed=0)
    counter = {"madds": 0}
    model(np.zeros((1, fc.input_len)), np.zeros((1, fc.latent_dim)),
          np.zeros((1, fc.horizon)), counter=counter)
    return counter["madds"]


def run_one(cfg: ExperimentConfig, ds, seed: int, horizon: int, out: Path,
            fern_extra: dict | None = None, tag: str = "") -> dict:
    """Train or evaluate one model; returns metrics plus provenance."""
    tc = cfg.train_config(seed)
    t0 = time.time()
    if cfg.model == "fern":
        fc = cfg.fern_config(horizon, **(fern_extra or {}))
        model = Fern(fc, seed=seed)
        rec, _ = training.train(model, ds, tc)
        stem = f"{cfg.source}_{cfg.model}{tag}_H{horizon}_s{seed}"
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "records").mkdir(parents=True, exist_ok=True)
        model.save(out / "checkpoints" / f"{stem}.json",
                   extra={"seed": seed, "scenario": cfg.source, "protocol": cfg.protocol,
                          "best_epoch": rec.best_epoch, "config_hash": rec.config_hash})
        (out / "records" / f"{stem}.json").write_text(rec.to_json())
        return {**_report_row(rec.test), "best_epoch": rec.best_epoch,
                "config_hash": rec.config_hash, "wall_time": time.time() - t0,
                "n_params": model.n_params(), "fern_config": fc}
    pred = training.baseline_predict(cfg.model, ds, ds.test)
    rep = training.score(pred, ds.test, ds, tc.swd_projections).to_dict()
    h = training.config_hash({"model": cfg.model}, {"seed": seed},
                             {"data": ds.name, "split": dataclasses.asdict(ds.spec)})
    return {**_report_row(rep), "best_epoch": "", "config_hash": h,
            "wall_time": time.time() - t0, "n_params": 0}


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _append(path: Path, rows: list[dict], columns: list[str]) -> None:
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})
        fh.flush()


def aggregate(rows: list[dict]) -> dict:
    """Seed mean with standard error (sample std / sqrt(n))."""
    n = len(rows)
    out = {"n_seeds": n, "seed": "mean"}
    for m in METRICS:
        vals = [r[m] for r in rows if r.get(m) not in (None, "")]
        if not vals:
            out[m], out[f"{m}_se"] = None, None
            continue
        arr = np.asarray(vals, dtype=np.float64)
        out[m] = float(arr.mean())
        out[f"{m}_se"] = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else None
    out["config_hash"] = training.config_hash({"runs": sorted(r["config_hash"] for r in rows)})
    return out


def cmd_run(cfg: ExperimentConfig) -> list[dict]:
    out = Path(cfg.out)
    results = out / "results.csv"
    frame = load_frame(cfg)
    base = {"scenario": cfg.source, "model": cfg.model, "protocol": cfg.protocol,
            "code_version": fern.__version__}
    written = []
    for horizon in cfg.horizons:
        ds = make_dataset(frame, cfg, horizon)
        done = []
        for seed in cfg.seeds:
            try:
                r = run_one(cfg, ds, seed, horizon, out)
            except Exception as exc:
                fail = {**base, "row_type": "run", "horizon": horizon, "seed": seed,
                        "status": f"failed: {type(exc).__name__}: {exc}"}
                _append(results, [fail], RESULT_COLUMNS)
                if done:
                    agg = {**base, "row_type": "aggregate", "horizon": horizon,
                           **aggregate(done), "status": "partial"}
                    _append(results, [agg], RESULT_COLUMNS)
                raise
            row = {**base, "row_type": "run", "horizon": horizon, "seed": seed, "n_seeds": 1,
                   **r, "status": "ok"}
            _append(results, [row], RESULT_COLUMNS)
            done.append(row)
            written.append(row)
        agg = {**base, "row_type": "aggregate", "horizon": horizon, **aggregate(done),
               "status": "ok"}
        _append(results, [agg], RESULT_COLUMNS)
        written.append(agg)
    return written


def parse_grid(text: str | None) -> list[tuple[str, dict]]:
    variants = [("base", {})]
    for item in (text or "").replace(" ", "").split(","):
        if not item:
            continue
        if item in ABLATIONS:
            variants.append((item, {item: True}))
        elif item.lower().startswith("r="):
            variants.append((f"R={int(item[2:])}", {"reflections": int(item[2:])}))
        else:
            raise ValueError(f"unknown ablation {item!r}; use {', '.join(ABLATIONS)} or R=<k>")
    return variants


def cmd_ablate(cfg: ExperimentConfig, grid: str | None) -> list[dict]:
    if cfg.model != "fern":
        raise ValueError("ablations apply to the fern model only")
    variants = parse_grid(grid)
    horizon = cfg.horizons[0]
    # validate every combination before spending time on training
    configs = {}
    for name, extra in variants:
        try:
            configs[name] = cfg.fern_config(horizon, **extra)
        except ConfigError as exc:
            raise ConfigError(f"variant {name}: {exc}") from None
    frame = load_frame(cfg)
    ds = make_dataset(frame, cfg, horizon)
    out = Path(cfg.out)
    rows = []
    for name, extra in variants:
        fc = configs[name]
        runs = [run_one(cfg, ds, s, horizon, out, extra, tag=f"_{name.replace('=', '')}")
                for s in cfg.seeds]
        agg = aggregate(runs)
        row = {"variant": name, "reflections": fc.n_reflections, "n_params": runs[0]["n_params"],
               **{m: agg[m] for m in METRICS},
               "wall_time": float(np.mean([r["wall_time"] for r in runs])),
               "reflection_madds": reflection_madds(fc),
               "seeds": " ".join(str(s) for s in cfg.seeds), "config_hash": agg["config_hash"],
               "code_version": fern.__version__, "status": "ok"}
        rows.append(row)
    path = out / "ablation.csv"
    if path.exists():
        path.unlink()
    _append(path, rows, ABLATION_COLUMNS)
    return rows


def cmd_diagnose(cfg: ExperimentConfig, checkpoint: str, split: str = "test") -> dict:
    model = Fern.load(checkpoint)
    mc = model.cfg
    cfg.input_len = mc.input_len
    ds = make_dataset(load_frame(cfg), cfg, mc.horizon)
    part = getattr(ds, split)
    pred, factors = model.predict(part.x, return_factors=True)
    prof = diagnostics.eigen_profile(factors, window=part.offset, channel=part.channel)
    errors = np.abs(pred - part.y)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {mode: diagnostics.export_profile(prof, errors, out / f"profile_{mode}.csv", mode)
             for mode in ("patch", "window")}
    return {"windows": len(prof), "patches": prof.n_patches,
            **{k: str(v) for k, v in paths.items()}}


def generate_files(name: str, out: str, steps: int | None = None, burn_in: int = 0):
    overrides = {"steps": steps} if steps else {}
    traj = generators.generate(name, burn_in=burn_in, **overrides)
    return traj, traj.save(Path(out) / f"{traj.scenario}.csv")


def infer_interval(frame: dataio.SeriesFrame) -> float | None:
    if frame.timestamps is None or len(frame.timestamps) < 2:
        return None
    import pandas as pd
    try:
        ts = pd.to_datetime(pd.Series(frame.timestamps))
    except (ValueError, TypeError):
        return None
    return float(ts.diff().dropna().median().total_seconds())


def cmd_inspect(path: str, interval=None, sentinels=(), apply: bool = False,
                out: str | None = None, stream=None) -> dict:
    stream = stream or sys.stdout
    frame = dataio.read_csv(path)
    report = dataio.zero_report(frame)
    print(f"{'column':<12}{'zeros':>8}{'percent':>10}{'isolated':>10}{'clustered':>11}"
          f"{'longest':>9}", file=stream)
    for r in report:
        print(f"{r.column:<12}{r.total:>8}{r.percent:>9.2f}%{r.isolated:>10}{r.clustered:>11}"
              f"{r.longest_run:>9}", file=stream)
    sec = dataio.parse_interval(interval) if interval is not None else infer_interval(frame)
    sent: dict[str, list[float]] = {}
    for item in sentinels:
        col, _, val = item.partition("=")
        sent.setdefault(col, []).append(float(val))
    policy = dataio.Policy(sampling_interval=sec, sentinels=sent)
    try:
        new, actions = dataio.apply_policy(frame, policy)
    except ValueError as exc:
        print(f"policy: {exc}", file=stream)
        return {"report": report, "actions": None}
    print("policy actions" + ("" if apply else " (dry run)") + ":", file=stream)
    if not actions:
        print("  none", file=stream)
    for a in actions:
        print(f"  {a['column']}: {a['rule']} ({a['rows']} rows)", file=stream)
    if apply:
        dest = Path(out or ".")
        dest.mkdir(parents=True, exist_ok=True)
        stem = Path(path).stem
        dataio.write_csv(new, dest / f"{stem}.clean.csv")
        (dest / f"{stem}.actions.json").write_text(json.dumps(
            {"source": str(path), "sampling_interval": sec, "actions": actions}, indent=2))
        print(f"wrote {dest / (stem + '.clean.csv')}", file=stream)
    return {"report": report, "actions": actions}


# ---------------------------------------------------------------- argparse


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario")
    p.add_argument("--csv", help="CSV input instead of a scenario id")
    p.add_argument("--columns", help="comma separated subset of CSV columns")
    p.add_argument("--protocol", choices=sorted(training.PROTOCOLS))
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--seeds", help="comma separated, e.g. 7,1955")
    p.add_argument("--horizon", help="one or more horizons, comma separated")
    p.add_argument("--input-len", type=int, dest="input_len")
    p.add_argument("--steps", type=int, help="override the scenario length")
    p.add_argument("--patch", type=int)
    p.add_argument("--reflections", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--no-rotation", action="store_true", default=None, dest="no_rotation")
    p.add_argument("--no-patch", action="store_true", default=None, dest="no_patch")
    p.add_argument("--only-encoder", action="store_true", default=None, dest="only_encoder")
    p.add_argument("--no-encoder-no-mu", action="store_true", default=None,
                   dest="no_encoder_no_mu")
    p.add_argument("--grace", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fern", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a premade scenario to CSV + JSON")
    g.add_argument("--scenario", required=True)
    g.add_argument("--out", default=os.environ.get("FERN_OUT", "."))
    g.add_argument("--steps", type=int)
    g.add_argument("--burn-in", type=int, default=0, dest="burn_in")

    i = sub.add_parser("inspect", help="zero-inflation report and cleaning dry run")
    i.add_argument("path")
    i.add_argument("--interval", help="sampling interval, e.g. 1h or 600 (seconds)")
    i.add_argument("--sentinel", action="append", default=[], help="COLUMN=VALUE")
    i.add_argument("--apply", action="store_true")
    i.add_argument("--out")

    r = sub.add_parser("run", help="train/evaluate over seeds x horizons")
    _experiment_flags(r)

    a = sub.add_parser("ablate", help="ablation table for the fern model")
    _experiment_flags(a)
    a.add_argument("--grid", default="", help="e.g. no_rotation,no_patch,R=2,R=24")

    d = sub.add_parser("diagnose", help="export eigen profiles from a checkpoint")
    _experiment_flags(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--split", choices=("train", "val", "test"), default="test")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            traj, (csv_path, side) = generate_files(args.scenario, args.out, args.steps,
                                                    args.burn_in)
            print(f"{csv_path} {traj.values.shape[0]}x{traj.values.shape[1]} (sidecar {side})")
        elif args.command == "inspect":
            cmd_inspect(args.path, args.interval, args.sentinel, args.apply, args.out)
        elif args.command == "run":
            cfg = resolve_config(args)
            for row in cmd_run(cfg):
                print(f"{row['row_type']:<9} H={row['horizon']} seed={row['seed']} "
                      f"mse={row['mse']:.4f} mae={row['mae']:.4f} ept={row['ept']:.2f}")
            print(f"results appended to {Path(cfg.out) / 'results.csv'}")
        elif args.command == "ablate":
            cfg = resolve_config(args)
            for row in cmd_ablate(cfg, args.grid):
                print(f"{row['variant']:<18} mse={row['mse']:.4f} mae={row['mae']:.4f} "
                      f"ept={row['ept']:.2f} madds={row['reflection_madds']} "
                      f"time={row['wall_time']:.1f}s")
        elif args.command == "diagnose":
            cfg = resolve_config(args)
            print(json.dumps(cmd_diagnose(cfg, args.checkpoint, args.split), indent=2))
    except (KeyError, ValueError, FileNotFoundError, generators.SimulationError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
