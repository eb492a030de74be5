"""Training loop, AdamW, checkpoint selection and naive comparators."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from fern import numkernel as nk
from fern.dataio import Split, WindowedDataset
from fern.metrics import MetricReport, evaluate
from fern.model import Fern
from fern.rng import streams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 50
    patience: int = 5
    grace: int = 3
    batch_size: int = 95
    huber_delta: float = 1.0
    seed: int = 7
    objective_weights: tuple[float, float, float] = (0.1, 1.0, 0.1)   # MSE, MAE, SWD
    swd_projections: int = 0          # 0: 1-D W2 (no projection) in the objective
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    track_test: bool = False

    def __post_init__(self):
        self.objective_weights = tuple(self.objective_weights)
        self.betas = tuple(self.betas)
        if self.grace >= self.epochs:
            raise ValueError("grace period must be shorter than the epoch budget")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if any(w < 0 for w in self.objective_weights):
            raise ValueError("objective weights must be nonnegative")


PROTOCOLS = {
    "shock": dict(lr=3e-4, batch_size=95, grace=3, swd_projections=0, epochs=50, patience=5),
    "detailed": dict(lr=9e-4, batch_size=128, grace=0, swd_projections=500, epochs=50,
                     patience=5),
}
PROTOCOL_SEEDS = {"shock": (7, 1955), "detailed": (7, 1955, 2023, 4)}
PROTOCOL_SPLITS = {"shock": (0.7, 0.2, 0.1), "detailed": (0.7, 0.1, 0.2)}
PROTOCOL_HORIZONS = {"shock": (336,), "detailed": (96, 192, 336, 720)}


def protocol_config(protocol: str, **overrides) -> TrainConfig:
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    kw = dict(PROTOCOLS[protocol])
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_objective: float
    val: dict
    eligible: bool
    timestamp: float
    test: dict | None = None


@dataclass
class RunRecord:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    test: dict | None = None
    wall_clock: float = 0.0
    config_hash: str = ""
    seed: int = 0
    grace: int = 0
    shuffle: str = "fresh permutation per epoch from the run seed"
    stopped_early: bool = False

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def config_hash(*parts) -> str:
    blob = json.dumps([p if isinstance(p, dict) else dataclasses.asdict(p) for p in parts],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def huber(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> float:
    """Mean Huber loss on plain arrays (the tape version lives in numkernel)."""
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError("huber: shape mismatch")
    e = np.abs(pred - target)
    return float(np.mean(np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))))


class AdamW:
    """Decoupled-weight-decay Adam over a dict of parameter tensors."""

    def __init__(self, params: dict[str, nk.Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.b1, self.b2 = lr, betas[0], betas[1]
        self.eps, self.wd = eps, weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.skipped = 0

    def step(self, grads: dict[str, np.ndarray]) -> bool:
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient; optimizer step skipped")
            return False
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - self.lr * (upd + self.wd * p.data)
        return True


class EarlyStopper:
    """Grace-period aware best-epoch tracking (no smoothing).

    Epochs ``1..grace`` are logged but never eligible; patience counts
    consecutive non-improving eligible epochs.
    """

    def __init__(self, grace: int, patience: int | None):
        self.grace, self.patience = grace, patience
        self.best_epoch, self.best_value, self.bad = None, np.inf, 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns (new best, stop now)."""
        if epoch <= self.grace:
            return False, False
        if value < self.best_value:
            self.best_epoch, self.best_value, self.bad = epoch, value, 0
            return True, False
        self.bad += 1
        return False, self.patience is not None and self.bad >= self.patience


def select_checkpoint(val_objectives, grace: int, patience: int | None = None) -> tuple[int, int]:
    """Best eligible epoch (1-based) and the last epoch that would run."""
    stopper = EarlyStopper(grace, patience)
    last = len(val_objectives)
    for epoch, val in enumerate(val_objectives, start=1):
        _, stop = stopper.update(epoch, val)
        if stop:
            last = epoch
            break
    if stopper.best_epoch is None:
        raise ValueError("no epoch after the grace period")
    return stopper.best_epoch, last


def objective(report: MetricReport, weights) -> float:
    dist = report.swd if report.swd is not None else report.wd
    return weights[0] * report.mse + weights[1] * report.mae + weights[2] * dist


def eps_scaled(ds: WindowedDataset) -> np.ndarray:
    return ds.eps / ds.scaler.scale


def score(pred: np.ndarray, split: Split, ds: WindowedDataset, n_proj: int) -> MetricReport:
    return evaluate(pred, split.y, split.channel, eps_scaled(ds), n_proj=n_proj)


def train(model: Fern, ds: WindowedDataset, cfg: TrainConfig) -> tuple[RunRecord, dict]:
    """Fit ``model`` on ``ds.train``; returns the run record and the state of
    the checkpointed (best eligible) epoch, which is also loaded into the
    model before test metrics are computed."""
    if len(ds.val) == 0:
        raise ValueError("empty validation split")
    rs = streams(cfg.seed)
    opt = AdamW(model.params, cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    rec = RunRecord(seed=cfg.seed, grace=cfg.grace,
                    config_hash=config_hash(model.cfg, cfg, {"data": ds.name}))
    names = list(model.params)
    start = time.time()
    stopper = EarlyStopper(cfg.grace, cfg.patience)
    best_state = None
    n = len(ds.train)
    for epoch in range(1, cfg.epochs + 1):
        order = rs["shuffle"].permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = ds.train.x[idx], ds.train.y[idx]
            z0, y0 = model.noise(len(idx), rs["noise"])
            with nk.Tape() as tape:
                pred, _ = model(xb, z0, y0)
                loss = nk.huber(pred, yb, cfg.huber_delta)
            tape.backward(loss, leaves=model.params.values())
            opt.step({k: model.params[k].grad for k in names})
            losses.append(loss.item())
        val = score(model.predict(ds.val.x, rs["eval"]), ds.val, ds, cfg.swd_projections)
        vobj = objective(val, cfg.objective_weights)
        eligible = epoch > cfg.grace
        test = None
        if cfg.track_test:
            test = score(model.predict(ds.test.x, rs["eval"]), ds.test, ds,
                         cfg.swd_projections).to_dict()
        rec.epochs.append(EpochLog(epoch, float(np.mean(losses)), vobj, val.to_dict(),
                                   eligible, time.time() - start, test))
        log.info("epoch %d loss %.5f val %.5f%s", epoch, np.mean(losses), vobj,
                 "" if eligible else " (grace)")
        improved, stop = stopper.update(epoch, vobj)
        if improved:
            best_state = model.state()
            rec.best_epoch = epoch
        if stop:
            rec.stopped_early = True
            break
    model.load_state(best_state)
    rec.test = score(model.predict(ds.test.x, rs["eval"]), ds.test, ds,
                     cfg.swd_projections).to_dict()
    rec.wall_clock = time.time() - start
    return rec, best_state


# ---------------------------------------------------------------- comparators


def baseline_predict(kind: str, ds: WindowedDataset, split: Split, ridge_lambda: float = 1e-3
                     ) -> np.ndarray:
    """Naive forecasts for ``split`` in scaled units."""
    H = ds.spec.horizon
    if kind == "mean":
        return np.repeat(ds.train_mean[split.channel][:, None], H, axis=1)
    if kind == "persistence":
        return np.repeat(split.x[:, -1:], H, axis=1)
    if kind == "ridge":
        out = np.empty((len(split), H))
        for c in range(ds.channels):
            tr = ds.train.channel == c
            X = np.hstack([ds.train.x[tr], np.ones((tr.sum(), 1))])
            reg = ridge_lambda * np.eye(X.shape[1])
            reg[-1, -1] = 0.0
            W = np.linalg.solve(X.T @ X + reg, X.T @ ds.train.y[tr])
            m = split.channel == c
            out[m] = np.hstack([split.x[m], np.ones((m.sum(), 1))]) @ W
        return out
    raise ValueError(f"unknown baseline {kind!r}")
