"""Point and distributional forecast metrics.

WD and SWD are reported as squared 2-Wasserstein quantities (mean squared
gap between order statistics), not their square roots.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

METRIC_SEED = 20240917


def w2_1d(a, b) -> float:
    """Squared 1-D W2 between two equal-size empirical samples."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("w2_1d of empty samples")
    if a.size != b.size:
        raise ValueError("w2_1d needs equal sample sizes")
    d = np.sort(a) - np.sort(b)
    return float(np.mean(d * d))


def w2_1d_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`w2_1d` for (N, H) arrays."""
    d = np.sort(a, axis=-1) - np.sort(b, axis=-1)
    return np.mean(d * d, axis=-1)


def projection_directions(dim: int, n: int, seed: int = METRIC_SEED) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def swd(pred: np.ndarray, true: np.ndarray, n_proj: int = 500, seed: int = METRIC_SEED,
        directions: np.ndarray | None = None) -> float:
    """Sliced squared W2 between two sets of horizon vectors (B, H)."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 2:
        raise ValueError("swd needs two (B, H) arrays of equal shape")
    if pred.shape[0] < 2:
        raise ValueError("swd needs at least two samples per set")
    if directions is None:
        if n_proj < 1:
            raise ValueError("need at least one projection")
        directions = projection_directions(pred.shape[1], n_proj, seed)
    pa = pred @ directions.T   # (B, L)
    pb = true @ directions.T
    return float(np.mean(w2_1d_rows(pa.T, pb.T)))


def ept(pred: np.ndarray, true: np.ndarray, eps) -> float:
    """Average effective prediction time over (B, D, H) arrays.

    Per (b, d) this is the first 1-based step whose absolute error strictly
    exceeds ``eps[d]``, or H when it never does.
    """
    return float(ept_matrix(pred, true, eps).mean())


def ept_matrix(pred, true, eps) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0):
        raise ValueError("EPT thresholds must be positive")
    H = pred.shape[-1]
    over = np.abs(pred - true) > eps[None, :, None]
    first = np.argmax(over, axis=-1) + 1
    return np.where(over.any(axis=-1), first, H)


@dataclass
class MetricReport:
    mse: float
    mae: float
    wd: float
    swd: float | None
    ept_avg: float
    swd_projections: int = 0
    swd_seed: int = METRIC_SEED

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred: np.ndarray, true: np.ndarray, channel: np.ndarray, eps_scaled: np.ndarray,
             n_proj: int = 0, seed: int = METRIC_SEED) -> MetricReport:
    """Channel-averaged metrics for per-window predictions.

    ``pred``/``true`` are (N, H) arrays whose rows belong to ``channel``.
    Every metric is computed per channel and averaged uniformly.  With
    ``n_proj == 0`` no sliced metric is computed.  ``eps_scaled`` holds the
    EPT thresholds expressed in the same units as ``pred``.
    """
    chans = np.unique(channel)
    mse, mae, wd, sw, ep = [], [], [], [], []
    for c in chans:
        m = channel == c
        p, t = pred[m], true[m]
        e = p - t
        mse.append(np.mean(e * e))
        mae.append(np.mean(np.abs(e)))
        wd.append(np.mean(w2_1d_rows(p, t)))
        if n_proj:
            sw.append(swd(p, t, n_proj, seed))
        ep.append(ept(p[:, None, :], t[:, None, :], [eps_scaled[c]]))
    return MetricReport(float(np.mean(mse)), float(np.mean(mae)), float(np.mean(wd)),
                        float(np.mean(sw)) if n_proj else None, float(np.mean(ep)),
                        n_proj, seed)
