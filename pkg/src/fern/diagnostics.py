"""Spectral read-outs of the per-patch SPD maps and a tidy CSV export.

Everything is read straight from the eigenvalue tensor of
:class:`~fern.model.SPDFactors`; no matrix is assembled or decomposed.

CSV schema (version 1), one row per (window, patch) in ``patch`` mode or
per window in ``window`` mode (``patch = -1``, ``step = 0``):

    schema_version, mode, window, channel, patch, step, patch_size,
    log_abs_error, max_eig, trace, logdet

``step`` is the 0-based first horizon step covered by the patch and
``log_abs_error`` is the natural log of the mean absolute error over the
steps the row covers (floored at 1e-12).  A zero eigenvalue in sentinel
mode is written as ``-inf``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1
LAMBDA_FLOOR = 1e-12
ERROR_FLOOR = 1e-12
COLUMNS = ["schema_version", "mode", "window", "channel", "patch", "step", "patch_size",
           "log_abs_error", "max_eig", "trace", "logdet"]


@dataclass
class EigenProfile:
    max_eig: np.ndarray    # (W, P)
    trace: np.ndarray      # (W, P)
    logdet: np.ndarray     # (W, P)
    window: np.ndarray     # (W,)
    channel: np.ndarray    # (W,)
    patch_size: int

    def __len__(self):
        return self.max_eig.shape[0]

    @property
    def n_patches(self) -> int:
        return self.max_eig.shape[1]

    def window_mean(self) -> dict[str, np.ndarray]:
        """Patch-averaged statistics per window."""
        with np.errstate(invalid="ignore"):
            return {"max_eig": self.max_eig.mean(axis=1), "trace": self.trace.mean(axis=1),
                    "logdet": self.logdet.mean(axis=1)}


def eigen_profile(factors, window=None, channel=None, logdet_mode: str = "floor"
                  ) -> EigenProfile:
    """Per-patch max eigenvalue, trace and log-determinant.

    ``logdet_mode='floor'`` clamps eigenvalues at 1e-12 before the log;
    ``'sentinel'`` reports ``-inf`` for any patch holding a zero eigenvalue.
    """
    lam = np.asarray(getattr(factors, "eigenvalues", factors), dtype=np.float64)
    if lam.ndim == 2:
        lam = lam[None]
    if lam.ndim != 3:
        raise ValueError("eigenvalues must be (windows, patches, patch_size)")
    W, P, p = lam.shape
    if logdet_mode == "floor":
        logdet = np.log(np.maximum(lam, LAMBDA_FLOOR)).sum(axis=-1)
    elif logdet_mode == "sentinel":
        with np.errstate(divide="ignore"):
            logdet = np.log(lam).sum(axis=-1)
    else:
        raise ValueError(f"unknown logdet_mode {logdet_mode!r}")
    window = np.arange(W) if window is None else np.asarray(window, dtype=np.int64)
    channel = np.zeros(W, dtype=np.int64) if channel is None else np.asarray(channel, np.int64)
    if window.shape != (W,) or channel.shape != (W,):
        raise ValueError("window and channel ids must have one entry per window")
    return EigenProfile(lam.max(axis=-1), lam.sum(axis=-1), logdet, window, channel, p)


def _log_err(e: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(e, ERROR_FLOOR))


def profile_table(profile: EigenProfile, errors=None, mode: str = "patch") -> pd.DataFrame:
    """Tidy table for ``profile``; ``errors`` holds per-step absolute errors
    with one (horizon,) row per window."""
    W, P, p = len(profile), profile.n_patches, profile.patch_size
    if errors is not None:
        errors = np.abs(np.asarray(errors, dtype=np.float64))
        if errors.shape != (W, P * p):
            raise ValueError(f"errors shape {errors.shape} does not align with "
                             f"{W} windows x {P * p} steps")
    if mode == "patch":
        err = (_log_err(errors.reshape(W, P, p).mean(axis=-1)) if errors is not None
               else np.full((W, P), np.nan))
        cols = {
            "window": np.repeat(profile.window, P), "channel": np.repeat(profile.channel, P),
            "patch": np.tile(np.arange(P), W), "step": np.tile(np.arange(P) * p, W),
            "log_abs_error": err.ravel(), "max_eig": profile.max_eig.ravel(),
            "trace": profile.trace.ravel(), "logdet": profile.logdet.ravel(),
        }
    elif mode == "window":
        wm = profile.window_mean()
        err = (_log_err(errors.mean(axis=-1)) if errors is not None else np.full(W, np.nan))
        cols = {"window": profile.window, "channel": profile.channel,
                "patch": np.full(W, -1), "step": np.zeros(W, dtype=np.int64),
                "log_abs_error": err, **wm}
    else:
        raise ValueError(f"unknown export mode {mode!r}")
    n = len(cols["window"])
    df = pd.DataFrame({"schema_version": np.full(n, SCHEMA_VERSION), "mode": [mode] * n,
                       **cols, "patch_size": np.full(n, p)})
    return df[COLUMNS]


def export_profile(profile: EigenProfile, errors, path, mode: str = "patch") -> Path:
    path = Path(path)
    profile_table(profile, errors, mode).to_csv(path, index=False, float_format="%.17g")
    return path


def read_profile(path) -> tuple[EigenProfile, np.ndarray]:
    """Parse a patch-mode export back into a profile and the (W, P) log
    error matrix."""
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != COLUMNS:
        raise ValueError("not a profile export (unexpected columns)")
    if len(df) and int(df["schema_version"].iloc[0]) != SCHEMA_VERSION:
        raise ValueError("unsupported profile schema version")
    if len(df) == 0:
        e = np.zeros((0, 0))
        return EigenProfile(e, e, e, np.zeros(0, np.int64), np.zeros(0, np.int64), 0), e
    if (df["mode"] != "patch").any():
        raise ValueError("only patch-mode exports can be parsed back")
    P = int(df["patch"].max()) + 1
    W = len(df) // P

    def grid(name):
        return df[name].to_numpy(dtype=np.float64).reshape(W, P)

    prof = EigenProfile(grid("max_eig"), grid("trace"), grid("logdet"),
                        df["window"].to_numpy(np.int64)[::P],
                        df["channel"].to_numpy(np.int64)[::P], int(df["patch_size"].iloc[0]))
    return prof, grid("log_abs_error")
