"""Orthogonal maps as products of Householder reflections.

``U = H_R ... H_1`` with ``H_i = I - 2 v_i v_i^T``.  Applying U costs
2p multiply-adds per reflection (one dot product, one axpy); nothing here
forms a p x p matrix except :func:`dense_orthogonal`, which exists for
tests and offline diagnostics.
"""

from __future__ import annotations

import numpy as np

from fern import numkernel as nk


def reflect_tensor(y: nk.Tensor, v: nk.Tensor) -> nk.Tensor:
    """(I - 2 v v^T) y over the last axis; v unit-norm, same shape as y."""
    d = nk.sum(nk.mul(v, y), axis=-1, keepdims=True)
    d = nk.broadcast_to(d, y.shape)
    return nk.sub(y, nk.mul(nk.mul(d, v), 2.0))


def householder_apply(vs: list[nk.Tensor], y: nk.Tensor, transpose: bool = False,
                      counter: dict | None = None) -> nk.Tensor:
    """U y (or U^T y) for reflection vectors ``vs = [v_1, ..., v_R]``."""
    for v in vs:
        if v.shape != y.shape:
            raise nk.ShapeError(f"reflection vector {v.shape} does not match {y.shape}")
    order = reversed(vs) if transpose else vs
    for v in order:
        y = reflect_tensor(y, v)
        if counter is not None:
            counter["madds"] = counter.get("madds", 0) + 2 * y.data.size
    return y


def apply_np(vs: np.ndarray, y: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Numpy version; ``vs`` is (..., R, p) and ``y`` is (..., p)."""
    vs = np.asarray(vs, dtype=np.float64)
    y = np.array(y, dtype=np.float64)
    if vs.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {vs.shape} vs {y.shape}")
    R = vs.shape[-2]
    idx = range(R - 1, -1, -1) if transpose else range(R)
    for r in idx:
        v = vs[..., r, :]
        y = y - 2.0 * np.sum(v * y, axis=-1, keepdims=True) * v
    return y


def dense_orthogonal(vs: np.ndarray) -> np.ndarray:
    """Materialise U = H_R ... H_1 from (R, p) unit vectors."""
    vs = np.asarray(vs, dtype=np.float64)
    p = vs.shape[-1]
    U = np.eye(p)
    for v in vs:
        U = (np.eye(p) - 2.0 * np.outer(v, v)) @ U
    return U
