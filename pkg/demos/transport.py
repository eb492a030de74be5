# The SPD transport map: reflections, eigenvalues and what it costs.
import numpy as np

from fern import householder as hh
from fern.model import Fern, FernConfig, softclamp

rng = np.random.default_rng(1)
p, R = 6, 3
vs = rng.normal(size=(R, p))
vs /= np.linalg.norm(vs, axis=1, keepdims=True)
y = rng.normal(size=p)

# applying reflections one at a time matches the materialised orthogonal matrix
U = hh.dense_orthogonal(vs)
print("U orthogonal:", np.allclose(U.T @ U, np.eye(p)))
print("reflections == dense:", np.allclose(hh.apply_np(vs, y), U @ y))

# U^T diag(lam) U is symmetric positive definite whenever lam > 0
lam = softclamp(rng.normal(size=p) * 4, 0.0, 5.5)
S = U.T @ np.diag(lam) @ U
print("eigs", np.sort(np.linalg.eigvalsh(S)).round(4))
print("lam ", np.sort(lam).round(4))

# a small model forward pass; factors come back per patch
cfg = FernConfig(input_len=48, horizon=24, patch=6, reflections=3, hidden=16)
model = Fern(cfg, seed=0)
x = np.sin(np.linspace(0, 12, 48))[None].repeat(4, axis=0)
pred, f = model.predict(x, return_factors=True)
print("params", model.n_params(), "pred", pred.shape, "eigenvalues", f.eigenvalues.shape)
print("eigenvalue range", f.eigenvalues.min().round(3), f.eigenvalues.max().round(3))
