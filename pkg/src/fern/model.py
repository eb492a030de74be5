"""The Fern forecaster.

A context window ``x`` and a fresh latent draw ``z0`` update each other
through ``enc_layers`` bidirectional affine couplings.  The final latent
feature drives a shared head that emits, for every horizon patch, an
eigenvalue vector, a shift and a set of Householder vectors.  Each patch
of output noise ``y0`` is then pushed through the SPD map
``y0 -> U^T diag(lam) U (y0 + t)`` without forming U or the SPD matrix.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fern import numkernel as nk
from fern.householder import householder_apply

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fern-params"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class FernConfig:
    input_len: int = 336
    horizon: int = 336
    patch: int = 24
    reflections: int = 8
    enc_layers: int = 5
    hidden: int = 128
    latent: int | None = None          # defaults to the horizon
    noise_scale: float = 0.1           # variance a of z0 ~ N(0, aI), y0 ~ N(0, aI)
    scale_bounds: tuple[float, float] = (0.0, 5.5)
    block_bounds: tuple[float, float] = (-4.5, 4.5)
    shift_bounds: tuple[float, float] = (-15.0, 15.0)
    block_layers: tuple[int, ...] = (2, 4)   # 1-based encoder layers with 2x2 x-scaling
    dec_steps: int = 2
    head_init: float = 0.01
    eval_noise: str = "zero"            # "zero" or "sample"
    no_rotation: bool = False
    no_patch: bool = False
    only_encoder: bool = False
    no_encoder_no_mu: bool = False

    def __post_init__(self):
        self.scale_bounds = tuple(self.scale_bounds)
        self.block_bounds = tuple(self.block_bounds)
        self.shift_bounds = tuple(self.shift_bounds)
        self.block_layers = tuple(self.block_layers)
        p = self.patch_size
        if self.horizon % p:
            raise ConfigError(f"patch size {p} does not divide horizon {self.horizon}")
        if self.reflections > p and not self.no_rotation:
            raise ConfigError(f"{self.reflections} reflections exceed patch dimension {p}")
        if self.block_layers and self.input_len % 2:
            raise ConfigError("block-diagonal x-scaling needs an even input length")
        if any(not 1 <= i <= self.enc_layers for i in self.block_layers):
            raise ConfigError("block_layers must index encoder layers 1..enc_layers")
        if self.eval_noise not in ("zero", "sample"):
            raise ConfigError("eval_noise must be 'zero' or 'sample'")

    @property
    def patch_size(self) -> int:
        return self.horizon if self.no_patch else self.patch

    @property
    def n_patches(self) -> int:
        return self.horizon // self.patch_size

    @property
    def n_reflections(self) -> int:
        return 0 if self.no_rotation else self.reflections

    @property
    def latent_dim(self) -> int:
        return self.latent or self.horizon

    @property
    def n_dec_steps(self) -> int:
        return 0 if (self.only_encoder or self.no_encoder_no_mu) else self.dec_steps

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FernConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class SPDFactors:
    """Per-patch transport factors; arrays lead with (batch, patch)."""

    eigenvalues: np.ndarray          # (B, P, p)
    shift: np.ndarray                # (B, P, p)
    vectors: np.ndarray              # (B, P, R, p), unit rows
    extras: dict = field(default_factory=dict)


def softclamp(x, lo: float, hi: float):
    """Smooth bounded map ``m + w * tanh((x - m) / w)`` into (lo, hi).

    Works on tensors and plain arrays.  Fixed point and unit slope at the
    midpoint ``m``; ``w`` is the half-width.
    """
    if not lo < hi:
        raise ValueError("softclamp needs lo < hi")
    m, w = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if isinstance(x, nk.Tensor):
        return nk.add(nk.mul(nk.tanh(nk.mul(nk.sub(x, m), 1.0 / w)), w), m)
    return m + w * np.tanh((np.asarray(x, dtype=np.float64) - m) / w)


def softclamp_inverse(y: float, lo: float, hi: float) -> float:
    m, w = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return m + w * math.atanh((y - m) / w)


# ---------------------------------------------------------------- parameters


def _glorot(rng, fan_in, fan_out, gain=1.0):
    return rng.standard_normal((fan_in, fan_out)) * (gain / math.sqrt(fan_in))


def init_params(cfg: FernConfig, rng: np.random.Generator) -> dict[str, nk.Tensor]:
    L, dz, dh = cfg.input_len, cfg.latent_dim, cfg.hidden
    p, P, R = cfg.patch_size, cfg.n_patches, cfg.n_reflections
    one = softclamp_inverse(1.0, *cfg.scale_bounds)
    block_one = softclamp_inverse(1.0, *cfg.block_bounds)
    arrays: dict[str, np.ndarray] = {}

    def mlp(prefix, fan_in):
        arrays[f"{prefix}.W1"] = _glorot(rng, fan_in, dh)
        arrays[f"{prefix}.b1"] = np.zeros(dh)
        arrays[f"{prefix}.W2"] = _glorot(rng, dh, dh)
        arrays[f"{prefix}.b2"] = np.zeros(dh)

    mlp("Hx", L)
    mlp("Hz", dz)
    for i in range(1, cfg.enc_layers + 1):
        arrays[f"enc{i}.phix.W"] = _glorot(rng, dh, 2 * dz, cfg.head_init)
        arrays[f"enc{i}.phix.b"] = np.concatenate([np.full(dz, one), np.zeros(dz)])
        arrays[f"enc{i}.phiz.W"] = _glorot(rng, dh, 2 * L, cfg.head_init)
        if i in cfg.block_layers:
            sx = np.concatenate([np.full(L // 2, block_one), np.zeros(L // 2)])
        else:
            sx = np.full(L, one)
        arrays[f"enc{i}.phiz.b"] = np.concatenate([sx, np.zeros(L)])
    arrays["head.pos"] = 0.1 * rng.standard_normal((P, dh))
    arrays["head.W1"] = _glorot(rng, dh, dh)
    arrays["head.b1"] = np.zeros(dh)
    width = (2 + R) * p
    arrays["head.W2"] = _glorot(rng, dh, width, cfg.head_init)
    b2 = np.zeros(width)
    b2[:p] = one
    # reflection vectors start from random directions so none has zero norm
    b2[2 * p:] = rng.standard_normal(R * p)
    arrays["head.b2"] = b2
    for k in range(1, cfg.dec_steps + 1):
        arrays[f"head.dec{k}.W"] = _glorot(rng, dh + p, p, cfg.head_init)
        arrays[f"head.dec{k}.b"] = np.zeros(p)
    return {k: nk.parameter(v, name=k) for k, v in arrays.items()}


def param_count(params: dict[str, nk.Tensor]) -> int:
    return int(sum(t.data.size for t in params.values()))


# ---------------------------------------------------------------- network pieces


def _mlp(params, prefix, x):
    h = nk.tanh(nk.add(nk.matmul(x, params[f"{prefix}.W1"]), params[f"{prefix}.b1"]))
    return nk.tanh(nk.add(nk.matmul(h, params[f"{prefix}.W2"]), params[f"{prefix}.b2"]))


def _affine_head(params, name, h):
    return nk.add(nk.matmul(h, params[f"{name}.W"]), params[f"{name}.b"])


def coupling_layer(x: nk.Tensor, z: nk.Tensor, params, i: int, cfg: FernConfig):
    """One bidirectional coupling: x drives the z update, the updated z
    drives the x update."""
    L, dz = cfg.input_len, cfg.latent_dim
    if x.shape[-1] != L or z.shape[-1] != dz:
        raise nk.ShapeError(f"coupling layer expects x[..., {L}] and z[..., {dz}]")
    hx = _mlp(params, "Hx", x)
    sz_tz = _affine_head(params, f"enc{i}.phix", hx)
    s_z = softclamp(sz_tz[:, :dz], *cfg.scale_bounds)
    z = nk.add(nk.mul(s_z, z), sz_tz[:, dz:])
    hz = _mlp(params, "Hz", z)
    sx_tx = _affine_head(params, f"enc{i}.phiz", hz)
    t_x = sx_tx[:, L:]
    if i in cfg.block_layers:
        half = L // 2
        a = softclamp(sx_tx[:, :half], *cfg.block_bounds)
        b = softclamp(sx_tx[:, half:L], *cfg.block_bounds)
        pairs = nk.reshape(x, (x.shape[0], half, 2))
        xe, xo = pairs[:, :, 0], pairs[:, :, 1]
        ne = nk.sub(nk.mul(a, xe), nk.mul(b, xo))
        no = nk.add(nk.mul(b, xe), nk.mul(a, xo))
        scaled = nk.reshape(nk.stack([ne, no], axis=-1), (x.shape[0], L))
    else:
        s_x = softclamp(sx_tx[:, :L], *cfg.scale_bounds)
        scaled = nk.mul(s_x, x)
    x = nk.add(scaled, t_x)
    return x, z


def encode(x: nk.Tensor, z0: nk.Tensor, params, cfg: FernConfig) -> nk.Tensor:
    """Final latent feature h_z after the coupling stack."""
    if cfg.no_encoder_no_mu:
        return _mlp(params, "Hz", z0)
    z = z0
    for i in range(1, cfg.enc_layers + 1):
        x, z = coupling_layer(x, z, params, i, cfg)
    return _mlp(params, "Hz", z)


def ot_head(hz: nk.Tensor, params, cfg: FernConfig):
    """Per-patch (eigenvalues, shift, unit reflection vectors) as tensors."""
    B, dh = hz.shape
    p, P, R = cfg.patch_size, cfg.n_patches, cfg.n_reflections
    hp = nk.broadcast_to(nk.reshape(hz, (B, 1, dh)), (B, P, dh))
    g = nk.tanh(nk.add(nk.matmul(nk.add(hp, params["head.pos"]), params["head.W1"]),
                       params["head.b1"]))
    out = nk.add(nk.matmul(g, params["head.W2"]), params["head.b2"])
    lam = softclamp(out[:, :, :p], *cfg.scale_bounds)
    t = out[:, :, p:2 * p]
    for k in range(1, cfg.n_dec_steps + 1):
        t = nk.add(t, _affine_head(params, f"head.dec{k}", nk.concat([g, t], axis=-1)))
    shift = softclamp(t, *cfg.shift_bounds)
    vs = []
    if R:
        raw = nk.reshape(out[:, :, 2 * p:], (B, P, R, p))
        norms = np.linalg.norm(raw.data, axis=-1)
        if np.any(norms == 0.0):
            log.warning("zero-norm reflection vector; falling back to e1")
            fix = np.zeros(raw.shape)
            fix[..., 0] = (norms == 0.0)
            raw = nk.add(raw, nk.constant(fix))
        unit = nk.l2_normalize(raw, axis=-1)
        vs = [unit[:, :, r, :] for r in range(R)]
    return lam, shift, vs


def spd_project(lam: nk.Tensor, shift: nk.Tensor, vs: list[nk.Tensor], y0: nk.Tensor,
                counter: dict | None = None) -> nk.Tensor:
    """U^T diag(lam) U (y0 + shift), applied in factored form."""
    if np.any(lam.data < 0):
        raise AssertionError("negative eigenvalue reached the SPD projection")
    w = nk.add(y0, shift)
    w = householder_apply(vs, w, counter=counter)
    w = nk.mul(lam, w)
    return householder_apply(vs, w, transpose=True, counter=counter)


def forward(x, z0, y0, params, cfg: FernConfig, counter: dict | None = None):
    """Forecast for a batch.  Returns the (B, horizon) prediction tensor and
    the per-patch :class:`SPDFactors`."""
    x, z0, y0 = (t if isinstance(t, nk.Tensor) else nk.constant(t) for t in (x, z0, y0))
    B = x.shape[0]
    hz = encode(x, z0, params, cfg)
    lam, shift, vs = ot_head(hz, params, cfg)
    y0p = nk.reshape(y0, (B, cfg.n_patches, cfg.patch_size))
    y = spd_project(lam, shift, vs, y0p, counter)
    vectors = (np.stack([v.data for v in vs], axis=2) if vs
               else np.zeros((B, cfg.n_patches, 0, cfg.patch_size)))
    factors = SPDFactors(lam.data, shift.data, vectors)
    return nk.reshape(y, (B, cfg.horizon)), factors


# ---------------------------------------------------------------- model object


class Fern:
    def __init__(self, cfg: FernConfig, seed: int = 7, params: dict | None = None):
        from fern.rng import generator
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, generator(seed, "init"))

    def n_params(self) -> int:
        return param_count(self.params)

    def noise(self, batch: int, rng: np.random.Generator):
        a = math.sqrt(self.cfg.noise_scale)
        z0 = a * rng.standard_normal((batch, self.cfg.latent_dim))
        y0 = a * rng.standard_normal((batch, self.cfg.horizon))
        return z0, y0

    def __call__(self, x, z0, y0, counter=None):
        return forward(x, z0, y0, self.params, self.cfg, counter)

    def predict(self, x: np.ndarray, rng: np.random.Generator | None = None,
                batch_size: int = 1024, return_factors: bool = False):
        """Point forecasts (no tape).  Noise is zero unless ``eval_noise`` is
        'sample', in which case ``rng`` supplies it."""
        outs, facs = [], []
        for s in range(0, x.shape[0], batch_size):
            xb = x[s:s + batch_size]
            if self.cfg.eval_noise == "sample":
                if rng is None:
                    raise ValueError("eval_noise='sample' needs an rng")
                z0, y0 = self.noise(xb.shape[0], rng)
            else:
                z0 = np.zeros((xb.shape[0], self.cfg.latent_dim))
                y0 = np.zeros((xb.shape[0], self.cfg.horizon))
            y, f = self(xb, z0, y0)
            outs.append(y.data)
            if return_factors:
                facs.append(f)
        pred = np.concatenate(outs) if outs else np.zeros((0, self.cfg.horizon))
        if not return_factors:
            return pred
        return pred, SPDFactors(np.concatenate([f.eigenvalues for f in facs]),
                                np.concatenate([f.shift for f in facs]),
                                np.concatenate([f.vectors for f in facs]))

    # ------------------------------------------------------------ checkpoints

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.cfg, self.state(), extra)

    @classmethod
    def load(cls, path) -> "Fern":
        cfg, state, _ = load_checkpoint(path)
        model = cls(cfg, params={k: nk.parameter(v, name=k) for k, v in state.items()})
        return model


def save_checkpoint(path, cfg: FernConfig, state: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    """JSON manifest; each tensor is row-major float64, little-endian, base64."""
    tensors = {}
    for k, v in state.items():
        arr = np.ascontiguousarray(v, dtype="<f8")
        tensors[k] = {"shape": list(arr.shape), "dtype": "float64",
                      "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "byte_order": "little", "layout": "row-major",
           "config": cfg.to_dict(), "extra": extra or {}, "tensors": tensors}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a fern checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    state = {}
    for k, t in doc["tensors"].items():
        raw = base64.b64decode(t["data"])
        state[k] = np.frombuffer(raw, dtype="<f8").reshape(t["shape"]).astype(np.float64)
    return FernConfig.from_dict(doc["config"]), state, doc.get("extra", {})
