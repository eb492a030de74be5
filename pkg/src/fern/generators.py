"""Synthetic benchmark systems with controlled mid-trajectory shocks.

Continuous systems (Lorenz-63, Rössler, Chua, Lorenz-96) are integrated
with classical RK4; the two scalar SDEs (Ornstein-Uhlenbeck, double well)
with Euler-Maruyama; SLDS, seasonal AR and GARCH(1,1) are discrete-time.
The state is recorded after every step, so row ``k`` is the state after
``k + 1`` steps and the sampling interval equals ``dt``.

Shocks fire at ``shock_index = floor(shock_frac * steps)``, immediately
before row ``shock_index`` is computed:

* ``param``     overwrite parameters, keep the current state;
* ``state_eps`` add the scalar ``shock_eps`` to every state coordinate;
* ``switch``    replace parameters and restart from a new initial condition
                (the SystemSpec initial condition if the update omits one).

Random draws are ordered and come from the ``sim`` stream of
:mod:`fern.rng`: one normal per SDE or SLDS step (before the regime
uniform), one uniform per regime transition, one normal per AR/GARCH step.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fern.rng import generator


class SimulationError(RuntimeError):
    pass


ODE_SYSTEMS = ("lorenz63", "rossler", "chua", "lorenz96")
SDE_SYSTEMS = ("ou", "double_well")
DISCRETE_SYSTEMS = ("slds", "seasonal_ar", "garch")

REQUIRED_PARAMS = {
    "lorenz63": ("sigma", "rho", "beta"),
    "rossler": ("a", "b", "c"),
    "chua": ("alpha", "beta", "m0", "m1"),
    "lorenz96": ("dim", "forcing"),
    "ou": ("theta", "mu", "sigma"),
    "double_well": ("a", "sigma"),
    "slds": ("A1", "Q1", "A2", "Q2", "p11", "p22"),
    "seasonal_ar": ("S", "phi", "sigma", "a0", "amp_drift_per_step"),
    "garch": ("omega", "alpha", "beta"),
}


@dataclass
class SystemSpec:
    system: str
    params: dict[str, float]
    dt: float
    steps: int
    method: str = "rk4"
    initial_cond: list[float] = field(default_factory=lambda: [0.0])
    seed: int = 7

    def __post_init__(self):
        if self.system not in REQUIRED_PARAMS:
            raise ValueError(f"unknown system {self.system!r}; known: {sorted(REQUIRED_PARAMS)}")
        missing = [k for k in REQUIRED_PARAMS[self.system] if k not in self.params]
        if missing:
            raise ValueError(f"{self.system}: missing params {missing}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.method not in ("rk4", "euler", "discrete"):
            raise ValueError(f"unknown method {self.method!r}")
        self.params = {k: float(v) for k, v in self.params.items()}
        self.initial_cond = [float(v) for v in self.initial_cond]
        if self.system == "lorenz96" and int(self.params["dim"]) < 4:
            raise ValueError("lorenz96 needs dim >= 4")
        if len(self.initial_cond) != state_dim(self.system, self.params):
            raise ValueError(f"{self.system}: initial_cond has {len(self.initial_cond)} entries, "
                             f"expected {state_dim(self.system, self.params)}")


@dataclass
class ShockSpec:
    kind: str = "none"
    shock_frac: float = 0.35
    updates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("none", "param", "state_eps", "switch"):
            raise ValueError(f"unknown shock kind {self.kind!r}")
        if self.kind == "none" and self.updates:
            raise ValueError("kind 'none' takes no updates")
        if not 0.0 <= self.shock_frac < 1.0:
            raise ValueError("shock_frac must lie in [0, 1)")
        if self.kind == "state_eps" and "shock_eps" not in self.updates:
            raise ValueError("state_eps shock needs 'shock_eps'")

    def index(self, steps: int) -> int:
        if self.kind == "none":
            return -1
        idx = int(math.floor(self.shock_frac * steps))
        if not 0 < idx < steps:
            raise SimulationError(f"shock index {idx} outside trajectory of {steps} steps")
        return idx


@dataclass
class Trajectory:
    values: np.ndarray
    spec: SystemSpec
    shock: ShockSpec
    shock_index: int
    latent: np.ndarray | None = None
    scenario: str | None = None

    @property
    def columns(self) -> list[str]:
        d = self.values.shape[1]
        if d == 1:
            return ["x"]
        if d == 3:
            return ["x", "y", "z"]
        return [f"x{i}" for i in range(d)]

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario,
            "spec": dataclasses.asdict(self.spec),
            "shock": dataclasses.asdict(self.shock),
            "shock_index": self.shock_index,
            "shock_record": self.shock_record(),
            "seed": self.spec.seed,
            "rows": int(self.values.shape[0]),
            "state_shock_rule": "shock_eps added to every state coordinate",
            "record_rule": "state recorded after every step; initial condition not included",
        }

    def shock_record(self) -> dict:
        """``{name: [before, after]}`` for parameter and switch shocks."""
        if self.shock.kind == "param":
            ups = self.shock.updates
        elif self.shock.kind == "switch":
            ups = self.shock.updates.get("params", {})
        else:
            return {k: [0.0, v] for k, v in self.shock.updates.items()}
        return {k: [self.spec.params.get(k), v] for k, v in ups.items()}

    def save(self, csv_path: str | Path) -> tuple[Path, Path]:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        header = ",".join(self.columns)
        np.savetxt(csv_path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")
        side = csv_path.with_suffix(".json")
        side.write_text(json.dumps(self.metadata(), indent=2))
        return csv_path, side


def state_dim(system: str, params: dict) -> int:
    if system in ("lorenz63", "rossler", "chua"):
        return 3
    if system == "lorenz96":
        return int(params["dim"])
    return 1


# ---------------------------------------------------------------- vector fields


def _chua_h(x, m0, m1):
    return m1 * x + 0.5 * (m0 - m1) * (abs(x + 1.0) - abs(x - 1.0))


def derivative(system: str, params: dict, state) -> np.ndarray:
    """Right-hand side of the ODE (or the SDE drift)."""
    s = np.asarray(state, dtype=np.float64)
    p = params
    if system not in REQUIRED_PARAMS:
        raise ValueError(f"unknown system {system!r}")
    expected = state_dim(system, p)
    if s.shape != (expected,):
        raise ValueError(f"{system}: state must have shape ({expected},), got {s.shape}")
    if system == "lorenz63":
        x, y, z = s
        return np.array([p["sigma"] * (y - x), x * (p["rho"] - z) - y, x * y - p["beta"] * z])
    if system == "rossler":
        x, y, z = s
        return np.array([-y - z, x + p["a"] * y, p["b"] + z * (x - p["c"])])
    if system == "chua":
        x, y, z = s
        return np.array([p["alpha"] * (y - x - _chua_h(x, p["m0"], p["m1"])),
                         x - y + z, -p["beta"] * y])
    if system == "lorenz96":
        ext = np.concatenate((s[-2:], s, s[:1]))  # x_{j-2} .. x_{j+1}, cyclic
        return (ext[3:] - ext[:-3]) * ext[1:-2] - s + p["forcing"]
    if system == "ou":
        return p["theta"] * (p["mu"] - s)
    if system == "double_well":
        return p["a"] * s - s ** 3
    raise ValueError(f"{system} is discrete-time and has no derivative")


def rk4_step(f, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step of ``x' = f(x)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite RK4 update (blow-up); try a smaller dt")
    return out


def euler_step(f, state: np.ndarray, dt: float) -> np.ndarray:
    return state + dt * f(state)


def sde_step(system: str, params: dict, state: np.ndarray, dt: float,
             rng: np.random.Generator) -> np.ndarray:
    """Euler-Maruyama: ``x + drift*dt + sigma*sqrt(dt)*xi``."""
    if system not in SDE_SYSTEMS:
        raise ValueError(f"{system} is not an SDE system")
    if not dt > 0:
        raise ValueError("dt must be positive")
    xi = rng.standard_normal(state.shape)
    return state + derivative(system, params, state) * dt + params["sigma"] * math.sqrt(dt) * xi


def _check_prob(*ps):
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")


def initial_latent(system: str, params: dict, state) -> dict:
    if system == "slds":
        return {"regime": 0}
    if system == "seasonal_ar":
        return {"t": 0}
    if system == "garch":
        persist = params["alpha"] + params["beta"]
        var0 = params["omega"] / (1.0 - persist) if persist < 1.0 else params["omega"]
        return {"sigma2": var0}
    return {}


def discrete_step(system: str, params: dict, state: np.ndarray, latent: dict,
                  rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """One discrete-time update; returns the new state and latent."""
    p = params
    if system == "slds":
        _check_prob(p["p11"], p["p22"])
        r = latent["regime"]
        a, q = (p["A1"], p["Q1"]) if r == 0 else (p["A2"], p["Q2"])
        eta = math.sqrt(q) * rng.standard_normal()
        new = a * state + eta
        stay = p["p11"] if r == 0 else p["p22"]
        u = rng.random()
        return new, {"regime": r if u < stay else 1 - r}
    if system == "seasonal_ar":
        t = latent["t"]
        amp = p["a0"] + t * p["amp_drift_per_step"]
        eps = rng.standard_normal()
        new = amp * math.cos(2.0 * math.pi * t / p["S"]) + p["phi"] * state + p["sigma"] * eps
        return new, {"t": t + 1}
    if system == "garch":
        var = p["omega"] + p["alpha"] * float(state[0]) ** 2 + p["beta"] * latent["sigma2"]
        new = math.sqrt(var) * rng.standard_normal() * np.ones(1)
        return new, {"sigma2": var}
    raise ValueError(f"{system} is not a discrete-time system")


# ---------------------------------------------------------------- simulation


def simulate(spec: SystemSpec, shock: ShockSpec | None = None, burn_in: int = 0,
             scenario: str | None = None) -> Trajectory:
    """Run ``spec`` for ``spec.steps`` recorded steps, applying ``shock``.

    ``burn_in`` extra steps are integrated (and discarded) before recording
    starts; the shock index is relative to the recorded rows.
    """
    shock = shock or ShockSpec()
    idx = shock.index(spec.steps)
    system, dt = spec.system, spec.dt
    params = dict(spec.params)
    rng = generator(spec.seed, "sim")
    state = np.array(spec.initial_cond, dtype=np.float64)
    latent = initial_latent(system, params, state)
    dim = state.shape[0]
    values = np.empty((spec.steps, dim))
    regimes = np.empty(spec.steps, dtype=np.int64) if system == "slds" else None

    def step(state, latent, params):
        if system in DISCRETE_SYSTEMS:
            return discrete_step(system, params, state, latent, rng)
        if system in SDE_SYSTEMS:
            return sde_step(system, params, state, dt, rng), latent
        f = lambda s: derivative(system, params, s)  # noqa: E731
        if spec.method == "euler":
            return euler_step(f, state, dt), latent
        return rk4_step(f, state, dt), latent

    for _ in range(burn_in):
        state, latent = step(state, latent, params)

    for k in range(spec.steps):
        if k == idx:
            if shock.kind == "param":
                params.update({n: float(v) for n, v in shock.updates.items()})
            elif shock.kind == "state_eps":
                state = state + float(shock.updates["shock_eps"])
            elif shock.kind == "switch":
                params.update({n: float(v) for n, v in shock.updates.get("params", {}).items()})
                ic = shock.updates.get("initial_cond", spec.initial_cond)
                state = np.array(ic, dtype=np.float64)
                if state.shape != (dim,):
                    raise ValueError("switch initial_cond has the wrong dimension")
                latent = initial_latent(system, params, state)
        state, latent = step(state, latent, params)
        if not np.all(np.isfinite(state)):
            raise SimulationError(f"{system}: non-finite state at step {k}")
        values[k] = state
        if regimes is not None:
            regimes[k] = latent["regime"]
    return Trajectory(values, spec, shock, idx, latent=regimes, scenario=scenario)


# ---------------------------------------------------------------- premade scenarios

_LORENZ = {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}
_ROSSLER = {"a": 0.2, "b": 0.2, "c": 5.7}
_CHUA = {"alpha": 15.6, "beta": 28.0, "m0": -8.0 / 7.0, "m1": -5.0 / 7.0}
_L96 = {"dim": 6, "forcing": 8.0}
_OU = {"theta": 0.2, "mu": 0.0, "sigma": 0.3}
_DW = {"a": 1.5, "sigma": 0.25}
_SLDS = {"A1": 0.9, "Q1": 0.05, "A2": 0.98, "Q2": 0.35, "p11": 0.94, "p22": 0.95}
_SAR = {"S": 24, "phi": 0.5, "sigma": 0.2, "a0": 1.0, "amp_drift_per_step": 0.0}
_GARCH = {"omega": 0.01, "alpha": 0.06, "beta": 0.90}

# default initial conditions (see README)
_IC3 = [1.0, 0.98, 1.1]
_IC_CHUA = [0.1, 0.0, 0.0]
_IC_L96 = [1.01, 1.0, 1.0, 1.0, 1.0, 1.0]


def _s(system, params, dt, steps, method, ic, seed=7):
    return SystemSpec(system, dict(params), dt, steps, method, list(ic), seed)


def _scenarios() -> dict[str, tuple[SystemSpec, ShockSpec]]:
    none = ShockSpec
    out = {
        "LORENZ_MAIN": (_s("lorenz63", _LORENZ, 0.01, 25000, "rk4", _IC3), none()),
        "ROSSLER_MAIN": (_s("rossler", _ROSSLER, 0.01, 25000, "rk4", _IC3), none()),
        "CHUA_MAIN": (_s("chua", _CHUA, 0.005, 35000, "rk4", _IC_CHUA), none()),
        "LORENZ_BASE": (_s("lorenz63", _LORENZ, 0.01, 35999, "rk4", _IC3), none()),
        "LORENZ_PARAM": (_s("lorenz63", _LORENZ, 0.01, 35999, "rk4", _IC3),
                         none("param", updates={"sigma": 10.1, "rho": 28.1, "beta": 8.1 / 3.0})),
        "LORENZ_STATE": (_s("lorenz63", _LORENZ, 0.01, 35999, "rk4", _IC3),
                         none("state_eps", updates={"shock_eps": 0.9})),
        "LORENZ_SWITCH": (_s("lorenz63", _LORENZ, 0.01, 35999, "rk4", _IC3),
                          none("switch", updates={"params": {"rho": 28.1},
                                                  "initial_cond": [1.002, 0.982, 1.102]})),
        "ROSSLER_BASE": (_s("rossler", _ROSSLER, 0.01, 35999, "rk4", _IC3), none()),
        "ROSSLER_PARAM": (_s("rossler", _ROSSLER, 0.01, 35999, "rk4", _IC3),
                          none("param", updates={"a": 0.25, "b": 0.25, "c": 5.75})),
        "LORENZ96_BASE": (_s("lorenz96", _L96, 0.007, 55000, "rk4", _IC_L96), none()),
        "LORENZ96_SWITCH": (_s("lorenz96", _L96, 0.007, 55000, "rk4", _IC_L96),
                            none("switch", updates={
                                "params": {"forcing": 9.0},
                                "initial_cond": [0.99, 1.02, 1.02, 1.03, 1.01, 1.01]})),
        "CHUA_BASE": (_s("chua", _CHUA, 0.005, 35999, "rk4", _IC_CHUA), none()),
        "CHUA_PARAM": (_s("chua", _CHUA, 0.005, 35999, "rk4", _IC_CHUA),
                       none("param", updates={"alpha": 15.9, "beta": 28.5,
                                              "m0": -8.1 / 7.0, "m1": -5.2 / 7.0})),
        "CHUA_SWITCH": (_s("chua", _CHUA, 0.005, 35999, "rk4", _IC_CHUA),
                        none("switch", updates={"initial_cond": [0.11, 0.01, 0.02]})),
        "OU_BASE": (_s("ou", _OU, 0.5, 25000, "euler", [0.0]), none()),
        "OU_PARAM": (_s("ou", _OU, 0.5, 25000, "euler", [0.0]),
                     none("param", updates={"mu": 0.5})),
        "SLDS_BASE": (_s("slds", _SLDS, 0.01, 25000, "discrete", [0.0]), none()),
        "SLDS_PARAM": (_s("slds", _SLDS, 0.01, 25000, "discrete", [0.0]),
                       none("param", updates={"A1": 0.83, "Q1": 0.50, "A2": 0.97, "Q2": 0.30,
                                              "p11": 0.96, "p22": 0.92})),
        "SLDS_SWITCH": (_s("slds", _SLDS, 0.01, 25000, "discrete", [0.0]),
                        none("switch", updates={"params": {"A1": 0.87, "Q1": 0.07, "A2": 0.99,
                                                           "Q2": 0.45, "p11": 0.90,
                                                           "p22": 0.95}})),
        "DOUBLEWELL_BASE": (_s("double_well", _DW, 0.5, 25000, "euler", [0.0], seed=1955), none()),
        "DOUBLEWELL_PARAM": (_s("double_well", _DW, 0.5, 25000, "euler", [0.0], seed=1955),
                             none("param", updates={"a": 1.0, "sigma": 0.35})),
        "DOUBLEWELL_SWITCH": (_s("double_well", _DW, 0.5, 25000, "euler", [0.0], seed=1955),
                              none("switch", updates={"params": {"a": 1.0, "sigma": 0.35}})),
        "SEASONAL_AR_BASE": (_s("seasonal_ar", _SAR, 0.01, 25000, "discrete", [0.0]), none()),
        "SEASONAL_AR_PARAM": (_s("seasonal_ar", _SAR, 0.01, 25000, "discrete", [0.0]),
                              none("param", updates={"a0": 1.4, "sigma": 0.35, "phi": 0.8})),
        "GARCH_BASE": (_s("garch", _GARCH, 0.01, 25000, "discrete", [0.0]), none()),
        "GARCH_PARAM": (_s("garch", _GARCH, 0.01, 25000, "discrete", [0.0]),
                        none("param", updates={"omega": 0.03, "alpha": 0.15, "beta": 0.70})),
    }
    return out


SCENARIOS = tuple(_scenarios())


def scenario(name: str, **overrides) -> tuple[SystemSpec, ShockSpec]:
    """Resolve a premade scenario id; keyword overrides replace SystemSpec fields."""
    table = _scenarios()
    key = name.upper()
    if key not in table:
        raise KeyError(f"unknown scenario {name!r}; valid ids: {', '.join(SCENARIOS)}")
    spec, shock = table[key]
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return spec, shock


def base_of(name: str) -> str:
    """The no-shock scenario a shocked scenario is compared against."""
    stem = name.upper().rsplit("_", 1)[0]
    return f"{stem}_BASE"


def generate(name: str, burn_in: int = 0, **overrides) -> Trajectory:
    spec, shock = scenario(name, **overrides)
    return simulate(spec, shock, burn_in=burn_in, scenario=name.upper())
