"""Benchmark dynamical systems, deterministic simulation, and dataset generation.

Three benchmark systems are provided:

* ``finite-closure`` -- a discrete-time quadratic map with an exact
  finite-dimensional Koopman closure and output y = x1*x2.
* ``mems`` -- free response of a MEMS resonator (spring-mass-damper with
  cubic stiffness) read out through a differential capacitor.
* ``actrep`` -- a two-state activator-repressor clock with a fluorescent
  reporter output assumed at steady state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteStateError, SingularOutputError

FINITE_CLOSURE_PARAMS = {"a11": 0.9, "a21": -0.4, "a22": -0.8, "gamma": -0.9}
MEMS_PARAMS = {"m": 1.0, "k1": 0.5, "c": 1.0, "k3": 1.0, "V_s": 0.4, "d": 1.0}
# The activator runs on a 10x faster timescale than the repressor
# (gamma_A, kappa_A scaled together, basal rate alpha_A0 scaled down so the
# basal production kappa_A*alpha_A0/delta_A stays 0.36) and its activation
# is strong (alpha_A, K_A): this puts the clock in a sustained
# relaxation-oscillation regime. With a slow, weakly activated activator
# the fixed point is a stable spiral and the oscillation dies out.
ACTREP_PARAMS = {
    "gamma_A": 7.0, "gamma_B": 0.5, "delta_A": 1.0, "delta_B": 1.0,
    "alpha_A0": 0.04, "alpha_B0": 0.004, "alpha_A": 1.0, "alpha_B": 0.2,
    "K_A": 0.2, "K_B": 0.08, "kappa_A": 9.0, "kappa_B": 0.5,
    "n": 2.0, "m": 3.0, "k_3n": 3.0, "k_3d": 1.08,
}

# Trajectories whose displacement comes within this distance of the
# capacitor gap singularity are rejected and reported.
MEMS_GAP_TOLERANCE = 1e-3


@dataclass(frozen=True)
class SystemSpec:
    """Immutable description of a benchmark system."""

    name: str
    state_dim: int
    output_dim: int
    kind: str  # 'discrete-map' or 'continuous-ode'
    params: dict = field(default_factory=dict)
    ts: float | None = None  # sampling time, continuous systems only

    def __post_init__(self):
        if self.state_dim < 1 or self.output_dim < 1:
            raise ConfigError("state_dim and output_dim must be >= 1")
        if self.kind not in ("discrete-map", "continuous-ode"):
            raise ConfigError(f"unknown system kind {self.kind!r}")
        if self.kind == "continuous-ode" and (self.ts is None or self.ts <= 0):
            raise ConfigError("continuous systems require ts > 0")

    def step_or_field(self, x):
        """One discrete step, or the vector field, depending on kind."""
        if self.name == "finite-closure":
            return finite_closure_step(x, self.params)
        if self.name == "mems":
            return mems_vector_field(x, self.params)
        if self.name == "actrep":
            return actrep_vector_field(x, self.params)
        raise ConfigError(f"unknown system {self.name!r}")

    def output(self, x):
        if self.name == "finite-closure":
            return np.atleast_1d(finite_closure_output(x))
        if self.name == "mems":
            return np.atleast_1d(mems_output(x, self.params))
        if self.name == "actrep":
            return np.atleast_1d(actrep_output(x, self.params))
        raise ConfigError(f"unknown system {self.name!r}")

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "state_dim": self.state_dim,
                "output_dim": self.output_dim,
                "kind": self.kind,
                "params": self.params,
                "ts": self.ts,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        return SystemSpec(
            name=d["name"], state_dim=d["state_dim"], output_dim=d["output_dim"],
            kind=d["kind"], params=d["params"], ts=d.get("ts"),
        )


@dataclass(frozen=True)
class Trajectory:
    """One simulated trajectory: states[k] for k=0..N and outputs[k]=h(states[k])."""

    traj_id: int
    states: np.ndarray   # (N+1, n)
    outputs: np.ndarray  # (N+1, p)

    @property
    def ic(self):
        return self.states[0]

    def __len__(self):
        return self.states.shape[0]


def make_system(name, params=None, ts=0.5):
    """Build the spec for one of the three named benchmark systems."""
    if name == "finite-closure":
        p = dict(FINITE_CLOSURE_PARAMS)
        p.update(params or {})
        return SystemSpec("finite-closure", 2, 1, "discrete-map", p)
    if name == "mems":
        p = dict(MEMS_PARAMS)
        p.update(params or {})
        if p["m"] == 0:
            raise ConfigError("mems: mass m must be nonzero")
        return SystemSpec("mems", 2, 1, "continuous-ode", p, ts=ts)
    if name == "actrep":
        p = dict(ACTREP_PARAMS)
        p.update(params or {})
        for key in ("K_A", "K_B", "delta_A", "delta_B"):
            if p[key] <= 0:
                raise ConfigError(f"actrep: parameter {key} must be positive")
        return SystemSpec("actrep", 2, 1, "continuous-ode", p, ts=ts)
    raise ConfigError(f"unknown system {name!r}")


def finite_closure_step(x, params):
    """Quadratic map (a11*x1, a21*x1 + a22*x2 + gamma*x1^2)."""
    x1, x2 = x
    a11, a21, a22, g = params["a11"], params["a21"], params["a22"], params["gamma"]
    return np.array([a11 * x1, a21 * x1 + a22 * x2 + g * x1 ** 2])


def finite_closure_output(x):
    return x[0] * x[1]


def mems_vector_field(x, params):
    """Spring-mass-damper with cubic stiffness: (x2, -(k1 x1 + c x2 + k3 x1^3)/m)."""
    m = params["m"]
    if m == 0:
        raise ConfigError("mems: mass m must be nonzero")
    x1, x2 = x
    return np.array([x2, -(params["k1"] * x1 + params["c"] * x2 + params["k3"] * x1 ** 3) / m])


def mems_output(x, params):
    """Differential-capacitor voltage -x1/(d + x1) * V_s."""
    d = params.get("d", 1.0)
    x1 = x[0]
    if abs(d + x1) < MEMS_GAP_TOLERANCE:
        raise SingularOutputError(
            f"mems output singular: |d + x1| = {abs(d + x1):.3e} < {MEMS_GAP_TOLERANCE}"
        )
    return -x1 / (d + x1) * params["V_s"]


def actrep_vector_field(x, params):
    """Two-state activator-repressor clock rate equations."""
    p = params
    for key in ("K_A", "K_B", "delta_A", "delta_B"):
        if p[key] <= 0:
            raise ConfigError(f"actrep: parameter {key} must be positive")
    A, B = x
    an = (A / p["K_A"]) ** p["n"]
    bm = (B / p["K_B"]) ** p["m"]
    dA = -p["gamma_A"] * A + (p["kappa_A"] / p["delta_A"]) * (
        p["alpha_A"] * an + p["alpha_A0"]) / (1.0 + an + bm)
    dB = -p["gamma_B"] * B + (p["kappa_B"] / p["delta_B"]) * (
        p["alpha_B"] * an + p["alpha_B0"]) / (1.0 + an)
    return np.array([dA, dB])


def actrep_output(x, params):
    """Reporter concentration (k_3n * A)/(1 + B/k_3d), memoryless."""
    A, B = x
    denom = 1.0 + B / params["k_3d"]
    if denom <= 0:
        raise ConfigError("actrep output: denominator 1 + B/k_3d must be positive")
    return params["k_3n"] * A / denom


def integrate_rk4(fun, x0, dt, n_steps):
    """Classical fixed-step RK4. Returns an (n_steps+1, n) array including x0."""
    if dt <= 0:
        raise ConfigError("integrate_rk4: dt must be positive")
    if n_steps < 1:
        raise ConfigError("integrate_rk4: n_steps must be >= 1")
    x = np.asarray(x0, dtype=float)
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    for k in range(n_steps):
        k1 = fun(x)
        k2 = fun(x + 0.5 * dt * k1)
        k3 = fun(x + 0.5 * dt * k2)
        k4 = fun(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"non-finite state at step {k + 1}", step=k + 1)
        out[k + 1] = x
    return out


def _ic_rng(seed, traj_id):
    # Counter-based generator keyed by (seed, traj_id): reproducible per
    # trajectory independent of generation order.
    return np.random.Generator(np.random.Philox(key=np.array([seed, traj_id], dtype=np.uint64)))


def sample_ic(box, seed, traj_id):
    """Uniform sample from a per-coordinate box [(lo, hi), ...]."""
    box = np.asarray(box, dtype=float)
    if not np.all(np.isfinite(box)):
        raise ConfigError("ic box bounds must be finite")
    rng = _ic_rng(seed, traj_id)
    u = rng.random(box.shape[0])
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def simulate(spec, x0, n_samples, substeps=10):
    """Simulate one trajectory of ``n_samples`` states starting at x0."""
    x0 = np.asarray(x0, dtype=float)
    if spec.kind == "discrete-map":
        states = np.empty((n_samples, spec.state_dim))
        states[0] = x0
        for k in range(n_samples - 1):
            states[k + 1] = spec.step_or_field(states[k])
            if not np.all(np.isfinite(states[k + 1])):
                raise NonFiniteStateError(f"non-finite state at step {k + 1}", step=k + 1)
    else:
        dt = spec.ts / substeps
        fine = integrate_rk4(spec.step_or_field, x0, dt, substeps * (n_samples - 1))
        states = fine[::substeps]
    outputs = np.stack([spec.output(x) for x in states])
    return states, outputs


def generate_dataset(spec, n_traj, ic_box, horizon, seed, substeps=10):
    """Simulate ``n_traj`` trajectories with box-uniform initial conditions.

    ``horizon`` is a step count for discrete maps and a duration in seconds
    for continuous systems (sampled at ``spec.ts``). Identical seeds give
    bit-identical datasets. For the MEMS system, trajectories whose
    displacement approaches the capacitor gap singularity are rejected;
    use :func:`generate_dataset_report` to also get the rejected ids.
    """
    trajs, _ = generate_dataset_report(spec, n_traj, ic_box, horizon, seed, substeps)
    return trajs


def generate_dataset_report(spec, n_traj, ic_box, horizon, seed, substeps=10):
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    if spec.kind == "discrete-map":
        n_samples = int(horizon) + 1
    else:
        n_samples = int(round(horizon / spec.ts)) + 1
    trajs = []
    rejected = []
    for tid in range(n_traj):
        x0 = sample_ic(ic_box, seed, tid)
        try:
            states, outputs = simulate(spec, x0, n_samples, substeps=substeps)
        except NonFiniteStateError as exc:
            raise NonFiniteStateError(
                f"trajectory {tid}: {exc}", step=exc.step, traj_id=tid
            ) from exc
        except SingularOutputError:
            rejected.append(tid)
            continue
        if spec.name == "mems":
            d = spec.params.get("d", 1.0)
            if np.min(np.abs(d + states[:, 0])) < MEMS_GAP_TOLERANCE:
                rejected.append(tid)
                continue
        trajs.append(Trajectory(traj_id=tid, states=states, outputs=outputs))
    return trajs, rejected


def trajectories_to_csv(trajs):
    """CSV with header traj_id,k,x1..xn,y1..yp and 17-significant-digit doubles."""
    n = trajs[0].states.shape[1]
    p = trajs[0].outputs.shape[1]
    header = ["traj_id", "k"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(p)]
    lines = [",".join(header)]
    for tr in trajs:
        for k in range(len(tr)):
            vals = [str(tr.traj_id), str(k)]
            vals += [f"{v:.17g}" for v in tr.states[k]]
            vals += [f"{v:.17g}" for v in tr.outputs[k]]
            lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def trajectories_from_csv(text):
    rows = text.strip().splitlines()
    header = rows[0].split(",")
    n = sum(1 for c in header if c.startswith("x"))
    by_id = {}
    for line in rows[1:]:
        parts = line.split(",")
        tid = int(parts[0])
        vals = [float(v) for v in parts[2:]]
        by_id.setdefault(tid, []).append((int(parts[1]), vals[:n], vals[n:]))
    trajs = []
    for tid in sorted(by_id):
        recs = sorted(by_id[tid])
        states = np.array([r[1] for r in recs])
        outputs = np.array([r[2] for r in recs])
        trajs.append(Trajectory(traj_id=tid, states=states, outputs=outputs))
    return trajs
