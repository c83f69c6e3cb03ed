"""Snapshot matrices, standardization with transform bookkeeping, splits,
and time-delay embedding."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ZeroVarianceError
from .systems import Trajectory

COND_BOUND = 1e12


@dataclass(frozen=True)
class SnapshotSet:
    """Column-aligned snapshot matrices X_P, X_F (n x N) and Y_P (p x N)."""

    xp: np.ndarray
    xf: np.ndarray
    yp: np.ndarray
    col_traj: np.ndarray  # source trajectory id per column
    col_k: np.ndarray     # time index of the X_P column

    def __post_init__(self):
        if self.xp.shape != self.xf.shape:
            raise ConfigError("X_P and X_F must have identical shapes")
        if self.yp.shape[1] != self.xp.shape[1]:
            raise ConfigError("Y_P must have the same number of columns as X_P")
        for a in (self.xp, self.xf, self.yp, self.col_traj, self.col_k):
            a.setflags(write=False)

    @property
    def n(self):
        return self.xp.shape[0]

    @property
    def p(self):
        return self.yp.shape[0]

    @property
    def N(self):
        return self.xp.shape[1]


@dataclass(frozen=True)
class AffineTransform:
    """Bijective affine change of coordinates x~ = P x + b, y~ = Q y + c."""

    P: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    c: np.ndarray
    P_inv: np.ndarray = field(default=None)
    Q_inv: np.ndarray = field(default=None)

    def __post_init__(self):
        if np.linalg.cond(self.P) > COND_BOUND or np.linalg.cond(self.Q) > COND_BOUND:
            raise ConfigError("transform matrices are too ill-conditioned")
        if self.P_inv is None:
            object.__setattr__(self, "P_inv", np.linalg.inv(self.P))
        if self.Q_inv is None:
            object.__setattr__(self, "Q_inv", np.linalg.inv(self.Q))
        n = self.P.shape[0]
        p = self.Q.shape[0]
        if np.linalg.norm(self.P @ self.P_inv - np.eye(n)) >= 1e-10 * max(1, n):
            raise ConfigError("stored P inverse inaccurate")
        if np.linalg.norm(self.Q @ self.Q_inv - np.eye(p)) >= 1e-10 * max(1, p):
            raise ConfigError("stored Q inverse inaccurate")

    @staticmethod
    def identity(n, p):
        return AffineTransform(np.eye(n), np.zeros(n), np.eye(p), np.zeros(p))

    def state(self, X):
        """Apply x~ = P x + b columnwise."""
        return self.P @ X + self.b[:, None]

    def state_inv(self, X):
        return self.P_inv @ (X - self.b[:, None])

    def output(self, Y):
        return self.Q @ Y + self.c[:, None]

    def output_inv(self, Y):
        return self.Q_inv @ (Y - self.c[:, None])

    def to_dict(self):
        return {"P": self.P.tolist(), "b": self.b.tolist(),
                "Q": self.Q.tolist(), "c": self.c.tolist()}

    @staticmethod
    def from_dict(d):
        return AffineTransform(np.array(d["P"]), np.array(d["b"]),
                               np.array(d["Q"]), np.array(d["c"]))


def build_snapshots(trajectories):
    """Stack (x_k, x_{k+1}, y_k) pairs from all trajectories.

    Columns are ordered lexicographically by (traj_id, k), so a shuffled
    input list yields the identical SnapshotSet.
    """
    if not trajectories:
        raise ConfigError("no trajectories given")
    xp, xf, yp, ids, ks = [], [], [], [], []
    for tr in sorted(trajectories, key=lambda t: t.traj_id):
        if len(tr) < 2:
            raise ConfigError(f"trajectory {tr.traj_id} has fewer than 2 samples")
        if tr.outputs.shape[0] not in (tr.states.shape[0], tr.states.shape[0] - 1):
            raise ConfigError(f"trajectory {tr.traj_id}: state/output length mismatch")
        m = tr.states.shape[0] - 1
        xp.append(tr.states[:m].T)
        xf.append(tr.states[1:m + 1].T)
        yp.append(tr.outputs[:m].T)
        ids.append(np.full(m, tr.traj_id))
        ks.append(np.arange(m))
    return SnapshotSet(
        xp=np.concatenate(xp, axis=1), xf=np.concatenate(xf, axis=1),
        yp=np.concatenate(yp, axis=1),
        col_traj=np.concatenate(ids), col_k=np.concatenate(ks),
    )


def split(trajectories, seed):
    """Split whole trajectories into (train, val, test) thirds.

    Remainder trajectories are assigned train-first; the shuffle is seeded.
    """
    if len(trajectories) < 3:
        raise ConfigError("need at least 3 trajectories to split")
    order = np.random.default_rng(seed).permutation(len(trajectories))
    n = len(trajectories)
    base, rem = divmod(n, 3)
    n_train = base + (1 if rem >= 1 else 0)
    n_val = base + (1 if rem >= 2 else 0)
    trajs = [trajectories[i] for i in order]
    key = lambda t: t.traj_id
    return (sorted(trajs[:n_train], key=key),
            sorted(trajs[n_train:n_train + n_val], key=key),
            sorted(trajs[n_train + n_val:], key=key))


def standardize(snapshots):
    """Per-coordinate (x - mu)/sigma using this set's X_P / Y_P statistics.

    Population (1/N) standard deviation. Returns the standardized set and
    the equivalent AffineTransform; apply the same transform to held-out
    data with :func:`apply_transform`.
    """
    mu_x = snapshots.xp.mean(axis=1)
    sd_x = snapshots.xp.std(axis=1)
    mu_y = snapshots.yp.mean(axis=1)
    sd_y = snapshots.yp.std(axis=1)
    for label, sd in (("state", sd_x), ("output", sd_y)):
        bad = np.where(sd == 0)[0]
        if bad.size:
            raise ZeroVarianceError(f"{label} coordinate {bad[0] + 1} has zero variance")
    tf = AffineTransform(np.diag(1.0 / sd_x), -mu_x / sd_x,
                         np.diag(1.0 / sd_y), -mu_y / sd_y)
    return apply_transform(snapshots, tf), tf


def apply_transform(snapshots, tf):
    return SnapshotSet(
        xp=tf.state(snapshots.xp), xf=tf.state(snapshots.xf),
        yp=tf.output(snapshots.yp),
        col_traj=snapshots.col_traj.copy(), col_k=snapshots.col_k.copy(),
    )


def transform_trajectory(tr, tf):
    return Trajectory(traj_id=tr.traj_id,
                      states=tf.state(tr.states.T).T,
                      outputs=tf.output(tr.outputs.T).T)


def embed_trajectory(tr, n_d):
    """Time-delay embed one trajectory with the stride-n_d block convention.

    The embedded state at index k is (x_{k nd}, x_{k nd - 1}, ..,
    x_{k nd - nd + 1}); successive embedded states advance by n_d raw
    steps and the output at embedded index k is y_{k nd}.
    """
    if n_d < 1:
        raise ConfigError("n_d must be >= 1")
    last = len(tr) - 1
    k_min = 0 if n_d == 1 else 1
    k_max = last // n_d
    if k_max - k_min < 1:
        return None
    states, outputs = [], []
    for k in range(k_min, k_max + 1):
        idx = [k * n_d - j for j in range(n_d)]
        states.append(np.concatenate([tr.states[i] for i in idx]))
        outputs.append(tr.outputs[k * n_d])
    return Trajectory(traj_id=tr.traj_id,
                      states=np.array(states), outputs=np.array(outputs))


def embed_trajectories(trajectories, n_d):
    out = []
    skipped = 0
    for tr in trajectories:
        emb = embed_trajectory(tr, n_d)
        if emb is None:
            skipped += 1
        else:
            out.append(emb)
    if skipped:
        warnings.warn(f"delay_embed: skipped {skipped} too-short trajectories")
    return out


def delay_embed(trajectories, n_d):
    """Snapshot set over stride-n_d delay-embedded states (dimension n*n_d)."""
    embedded = embed_trajectories(trajectories, n_d)
    if not embedded:
        raise ConfigError("delay_embed: no trajectory long enough for this n_d")
    return build_snapshots(embedded)


def export_snapshots(snapshots, outdir, transform=None):
    """Write xp.csv / xf.csv / yp.csv plus a JSON sidecar."""
    outdir.mkdir(parents=True, exist_ok=True)
    for name, mat in (("xp", snapshots.xp), ("xf", snapshots.xf), ("yp", snapshots.yp)):
        np.savetxt(outdir / f"{name}.csv", mat, delimiter=",", fmt="%.17g")
    meta = {
        "n": snapshots.n, "p": snapshots.p, "N": snapshots.N,
        "col_traj": snapshots.col_traj.tolist(),
        "col_k": snapshots.col_k.tolist(),
        "transform": transform.to_dict() if transform is not None else None,
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2))
