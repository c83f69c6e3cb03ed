"""Prediction interfaces, r-squared metrics, grid search, and phase
portraits. All metrics are computed in original physical coordinates;
models trained on standardized data carry their transform and are
de-standardized here."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .datasets import build_snapshots
from .errors import ConfigError, ZeroVarianceError
from .solvers import KoopmanModel, NonlinearStateSpaceModel


@dataclass(frozen=True)
class MetricsRecord:
    r2_x_1step: float
    r2_x_nstep: float
    r2_y: float
    model_id: str = ""
    dataset_id: str = ""
    horizon: int | None = None

    def to_dict(self):
        return {"r2_x_1step": self.r2_x_1step, "r2_x_nstep": self.r2_x_nstep,
                "r2_y": self.r2_y, "model_id": self.model_id,
                "dataset_id": self.dataset_id, "horizon": self.horizon}


def r_squared(actual, predicted):
    """1 - ||actual - predicted||_F^2 / ||actual||_F^2 (not mean-centered)."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ConfigError("shape mismatch between actual and predicted")
    denom = np.sum(actual * actual)
    if denom == 0:
        raise ZeroVarianceError("r_squared undefined for all-zero actual data")
    return float(1.0 - np.sum((actual - predicted) ** 2) / denom)


def _columns(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.shape[0] != n:
        raise ConfigError(f"expected state dimension {n}, got {x.shape[0]}")
    return x, single


def predict_one_step(model, x):
    """One-step state prediction in physical coordinates."""
    X, single = _columns(x, model.n)
    tf = model.transform
    Z = tf.state(X) if tf is not None else X
    if isinstance(model, NonlinearStateSpaceModel):
        out = model.f(Z)
    else:
        out = (model.K @ model.lift(Z))[: model.n]
    if tf is not None:
        out = tf.state_inv(out)
    return out[:, 0] if single else out


def predict_n_step(model, x0, n_steps, relift=False):
    """n-step rollout from x0. Koopman models lift once and propagate with
    K powers (the invariance metric); ``relift=True`` re-lifts each step.
    Returns an (n_steps, n) array of the predicted states 1..n_steps."""
    x0 = np.asarray(x0, dtype=float)
    tf = model.transform
    z = tf.state(x0[:, None])[:, 0] if tf is not None else x0.copy()
    out = np.empty((n_steps, model.n))
    if isinstance(model, NonlinearStateSpaceModel):
        for k in range(n_steps):
            z = model.f(z)
            out[k] = z
    elif relift:
        for k in range(n_steps):
            z = (model.K @ model.lift(z))[: model.n]
            out[k] = z
    else:
        psi = model.lift(z)
        for k in range(n_steps):
            psi = model.K @ psi
            out[k] = psi[: model.n]
    if tf is not None:
        out = tf.state_inv(out.T).T
    return out


def predict_output(model, x):
    """Output prediction y = W_h psi(x) (or h-hat), de-standardized."""
    X, single = _columns(x, model.n)
    tf = model.transform
    Z = tf.state(X) if tf is not None else X
    if isinstance(model, NonlinearStateSpaceModel):
        out = model.h(Z)
    else:
        out = model.W_h @ model.lift(Z)
    if tf is not None:
        out = tf.output_inv(out)
    return out[:, 0] if single else out


def evaluate_model(model, trajectories, horizon=None, model_id="", dataset_id=""):
    """Table-1-style metrics: 1-step/n-step state r2 and output r2 over a
    set of test trajectories (physical coordinates)."""
    snaps = build_snapshots(trajectories)
    r2_1 = r_squared(snaps.xf, predict_one_step(model, snaps.xp))
    r2_y = r_squared(snaps.yp, predict_output(model, snaps.xp))
    actual_n, pred_n = [], []
    for tr in trajectories:
        n_steps = len(tr) - 1 if horizon is None else min(horizon, len(tr) - 1)
        if n_steps < 1:
            continue
        actual_n.append(tr.states[1:n_steps + 1])
        pred_n.append(predict_n_step(model, tr.states[0], n_steps))
    r2_n = r_squared(np.concatenate(actual_n), np.concatenate(pred_n))
    return MetricsRecord(r2_x_1step=r2_1, r2_x_nstep=r2_n, r2_y=r2_y,
                         model_id=model_id, dataset_id=dataset_id, horizon=horizon)


ALGORITHMS = {}


def _register_algorithms():
    from .solvers import (
        fit_direct_ocdmd, fit_nonlinear_statespace, fit_sequential_ocdmd,
    )
    ALGORITHMS.update({
        "direct": fit_direct_ocdmd,
        "sequential": fit_sequential_ocdmd,
        "baseline": fit_nonlinear_statespace,
    })


_register_algorithms()


def _grid_cells(grid):
    keys = sorted(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo))


def _model_n_params(model):
    if isinstance(model, NonlinearStateSpaceModel):
        return model.net.n_params
    return model.dictionary.n_params + model.K.size + model.W_h.size


def _fit_cell(algorithm, cell, train, val, config, transform):
    fit = ALGORITHMS[algorithm]
    t0 = time.perf_counter()
    try:
        model = fit(train, val, cell, config, transform=transform)
        err = None
    except Exception as exc:  # per-cell failures recorded, not fatal
        model, err = None, str(exc)
    return model, err, time.perf_counter() - t0


def grid_search(algorithm, grid, train, val, config, transform=None,
                val_trajectories=None, n_jobs=1):
    """Train one model per grid cell and select by validation
    r2_x_1step + r2_y (ties broken by fewer parameters). Returns
    (best_model, results) where results is the full table."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    cells = list(_grid_cells(grid))
    if not cells:
        raise ConfigError("empty hyperparameter grid")
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_fit_cell)(algorithm, cell, train, val, config, transform)
        for cell in cells)
    results = []
    best = None
    best_key = None
    for idx, (cell, (model, err, wall)) in enumerate(zip(cells, runs)):
        row = {"cell": idx, **cell, "wall_time_s": wall, "error": err}
        if model is None:
            row.update({"score": None, "r2_x_1step": None, "r2_x_nstep": None, "r2_y": None})
            results.append(row)
            continue
        if val_trajectories is not None:
            rec = evaluate_model(model, val_trajectories)
            score = rec.r2_x_1step + rec.r2_y
            row.update({"r2_x_1step": rec.r2_x_1step, "r2_x_nstep": rec.r2_x_nstep,
                        "r2_y": rec.r2_y})
        else:
            # fall back to validation loss when no trajectories are given
            score = -model.fit_report.get("val_loss", np.inf) if hasattr(model, "fit_report") else 0.0
            row.update({"r2_x_1step": None, "r2_x_nstep": None, "r2_y": None})
        row["score"] = score
        results.append(row)
        key = (-score, _model_n_params(model))
        if best_key is None or key < best_key:
            best, best_key = model, key
    if best is None:
        raise ConfigError("every grid cell failed to train")
    return best, results


def phase_portrait(model, ic_list, n_steps, reference_trajectories):
    """Model rollouts from each initial condition plus the portrait r2
    against the stacked reference trajectories."""
    rollouts = []
    actual = []
    predicted = []
    for ic, ref in zip(ic_list, reference_trajectories):
        m = min(n_steps, len(ref) - 1)
        pred = predict_n_step(model, np.asarray(ic, dtype=float), m)
        rollouts.append(pred)
        actual.append(ref.states[1:m + 1])
        predicted.append(pred)
    r2 = r_squared(np.concatenate(actual), np.concatenate(predicted))
    return {"rollouts": rollouts, "portrait_r2": r2}
