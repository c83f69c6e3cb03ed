"""Spectral analysis of fitted operators: modal decomposition, eigenfunction
fields, eigenpair matching/correlation, the affine-transform lift of a model
to standardized coordinates, and the output-span / observability
decompositions with their conjugacy checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datasets import AffineTransform
from .dictionary import (
    AffineInputDictionary, StateInclusiveDictionary, append_constant, nonlinear_part,
)
from .errors import ConfigError, DecompositionError, ZeroVarianceError
from .solvers import KoopmanModel

EIGVEC_COND_BOUND = 1e10


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues, Koopman modes V, and eigenfunction coefficients V^-1."""

    eigenvalues: np.ndarray   # (n_L,) complex, sorted
    modes: np.ndarray         # V, columns are modes
    eigfun_coeffs: np.ndarray  # V^-1, rows define phi_i(x) = row_i . psi(x)
    model: KoopmanModel = None


@dataclass(frozen=True)
class EigenfunctionField:
    """Eigenfunction values on a grid, max-abs normalized per function."""

    grid: np.ndarray           # (n, M) evaluation points
    values: np.ndarray         # (n_L, M) complex, normalized
    normalization: np.ndarray  # (n_L,) max-abs value before normalization


def _sort_key(lams):
    return np.lexsort((-lams.imag, -lams.real, -np.abs(lams)))


def modal_decomposition(model, cond_bound=EIGVEC_COND_BOUND):
    """Eigendecomposition K = V Lambda V^-1 with deterministic ordering.

    Eigenpairs are sorted by descending |lambda|, ties broken by descending
    real then imaginary part. Near-defective operators are refused.
    """
    K = model.K
    lams, V = np.linalg.eig(K)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_bound:
        raise DecompositionError(
            f"operator is defective or near-defective (eigenvector condition {cond:.3e})")
    order = _sort_key(lams)
    lams = lams[order]
    V = V[:, order]
    # canonical phase: largest-magnitude entry of each mode real positive
    for i in range(V.shape[1]):
        j = np.argmax(np.abs(V[:, i]))
        ph = V[j, i] / abs(V[j, i])
        V[:, i] /= ph
    Vinv = np.linalg.inv(V)
    rel = np.linalg.norm(V @ np.diag(lams) @ Vinv - K) / max(np.linalg.norm(K), 1e-300)
    if rel >= 1e-8:
        raise DecompositionError(f"spectral reconstruction residual {rel:.3e} too large")
    return SpectralDecomposition(eigenvalues=lams, modes=V, eigfun_coeffs=Vinv, model=model)


def eval_eigenfunctions(decomp, dic, grid):
    """phi_i = row_i(V^-1) psi(x) on grid points, then max-abs normalized."""
    grid = np.asarray(grid, dtype=float)
    psi = dic(grid)
    vals = decomp.eigfun_coeffs @ psi
    norms = np.max(np.abs(vals), axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    return EigenfunctionField(grid=grid, values=vals / safe[:, None], normalization=norms)


def state_grid(low, high, resolution=50):
    """Regular lattice over a state box, returned as (n, resolution^n) columns."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(low, high)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.vstack([m.ravel() for m in mesh])


def _pearson(a, b):
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise ZeroVarianceError("cannot correlate a zero-variance field")
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def pearson_correlation(field_a, field_b, pairing):
    """Pearson rho per matched eigenpair; complex pairs are compared on real
    and imaginary parts separately and averaged (parts that are flat in both
    fields are skipped). Returns a list of (rho, |rho|)."""
    if field_a.grid.shape != field_b.grid.shape or \
            not np.allclose(field_a.grid, field_b.grid):
        raise ConfigError("eigenfunction fields must share the grid")
    out = []
    for ia, ib in pairing:
        va, vb = field_a.values[ia], field_b.values[ib]
        rhos = []
        for part in (np.real, np.imag):
            pa, pb = part(va), part(vb)
            if pa.std() < 1e-12 and pb.std() < 1e-12:
                continue
            rhos.append(_pearson(pa, pb))
        if not rhos:
            raise ZeroVarianceError("both compared fields are constant")
        rho = float(np.mean(rhos))
        out.append((rho, abs(rho)))
    return out


def match_eigenpairs(decomp_a, decomp_b, strict=True):
    """Minimum-total-cost assignment between spectra with cost |la - lb|.

    With ``strict=False`` the spectra may differ in size; the assignment then
    pairs only ``min(len(a), len(b))`` eigenvalues.
    """
    la, lb = decomp_a.eigenvalues, decomp_b.eigenvalues
    if strict and la.size != lb.size:
        raise ConfigError("spectra must have equal size")
    cost = np.abs(la[:, None] - lb[None, :])
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def apply_affine_transform(model, tf):
    """Lift a state-inclusive model to affine-transformed coordinates
    x~ = Px + b, y~ = Qy + c, appending the constant observable and forcing
    a unit eigenvalue (the standardization bookkeeping result)."""
    dic = model.dictionary
    if not dic.is_state_inclusive:
        raise ConfigError("affine transform requires a state-inclusive dictionary")
    if dic.has_constant:
        raise ConfigError("model already carries the constant observable")
    n = model.n
    n_phi = dic.n_L - n
    K11 = model.K[:n, :n]
    K12 = model.K[:n, n:]
    K21 = model.K[n:, :n]
    K22 = model.K[n:, n:]
    Wh1 = model.W_h[:, :n]
    Wh2 = model.W_h[:, n:]
    P, b, Q, c = tf.P, tf.b, tf.Q, tf.c
    Pi = tf.P_inv
    PK11Pi = P @ K11 @ Pi
    Kt = np.zeros((n + n_phi + 1, n + n_phi + 1))
    Kt[:n, :n] = PK11Pi
    Kt[:n, n:n + n_phi] = P @ K12
    Kt[:n, -1] = (np.eye(n) - PK11Pi) @ b
    Kt[n:n + n_phi, :n] = K21 @ Pi
    Kt[n:n + n_phi, n:n + n_phi] = K22
    Kt[n:n + n_phi, -1] = K21 @ Pi @ b
    Kt[-1, -1] = 1.0
    QWh1Pi = Q @ Wh1 @ Pi
    Wt = np.hstack([QWh1Pi, Q @ Wh2, (QWh1Pi @ b + c)[:, None]])
    phi = nonlinear_part(dic)
    phi_t = AffineInputDictionary(phi, Pi, -Pi @ b)
    new_dic = append_constant(StateInclusiveDictionary(phi_t))
    return KoopmanModel(K=Kt, W_h=Wt, dictionary=new_dic, transform=tf,
                        structure="dense",
                        fit_report={"method": "affine-transform",
                                    "source": model.fit_report.get("method", "unknown")})


def output_span_decomposition(W_h, rank_tol=1e-10):
    """SVD split of W_h: the rank-r block of observables spanned by the
    outputs and the orthogonal remainder (similarity T = [V_r, V_rest])."""
    W_h = np.atleast_2d(np.asarray(W_h, dtype=float))
    p, n_L = W_h.shape
    U, s, Vt = np.linalg.svd(W_h)
    r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    T = Vt.T  # first r columns span the output-visible directions
    W_hpsi = U[:, :r] * s[:r]
    return {"r": r, "T": T, "W_hpsi": W_hpsi,
            "spanned_dim": r, "unobserved_dim": n_L - r}


def observability_matrix(K, W_h):
    n_L = K.shape[0]
    blocks = []
    M = np.atleast_2d(W_h).copy()
    for _ in range(n_L):
        blocks.append(M)
        M = M @ K
    return np.vstack(blocks)


def observable_decomposition(K, W_h, rank_tol=1e-10):
    """Observability staircase split: orthogonal T whose leading n_o columns
    span the row space of [W_h; W_h K; ...]; verifies the block-triangular
    form and the vanishing off-diagonal block."""
    K = np.asarray(K, dtype=float)
    W_h = np.atleast_2d(np.asarray(W_h, dtype=float))
    n_L = K.shape[0]
    O = observability_matrix(K, W_h)
    U, s, Vt = np.linalg.svd(O)
    smax = s[0] if s.size else 0.0
    n_o = int(np.sum(s > rank_tol * smax)) if smax > 0 else 0
    # rows of O span the observable subspace; Vt rows are an orthonormal basis
    T = Vt.T
    Kt = T.T @ K @ T
    Wt = W_h @ T
    off = np.linalg.norm(Kt[:n_o, n_o:])
    scale = max(np.linalg.norm(K), 1e-300)
    if off / scale >= 1e-8:
        raise DecompositionError(
            f"observable decomposition block residual {off:.3e} exceeds tolerance")
    K_o = Kt[:n_o, :n_o]
    K_obar = Kt[n_o:, :n_o]
    K_22 = Kt[n_o:, n_o:]
    W_ho = Wt[:, :n_o]
    return {"T": T, "K_o": K_o, "K_obar": K_obar, "K_22": K_22,
            "W_ho": W_ho, "n_o": n_o}


def _min_sufficient_horizon(K_o, W_ho, rank_tol=1e-10):
    n_o = K_o.shape[0]
    for N in range(n_o + 1):
        O = np.vstack([np.atleast_2d(W_ho) @ np.linalg.matrix_power(K_o, i)
                       for i in range(N + 1)])
        if np.linalg.matrix_rank(O, tol=None) == n_o:
            return N
    return None


def conjugate_output_dynamics(K_o, W_ho, N):
    """Projected time-delay output dynamics z_{k+1} = K_z z_k with
    K_z = (O^T O) K_o (O^T O)^-1; verifies both conjugacy identities."""
    K_o = np.atleast_2d(np.asarray(K_o, dtype=float))
    W_ho = np.atleast_2d(np.asarray(W_ho, dtype=float))
    n_o = K_o.shape[0]
    O = np.vstack([W_ho @ np.linalg.matrix_power(K_o, i) for i in range(N + 1)])
    if np.linalg.matrix_rank(O) < n_o:
        suggestion = _min_sufficient_horizon(K_o, W_ho)
        raise DecompositionError(
            f"time-delay stack is rank-deficient at N={N}"
            + (f"; minimal sufficient N is {suggestion}" if suggestion is not None else ""))
    G = O.T @ O
    Gi = np.linalg.inv(G)
    K_z = G @ K_o @ Gi
    # H o g1 = g2 o H  and  g1 o H^-1 = H^-1 o g2, as matrix identities
    scale = max(np.linalg.norm(K_o), 1e-300)
    if np.linalg.norm(G @ K_o - K_z @ G) / (np.linalg.norm(G) * scale) >= 1e-9:
        raise DecompositionError("forward conjugacy identity violated")
    if np.linalg.norm(K_o @ Gi - Gi @ K_z) / (np.linalg.norm(Gi) * scale) >= 1e-9:
        raise DecompositionError("inverse conjugacy identity violated")
    return {"O": O, "W_psi": O.T, "K_z": K_z}


def output_dynamics_full_rank(K, W_h):
    """Output-coordinate dynamics when W_h has full column rank:
    W_h^T W_h K (W_h^T W_h)^-1 for p > n_L, or W_h K W_h^-1 for p = n_L."""
    K = np.asarray(K, dtype=float)
    W_h = np.atleast_2d(np.asarray(W_h, dtype=float))
    p, n_L = W_h.shape
    if np.linalg.matrix_rank(W_h) < n_L:
        raise ConfigError("W_h must have full column rank")
    if p == n_L:
        return W_h @ K @ np.linalg.inv(W_h)
    G = W_h.T @ W_h
    return G @ K @ np.linalg.inv(G)
