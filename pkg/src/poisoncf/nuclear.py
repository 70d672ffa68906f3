"""Nuclear-norm regularized completion by singular value thresholding."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .als import SolverDivergence, stack_data
from .ratings import MaliciousMatrix, SparseRatings

_logger = logging.getLogger(__name__)

RANK_TOL = 1e-6
SHRINK_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class NuclearModel:
    X: np.ndarray
    X_tilde: np.ndarray
    lam: float
    U: np.ndarray
    U_tilde: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    n_iter: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def rho(self) -> int:
        return len(self.sigma)

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.X, self.X_tilde])


def shrink_singular_values(A, threshold: float) -> np.ndarray:
    """Proximal operator of ``threshold * ||.||_*``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    A = np.asarray(A, dtype=float)
    if threshold == 0:
        return A.copy()
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if not len(s):
        return A.copy()
    # values within round-off of the threshold are treated as fully shrunk
    s = np.maximum(s - threshold, 0.0)
    keep = s > SHRINK_EPS * (s[0] + threshold)
    return (U[:, keep] * s[keep]) @ Vt[keep]


def nuclear_objective(Z, Y, W, lam) -> float:
    s = np.linalg.svd(Z, compute_uv=False)
    return float(np.sum((W * (Z - Y)) ** 2) + 2 * lam * s.sum())


def factorize(Z: np.ndarray, m: int, lam: float, rank_tol: float = RANK_TOL, **extra) -> NuclearModel:
    """Reduced SVD of the stacked solution, split into normal and malicious rows."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    keep = s > rank_tol * s[0] if len(s) and s[0] > 0 else np.zeros(len(s), dtype=bool)
    U, s, V = U[:, keep], s[keep], Vt[keep].T
    return NuclearModel(
        X=Z[:m], X_tilde=Z[m:], lam=lam, U=U[:m], U_tilde=U[m:], V=V, sigma=s, **extra,
    )


def svt_fit(
    M: SparseRatings,
    Mt: MaliciousMatrix | None,
    lam: float,
    step: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 5000,
    init: np.ndarray | NuclearModel | None = None,
) -> NuclearModel:
    """Proximal gradient descent on ``||P(Z - [M; M~])||_F^2 + 2 lam ||Z||_*``.

    Starts from the zero matrix unless ``init`` (a stacked matrix or an
    earlier model of the same shape) is given.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not 0 < step <= 1:
        raise ValueError("step must lie in (0, 1]")
    if M.nnz == 0:
        raise ValueError("no observed ratings")
    Y, W = stack_data(M, Mt)
    if init is None:
        Z = np.zeros_like(Y)
    else:
        Z = np.array(init.stacked if isinstance(init, NuclearModel) else init, dtype=float)
        if Z.shape != Y.shape:
            raise ValueError("warm start has the wrong shape")

    prev = nuclear_objective(Z, Y, W, lam)
    history = [prev]
    converged = False
    for _ in range(max_iter):
        Z = shrink_singular_values(Z - step * 2 * W * (Z - Y), step * 2 * lam)
        obj = nuclear_objective(Z, Y, W, lam)
        if not np.isfinite(obj):
            raise SolverDivergence("objective became non-finite")
        history.append(obj)
        if obj > prev * (1 + 1e-10) + 1e-12:
            raise SolverDivergence(f"objective increased ({prev:.6g} -> {obj:.6g}); step too large")
        if prev == 0.0 or (prev - obj) < tol * prev:
            converged = True
            break
        prev = obj
    if not converged:
        _logger.warning("SVT stopped after %d iterations without meeting tol=%g", max_iter, tol)
    return factorize(Z, M.num_users, lam, n_iter=len(history) - 1, converged=converged,
                     history=tuple(history))


def predict_nuclear(model: NuclearModel) -> np.ndarray:
    return model.X


def dual_w(model: NuclearModel, M: SparseRatings, Mt: MaliciousMatrix | None = None):
    """Per-entry dual values ``w`` on the normal and malicious supports.

    Returns two arrays aligned with the entry order of ``M`` and ``Mt``.
    """
    if not model.lam > 0:
        raise ValueError("model has non-positive lambda")
    D = model.sigma + model.lam

    def _w(rows, S):
        if S is None or S.nnz == 0:
            return np.zeros(0)
        fitted = np.einsum("et,t,et->e", rows[S.users], D, model.V[S.items])
        return (S.ratings - fitted) / model.lam

    return _w(model.U, M), _w(model.U_tilde, Mt)
