"""Alternating minimization over normal and malicious users jointly."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ratings import MaliciousMatrix, SparseRatings

_logger = logging.getLogger(__name__)


class SolverDivergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FactorModel:
    U: np.ndarray
    U_tilde: np.ndarray
    V: np.ndarray
    lambda_U: float
    lambda_V: float
    k: int
    n_iter: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.U, self.U_tilde])


def stack_data(M: SparseRatings, Mt: MaliciousMatrix | None):
    """Dense values and 0/1 weights of the joint ``(m + m') x n`` matrix."""
    Y = M.to_dense()
    W = M.mask().astype(float)
    if Mt is not None and Mt.num_users:
        if Mt.num_items != M.num_items:
            raise ValueError("malicious block has a different number of items")
        Y = np.vstack([Y, Mt.to_dense()])
        W = np.vstack([W, Mt.mask().astype(float)])
    return Y, W


def _ridge_rows(W, Y, other, lam):
    k = other.shape[1]
    A = np.einsum("ij,jk,jl->ikl", W, other, other)
    A += lam * np.eye(k)
    b = (W * Y) @ other
    return np.linalg.solve(A, b[..., None])[..., 0]


def _objective(W, Y, P, V, lambda_U, lambda_V):
    resid = W * (Y - P @ V.T)
    return float(np.sum(resid**2) + lambda_U * np.sum(P**2) + lambda_V * np.sum(V**2))


def als_objective(model: FactorModel, M: SparseRatings, Mt: MaliciousMatrix | None = None) -> float:
    """Squared error on observed entries plus ridge penalties.

    The penalty weights are the ones that appear in the stationarity
    conditions, i.e. ``lambda_U * ||[U; U~]||^2 + lambda_V * ||V||^2``.
    """
    Y, W = stack_data(M, Mt)
    return _objective(W, Y, model.stacked, model.V, model.lambda_U, model.lambda_V)


def als_fit(
    M: SparseRatings,
    Mt: MaliciousMatrix | None,
    lambda_U: float,
    lambda_V: float,
    k: int,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed=0,
    init: FactorModel | None = None,
) -> FactorModel:
    """Fit ``[U; U~] V^T`` to ``[M; M~]`` by alternating ridge solves.

    Each sweep updates every user row (normal then malicious) and then every
    item row with its exact conditional minimizer. ``init`` warm-starts from
    an earlier model; only its item factors are needed because users are
    updated first.
    """
    if lambda_U <= 0 or lambda_V <= 0:
        raise ValueError("regularization parameters must be positive")
    if M.nnz == 0:
        raise ValueError("no observed ratings")
    Y, W = stack_data(M, Mt)
    n_users = Y.shape[0]
    if not 1 <= k <= min(n_users, M.num_items):
        raise ValueError(f"rank k={k} out of range for a {n_users}x{M.num_items} problem")

    if init is not None:
        V = np.array(init.V, dtype=float)
        if V.shape != (M.num_items, k):
            raise ValueError("warm start has incompatible item factors")
    else:
        # user factors are overwritten by the first half-sweep, so only V is drawn
        V = np.random.default_rng(seed).normal(scale=1 / np.sqrt(k), size=(M.num_items, k))

    history = []
    prev = np.inf
    converged = False
    P = None
    for it in range(1, max_iter + 1):
        P = _ridge_rows(W, Y, V, lambda_U)
        V = _ridge_rows(W.T, Y.T, P, lambda_V)
        obj = _objective(W, Y, P, V, lambda_U, lambda_V)
        if not np.isfinite(obj):
            raise SolverDivergence(f"objective became non-finite at sweep {it}")
        history.append(obj)
        if prev == 0.0 or (prev - obj) < tol * max(prev, np.finfo(float).tiny):
            converged = True
            break
        prev = obj
    if not converged:
        _logger.warning("ALS stopped after %d sweeps without meeting tol=%g", max_iter, tol)

    m = M.num_users
    return FactorModel(
        U=P[:m], U_tilde=P[m:], V=V, lambda_U=lambda_U, lambda_V=lambda_V, k=k,
        n_iter=len(history), converged=converged, history=tuple(history),
    )


def predict_als(model: FactorModel) -> np.ndarray:
    return model.U @ model.V.T


def kkt_residual(model: FactorModel, M: SparseRatings, Mt: MaliciousMatrix | None = None) -> float:
    """Largest row norm of the stationarity residuals of the joint objective."""
    Y, W = stack_data(M, Mt)
    P, V = model.stacked, model.V
    R = W * (Y - P @ V.T)
    user_res = model.lambda_U * P - R @ V
    item_res = model.lambda_V * V - R.T @ P
    return float(max(np.linalg.norm(user_res, axis=1).max(initial=0.0),
                     np.linalg.norm(item_res, axis=1).max(initial=0.0)))
