"""Gradients of an attacker utility with respect to the malicious ratings.

Both solvers are differentiated through their first-order optimality
conditions, one factor block at a time with the other blocks held fixed.
``finite_diff_grad`` retrains from scratch and serves as the reference.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .als import FactorModel, stack_data
from .nuclear import NuclearModel
from .objectives import ThetaGrad
from .ratings import MaliciousMatrix, SparseRatings

SIGMA_PATH_CLAMP = 1e6


@dataclass(frozen=True)
class GradSmoothing:
    tau: float = 1e-3

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def _gram_solve(W, F, ridge, rhs):
    """Solve ``(sum_j W[i, j] f_j f_j^T + ridge I) x_i = rhs_i`` for every row ``i``."""
    k = F.shape[1]
    A = np.einsum("ij,jk,jl->ikl", W, F, F) + ridge * np.eye(k)
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def als_implicit_grad(model: FactorModel, M: SparseRatings, Mt: MaliciousMatrix,
                      grad_theta: ThetaGrad) -> np.ndarray:
    """Gradient values on the support of ``Mt``, aligned with its entries.

    ``d u~_i / d M~_ij = (lambda_U I + sum_{l in supp_i} v_l v_l^T)^-1 v_j`` and
    ``d v_j / d M~_ij = (lambda_V I + sum_{raters r of j} u_r u_r^T)^-1 u~_i``;
    normal-user factors are treated as constant.
    """
    if not model.converged:
        warnings.warn("model did not converge; implicit gradient may be unreliable", RuntimeWarning)
    _, W = stack_data(M, Mt)
    m = M.num_users
    x = _gram_solve(W[m:], model.V, model.lambda_U, grad_theta.U_tilde)
    y = _gram_solve(W.T, model.stacked, model.lambda_V, grad_theta.V)
    u, j = Mt.users, Mt.items
    return np.einsum("ek,ek->e", model.V[j], x[u]) + np.einsum("ek,ek->e", model.U_tilde[u], y[j])


def nuclear_implicit_grad(model: NuclearModel, M: SparseRatings, Mt: MaliciousMatrix,
                          grad_theta: ThetaGrad, smoothing: GradSmoothing = GradSmoothing(),
                          sigma_path: bool = True) -> np.ndarray:
    """Gradient values on the support of ``Mt`` for the nuclear-norm model.

    Uses ridge-smoothed solves of the per-entry KKT system for ``u~_i`` and
    ``v_j`` and the reciprocal rule ``d sigma_t / d M~_ij = 1 / (u~_it v_jt)``,
    whose magnitude is clamped at ``SIGMA_PATH_CLAMP``. Dual variables are
    held constant.
    """
    if Mt.nnz == 0 or model.rho == 0:
        return np.zeros(Mt.nnz)
    if not model.converged:
        warnings.warn("model did not converge; implicit gradient may be unreliable", RuntimeWarning)
    tau = smoothing.tau
    _, W = stack_data(M, Mt)
    m = M.num_users
    D = model.sigma + model.lam
    DV = model.V * D
    DP = np.vstack([model.U, model.U_tilde]) * D
    u, j = Mt.users, Mt.items

    x = _gram_solve(W[m:], DV, tau, grad_theta.U_tilde)
    y = _gram_solve(W.T, DP, tau, grad_theta.V)
    g = np.einsum("et,et->e", DV[j], x[u]) + np.einsum("et,et->e", DP[m:][u], y[j])

    if sigma_path and grad_theta.sigma is not None:
        prod = model.U_tilde[u] * model.V[j]
        small = np.abs(prod) < 1.0 / SIGMA_PATH_CLAMP
        safe = np.where(small, np.where(prod < 0, -1.0, 1.0) / SIGMA_PATH_CLAMP, prod)
        g = g + (1.0 / safe) @ grad_theta.sigma
    return g


def finite_diff_grad(retrain: Callable, r_eval: Callable, Mt: MaliciousMatrix,
                     eps: float = 1e-4) -> np.ndarray:
    """Central differences of ``r_eval(retrain(Mt))`` over each support entry."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    base = np.array(Mt.ratings)
    out = np.empty(Mt.nnz)
    for e in range(Mt.nnz):
        bumped = base.copy()
        bumped[e] += eps
        hi = r_eval(retrain(Mt.with_ratings(bumped)))
        bumped[e] -= 2 * eps
        lo = r_eval(retrain(Mt.with_ratings(bumped)))
        out[e] = (hi - lo) / (2 * eps)
    return out
