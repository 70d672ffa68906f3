"""Finite-difference validation of the attack gradients on small instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import generate_synthetic
from .implicit import GradSmoothing, finite_diff_grad, nuclear_implicit_grad
from .nuclear import NuclearModel
from .objectives import UtilityConfig, grad_r_theta_nuclear, utility_grad_mhat, utility_value
from .ratings import sample_support
from .solvers import ALSSolver, NuclearSolver


@dataclass
class GradCheck:
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def rel_error(self) -> float:
        denom = np.linalg.norm(self.numeric)
        diff = np.linalg.norm(self.analytic - self.numeric)
        return float(diff / denom) if denom > 0 else float(diff)


def make_instance(seed, m=20, n=15, rank=3, obs_fraction=0.6, num_malicious=2, B=5,
                  Lambda=2.0):
    """A small rating matrix plus a random malicious block on it."""
    M, _ = generate_synthetic(m, n, rank, obs_fraction, 0.0, seed)
    Mt = sample_support(num_malicious, n, B, seed + 10_000, Lambda)
    return M, Mt


def _utility(M, Mbar, target=0, mu=(1.0, 1.0), weight=2.0):
    return UtilityConfig(mu[0], mu[1], Mbar, M.mask(), {target: weight})


def check_als(seed, k=3, lam=0.1, tol=1e-10, eps=1e-4, **instance) -> GradCheck:
    """Implicit ALS gradient against full retraining from the attacked solution."""
    M, Mt = make_instance(seed, **instance)
    solver = ALSSolver(k=k, lambda_U=lam, lambda_V=lam, tol=tol, max_iter=20_000, seed=seed)
    clean = solver.fit(M)
    util = _utility(M, solver.predict(clean))
    model = solver.fit(M, Mt, init=clean)
    analytic = solver.attack_grad(model, M, Mt, util)
    numeric = finite_diff_grad(lambda mt: solver.fit(M, mt, init=model),
                               lambda mod: utility_value(solver.predict(mod), util), Mt, eps)
    return GradCheck(analytic, numeric)


def _aligned(model: NuclearModel, ref: NuclearModel):
    """Factors of ``model`` with signs (and rank) matched to ``ref``."""
    r = min(model.rho, ref.rho)
    U = np.zeros_like(ref.U)
    V = np.zeros_like(ref.V)
    sign = np.sign(np.sum(model.V[:, :r] * ref.V[:, :r], axis=0))
    sign[sign == 0] = 1.0
    U[:, :r] = model.U[:, :r] * sign
    V[:, :r] = model.V[:, :r] * sign
    return U, V


def check_nuclear(seed, lam=1.0, tau=1e-3, sigma_path=False, tol=1e-10, eps=1e-4,
                  **instance) -> GradCheck:
    """Implicit nuclear-norm gradient against retraining.

    Without the singular-value path the reference holds the singular values
    at their current level and lets only the factors move, so both sides
    measure the same thing. With it, the full retrained prediction is used.
    """
    M, Mt = make_instance(seed, **instance)
    solver = NuclearSolver(lam=lam, tol=tol, max_iter=200_000, tau=tau, sigma_path=sigma_path)
    clean = solver.fit(M)
    util = _utility(M, solver.predict(clean))
    model = solver.fit(M, Mt, init=clean)
    G = utility_grad_mhat(solver.predict(model), util)
    analytic = nuclear_implicit_grad(model, M, Mt, grad_r_theta_nuclear(model, G),
                                     GradSmoothing(tau), sigma_path=sigma_path)

    def r_eval(mod):
        if sigma_path:
            return utility_value(solver.predict(mod), util)
        U, V = _aligned(mod, model)
        return utility_value((U * model.sigma) @ V.T, util)

    numeric = finite_diff_grad(lambda mt: solver.fit(M, mt, init=model), r_eval, Mt, eps)
    return GradCheck(analytic, numeric)
