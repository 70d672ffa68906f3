"""Uniform fit / predict / attack-gradient interface over both solver families."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .als import FactorModel, als_fit, predict_als
from .implicit import GradSmoothing, als_implicit_grad, nuclear_implicit_grad
from .nuclear import NuclearModel, predict_nuclear, svt_fit
from .objectives import UtilityConfig, grad_r_theta_als, grad_r_theta_nuclear, utility_grad_mhat


@dataclass(frozen=True)
class ALSSolver:
    k: int = 5
    lambda_U: float = 0.1
    lambda_V: float = 0.1
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0

    name = "als"

    def fit(self, M, Mt=None, init: FactorModel | None = None) -> FactorModel:
        return als_fit(M, Mt, self.lambda_U, self.lambda_V, self.k, self.tol,
                       self.max_iter, self.seed, init=init)

    def predict(self, model) -> np.ndarray:
        return predict_als(model)

    def attack_grad(self, model, M, Mt, cfg: UtilityConfig) -> np.ndarray:
        G = utility_grad_mhat(self.predict(model), cfg)
        return als_implicit_grad(model, M, Mt, grad_r_theta_als(model, G))


@dataclass(frozen=True)
class NuclearSolver:
    lam: float = 1.0
    step: float = 0.5
    tol: float = 1e-8
    max_iter: int = 5000
    tau: float = 1e-3
    sigma_path: bool = True

    name = "nuclear"

    def fit(self, M, Mt=None, init: NuclearModel | None = None) -> NuclearModel:
        start = None
        if init is not None:
            n_extra = Mt.num_users if Mt is not None else 0
            start = init.stacked if init.stacked.shape[0] == M.num_users + n_extra else None
            if start is None:
                # reuse the normal-user block; new malicious rows start at zero
                start = np.vstack([init.X, np.zeros((n_extra, M.num_items))])
        return svt_fit(M, Mt, self.lam, self.step, self.tol, self.max_iter, init=start)

    def predict(self, model) -> np.ndarray:
        return predict_nuclear(model)

    def attack_grad(self, model, M, Mt, cfg: UtilityConfig) -> np.ndarray:
        G = utility_grad_mhat(self.predict(model), cfg)
        return nuclear_implicit_grad(model, M, Mt, grad_r_theta_nuclear(model, G),
                                     GradSmoothing(self.tau), sigma_path=self.sigma_path)


def make_solver(name: str, **params):
    if name == "als":
        return ALSSolver(**params)
    if name == "nuclear":
        return NuclearSolver(**params)
    raise ValueError(f"unknown solver {name!r}")
