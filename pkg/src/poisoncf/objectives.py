"""Attacker utilities and their gradients with respect to predictions and factors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .als import FactorModel
from .nuclear import NuclearModel


@dataclass(frozen=True, eq=False)
class UtilityConfig:
    """Hybrid utility ``mu1 * availability + mu2 * integrity``.

    ``baseline`` holds the clean-model predictions and ``observed`` the
    training mask; availability is measured on its complement.
    """

    mu1: float
    mu2: float
    baseline: np.ndarray
    observed: np.ndarray
    w: dict = field(default_factory=dict)

    def __post_init__(self):
        baseline = np.asarray(self.baseline, dtype=float)
        observed = np.asarray(self.observed, dtype=bool)
        if baseline.shape != observed.shape:
            raise ValueError("baseline and observed mask must have the same shape")
        n = baseline.shape[1]
        if any(not 0 <= j < n for j in self.w):
            raise ValueError("target item out of range")
        object.__setattr__(self, "baseline", baseline)
        object.__setattr__(self, "observed", observed)

    @property
    def J0(self) -> tuple[int, ...]:
        return tuple(sorted(self.w))

    def item_weights(self) -> np.ndarray:
        out = np.zeros(self.baseline.shape[1])
        for j, wj in self.w.items():
            out[j] = wj
        return out


@dataclass(frozen=True, eq=False)
class ThetaGrad:
    """Gradient of a utility with respect to the factors of a fitted model."""

    U: np.ndarray
    U_tilde: np.ndarray
    V: np.ndarray
    sigma: np.ndarray | None = None

    def __mul__(self, c):
        return ThetaGrad(self.U * c, self.U_tilde * c, self.V * c,
                         None if self.sigma is None else self.sigma * c)

    __rmul__ = __mul__


def utility_value(Mhat, cfg: UtilityConfig) -> float:
    Mhat = np.asarray(Mhat, dtype=float)
    if Mhat.shape != cfg.baseline.shape:
        raise ValueError("prediction shape does not match the baseline")
    value = 0.0
    if cfg.mu1:
        diff = np.where(cfg.observed, 0.0, Mhat - cfg.baseline)
        value += cfg.mu1 * float(np.sum(diff**2))
    if cfg.mu2:
        value += cfg.mu2 * float(Mhat.sum(axis=0) @ cfg.item_weights())
    return value


def utility_grad_mhat(Mhat, cfg: UtilityConfig) -> np.ndarray:
    Mhat = np.asarray(Mhat, dtype=float)
    if Mhat.shape != cfg.baseline.shape:
        raise ValueError("prediction shape does not match the baseline")
    G = cfg.mu1 * 2 * np.where(cfg.observed, 0.0, Mhat - cfg.baseline)
    return G + cfg.mu2 * cfg.item_weights()[None, :]


def grad_r_theta_als(model: FactorModel, G) -> ThetaGrad:
    return ThetaGrad(U=G @ model.V, U_tilde=np.zeros_like(model.U_tilde), V=G.T @ model.U)


def grad_r_theta_nuclear(model: NuclearModel, G) -> ThetaGrad:
    s = model.sigma
    return ThetaGrad(
        U=(G @ model.V) * s,
        U_tilde=np.zeros_like(model.U_tilde),
        V=(G.T @ model.U) * s,
        sigma=np.einsum("it,ij,jt->t", model.U, G, model.V),
    )
