"""Projected gradient ascent and Langevin-dynamics poisoning attacks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import UtilityConfig, utility_value
from .ratings import (AttackBudget, MaliciousMatrix, SparseRatings, sample_support,
                      select_top_b, truncate_ratings)

_logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4


@dataclass(frozen=True)
class StepSchedule:
    """``s_t = s0`` (``constant``) or ``s_t = s0 / sqrt(t)`` (``inv_sqrt``), for t >= 1."""

    s0: float = 1.0
    rule: str = "inv_sqrt"

    def __post_init__(self):
        if self.rule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown step rule {self.rule!r}")
        if self.s0 < 0:
            raise ValueError("step size must be non-negative")

    def __call__(self, t: int) -> float:
        return self.s0 if self.rule == "constant" else self.s0 / math.sqrt(t)


@dataclass(frozen=True)
class PgaConfig:
    max_iter: int = 30
    step: StepSchedule = field(default_factory=StepSchedule)
    conv_tol: float = 1e-6
    seed: int = 0


@dataclass(frozen=True)
class SgldConfig:
    beta: float = 0.6
    T: int = 30
    # None picks a constant step equal to the smallest prior variance
    step: StepSchedule | None = None
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.T < 1:
            raise ValueError("T must be at least 1")


@dataclass(frozen=True, eq=False)
class ItemPrior:
    xi: np.ndarray
    sigma2: np.ndarray

    def broadcast(self, num_malicious: int) -> np.ndarray:
        return np.broadcast_to(self.xi, (num_malicious, len(self.xi))).copy()


def estimate_prior(M: SparseRatings, per_rater: bool = False,
                   floor: float = VARIANCE_FLOOR) -> ItemPrior:
    """Per-item mean and variance of normal users' ratings.

    By default both moments average over all users with missing ratings
    counted as zero. ``per_rater=True`` averages over each item's raters only.
    """
    if M.num_users < 1:
        raise ValueError("need at least one user")
    if per_rater:
        counts = np.maximum(M.col_counts(), 1)
        xi = np.bincount(M.items, M.ratings, M.num_items) / counts
        dev = (M.ratings - xi[M.items]) ** 2
        sigma2 = np.bincount(M.items, dev, M.num_items) / counts
    else:
        dense = M.to_dense()
        xi = dense.mean(axis=0)
        sigma2 = ((dense - xi) ** 2).mean(axis=0)
    return ItemPrior(xi=xi, sigma2=np.maximum(sigma2, floor))


def uniform_attack(M: SparseRatings, budget: AttackBudget, seed) -> MaliciousMatrix:
    """Random items and uniformly random ratings, no optimization."""
    return sample_support(budget.num_malicious(M.num_users), M.num_items, budget.B, seed,
                          Lambda=budget.Lambda)


def pga_attack(M: SparseRatings, budget: AttackBudget, solver, cfg_util: UtilityConfig,
               cfg: PgaConfig = PgaConfig(), warm_start=None, trace: list | None = None
               ) -> MaliciousMatrix:
    """Projected gradient ascent on the ratings of a randomly drawn support.

    The support is fixed at initialization, so projection is clipping to
    ``[-Lambda, Lambda]``. The best iterate seen (by utility after
    retraining) is returned.
    """
    mt = truncate_ratings(uniform_attack(M, budget, cfg.seed), budget.Lambda)
    best, best_util = mt, -np.inf
    for t in range(1, cfg.max_iter + 1):
        model = solver.fit(M, mt, init=warm_start)
        util = utility_value(solver.predict(model), cfg_util)
        if trace is not None:
            trace.append(util)
        if util > best_util:
            best, best_util = mt, util
        step = cfg.step(t)
        if step == 0:
            break
        grad = solver.attack_grad(model, M, mt, cfg_util)
        nxt = truncate_ratings(mt.with_ratings(mt.ratings + step * grad), budget.Lambda)
        moved = float(np.linalg.norm(nxt.ratings - mt.ratings))
        mt = nxt
        _logger.debug("pga iter %d utility %.6g step %.3g move %.3g", t, util, step, moved)
        if moved < cfg.conv_tol:
            break
    else:
        model = solver.fit(M, mt, init=warm_start)
        util = utility_value(solver.predict(model), cfg_util)
        if trace is not None:
            trace.append(util)
        if util > best_util:
            best = mt
    return best


def _dense_malicious(X: np.ndarray) -> MaliciousMatrix:
    mp, n = X.shape
    users = np.repeat(np.arange(mp), n)
    items = np.tile(np.arange(n), mp)
    return MaliciousMatrix(mp, n, users, items, X.ravel())


def sgld_attack(M: SparseRatings, budget: AttackBudget, solver, cfg_util: UtilityConfig,
                cfg: SgldConfig = SgldConfig(), prior: ItemPrior | None = None,
                warm_start=None, samples: list | None = None) -> MaliciousMatrix:
    """Langevin sampling of malicious profiles followed by projection.

    The chain runs on a dense ``m' x n`` block; each step ascends
    ``-(M~ - Xi) / sigma^2 + beta * grad R`` with Gaussian noise of variance
    ``s_t``. The final state keeps each row's ``B`` largest-magnitude ratings,
    clipped to ``[-Lambda, Lambda]``.
    """
    if prior is None:
        prior = estimate_prior(M)
    mp = budget.num_malicious(M.num_users)
    rng = np.random.default_rng(cfg.seed)
    Xi = prior.broadcast(mp)
    X = Xi + rng.standard_normal(Xi.shape) * np.sqrt(prior.sigma2)
    step = cfg.step or StepSchedule(float(prior.sigma2.min()), "constant")

    model = warm_start
    for t in range(1, cfg.T + 1):
        s = step(t)
        drift = -(X - Xi) / prior.sigma2
        if cfg.beta:
            mt = _dense_malicious(X)
            model = solver.fit(M, mt, init=model)
            drift += cfg.beta * solver.attack_grad(model, M, mt, cfg_util).reshape(X.shape)
        X = X + 0.5 * s * drift
        if cfg.noise:
            X += math.sqrt(s) * rng.standard_normal(X.shape)
        if samples is not None:
            samples.append(X.copy())
    return truncate_ratings(select_top_b(_dense_malicious(X), budget.B), budget.Lambda)
