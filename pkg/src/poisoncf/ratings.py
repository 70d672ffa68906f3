"""Sparse rating containers, attack budgets and feasibility operations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseRatings:
    """Partially observed ``num_users x num_items`` rating matrix.

    Entries are stored in canonical (user, item) order so two containers
    holding the same set of ratings are indistinguishable downstream.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        users = _frozen(self.users, np.int64)
        items = _frozen(self.items, np.int64)
        ratings = _frozen(self.ratings, np.float64)
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("users, items and ratings must have equal length")
        if self.num_users < 0 or self.num_items < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if len(users):
            if users.min() < 0 or users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise ValueError("item index out of range")
        if not np.all(np.isfinite(ratings)):
            raise ValueError("ratings must be finite")
        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        if len(users) > 1:
            dup = (np.diff(users) == 0) & (np.diff(items) == 0)
            if dup.any():
                at = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry ({users[at]}, {items[at]})")
        for name, a in (("users", users), ("items", items), ("ratings", ratings)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_dense(cls, values, mask=None):
        values = np.asarray(values, dtype=float)
        if mask is None:
            mask = values != 0
        users, items = np.nonzero(mask)
        return cls(values.shape[0], values.shape[1], users, items, values[users, items])

    @classmethod
    def empty(cls, num_users, num_items):
        return cls(num_users, num_items, [], [], [])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_users, self.num_items)

    @property
    def nnz(self) -> int:
        return len(self.ratings)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    @cached_property
    def row_index(self) -> tuple[np.ndarray, ...]:
        """Items rated by each user."""
        bounds = np.searchsorted(self.users, np.arange(self.num_users + 1))
        return tuple(self.items[a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    @cached_property
    def col_index(self) -> tuple[np.ndarray, ...]:
        """Users who rated each item."""
        order = np.lexsort((self.users, self.items))
        items, users = self.items[order], self.users[order]
        bounds = np.searchsorted(items, np.arange(self.num_items + 1))
        return tuple(users[a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def col_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.users, self.items] = True
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.users, self.items] = self.ratings
        return out

    def with_ratings(self, ratings):
        """Same support, new values (aligned with the canonical entry order)."""
        return type(self)(self.num_users, self.num_items, self.users, self.items, ratings)

    def __eq__(self, other):
        if not isinstance(other, SparseRatings):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
        )

    __hash__ = None


class MaliciousMatrix(SparseRatings):
    """The attacker's ``num_malicious x num_items`` block."""

    @property
    def num_malicious(self) -> int:
        return self.num_users


@dataclass(frozen=True)
class AttackBudget:
    alpha: float
    B: int
    Lambda: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not self.Lambda > 0:
            raise ValueError("Lambda must be positive")

    def num_malicious(self, num_users: int) -> int:
        # the 1e-9 guards products like 0.005 * 200 landing just below an integer
        return max(1, math.floor(self.alpha * num_users + 1e-9))


def check_feasible(mm: MaliciousMatrix, budget: AttackBudget) -> bool:
    if mm.nnz and np.abs(mm.ratings).max() > budget.Lambda:
        return False
    return bool(mm.row_counts().max(initial=0) <= budget.B)


def truncate_ratings(mm: MaliciousMatrix, Lambda: float) -> MaliciousMatrix:
    if not Lambda > 0:
        raise ValueError("Lambda must be positive")
    return mm.with_ratings(np.clip(mm.ratings, -Lambda, Lambda))


def select_top_b(mm: MaliciousMatrix, B: int) -> MaliciousMatrix:
    """Keep the ``B`` largest-magnitude nonzero ratings of every row.

    Ties are resolved in favour of the lower item index.
    """
    keep = mm.ratings != 0
    users, items, vals = mm.users[keep], mm.items[keep], mm.ratings[keep]
    order = np.lexsort((items, -np.abs(vals), users))
    users, items, vals = users[order], items[order], vals[order]
    starts = np.searchsorted(users, users, side="left")
    rank = np.arange(len(users)) - starts
    sel = rank < B
    return type(mm)(mm.num_users, mm.num_items, users[sel], items[sel], vals[sel])


def sample_support(num_malicious: int, n: int, B: int, seed, Lambda: float = 2.0) -> MaliciousMatrix:
    """Random feasible attack: ``B`` distinct items per row, ratings ~ U[-Lambda, Lambda]."""
    if B > n:
        raise ValueError(f"budget B={B} exceeds number of items n={n}")
    if B < 1:
        raise ValueError("B must be at least 1")
    rng = np.random.default_rng(seed)
    items = np.concatenate([rng.choice(n, size=B, replace=False) for _ in range(num_malicious)]) if num_malicious else []
    users = np.repeat(np.arange(num_malicious), B)
    ratings = rng.uniform(-Lambda, Lambda, size=num_malicious * B)
    return MaliciousMatrix(num_malicious, n, users, items, ratings)
