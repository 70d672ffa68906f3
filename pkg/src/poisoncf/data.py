"""Rating data ingestion, synthetic generation and CSV round-tripping."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .ratings import MaliciousMatrix, SparseRatings

MOVIELENS_HEADER = ["userId", "movieId", "rating", "timestamp"]


class DataFormatError(ValueError):
    pass


def load_movielens(path, min_ratings: int = 20, shift=(-2.0, 2.0), native=(0.5, 5.0),
                   index_path=None) -> SparseRatings:
    """Read a MovieLens ``ratings.csv``, drop light users and rescale ratings.

    Ratings are mapped affinely from ``native`` onto ``shift``. User and item
    ids are renumbered densely in ascending id order; when ``index_path`` is
    given the mapping is written there as ``kind,index,original_id`` rows.
    """
    lo, hi = shift
    nlo, nhi = native
    raw_users, raw_items, raw_ratings, bad = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != MOVIELENS_HEADER[:3]:
            raise DataFormatError(f"{path}: expected header {','.join(MOVIELENS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                uid, iid, r = int(row[0]), int(row[1]), float(row[2])
                if not np.isfinite(r):
                    raise ValueError
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            raw_users.append(uid)
            raw_items.append(iid)
            raw_ratings.append(r)
    if bad:
        shown = ", ".join(map(str, bad[:10])) + (" ..." if len(bad) > 10 else "")
        raise DataFormatError(f"{path}: malformed rows at lines {shown}")

    users = np.asarray(raw_users, dtype=np.int64)
    items = np.asarray(raw_items, dtype=np.int64)
    ratings = np.asarray(raw_ratings, dtype=float)
    uniq_u, counts = np.unique(users, return_counts=True)
    keep = np.isin(users, uniq_u[counts >= min_ratings])
    users, items, ratings = users[keep], items[keep], ratings[keep]
    if len(users) == 0:
        raise DataFormatError(f"{path}: no users with at least {min_ratings} ratings")

    user_ids, u_idx = np.unique(users, return_inverse=True)
    item_ids, i_idx = np.unique(items, return_inverse=True)
    scaled = lo + (ratings - nlo) * (hi - lo) / (nhi - nlo)
    out = SparseRatings(len(user_ids), len(item_ids), u_idx, i_idx, scaled)
    if index_path is not None:
        write_index(index_path, user_ids, item_ids)
    return out


def write_index(path, user_ids, item_ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "original_id"])
        w.writerows(("user", i, int(u)) for i, u in enumerate(user_ids))
        w.writerows(("item", j, int(v)) for j, v in enumerate(item_ids))


def generate_synthetic(m: int, n: int, rank: int, obs_fraction: float, noise_sd: float = 0.0,
                       seed=0, popularity_exponent: float = 0.0):
    """Low-rank ground truth in ``[-2, 2]`` with a sampled observation set.

    Returns ``(ratings, truth)``. With ``popularity_exponent == 0`` the
    observed cells are a uniform sample of ``round(obs_fraction * m * n)``
    grid cells; otherwise every user rates ``round(obs_fraction * n)`` items
    drawn with probability proportional to ``popularity_rank ** -exponent``.
    """
    if not 1 <= rank <= min(m, n):
        raise ValueError("rank must be between 1 and min(m, n)")
    if not 0 < obs_fraction <= 1:
        raise ValueError("obs_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((m, rank)) @ rng.standard_normal((n, rank)).T
    truth *= 2.0 / np.abs(truth).max()

    if popularity_exponent == 0:
        count = max(1, round(obs_fraction * m * n))
        cells = rng.choice(m * n, size=count, replace=False)
        users, items = np.divmod(cells, n)
    else:
        weights = rng.permutation(np.arange(1, n + 1, dtype=float)) ** -popularity_exponent
        weights /= weights.sum()
        per_user = max(1, round(obs_fraction * n))
        items = np.concatenate([rng.choice(n, size=per_user, replace=False, p=weights)
                                for _ in range(m)])
        users = np.repeat(np.arange(m), per_user)
    values = truth[users, items]
    if noise_sd:
        values = values + rng.normal(scale=noise_sd, size=len(values))
    return SparseRatings(m, n, users, items, values), truth


def save_ratings(ratings: SparseRatings, path):
    """Indexed CSV: a ``# shape,m,n`` line, a header, then ``user,item,rating`` rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# shape,{ratings.num_users},{ratings.num_items}\n")
        w = csv.writer(fh)
        w.writerow(["user", "item", "rating"])
        for u, i, r in zip(ratings.users.tolist(), ratings.items.tolist(), ratings.ratings.tolist()):
            w.writerow([u, i, repr(r)])


def load_ratings(path, cls=SparseRatings):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# shape,"):
            raise DataFormatError(f"{path}: missing '# shape,m,n' line")
        m, n = (int(x) for x in first.split(",")[1:3])
        reader = csv.DictReader(fh)
        rows = list(reader)
    users = [int(r["user"]) for r in rows]
    items = [int(r["item"]) for r in rows]
    vals = [float(r["rating"]) for r in rows]
    return cls(m, n, users, items, vals)


def load_malicious(path) -> MaliciousMatrix:
    return load_ratings(path, cls=MaliciousMatrix)


def looks_like_movielens(path) -> bool:
    with open(Path(path), newline="") as fh:
        head = fh.readline()
    return head.strip().startswith("userId")
