"""Experiment configuration and the attack sweep runner."""
import configparser
import csv
import dataclasses
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .attacks import (PgaConfig, SgldConfig, StepSchedule, estimate_prior, pga_attack,
                      sgld_attack, uniform_attack)
from .data import (generate_synthetic, load_movielens, load_ratings, looks_like_movielens,
                   save_ratings)
from .metrics import avg_item_rating, item_choice_t_test, rmse_unseen
from .objectives import UtilityConfig, utility_value
from .ratings import AttackBudget, SparseRatings, check_feasible
from .solvers import make_solver

_logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["alpha", "attack", "beta", "mu1", "mu2", "rmse", "avg_rating", "t", "p",
                  "utility", "wall_time", "seed", "error"]
ATTACKS = ("pga", "sgld", "uniform")


@dataclass
class ExperimentConfig:
    # data: a MovieLens or indexed CSV path, or empty for synthetic data
    dataset: str = ""
    min_ratings: int = 20
    shift: tuple = (-2.0, 2.0)
    native_range: tuple = (0.5, 5.0)
    max_users: int = 0
    max_items: int = 0
    synthetic_m: int = 200
    synthetic_n: int = 100
    synthetic_rank: int = 5
    synthetic_obs: float = 0.3
    synthetic_noise: float = 0.0
    synthetic_popularity: float = 0.0
    heldout_fraction: float = 0.0
    # solver
    solver: str = "als"
    k: int = 5
    lambda_U: float = 0.1
    lambda_V: float = 0.1
    lam: float = 1.0
    svt_step: float = 0.5
    tol: float = 1e-6
    max_iter: int = 500
    tau: float = 1e-3
    sigma_path: bool = True
    # budget
    alphas: tuple = (0.005, 0.01, 0.02, 0.03)
    B: int = 10
    Lambda: float = 2.0
    # utility
    mu1: float = 1.0
    mu2: float = 0.0
    target_level: float = 0.8
    target_weight: float = 2.0
    target_item: int = -1
    # attacks
    attacks: tuple = ATTACKS
    betas: tuple = (0.6,)
    pga_iters: int = 30
    pga_step: float = 1.0
    pga_schedule: str = "inv_sqrt"
    pga_conv_tol: float = 1e-6
    sgld_T: int = 30
    sgld_step: float = 0.0
    sgld_schedule: str = "constant"
    sgld_noise: bool = True
    prior_per_rater: bool = False
    # run
    seed: int = 0
    seeds: tuple = ()
    workers: int = 1
    record_wall_time: bool = False
    save_malicious: bool = False
    output_dir: str = "results"

    def __post_init__(self):
        if self.solver not in ("als", "nuclear"):
            raise ValueError(f"unknown solver {self.solver!r}")
        bad = [a for a in self.attacks if a not in ATTACKS]
        if bad:
            raise ValueError(f"unknown attack(s) {bad}")
        if any(a < 0 for a in self.alphas):
            raise ValueError("alphas must be non-negative")
        if self.dataset and not Path(self.dataset).exists():
            raise FileNotFoundError(self.dataset)
        if self.solver == "nuclear" and self.dataset:
            self.max_users = self.max_users or 1000
            self.max_items = self.max_items or 1700

    @property
    def replicate_seeds(self) -> tuple:
        return tuple(self.seeds) or (self.seed,)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in defaults:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[key] = _convert(defaults[key], raw, key)
        return cls(**kwargs)


def _convert(default, raw, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        proto = default[0] if default else (0 if key == "seeds" else "")
        return tuple(_convert(proto, p, key) for p in parts)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file (``#`` comments); ``overrides`` win."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        parser.optionxform = str
        parser.read_string("[experiment]\n" + Path(path).read_text())
        values.update(parser["experiment"])
    values.update(overrides or {})
    return ExperimentConfig.from_mapping(values)


def load_dataset(cfg: ExperimentConfig, index_path=None) -> SparseRatings:
    if cfg.dataset:
        if looks_like_movielens(cfg.dataset):
            M = load_movielens(cfg.dataset, cfg.min_ratings, cfg.shift, cfg.native_range,
                               index_path=index_path)
        else:
            M = load_ratings(cfg.dataset)
    else:
        M, _ = generate_synthetic(cfg.synthetic_m, cfg.synthetic_n, cfg.synthetic_rank,
                                  cfg.synthetic_obs, cfg.synthetic_noise, cfg.seed,
                                  cfg.synthetic_popularity)
    return subset(M, cfg.max_users, cfg.max_items)


def subset(M: SparseRatings, max_users=0, max_items=0) -> SparseRatings:
    """Keep the most active users and most rated items, renumbered densely."""
    if not max_users and not max_items:
        return M
    items = np.arange(M.num_items)
    if max_items and M.num_items > max_items:
        items = np.sort(np.argsort(-M.col_counts(), kind="stable")[:max_items])
    keep = np.isin(M.items, items)
    users = np.arange(M.num_users)
    counts = np.bincount(M.users[keep], minlength=M.num_users)
    if max_users and M.num_users > max_users:
        users = np.sort(np.argsort(-counts, kind="stable")[:max_users])
    keep &= np.isin(M.users, users)
    u_map = np.full(M.num_users, -1)
    u_map[users] = np.arange(len(users))
    i_map = np.full(M.num_items, -1)
    i_map[items] = np.arange(len(items))
    return SparseRatings(len(users), len(items), u_map[M.users[keep]], i_map[M.items[keep]],
                         M.ratings[keep])


def split_heldout(M: SparseRatings, fraction: float, seed):
    """Training ratings plus the mask treated as observed when scoring.

    With ``fraction == 0`` every unobserved cell is scored. Otherwise that
    fraction of the ratings is withheld and only those cells are scored.
    """
    if fraction <= 0:
        return M, M.mask()
    rng = np.random.default_rng(seed)
    out = rng.random(M.nnz) < fraction
    train = SparseRatings(M.num_users, M.num_items, M.users[~out], M.items[~out], M.ratings[~out])
    observed = np.ones(M.shape, dtype=bool)
    observed[M.users[out], M.items[out]] = False
    return train, observed


def pick_target(Mbar, level: float) -> int:
    avg = np.asarray(Mbar).mean(axis=0)
    return int(np.argmin(np.abs(avg - level)))


@dataclass
class Context:
    """Everything a cell needs that is shared across the sweep."""

    cfg: ExperimentConfig
    M: SparseRatings
    solver: object
    clean: object
    util: UtilityConfig
    target: int
    prior: object = None


def build_solver(cfg: ExperimentConfig, seed=None):
    seed = cfg.seed if seed is None else seed
    if cfg.solver == "als":
        return make_solver("als", k=cfg.k, lambda_U=cfg.lambda_U, lambda_V=cfg.lambda_V,
                           tol=cfg.tol, max_iter=cfg.max_iter, seed=seed)
    return make_solver("nuclear", lam=cfg.lam, step=cfg.svt_step, tol=cfg.tol,
                       max_iter=cfg.max_iter, tau=cfg.tau, sigma_path=cfg.sigma_path)


def prepare(cfg: ExperimentConfig, M: SparseRatings | None = None, index_path=None) -> Context:
    """Load data, fit the clean baseline and fix the utility."""
    if M is None:
        M = load_dataset(cfg, index_path=index_path)
    M, observed = split_heldout(M, cfg.heldout_fraction, cfg.seed)
    solver = build_solver(cfg)
    clean = solver.fit(M)
    Mbar = solver.predict(clean)
    target = cfg.target_item if cfg.target_item >= 0 else pick_target(Mbar, cfg.target_level)
    util = UtilityConfig(cfg.mu1, cfg.mu2, Mbar, observed, {target: cfg.target_weight})
    prior = estimate_prior(M, per_rater=cfg.prior_per_rater)
    return Context(cfg, M, solver, clean, util, target, prior)


def cell_grid(cfg: ExperimentConfig) -> list[tuple]:
    cells = []
    for seed in cfg.replicate_seeds:
        for alpha in cfg.alphas:
            for attack in cfg.attacks:
                for beta in (cfg.betas if attack == "sgld" else (None,)):
                    cells.append((alpha, attack, beta, seed))
    return cells


def run_attack(ctx: Context, alpha: float, attack: str, beta, seed):
    """Malicious block for one cell, or ``None`` for the null attack."""
    cfg = ctx.cfg
    if alpha == 0:
        return None
    budget = AttackBudget(alpha, cfg.B, cfg.Lambda)
    if attack == "uniform":
        return uniform_attack(ctx.M, budget, seed)
    if attack == "pga":
        pcfg = PgaConfig(cfg.pga_iters, StepSchedule(cfg.pga_step, cfg.pga_schedule),
                         cfg.pga_conv_tol, seed)
        return pga_attack(ctx.M, budget, ctx.solver, ctx.util, pcfg, warm_start=ctx.clean)
    if attack == "sgld":
        step = StepSchedule(cfg.sgld_step, cfg.sgld_schedule) if cfg.sgld_step > 0 else None
        scfg = SgldConfig(beta, cfg.sgld_T, step, seed, cfg.sgld_noise)
        return sgld_attack(ctx.M, budget, ctx.solver, ctx.util, scfg, prior=ctx.prior,
                           warm_start=ctx.clean)
    raise ValueError(f"unknown attack {attack!r}")


def evaluate(ctx: Context, mt) -> dict:
    """Refit on the poisoned data and compute every reported metric."""
    if mt is None or mt.num_users == 0:
        Mhat = ctx.solver.predict(ctx.clean)
        t, p = 0.0, 1.0
    else:
        budget = AttackBudget(1.0, ctx.cfg.B, ctx.cfg.Lambda)
        if not check_feasible(mt, budget):
            raise AssertionError("malicious block violates the attack budget")
        Mhat = ctx.solver.predict(ctx.solver.fit(ctx.M, mt, init=ctx.clean))
        t, p = item_choice_t_test(ctx.M, mt)
    return {
        "rmse": rmse_unseen(Mhat, ctx.util.baseline, ctx.util.observed),
        "avg_rating": avg_item_rating(Mhat, ctx.target),
        "t": t,
        "p": p,
        "utility": utility_value(Mhat, ctx.util),
    }


def run_cell(ctx: Context, cell: tuple):
    alpha, attack, beta, seed = cell
    row = dict.fromkeys(RESULT_COLUMNS, "")
    row.update(alpha=alpha, attack=attack, beta="" if beta is None else beta,
               mu1=ctx.cfg.mu1, mu2=ctx.cfg.mu2, seed=seed)
    start = time.perf_counter()
    mt = None
    try:
        mt = run_attack(ctx, alpha, attack, beta, seed)
        row.update(evaluate(ctx, mt))
    except Exception as exc:  # a failed cell is reported, the sweep goes on
        _logger.exception("cell %s failed", cell)
        row["error"] = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    if ctx.cfg.record_wall_time:
        row["wall_time"] = round(elapsed, 3)
    return row, mt, elapsed


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker(cell):
    return run_cell(_WORKER_CTX, cell)


def run_experiment(cfg: ExperimentConfig, M: SparseRatings | None = None) -> list[dict]:
    """Run every (seed, alpha, attack, beta) cell and write results + manifest.

    Rows are written in grid order whatever the worker count, so identical
    configurations produce identical result files.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = prepare(cfg, M, index_path=out / "id_map.csv" if cfg.dataset else None)
    cells = cell_grid(cfg)
    rows, timings = [], []
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
                results = pool.map(_worker, cells)
                _consume(results, cells, writer, rows, timings, cfg, out)
        else:
            results = (run_cell(ctx, c) for c in cells)
            _consume(results, cells, writer, rows, timings, cfg, out)

    manifest = {
        "config": cfg.to_dict(),
        "target_item": ctx.target,
        "num_users": ctx.M.num_users,
        "num_items": ctx.M.num_items,
        "num_ratings": ctx.M.nnz,
        "versions": {"poisoncf": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "cell_seconds": timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list))
    return rows


def _consume(results, cells, writer, rows, timings, cfg, out):
    for idx, (row, mt, elapsed) in enumerate(results):
        writer.writerow(row)
        rows.append(row)
        timings.append(round(elapsed, 3))
        if cfg.save_malicious and mt is not None:
            mdir = out / "malicious"
            mdir.mkdir(exist_ok=True)
            save_ratings(mt, mdir / f"cell{idx:04d}.csv")
