import csv
import json

import numpy as np
import pytest

from poisoncf.data import generate_synthetic, save_ratings
from poisoncf.experiment import (RESULT_COLUMNS, ExperimentConfig, cell_grid, evaluate,
                                 load_config, pick_target, prepare, run_attack, run_experiment,
                                 split_heldout, subset)
from poisoncf.ratings import MaliciousMatrix, sample_support

SMALL = dict(synthetic_m=40, synthetic_n=20, synthetic_rank=2, k=2, pga_iters=2, sgld_T=2,
             alphas=(0.0, 0.05), max_iter=300)


def small_cfg(tmp_path, **kw):
    return ExperimentConfig(**(SMALL | {"output_dir": str(tmp_path / "out")} | kw))


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\nsolver = als\nalphas = 0.01, 0.02\nsgld_noise = no\n"
                        "betas = 0.1,0.6\nk = 3\n")
        cfg = load_config(path, {"k": "4", "seeds": "1,2"})
        assert cfg.alphas == (0.01, 0.02) and cfg.betas == (0.1, 0.6)
        assert cfg.sgld_noise is False and cfg.k == 4 and cfg.seeds == (1, 2)
        assert cfg.replicate_seeds == (1, 2)

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            load_config(None, {"gamma": "1"})

    def test_bad_values(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(None, {"sgld_noise": "maybe"})
        with pytest.raises(ValueError):
            ExperimentConfig(solver="svd")
        with pytest.raises(ValueError):
            ExperimentConfig(attacks=("pga", "magic"))
        with pytest.raises(FileNotFoundError):
            ExperimentConfig(dataset=str(tmp_path / "missing.csv"))

    def test_nuclear_dataset_cap(self, tmp_path):
        M, _ = generate_synthetic(5, 4, 1, 1.0, 0.0, 0)
        save_ratings(M, tmp_path / "d.csv")
        cfg = ExperimentConfig(solver="nuclear", dataset=str(tmp_path / "d.csv"))
        assert (cfg.max_users, cfg.max_items) == (1000, 1700)
        assert ExperimentConfig(solver="nuclear").max_users == 0


def test_cell_grid_cross_product():
    cfg = ExperimentConfig(alphas=(0.005, 0.01, 0.02, 0.03), betas=(0.1, 0.6))
    cells = cell_grid(cfg)
    assert len(cells) == 4 * (1 + 2 + 1)
    assert len(set(cells)) == len(cells)


def test_subset_keeps_heaviest():
    M, _ = generate_synthetic(30, 20, 2, 0.3, 0.0, 1, popularity_exponent=1.0)
    S = subset(M, max_users=10, max_items=5)
    assert S.shape == (10, 5)
    counts = np.sort(M.col_counts())[::-1]
    # the kept items are the five most rated ones
    kept_only_items = subset(M, max_items=5)
    np.testing.assert_array_equal(np.sort(kept_only_items.col_counts())[::-1], counts[:5])
    assert S.nnz <= kept_only_items.nnz


def test_split_heldout():
    M, _ = generate_synthetic(20, 10, 2, 0.5, 0.0, 0)
    train, observed = split_heldout(M, 0.0, 0)
    assert train == M and np.array_equal(observed, M.mask())
    train, observed = split_heldout(M, 0.3, 0)
    held = M.nnz - train.nnz
    assert held > 0 and (~observed).sum() == held


def test_pick_target():
    Mbar = np.array([[0.0, 0.7, 1.5], [0.0, 0.9, 1.5]])
    assert pick_target(Mbar, 0.8) == 1


class TestCells:
    def test_null_attack(self, tmp_path):
        ctx = prepare(small_cfg(tmp_path))
        assert run_attack(ctx, 0.0, "pga", None, 0) is None
        metrics = evaluate(ctx, None)
        assert metrics["rmse"] == 0.0 and metrics["utility"] == 0.0 and metrics["p"] == 1.0

    def test_uniform_is_sample_support(self, tmp_path):
        ctx = prepare(small_cfg(tmp_path))
        mt = run_attack(ctx, 0.05, "uniform", None, 3)
        assert mt == sample_support(2, 20, 10, 3, 2.0)

    def test_infeasible_block_rejected(self, tmp_path):
        ctx = prepare(small_cfg(tmp_path))
        bad = MaliciousMatrix(1, 20, [0], [0], [5.0])
        with pytest.raises(AssertionError):
            evaluate(ctx, bad)


class TestRunExperiment:
    def test_rows_and_files(self, tmp_path):
        cfg = small_cfg(tmp_path, save_malicious=True)
        rows = run_experiment(cfg)
        assert len(rows) == 6
        out = tmp_path / "out"
        with open(out / "results.csv") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == RESULT_COLUMNS
            table = list(reader)
        assert [r["attack"] for r in table] == ["pga", "sgld", "uniform"] * 2
        assert all(float(r["rmse"]) == 0.0 for r in table[:3])
        assert all(r["error"] == "" for r in table)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["alphas"] == [0.0, 0.05]
        assert "poisoncf" in manifest["versions"] and len(manifest["cell_seconds"]) == 6
        assert len(list((out / "malicious").glob("cell*.csv"))) == 3

    def test_bitwise_reproducible(self, tmp_path):
        a = run_experiment(small_cfg(tmp_path / "a"))
        b = run_experiment(small_cfg(tmp_path / "b", workers=2))
        assert a == b
        assert ((tmp_path / "a/out/results.csv").read_bytes()
                == (tmp_path / "b/out/results.csv").read_bytes())

    def test_failed_cell_recorded(self, tmp_path, monkeypatch):
        import poisoncf.experiment as exp

        real = exp.run_attack

        def flaky(ctx, alpha, attack, beta, seed):
            if attack == "sgld" and alpha > 0:
                raise RuntimeError("boom")
            return real(ctx, alpha, attack, beta, seed)

        monkeypatch.setattr(exp, "run_attack", flaky)
        rows = run_experiment(small_cfg(tmp_path))
        errs = [r for r in rows if r["error"]]
        assert len(errs) == 1 and "boom" in errs[0]["error"]
        assert sum(1 for r in rows if not r["error"]) == 5

    def test_wall_time_opt_in(self, tmp_path):
        rows = run_experiment(small_cfg(tmp_path, alphas=(0.0,), record_wall_time=True))
        assert all(isinstance(r["wall_time"], float) for r in rows)

    def test_movielens_dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = ["userId,movieId,rating,timestamp"]
        for u in range(30):
            for i in rng.choice(15, 8, replace=False):
                lines.append(f"{u + 100},{i * 3},{rng.choice([0.5, 1.5, 3.0, 4.5, 5.0])},0")
        path = tmp_path / "ratings.csv"
        path.write_text("\n".join(lines) + "\n")
        cfg = small_cfg(tmp_path, dataset=str(path), min_ratings=5, attacks=("uniform",))
        rows = run_experiment(cfg)
        assert len(rows) == 2 and not any(r["error"] for r in rows)
        assert (tmp_path / "out" / "id_map.csv").exists()

    def test_nuclear_solver(self, tmp_path):
        cfg = small_cfg(tmp_path, solver="nuclear", lam=0.5, tol=1e-5, max_iter=2000)
        rows = run_experiment(cfg)
        assert not any(r["error"] for r in rows)
