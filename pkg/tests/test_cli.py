import csv
import json

import pytest

from poisoncf.cli import build_parser, main
from poisoncf.data import load_ratings

FAST = ["--set", "k=2", "--set", "pga_iters=2", "--set", "sgld_T=2", "--set", "max_iter=300"]


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["gen", "--m", "40", "--n", "20", "--rank", "2", "--seed", "1",
                 "--out", str(path)]) == 0
    return path


def test_gen(data, tmp_path, capsys):
    M = load_ratings(data)
    assert M.shape == (40, 20) and M.nnz == 240
    truth = tmp_path / "t.npy"
    main(["gen", "--m", "5", "--n", "4", "--rank", "1", "--out", str(tmp_path / "x.csv"),
          "--truth", str(truth)])
    assert truth.exists()
    assert "wrote" in capsys.readouterr().out


def test_attack_and_eval(data, tmp_path, capsys):
    out = tmp_path / "cell"
    rc = main(["attack", "--set", f"dataset={data}", *FAST, "--alpha", "0.05",
               "--attack", "pga", "--seed", "3", "--out", str(out)])
    assert rc == 0
    row = json.loads(capsys.readouterr().out)
    assert row["attack"] == "pga" and row["beta"] == "" and row["seed"] == 3
    assert (out / "malicious.csv").exists()
    rc = main(["eval", "--set", f"dataset={data}", *FAST, "--seed", "3",
               str(out / "malicious.csv")])
    assert rc == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["rmse"] == pytest.approx(row["rmse"])


def test_sweep_with_config_file(data, tmp_path, capsys):
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text(f"dataset = {data}\nalphas = 0, 0.05\nattacks = uniform, sgld\n"
                       "betas = 0.1, 0.6\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfgfile), *FAST, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert len(rows) == 6
    assert "6 cells" in capsys.readouterr().out


def test_seed_flag_overrides(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        main(["sweep", "--set", f"dataset={data}", *FAST, "--set", "alphas=0.05",
              "--set", "attacks=uniform", "--seed", "7", "--out", str(out)])
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    row = next(csv.DictReader(open(a / "results.csv")))
    assert row["seed"] == "7"


def test_gradcheck_reports(capsys):
    rc = main(["gradcheck", "--instances", "1", "--threshold", "1e9"])
    assert rc == 0
    assert "relative error" in capsys.readouterr().out
    rc = main(["gradcheck", "--solver", "nuclear", "--instances", "1", "--threshold", "0"])
    assert rc == 1


def test_errors_return_code(tmp_path, capsys):
    assert main(["sweep", "--set", "gamma=1"]) == 2
    assert main(["sweep", "--set", f"dataset={tmp_path / 'nope.csv'}"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["sweep", "--set", "novalue"])


def test_parser_verbs():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"gen", "attack", "sweep", "eval", "gradcheck"}
