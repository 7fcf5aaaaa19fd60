import csv
import subprocess
import sys
import textwrap

import pytest

from uwauth import runner
from uwauth.cli import main
from uwauth.schemes import AuthenticatorBundle

TINY = """\
alphas: [0.0, 0.9]
Ms: [2]
schemes: [AE, LD, CLDAE, GLOBAL]
global_configs: ["4-3-2-||-3-3-1"]
samples_per_class: 400
seeds: [0, 1]
train: {epochs: 5, batch_size: 64, early_stop_patience: 3, restarts: 0}
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_artifacts(tiny, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(tiny), "--out", str(out), "-q"]) == 0
    r = rows(out / "results.csv")
    # AE, CLDAE at M=2, LD once, one global layout: 4 models x 2 alphas x 2 seeds
    assert len(r) == 16
    assert list(r[0]) == ["scheme", "M", "alpha", "seed", "lambda", "p_fa", "p_md", "epsilon"]
    keys = [(x["scheme"], int(x["M"]), float(x["alpha"]), int(x["seed"])) for x in r]
    assert keys == sorted(keys)
    for x in r:
        assert float(x["epsilon"]) == 0.5 * float(x["p_fa"]) + 0.5 * float(x["p_md"])
    svg = (out / "epsilon_vs_alpha.svg").read_text()
    assert svg.startswith("<svg") and "CLDAE, M=2" in svg and "1e-" in svg
    b = AuthenticatorBundle.load(out / "bundles" / "CLDAE_M2_alpha0.90_seed1.json")
    assert b.threshold == float(next(x["lambda"] for x in r if x["scheme"] == "CLDAE" and x["seed"] == "1"
                                     and x["alpha"] == "0.9"))
    assert not (out / "failures.csv").exists()


def test_rerun_identical_and_parallel_identical(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(tiny), "--out", str(a), "-q"])
    runner._DATASETS.clear()
    main(["run", str(tiny), "--out", str(b), "-q", "--jobs", "2"])
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_seed_offset(tiny, tmp_path):
    main(["run", str(tiny), "--out", str(tmp_path / "o"), "-q", "--seed-offset", "10"])
    assert {x["seed"] for x in rows(tmp_path / "o" / "results.csv")} == {"10", "11"}


def test_partial_failure_exit_2(tiny, tmp_path, monkeypatch):
    from uwauth.exceptions import TrainingDivergedError
    real = runner.train_global

    def boom(*a, **k):
        raise TrainingDivergedError("loss became non-finite")

    monkeypatch.setattr(runner, "train_global", boom)
    out = tmp_path / "f"
    assert main(["run", str(tiny), "--out", str(out), "-q"]) == 2
    fails = rows(out / "failures.csv")
    assert len(fails) == 4 and all(f["scheme"] == "GLOBAL" for f in fails)
    assert len(rows(out / "results.csv")) == 12
    monkeypatch.setattr(runner, "train_global", real)


def test_validate_ok(tiny, capsys):
    assert main(["validate", str(tiny)]) == 0
    assert "ok (16 cells)" in capsys.readouterr().out


def test_validate_lists_errors(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(textwrap.dedent("""\
        alphas: [1.2]
        global_configs: ["4-3-2-1||-4-1"]
        schemes: [CLDAE]
        Ms: [1]
        """))
    assert main(["validate", str(p)]) == 1
    err = capsys.readouterr().err
    assert f"{p}:1: error: alphas" in err
    assert f"{p}:2: error: global_configs" in err and "35 neurons" in err
    assert "degenerates to LD" in err


def test_run_refuses_bad_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("N: 0\n")
    assert main(["run", str(p), "--out", str(tmp_path / "x")]) == 1
    assert not (tmp_path / "x").exists()


def test_usage_errors_are_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 1


def test_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.yaml")]) == 1


def test_module_entry_point(tiny):
    r = subprocess.run([sys.executable, "-m", "uwauth", "validate", str(tiny)], capture_output=True, text=True)
    assert r.returncode == 0 and "ok" in r.stdout
