import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mfbo import cli

FAST_MAX = {"restarts": 32, "steps": 10, "polish": 1}


def levy_config(out, **over):
    cfg = {"schema_version": 1, "benchmark": "levy2d", "strategy": "alg3", "surrogate": "cokriging",
           "acquisition": {"name": "ei"}, "K": 5, "initial": [5, 5], "trials": 2, "seed": 0,
           "n_restarts": 2, "maximizer": FAST_MAX, "output": str(out)}
    cfg.update(over)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_bytes(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


def write_trace(path, best, trial=0):
    lines = ["trial,iteration,fidelity,x_1,f,best_f,cum_cost"]
    for i, b in enumerate(best):
        lines.append(f"{trial},{i},1,0.5,{b},{b},{i + 1}")
    path.write_text("\n".join(lines) + "\n")


class TestRun:
    def test_levy_two_trials(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["run", write_config(tmp_path, levy_config(out))]) == 0
        files = sorted(os.listdir(out))
        assert [f for f in files if f.startswith("trace_")] == ["trace_000.csv", "trace_001.csv"]
        assert "summary.csv" in files
        with open(out / "trace_000.csv") as fh:
            header = fh.readline().strip()
        assert header == "trial,iteration,fidelity,x_1,x_2,f,best_f,cum_cost"
        rows = list(csv.reader(open(out / "summary.csv")))
        assert rows[0] == ["iteration", "median", "q25", "q75", "trials"]
        assert len(rows) == 1 + 6 and all(r[-1] == "2" for r in rows[1:])

    def test_rerun_identical(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, levy_config(out, K=2))
        assert cli.main(["run", path]) == 0
        first = read_bytes(out)
        assert cli.main(["run", path]) == 0
        assert read_bytes(out) == first

    def test_worker_count_does_not_change_output(self, tmp_path, monkeypatch):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", write_config(tmp_path, levy_config(a, K=2), "a.json")]) == 0
        monkeypatch.setenv("MFBO_WORKERS", "2")
        assert cli.main(["run", write_config(tmp_path, levy_config(b, K=2), "b.json")]) == 0
        assert read_bytes(a) == read_bytes(b)

    def test_unknown_acquisition(self, tmp_path, capsys):
        cfg = levy_config(tmp_path / "o", acquisition={"name": "entropy-search"})
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 2
        assert "entropy-search" in capsys.readouterr().err

    @pytest.mark.parametrize("change,field", [
        ({"strategy": "alg9"}, "strategy"),
        ({"K": -1}, "K"),
        ({"initial": [5]}, "initial"),
        ({"initial": [0, 5]}, "initial"),
        ({"surrogate": "deep-gp"}, "surrogate"),
        ({"benchmark": "branin"}, "benchmark"),
        ({"schema_version": 7}, "schema_version"),
        ({"colour": "red"}, "colour"),
        ({"maximizer": {"restarts": 0}}, "restarts"),
        ({"strategy": "alg6", "initial": [5]}, "alg6"),
    ])
    def test_validation_names_field(self, tmp_path, capsys, change, field):
        cfg = levy_config(tmp_path / "o", **change)
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 2
        assert field in capsys.readouterr().err

    def test_missing_field_and_bad_json(self, tmp_path, capsys):
        cfg = levy_config(tmp_path / "o")
        del cfg["K"]
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 2
        assert "K" in capsys.readouterr().err
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert cli.main(["run", str(bad)]) == 2

    def test_bad_worker_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MFBO_WORKERS", "zero")
        assert cli.main(["run", write_config(tmp_path, levy_config(tmp_path / "o"))]) == 2

    def test_failed_trial_recorded(self, tmp_path, capsys):
        script = tmp_path / "solver.py"
        script.write_text("import json, sys\n"
                          "for i, line in enumerate(sys.stdin):\n"
                          "    x = json.loads(line)['x']\n"
                          "    print(json.dumps({'error': 'diverged'} if i >= 4 else {'f': sum(x)}), flush=True)\n")
        ext = {"external": {"command": [sys.executable, str(script)], "lower": [0.0], "upper": [1.0],
                            "costs": [1.0], "timeout": 10}}
        cfg = levy_config(tmp_path / "o", benchmark=ext, strategy="alg1", initial=[3], K=3)
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 1
        table = (tmp_path / "o" / "trials.csv").read_text()
        assert "diverged" in table and table.count("evaluation failed") == 2

    @pytest.mark.parametrize("strategy,bench,init,acq", [
        ("alg1", "quadratic1d", [3], "ei"),
        ("alg2-ts", "quadratic1d", [3], "ei"),
        ("alg4", "linear-mf", [3, 2], "ei"),
        ("alg5", "linear-mf", [3, 2], "ei"),
        ("alg6", "al-toy", [3], "ei"),
        ("alg3", "cei-toy", [4], "cei"),
    ])
    def test_every_strategy(self, tmp_path, strategy, bench, init, acq):
        cfg = levy_config(tmp_path / "o", benchmark=bench, strategy=strategy, initial=init, K=2, trials=1,
                          acquisition={"name": acq, "n_features": 200})
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
        assert (tmp_path / "o" / "summary.csv").exists()


class TestSummarize:
    def test_single_trace(self, tmp_path):
        write_trace(tmp_path / "trace_000.csv", [3.0, 2.0, 2.0])
        rows = cli.summarize(str(tmp_path))
        for (i, med, lo, hi, n), v in zip(rows, [3.0, 2.0, 2.0]):
            assert med == lo == hi == v and n == 1

    def test_three_traces(self, tmp_path):
        for t, v in enumerate([1.0, 3.0, 2.0]):
            write_trace(tmp_path / f"trace_{t:03d}.csv", [v, v], trial=t)
        (i, med, lo, hi, n) = cli.summarize(str(tmp_path))[0]
        assert (med, lo, hi, n) == (2.0, 1.5, 2.5, 3)

    def test_against_independent_percentiles(self, tmp_path):
        rng = np.random.default_rng(0)
        data = np.minimum.accumulate(rng.random((7, 9)), axis=1)
        for t, row in enumerate(data):
            write_trace(tmp_path / f"trace_{t:03d}.csv", [float(v) for v in row], trial=t)

        def pct(v, q):
            s = sorted(v)
            h = (len(s) - 1) * q
            lo = int(h)
            return s[lo] + (h - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])

        for i, med, lo, hi, n in cli.summarize(str(tmp_path)):
            col = data[:, i]
            assert (med, lo, hi) == (pct(col, 0.5), pct(col, 0.25), pct(col, 0.75))
            assert lo <= med <= hi

    def test_log_error_metric(self, tmp_path):
        write_trace(tmp_path / "trace_000.csv", [1.5, 1.1])
        (tmp_path / "run.json").write_text(json.dumps({"f_star": 1.0}))
        rows = cli.summarize(str(tmp_path))
        assert rows[0][1] == pytest.approx(np.log(0.5)) and rows[1][1] == pytest.approx(np.log(0.1))

    def test_unequal_lengths(self, tmp_path):
        write_trace(tmp_path / "trace_000.csv", [3.0, 2.0, 1.0])
        write_trace(tmp_path / "trace_001.csv", [3.0, 2.0], trial=1)
        with pytest.warns(UserWarning, match="truncating"):
            rows = cli.summarize(str(tmp_path))
        assert len(rows) == 2

    def test_empty_dir(self, tmp_path, capsys):
        assert cli.main(["summarize", str(tmp_path)]) == 1
        assert "no trace files" in capsys.readouterr().err


class TestAirfoil:
    def test_naca(self, tmp_path):
        out = tmp_path / "naca.dat"
        assert cli.main(["airfoil", "naca4", "0.02", "0.4", "0.12", "--closed-te", "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 199
        assert float(lines[0].split()[0]) == pytest.approx(1.0, abs=1e-12)
        assert float(lines[-1].split()[0]) == pytest.approx(1.0, abs=1e-12)
        assert float(lines[99].split()[0]) == 0.0

    def test_naca_open_trailing_edge(self, tmp_path):
        out = tmp_path / "naca.dat"
        assert cli.main(["airfoil", "naca4", "0.02", "0.4", "0.12", "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 199
        assert abs(float(lines[0].split()[0]) - 1.0) < 1e-3

    def test_parsec_midpoint(self, capsys):
        assert cli.main(["airfoil", "parsec", "--midpoint", "--points", "50"]) == 0
        cap = capsys.readouterr()
        res = float(cap.err.split("residual = ")[1].split()[0])
        assert res < 1e-10 and "a_u = " in cap.err
        assert len(cap.out.splitlines()) == 99

    def test_out_of_bounds(self, capsys):
        assert cli.main(["airfoil", "naca4", "0.02", "0.4", "0.5"]) == 2
        assert "t_max" in capsys.readouterr().err

    def test_list_benchmarks(self, capsys):
        assert cli.main(["list-benchmarks"]) == 0
        out = capsys.readouterr().out
        assert "levy2d" in out and "hartmann6" in out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mfbo", "list-benchmarks"], capture_output=True, text=True)
    assert r.returncode == 0 and "levy2d" in r.stdout


@pytest.mark.parametrize("name", sorted(os.listdir(os.path.join(os.path.dirname(__file__), "..", "configs"))))
def test_shipped_configs_validate(name):
    path = os.path.join(os.path.dirname(__file__), "..", "configs", name)
    cfg = cli.load_config(path)
    assert cfg.trials in (10, 20)
