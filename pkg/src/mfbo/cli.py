"""Command line interface.

``mfbo run CONFIG.json``
    run the configured trials, write one trace per trial and a summary;
``mfbo summarize DIR``
    (re)build ``summary.csv`` from the traces in a directory;
``mfbo airfoil naca4|parsec ...``
    write airfoil coordinates;
``mfbo list-benchmarks``
    show the built-in problems.

The worker count for ``run`` comes from the ``MFBO_WORKERS`` environment
variable (default 1).
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acquisition import ACQUISITIONS
from .benchmarks import (GeometryError, Naca4Params, ParsecParams, format_selig, get_benchmark,
                         list_benchmarks, naca4_geometry, parsec_coefficients, parsec_geometry)
from .benchmarks.external import close_problem, external_problem
from .optimize import (ALState, AcquisitionSpec, MaximizerConfig, run_augmented_lagrangian,
                       run_generic_bo, run_mf_heuristic, run_mf_no_fidelity, run_mf_sequential, run_ts)
from .surrogates import SURROGATES

SCHEMA_VERSION = 1
STRATEGIES = ("alg1", "alg2-ts", "alg3", "alg4", "alg5", "alg6")
SUMMARY_HEADER = "iteration,median,q25,q75,trials"
EXIT_VALIDATION = 2


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    benchmark: object
    strategy: str
    K: int
    initial: list
    output: str
    surrogate: str = "cokriging"
    acquisition: dict = field(default_factory=lambda: {"name": "ei"})
    trials: int = 1
    seed: int = 0
    costs: Optional[list] = None
    maximizer: dict = field(default_factory=dict)
    n_restarts: int = 10
    design: str = "random"
    al: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION


_KNOWN = set(ExperimentConfig.__dataclass_fields__)
_ACQ_KEYS = {"name", "tau", "w", "beta", "n_mc", "n_fantasy", "n_features"}
_MAX_KEYS = {"restarts", "steps", "tol", "polish", "fd_step"}
_AL_KEYS = {"rho", "eta1", "eta2", "inner_steps", "stall"}
_EXT_KEYS = {"command", "lower", "upper", "costs", "timeout", "name", "f_star"}


def _int(cfg, key, lo):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{key}: expected an integer >= {lo}, got {v!r}")
    return v


def _subkeys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {d!r}")
    bad = sorted(set(d) - allowed)
    if bad:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(bad)}")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON config."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(raw) - _KNOWN)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    for key in ("schema_version", "benchmark", "strategy", "K", "initial", "output"):
        if key not in raw:
            raise ConfigError(f"{key}: missing required field")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {raw['schema_version']!r} "
                          f"(expected {SCHEMA_VERSION})")
    cfg = ExperimentConfig(**raw)
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy: unknown strategy {cfg.strategy!r}; expected one of {', '.join(STRATEGIES)}")
    _int(raw, "K", 0)
    if "trials" in raw:
        _int(raw, "trials", 1)
    if "seed" in raw:
        _int(raw, "seed", 0)
    if "n_restarts" in raw:
        _int(raw, "n_restarts", 1)
    if cfg.surrogate not in SURROGATES:
        raise ConfigError(f"surrogate: unknown surrogate {cfg.surrogate!r}; expected one of {', '.join(SURROGATES)}")
    if cfg.design not in ("random", "lhs"):
        raise ConfigError(f"design: unknown initial design {cfg.design!r}")
    _subkeys(cfg.acquisition, _ACQ_KEYS, "acquisition")
    name = cfg.acquisition.get("name", "ei")
    if name not in ACQUISITIONS and name != "cei":
        raise ConfigError(f"acquisition.name: unknown acquisition {name!r}; expected one of "
                          f"{', '.join(sorted(ACQUISITIONS) + ['cei'])}")
    _subkeys(cfg.maximizer, _MAX_KEYS, "maximizer")
    _subkeys(cfg.al, _AL_KEYS, "al")
    if not isinstance(cfg.output, str) or not cfg.output:
        raise ConfigError("output: expected a directory path")
    # the benchmark decides how many fidelities there are
    try:
        problem = build_problem(cfg)
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"benchmark: {exc}") from None
    close_problem(problem)
    init = cfg.initial
    if not isinstance(init, list) or not init or not all(isinstance(n, int) and not isinstance(n, bool) for n in init):
        raise ConfigError(f"initial: expected a list of integers, got {init!r}")
    single = cfg.strategy in ("alg1", "alg2-ts", "alg6")
    need = 1 if single else problem.T
    if len(init) != need:
        raise ConfigError(f"initial: strategy {cfg.strategy} needs {need} size(s), got {len(init)}")
    if any(n < 1 for n in init):
        raise ConfigError(f"initial: every used fidelity needs at least one point, got {init}")
    if cfg.strategy == "alg6" and not problem.constraints:
        raise ConfigError(f"strategy: alg6 needs a constrained benchmark, {problem.name!r} has none")
    if name == "cei" and cfg.strategy not in ("alg1", "alg3"):
        raise ConfigError("acquisition.name: cei is supported with strategies alg1 and alg3")
    if name == "cei" and not problem.constraints:
        raise ConfigError(f"acquisition.name: cei needs a constrained benchmark, {problem.name!r} has none")
    try:
        acquisition_spec(cfg)
        maximizer_config(cfg, 0)
        al_state(cfg, problem)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(raw)


def build_problem(cfg: ExperimentConfig):
    b = cfg.benchmark
    if isinstance(b, str):
        try:
            return get_benchmark(b, cfg.costs)
        except KeyError as exc:
            raise ConfigError(f"benchmark: {exc.args[0]}") from None
    if isinstance(b, dict) and set(b) == {"external"}:
        ext = b["external"]
        _subkeys(ext, _EXT_KEYS, "benchmark.external")
        for key in ("command", "lower", "upper", "costs"):
            if key not in ext:
                raise ConfigError(f"benchmark.external.{key}: missing required field")
        return external_problem(ext["command"], ext["lower"], ext["upper"], ext["costs"],
                                timeout=ext.get("timeout", 60.0), name=ext.get("name", "external"),
                                f_star=ext.get("f_star"))
    raise ConfigError(f"benchmark: expected a benchmark name or {{\"external\": {{...}}}}, got {b!r}")


def acquisition_spec(cfg: ExperimentConfig) -> AcquisitionSpec:
    return AcquisitionSpec(**cfg.acquisition)


def maximizer_config(cfg: ExperimentConfig, seed: int) -> MaximizerConfig:
    return MaximizerConfig(seed=seed, **cfg.maximizer)


def al_state(cfg: ExperimentConfig, problem) -> ALState:
    a = cfg.al
    return ALState(np.zeros(len(problem.constraints)), a.get("rho", 1.0), a.get("eta1", 1e-3), a.get("eta2", 1e-9))


# ---------------------------------------------------------------------------
# running

def run_trial(cfg: ExperimentConfig, trial: int):
    """Run one trial with seed ``cfg.seed + trial``; returns its RunTrace."""
    problem = build_problem(cfg)
    seed = cfg.seed + trial
    acq = acquisition_spec(cfg)
    mx = maximizer_config(cfg, 0)
    common = dict(trial=trial, maximizer=mx, n_restarts=cfg.n_restarts, design=cfg.design)
    s = cfg.strategy
    try:
        if s == "alg1":
            return run_generic_bo(problem, acq, cfg.K, cfg.initial[-1], seed, **common)
        if s == "alg2-ts":
            return run_ts(problem, cfg.K, cfg.initial[-1], seed, n_features=acq.n_features, **common)
        if s == "alg3":
            return run_mf_no_fidelity(problem, acq, cfg.K, cfg.initial, seed, surrogate=cfg.surrogate, **common)
        if s == "alg4":
            return run_mf_heuristic(problem, cfg.K, cfg.initial, seed, surrogate=cfg.surrogate, acq=acq, **common)
        if s == "alg5":
            return run_mf_sequential(problem, acq, cfg.K, cfg.initial, seed, surrogate=cfg.surrogate, **common)
        a = cfg.al
        return run_augmented_lagrangian(problem, cfg.K, cfg.initial[-1], seed, state=al_state(cfg, problem),
                                        inner_steps=a.get("inner_steps", 1), stall=a.get("stall", 5),
                                        acq=acq, **common)
    finally:
        close_problem(problem)


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_path(out: str, trial: int) -> str:
    return os.path.join(out, f"trace_{trial:03d}.csv")


def _trial_job(args):
    cfg, trial = args
    try:
        tr = run_trial(cfg, trial)
    except Exception as exc:  # recorded, the other trials go on
        return trial, f"failed: {type(exc).__name__}: {exc}", None
    _atomic_write(trace_path(cfg.output, trial), tr.to_csv())
    return trial, tr.status, tr.f_min


def n_workers() -> int:
    raw = os.environ.get("MFBO_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MFBO_WORKERS: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MFBO_WORKERS: expected a positive integer, got {raw!r}")
    return n


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list:
    """Run every trial, write traces, the trial table and the summary.  Returns per-trial statuses."""
    os.makedirs(cfg.output, exist_ok=True)
    for old in glob.glob(os.path.join(cfg.output, "trace_*.csv")):
        os.unlink(old)
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.trials)) as ex:
            results = list(ex.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    problem = build_problem(cfg)
    f_star = problem.f_star
    close_problem(problem)
    rows = ["trial,seed,status,f_min"]
    for trial, status, f_min in results:
        rows.append(f"{trial},{cfg.seed + trial},{_csv_field(status)},"
                    f"{'' if f_min is None else format(f_min, '.17g')}")
    _atomic_write(os.path.join(cfg.output, "trials.csv"), "\n".join(rows) + "\n")
    meta = {"benchmark": problem.name, "f_star": f_star, "trials": cfg.trials}
    _atomic_write(os.path.join(cfg.output, "run.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")
    if any(os.path.exists(trace_path(cfg.output, t)) for t, _, _ in results):
        write_summary(cfg.output)
    return [r[1] for r in results]


def _csv_field(s: str) -> str:
    return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\n') else s


# ---------------------------------------------------------------------------
# summaries

def read_trace(path: str):
    """Per-iteration best value (the last record of each iteration) of one trace file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["trial", "iteration", "fidelity"] or header[-3:] != ["f", "best_f", "cum_cost"]:
            raise ValueError(f"{path}: not a trace file")
        best = {}
        for row in reader:
            best[int(row[1])] = float(row[-2])
    its = sorted(best)
    if its != list(range(len(its))):
        raise ValueError(f"{path}: iterations are not consecutive")
    return np.array([best[i] for i in its])


def metric(best: np.ndarray, f_star: Optional[float]) -> np.ndarray:
    """``log(f_min - f*)`` when the optimum is known, raw ``f_min`` otherwise."""
    if f_star is None:
        return best.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.maximum(best - f_star, 1e-300))


def summarize(directory: str):
    """Rows ``(iteration, median, q25, q75, trials)`` from the trace files in ``directory``."""
    paths = sorted(glob.glob(os.path.join(directory, "trace_*.csv")))
    if not paths:
        raise FileNotFoundError(f"no trace files in {directory}")
    f_star = None
    meta = os.path.join(directory, "run.json")
    if os.path.exists(meta):
        with open(meta, encoding="utf-8") as fh:
            f_star = json.load(fh).get("f_star")
    series = [metric(read_trace(p), f_star) for p in paths]
    n = min(len(s) for s in series)
    if any(len(s) != n for s in series):
        warnings.warn(f"traces have unequal lengths; truncating to the shortest ({n} iterations)")
    M = np.vstack([s[:n] for s in series])
    q25, med, q75 = np.percentile(M, [25, 50, 75], axis=0, method="linear")
    return [(i, med[i], q25[i], q75[i], M.shape[0]) for i in range(n)]


def format_summary(rows) -> str:
    lines = [SUMMARY_HEADER]
    for i, med, lo, hi, n in rows:
        lines.append(f"{i},{med:.17g},{lo:.17g},{hi:.17g},{n}")
    return "\n".join(lines) + "\n"


def write_summary(directory: str) -> str:
    path = os.path.join(directory, "summary.csv")
    _atomic_write(path, format_summary(summarize(directory)))
    return path


# ---------------------------------------------------------------------------
# airfoils

def _airfoil(args) -> int:
    try:
        if args.kind == "naca4":
            if len(args.params) != 3:
                raise GeometryError("naca4 takes three parameters: c_max x_max t_max")
            geom = naca4_geometry(Naca4Params(*args.params), args.points, closed_te=args.closed_te)
        else:
            if args.midpoint:
                p = ParsecParams.midpoint()
            elif len(args.params) == 10:
                p = ParsecParams.from_design(args.params)
            elif len(args.params) == 11:
                p = ParsecParams(*args.params)
            else:
                raise GeometryError("parsec takes 10 design parameters (or 11 including dy_te), or --midpoint")
            au, al, res = parsec_coefficients(p)
            geom = parsec_geometry(p, args.points)
            print("a_u = " + " ".join(f"{v:.12g}" for v in au), file=sys.stderr)
            print("a_l = " + " ".join(f"{v:.12g}" for v in al), file=sys.stderr)
            print(f"residual = {res:.3e}", file=sys.stderr)
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    text = format_selig(geom)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="mfbo", description="Multi-fidelity Bayesian optimization toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the trials of a JSON experiment config")
    r.add_argument("config")
    s = sub.add_parser("summarize", help="rebuild summary.csv from trace files")
    s.add_argument("directory")
    a = sub.add_parser("airfoil", help="write airfoil coordinates (upper TE -> LE -> lower TE)")
    a.add_argument("kind", choices=("naca4", "parsec"))
    a.add_argument("params", nargs="*", type=float)
    a.add_argument("--points", type=int, default=100, help="points per surface (default 100)")
    a.add_argument("--closed-te", action="store_true", help="NACA: closed trailing edge")
    a.add_argument("--midpoint", action="store_true", help="PARSEC: use the midpoint of every bound")
    a.add_argument("-o", "--output", help="output file (default: standard output)")
    sub.add_parser("list-benchmarks", help="list the built-in problems")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        try:
            cfg = load_config(args.config)
            workers = n_workers()
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        statuses = run_experiment(cfg, workers)
        bad = [i for i, st in enumerate(statuses) if "failed" in st]
        for i in bad:
            print(f"trial {i}: {statuses[i]}", file=sys.stderr)
        return 1 if bad else 0
    if args.command == "summarize":
        try:
            path = write_summary(args.directory)
        except (FileNotFoundError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(path)
        return 0
    if args.command == "airfoil":
        return _airfoil(args)
    for name in list_benchmarks():
        b = get_benchmark(name)
        extra = f" f*={b.f_star:.6g}" if b.f_star is not None else ""
        cons = f" constraints={len(b.constraints)}" if b.constraints else ""
        print(f"{name}: dim={b.dim} fidelities={b.T} costs={[float(c) for c in b.costs]}{extra}{cons}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
