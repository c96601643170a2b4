"""Reproducible experiment runner.

Subcommands
-----------
run <config>      seeded ensemble, CSV tables and a JSON sidecar
rates <csv>       log-log slope of one metric against its reference exponent
verify            acceptance suite
gap <config>      oracle dual gap of the saved averaged iterates

Exit codes: 0 success, 1 failed verification, 2 invalid input, 3 divergence.
"""
import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, DivergenceError, SviError, UsageError
from .metrics import RunRecord, aggregate, fit_power_law
from .problems import PROBLEMS, get_problem
from .solver_tyk import TykSchedule, run_tyk, validate_tyk_assumptions
from .solver_ws import WsSchedule, compute_k0, run_ws, validate_ws_assumptions

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "write_ensemble_csv",
    "write_seeds_csv",
    "read_ensemble_csv",
    "ensemble_threads",
    "main",
]

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3

ENSEMBLE_HEADER = ["k", "metric", "mean", "stderr", "n_seeds"]
SEEDS_HEADER = ["seed", "k", "metric", "value"]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> parser; the problem section also accepts the
# parameters of the chosen problem (see PROBLEMS)
SCHEMA = {
    "problem": {"name": str},
    "solver": {"method": str},
    "schedule": {
        "kind": str,
        "theta": float,
        "lam": float,
        "beta": float,
        "alpha": float,
        "horizon": int,
        "delta": float,
        "C": _floats,
        "D": _floats,
        "s_alpha": float,
        "s_eps": float,
    },
    "run": {
        "k_max": int,
        "seeds": int,
        "seed_base": int,
        "seed_list": _ints,
        "per_decade": int,
        "x0": _floats,
        "use_kernel": _bool,
        "validate": _bool,
    },
    "output": {"path": str, "save_iterates": _bool},
}
REQUIRED = {"problem": ("name",), "solver": ("method",), "schedule": ("kind",)}
RUN_DEFAULTS = {"k_max": 1000, "seeds": 1, "seed_base": 0, "per_decade": 10, "use_kernel": True, "validate": True}
WS_KINDS = ("robust", "constant", "horizon", "sqrt")


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _problem_schema(name):
    if name not in PROBLEMS:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    types = {"name": str}
    types.update(PROBLEMS[name][1])
    return types


@dataclass
class ExperimentConfig:
    """Parsed experiment file: typed values per section.

    Only keys present in the file are stored, so writing the config back
    reproduces it exactly (up to formatting). Unknown sections or keys,
    duplicates and malformed values raise ConfigurationError.
    """

    sections: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text):
        parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="__default__")
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigurationError(f"cannot parse config: {err}") from None
        if parser.defaults():
            raise ConfigurationError("a default section is not allowed")
        raw = {sec: dict(parser.items(sec)) for sec in parser.sections()}
        return cls.from_raw(raw)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigurationError(f"cannot read config: {err}") from None
        return cls.from_text(text)

    @classmethod
    def from_raw(cls, raw):
        """Build from section -> key -> string."""
        unknown = set(raw) - set(SCHEMA)
        if unknown:
            raise ConfigurationError(f"unknown sections: {sorted(unknown)}")
        for sec, keys in REQUIRED.items():
            for key in keys:
                if key not in raw.get(sec, {}):
                    raise ConfigurationError(f"missing required key [{sec}] {key}")
        sections = {}
        for sec, items in raw.items():
            types = _problem_schema(items["name"].strip()) if sec == "problem" else SCHEMA[sec]
            typed = {}
            for key, text in items.items():
                if key not in types:
                    raise ConfigurationError(f"unknown key [{sec}] {key}")
                try:
                    typed[key] = types[key](text.strip()) if types[key] is not str else text.strip()
                except ValueError as err:
                    raise ConfigurationError(f"bad value for [{sec}] {key}: {err}") from None
            sections[sec] = typed
        cfg = cls(sections)
        cfg.check()
        return cfg

    def check(self):
        """Semantic checks that do not need building the problem."""
        method = self.get("solver", "method")
        kind = self.get("schedule", "kind")
        if method not in ("ws", "tyk"):
            raise ConfigurationError("solver method must be 'ws' or 'tyk'")
        allowed = WS_KINDS + (("asynchronous",) if method == "tyk" else ())
        if kind not in allowed:
            raise ConfigurationError(f"schedule kind for {method} must be one of {allowed}")
        run = self.resolved_run()
        if run["k_max"] < 0 or run["seeds"] < 1 or run["per_decade"] < 1:
            raise ConfigurationError("k_max must be >= 0, seeds and per_decade >= 1")
        for sec, items in self.sections.items():
            for key, v in items.items():
                if isinstance(v, str) and (not v or any(c in v for c in "\n;#") or v != v.strip()):
                    raise ConfigurationError(f"value of [{sec}] {key} cannot be stored")
                if isinstance(v, float) and not math.isfinite(v):
                    raise ConfigurationError(f"value of [{sec}] {key} must be finite")

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def resolved_run(self):
        out = dict(RUN_DEFAULTS)
        out.update(self.sections.get("run", {}))
        return out

    def seeds(self):
        run = self.resolved_run()
        if "seed_list" in run:
            seeds = [int(s) for s in run["seed_list"]]
            if len(set(seeds)) != len(seeds) or any(s < 0 for s in seeds):
                raise ConfigurationError("seed_list must hold distinct nonnegative seeds")
            return sorted(seeds)
        if run["seed_base"] < 0:
            raise ConfigurationError("seed_base must be nonnegative")
        return [run["seed_base"] + i for i in range(run["seeds"])]

    def with_overrides(self, seeds=None, seed_base=None, out=None):
        sections = {sec: dict(items) for sec, items in self.sections.items()}
        run = sections.setdefault("run", {})
        if seeds is not None or seed_base is not None:
            run.pop("seed_list", None)
        if seeds is not None:
            run["seeds"] = int(seeds)
        if seed_base is not None:
            run["seed_base"] = int(seed_base)
        if out is not None:
            sections.setdefault("output", {})["path"] = str(out)
        cfg = ExperimentConfig(sections)
        cfg.check()
        return cfg

    def to_text(self):
        lines = []
        for sec in SCHEMA:
            if sec not in self.sections:
                continue
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {_format_value(v)}" for k, v in self.sections[sec].items())
            lines.append("")
        return "\n".join(lines)

    def as_dict(self):
        return {sec: dict(items) for sec, items in self.sections.items()}


def ensemble_threads():
    """Width of the ensemble thread pool from ``SVI_THREADS`` (default: CPU count)."""
    raw = os.environ.get("SVI_THREADS")
    if raw is None or not raw.strip():
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError("SVI_THREADS must be a positive integer") from None
    if n < 1:
        raise ConfigurationError("SVI_THREADS must be a positive integer")
    return n


def _build_schedule(cfg, m):
    method = cfg.get("solver", "method")
    sec = cfg.sections.get("schedule", {})
    kind = sec["kind"]
    beta = sec.get("beta", 1.0)
    allowed = {
        "robust": {"theta", "lam", "beta"},
        "constant": {"theta", "alpha", "beta"},
        "horizon": {"theta", "horizon", "beta"},
        "sqrt": {"theta", "beta"},
        "asynchronous": {"delta", "C", "D", "beta", "s_alpha", "s_eps"},
    }[kind]
    extra = set(sec) - allowed - {"kind"}
    if extra:
        raise ConfigurationError(f"schedule kind {kind} does not take {sorted(extra)}")
    if kind == "asynchronous":
        for key in ("delta", "C", "D"):
            if key not in sec:
                raise ConfigurationError(f"asynchronous schedule needs {key}")
        return TykSchedule.asynchronous(sec["delta"], sec["C"], sec["D"], beta, sec.get("s_alpha", 1.0),
                                        sec.get("s_eps", 1.0))
    theta = sec.get("theta", 1.0)
    if kind == "robust":
        ws = WsSchedule.robust(theta, sec.get("lam", 1.0), beta)
    elif kind == "constant":
        if "alpha" not in sec:
            raise ConfigurationError("constant schedule needs alpha")
        ws = WsSchedule.constant(theta, sec["alpha"], beta)
    elif kind == "horizon":
        if "horizon" not in sec:
            raise ConfigurationError("horizon schedule needs horizon")
        ws = WsSchedule.fixed_horizon(theta, sec["horizon"], beta)
    else:
        ws = WsSchedule.sqrt(theta, beta)
    return TykSchedule.from_ws(ws, m) if method == "tyk" else ws


@dataclass
class ExperimentResult:
    """Records, ensemble and sidecar of one experiment.

    ``ensemble`` aggregates the common grid prefix when a seed diverged;
    ``diverged`` lists (seed, iteration) pairs.
    """

    config: ExperimentConfig
    entry: object
    schedule: object
    records: list
    ensemble: object
    diverged: list
    sidecar: dict


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (frozenset, set)):
        return sorted(v)
    return v


def reference_exponents(method, schedule):
    """Theoretical slopes of the metrics for a solver/schedule pair."""
    if method == "ws":
        return {"feas_sq_erg": -1.0, "dist_sol_erg": -0.5}
    if schedule.kind == "asynchronous":
        return {"gap_erg": -(0.5 - schedule.params["delta"])}
    return {}


def build(cfg):
    """Problem entry and schedule described by ``cfg``."""
    params = {k: v for k, v in cfg.sections["problem"].items() if k != "name"}
    try:
        entry = get_problem(cfg.get("problem", "name"), **params)
    except UsageError as err:
        raise ConfigurationError(str(err)) from None
    schedule = _build_schedule(cfg, entry.spec.layout.m)
    return entry, schedule


def _constants(cfg, entry, schedule):
    consts = {k: v for k, v in entry.constants.items() if k not in ("halfspaces", "cost")}
    consts["L"] = float(entry.problem.lipschitz_L)
    if entry.spec.regularity_c is not None:
        consts["c"] = list(entry.spec.regularity_c)
    if entry.solution.sharpness_rho is not None:
        consts["rho"] = entry.solution.sharpness_rho
    if cfg.get("solver", "method") == "ws" and schedule.kind == "robust":
        consts["k0"] = compute_k0(1.5, schedule.theta, max(consts["L"], 0.0), schedule.beta, 0.5, schedule.lam)
        consts["k0_params"] = {"tau": 1.5, "phi": 0.5}
    return consts


def _verdicts(cfg, entry, schedule):
    if cfg.get("solver", "method") == "ws":
        return validate_ws_assumptions(entry.problem, entry.spec, schedule)
    if schedule.kind == "asynchronous":
        return validate_tyk_assumptions(schedule)
    return None


def run_experiment(cfg, threads=None, save_iterates=None):
    """Run every seed of ``cfg`` (in parallel) and aggregate.

    Records are collected and sorted by seed before any output, so the
    result does not depend on the thread count.
    """
    entry, schedule = build(cfg)
    run = cfg.resolved_run()
    method = cfg.get("solver", "method")
    x0 = np.array(run["x0"], dtype=np.float64) if "x0" in run else entry.x0
    if x0.size != entry.spec.layout.n:
        raise ConfigurationError("x0 has the wrong dimension")
    if not entry.spec.in_hard(x0, 1e-10):
        raise ConfigurationError("x0 must lie in the hard set")
    save = cfg.get("output", "save_iterates", False) if save_iterates is None else save_iterates
    seeds = cfg.seeds()

    def one(seed):
        kw = dict(k_max=run["k_max"], seed=seed, x0=x0, per_decade=run["per_decade"],
                  use_kernel=run["use_kernel"], save_iterates=save)
        try:
            if method == "ws":
                return run_ws(entry.problem, entry.spec, schedule, **kw), None
            return run_tyk(entry.problem, entry.spec, schedule, **kw), None
        except DivergenceError as err:
            return err.partial, err.iteration

    threads = threads or ensemble_threads()
    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(seeds))) as pool:
            outcomes = list(pool.map(one, seeds))
    else:
        outcomes = [one(s) for s in seeds]
    records = [rec for rec, _ in outcomes]
    diverged = [(s, it) for s, (_, it) in zip(seeds, outcomes) if it is not None]
    common = min(r.grid.size for r in records)
    ensemble = aggregate([r.truncated(common) for r in records]) if common > 0 else None
    verdicts = _verdicts(cfg, entry, schedule) if run["validate"] else None
    sidecar = {
        "config": cfg.as_dict(),
        "problem": {"name": entry.name, "tags": entry.tags, "noise": entry.noise},
        "solver": method,
        "schedule": schedule.descriptor(),
        "seeds": seeds,
        "k_max": run["k_max"],
        "verdicts": verdicts,
        "constants": _constants(cfg, entry, schedule),
        "reference_exponents": reference_exponents(method, schedule),
        "diverged": [{"seed": s, "iteration": it} for s, it in diverged],
    }
    return ExperimentResult(cfg, entry, schedule, records, ensemble, diverged, _jsonable(sidecar))


def _fmt(v):
    return format(float(v), ".17g")


def write_ensemble_csv(path, ensemble):
    """Table k,metric,mean,stderr,n_seeds sorted by k then metric."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ENSEMBLE_HEADER)
        if ensemble is None:
            return
        for i, k in enumerate(ensemble.grid):
            for name in ensemble.metric_names:
                w.writerow([int(k), name, _fmt(ensemble.mean[name][i]), _fmt(ensemble.stderr[name][i]),
                            ensemble.n_seeds])


def write_seeds_csv(path, records, key="metrics"):
    """Long table seed,k,metric,value sorted by seed, k and metric."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SEEDS_HEADER)
        for rec in sorted(records, key=lambda r: r.seed):
            table = getattr(rec, key)
            for i, k in enumerate(rec.grid):
                for name in sorted(table):
                    vals = np.atleast_1d(table[name][i])
                    for j, v in enumerate(vals):
                        label = name if vals.size == 1 and key == "metrics" else f"{name}[{j}]"
                        w.writerow([rec.seed, int(k), label, _fmt(v)])


def write_json(path, data):
    with open(path, "w", newline="") as f:
        f.write(json.dumps(data, sort_keys=True, indent=2))
        f.write("\n")


def read_ensemble_csv(path):
    """Parse a table written by :func:`write_ensemble_csv`.

    Returns
    -------
    dict
        metric -> (k array, mean array, stderr array, n_seeds).

    Raises
    ------
    DataError
        When the file is missing, has a different header or bad rows.
    """
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from None
    if not rows or rows[0] != ENSEMBLE_HEADER:
        raise DataError(f"{path} does not have the header {','.join(ENSEMBLE_HEADER)}")
    table = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields")
        try:
            k, name, mean, se, n = int(row[0]), row[1], float(row[2]), float(row[3]), int(row[4])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed row") from None
        table.setdefault(name, []).append((k, mean, se, n))
    out = {}
    for name, vals in table.items():
        vals.sort()
        arr = np.array([v[:3] for v in vals], dtype=np.float64)
        out[name] = (arr[:, 0], arr[:, 1], arr[:, 2], vals[0][3])
    return out


def _output_prefix(cfg, config_path):
    path = cfg.get("output", "path")
    if path is None:
        return Path(config_path).with_suffix("")
    return Path(path)


def cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config).with_overrides(args.seeds, args.seed_base, args.out)
    prefix = _output_prefix(cfg, args.config)
    result = run_experiment(cfg)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(f"{prefix}.csv", result.ensemble)
    write_seeds_csv(f"{prefix}.seeds.csv", result.records)
    if cfg.get("output", "save_iterates", False):
        write_seeds_csv(f"{prefix}.iterates.csv", result.records, key="iterates")
    write_json(f"{prefix}.json", result.sidecar)
    if result.diverged:
        for seed, it in result.diverged:
            print(f"seed {seed} diverged at k={it}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {prefix}.csv, {prefix}.seeds.csv and {prefix}.json")
    return EXIT_OK


def cmd_rates(args):
    table = read_ensemble_csv(args.csv)
    if args.metric not in table:
        raise DataError(f"metric {args.metric!r} not in {args.csv}; have {sorted(table)}")
    k, mean, _, n = table[args.metric]
    sel = (k >= args.kmin) & (k > 0)
    if args.kmax is not None:
        sel &= k <= args.kmax
    fit = fit_power_law(k[sel], mean[sel])
    print(f"metric={args.metric} points={fit.n_points} n_seeds={n} k=[{int(k[sel][0])},{int(k[sel][-1])}]")
    print(f"slope={fit.slope:.6f} intercept={fit.intercept:.6f} r2={fit.r2:.6f}")
    ref = None
    sidecar = Path(args.csv).with_suffix(".json")
    if sidecar.exists():
        try:
            ref = json.loads(sidecar.read_text()).get("reference_exponents", {}).get(args.metric)
        except (OSError, ValueError):
            ref = None
    if ref is None:
        ref = {"feas_sq_erg": -1.0, "dist_sol_erg": -0.5}.get(args.metric)
    if ref is None:
        print("reference=none")
    else:
        ok = fit.slope <= ref + args.tolerance
        print(f"reference={ref:.6f} verdict={'PASS' if ok else 'FAIL'} (slope <= reference + {args.tolerance:g})")
    return EXIT_OK


def cmd_verify(args):
    from . import acceptance

    only = _ints(args.only) if args.only else None
    results = acceptance.run_all(only=only, stream=sys.stdout)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_gap(args):
    from .oracles import gap_value

    cfg = ExperimentConfig.from_file(args.config).with_overrides(args.seeds, args.seed_base, args.out)
    prefix = _output_prefix(cfg, args.config)
    result = run_experiment(cfg, save_iterates=True)
    entry = result.entry
    X = entry.spec.feasible_box if entry.spec.feasible_box is not None else entry.vertices
    if X is None:
        raise ConfigurationError("problem has no compact description of X for the gap oracle")
    gap_records = []
    for rec in result.records:
        vals = {
            "gap_hat": np.array([gap_value(entry.problem, X, x) for x in rec.iterates["x_hat"]]),
            "gap_last": np.array([gap_value(entry.problem, X, entry.spec.feasible_projection(x))
                                  for x in rec.iterates["x"]]),
        }
        gap_records.append(RunRecord(rec.seed, rec.schedule, rec.grid, vals))
    common = min(r.grid.size for r in gap_records)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(f"{prefix}.gap.csv", aggregate([r.truncated(common) for r in gap_records]))
    write_seeds_csv(f"{prefix}.gap.seeds.csv", gap_records)
    print(f"wrote {prefix}.gap.csv and {prefix}.gap.seeds.csv")
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="sviproj", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("run", cmd_run, "run a seeded ensemble"),
                               ("gap", cmd_gap, "oracle gap of averaged iterates")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        sp.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
        sp.add_argument("--seed-base", type=int, help="first seed (overrides the config)")
        sp.add_argument("--out", help="output prefix (overrides the config)")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("rates", help="fit a power law to one metric of an ensemble CSV")
    sp.add_argument("csv")
    sp.add_argument("--metric", required=True)
    sp.add_argument("--kmin", type=int, default=100)
    sp.add_argument("--kmax", type=int, default=None)
    sp.add_argument("--tolerance", type=float, default=0.2,
                    help="PASS when slope <= reference + tolerance")
    sp.set_defaults(func=cmd_rates)
    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("--only", help="comma-separated criterion numbers")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SviError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL
