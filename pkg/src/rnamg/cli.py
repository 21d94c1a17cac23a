"""``amg`` command-line experiment runner.

Every run is described by one JSON document (``--config``); command-line
flags override individual keys of that document.  Rows are written as CSV
or JSON in configuration order, so identical configs give identical bytes.

Exit codes: 0 converged, 1 configuration error, 2 diverged or not converged.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .complexity import (TABLE1_COLUMNS, TABLE2_COLUMNS, SETUP_BUCKETS, rows_to_csv,
                         rows_to_json, setup_report)
from .cycle import ACCEL, solve
from .hierarchy import SetupOptions, setup
from .interpolation import InterpConfig
from .problems import ProblemSpec, export, generate
from .relaxation import RelaxConfig
from .strength import StrengthConfig

log = logging.getLogger("rnamg.cli")

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2

DEFAULTS = {
    "problem": {"kind": "poisson2d", "n": 32, "eps": None, "psi": 0.0, "nu": 0.3, "E": 1.0,
                "flow": "angle", "angle": 2 * math.pi / 7, "material": "constant",
                "aspect": 8, "matrix": None, "block_size": 1, "candidates": None,
                "rhs": None},
    "setup": {"method": "rn", "max_size": 20, "max_levels": 25, "candidate_sweeps": 4,
              "vector_flag": False, "sa_smoothing_steps": 1, "cf_theta": 0.25,
              "strength": {"measure": "evolution", "drop_tol": 4.0, "evolution_steps": 2,
                           "evolution_weighting": "spectral"},
              "interp": {"degree": 1, "prefilter": None, "postfilter": None,
                         "energy_iters": None, "krylov": None,
                         "candidate_relax": "gauss_seidel"}},
    "solve": {"tol": 1e-8, "max_iters": 100, "accel": "cg", "nu": [1, 1], "kind": "V",
              "relax": {"scheme": "sym_gauss_seidel", "weight": None, "sweeps": 1},
              "rhs": "problem"},
    "sweep": {"param": None, "values": []},
    "output": {"format": "csv", "path": None},
    "seed": 0,
    "jobs": 1,
}

# flag name -> (config path, type)
FLAGS = {
    "kind": ("problem.kind", str),
    "n": ("problem.n", int),
    "eps": ("problem.eps", float),
    "psi": ("problem.psi", float),
    "nu-poisson": ("problem.nu", float),
    "young": ("problem.E", float),
    "flow": ("problem.flow", str),
    "angle": ("problem.angle", float),
    "material": ("problem.material", str),
    "aspect": ("problem.aspect", int),
    "matrix": ("problem.matrix", str),
    "block-size": ("problem.block_size", int),
    "method": ("setup.method", str),
    "max-size": ("setup.max_size", int),
    "max-levels": ("setup.max_levels", int),
    "candidate-sweeps": ("setup.candidate_sweeps", int),
    "vector": ("setup.vector_flag", bool),
    "sa-steps": ("setup.sa_smoothing_steps", int),
    "cf-theta": ("setup.cf_theta", float),
    "strength": ("setup.strength.measure", str),
    "drop-tol": ("setup.strength.drop_tol", float),
    "evolution-steps": ("setup.strength.evolution_steps", int),
    "weighting": ("setup.strength.evolution_weighting", str),
    "degree": ("setup.interp.degree", int),
    "prefilter": ("setup.interp.prefilter", float),
    "postfilter": ("setup.interp.postfilter", float),
    "energy-iters": ("setup.interp.energy_iters", int),
    "krylov": ("setup.interp.krylov", str),
    "candidate-relax": ("setup.interp.candidate_relax", str),
    "tol": ("solve.tol", float),
    "max-iters": ("solve.max_iters", int),
    "accel": ("solve.accel", str),
    "nu": ("solve.nu", "pair"),
    "cycle": ("solve.kind", str),
    "relax": ("solve.relax.scheme", str),
    "relax-weight": ("solve.relax.weight", float),
    "relax-sweeps": ("solve.relax.sweeps", int),
    "rhs": ("solve.rhs", str),
    "param": ("sweep.param", str),
    "values": ("sweep.values", "list"),
    "format": ("output.format", str),
    "out": ("output.path", str),
    "seed": ("seed", int),
    "jobs": ("jobs", int),
}

# filter settings of the two setup-cost tables, in column order
TABLE1_FILTERS = [(None, None), (0.1, None), (0.2, None), (None, 0.1), (None, 0.2),
                  (0.1, 0.1), (0.2, 0.2)]
TABLE2_FILTERS = [(None, None), (0.2, None), (None, 0.2), (0.2, 0.2)]

SOLVE_COLUMNS = ("SC", "OC", "CC", "rho", "iterations", "converged") + SETUP_BUCKETS


_PI = re.compile(r"^(\d*\.?\d*)\*?pi(?:/(\d+\.?\d*))?$")


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _set(cfg: dict, path: str, value):
    keys = path.split(".")
    d = cfg
    for k in keys[:-1]:
        d = d[k]
    d[keys[-1]] = value


def _parse_value(raw: str, typ):
    # 'none' is a legal string value (accel), so strings only accept 'null'
    nulls = ("null",) if typ is str else ("none", "null", "-", "--")
    if raw.lower() in nulls:
        return None
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if typ == "pair":
        parts = [int(p) for p in raw.split(",")]
        if len(parts) != 2:
            raise ConfigError("--nu expects PRE,POST")
        return parts
    if typ == "list":
        return [_scalar(p) for p in raw.split(",") if p.strip()]
    if typ is float:
        v = _scalar(raw)
        if isinstance(v, (int, float)):
            return float(v)
        raise ValueError(f"not a number: {raw!r}")
    return typ(raw)


def _scalar(s: str):
    s = s.strip()
    if s.lower() in ("none", "null", "-", "--"):
        return None
    for t in (int, float):
        try:
            return t(s)
        except ValueError:
            pass
    m = _PI.match(s)
    if m:
        # angles such as 3pi/16
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    return s


@dataclass
class ExperimentConfig:
    problem: ProblemSpec | None
    matrix: dict
    setup: SetupOptions
    solve: dict
    output: dict
    seed: int
    sweep: dict
    jobs: int
    raw: dict


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a merged config dictionary."""
    try:
        p = dict(raw["problem"])
        matrix = {k: p.pop(k) for k in ("matrix", "block_size", "candidates", "rhs")}
        spec = None if matrix["matrix"] else ProblemSpec(**p)
        s = raw["setup"]
        st = StrengthConfig(**s["strength"])
        it = dict(s["interp"])
        it["candidate_relax"] = RelaxConfig(it["candidate_relax"])
        interp = InterpConfig(**it)
        opts = SetupOptions(max_size=s["max_size"], max_levels=s["max_levels"],
                            method=s["method"], strength=st, interp=interp,
                            candidate_sweeps=s["candidate_sweeps"], vector_flag=s["vector_flag"],
                            sa_smoothing_steps=s["sa_smoothing_steps"], cf_theta=s["cf_theta"])
        sv = raw["solve"]
        if sv["tol"] <= 0:
            raise ConfigError("solve.tol must be positive")
        if sv["accel"] not in ACCEL:
            raise ConfigError(f"unknown accel {sv['accel']!r}")
        if sv["kind"] not in ("V", "W"):
            raise ConfigError(f"unknown cycle kind {sv['kind']!r}")
        if sv["rhs"] not in ("problem", "random", "zero"):
            raise ConfigError("solve.rhs must be 'problem', 'random' or 'zero'")
        RelaxConfig(**sv["relax"])
        out = raw["output"]
        if out["format"] not in ("csv", "json"):
            raise ConfigError("output.format must be csv or json")
        if int(raw["jobs"]) < 1:
            raise ConfigError("jobs must be >= 1")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(spec, matrix, opts, sv, out, int(raw["seed"]), raw["sweep"],
                            int(raw["jobs"]), raw)


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        raw = _merge(raw, doc)
    for key, value in overrides.items():
        _set(raw, key, value)
    return build_config(raw)


# -- running -----------------------------------------------------------------

def _system(cfg: ExperimentConfig):
    from .io import read_matrix, read_vector

    if cfg.problem is not None:
        pb = generate(cfg.problem)
        return pb.A, pb.B, pb.B_hat, pb.rhs
    m = cfg.matrix
    try:
        A = read_matrix(m["matrix"], m["block_size"] or 1)
        B = None if m["candidates"] is None else np.loadtxt(m["candidates"], ndmin=2)
        rhs = np.ones(A.n_rows) if m["rhs"] is None else read_vector(m["rhs"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read system: {exc}") from None
    return A, B, None, rhs


def _rhs(cfg, A, rhs):
    mode = cfg.solve["rhs"]
    if mode == "problem":
        return rhs
    if mode == "zero":
        return np.zeros(A.n_rows)
    return np.random.default_rng(cfg.seed).standard_normal(A.n_rows)


def _solve_kwargs(cfg):
    sv = cfg.solve
    return dict(tol=sv["tol"], max_iters=sv["max_iters"], accel=sv["accel"],
                nu=tuple(sv["nu"]), kind=sv["kind"], relax=RelaxConfig(**sv["relax"]))


def _x0(cfg, A, mode):
    # a zero right-hand side needs a nonzero start
    if mode != "zero":
        return None
    return np.random.default_rng(cfg.seed).uniform(-1, 1, A.n_rows)


def run(cfg: ExperimentConfig) -> dict:
    """Set up and solve one configuration; returns a result row."""
    A, B, B_hat, rhs = _system(cfg)
    H = setup(A, B, B_hat, cfg.setup)
    b = _rhs(cfg, A, rhs)
    kw = _solve_kwargs(cfg)
    if kw["accel"] == "cg" and not H.symmetric:
        kw["accel"] = "gmres"
        log.info("non-symmetric system: using gmres acceleration")
    rep = solve(H, b, x0=_x0(cfg, A, cfg.solve["rhs"]), **kw)
    row = {
        "SC": H.ledger.setup_total(),
        "OC": rep.chi_oc,
        "CC": rep.chi_cc,
        "rho": rep.rho,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "diverged": rep.diverged,
        "levels": [L.A.n_rows for L in H.levels],
    }
    row.update(setup_report(H))
    return row


def _run_raw(raw: dict) -> dict:
    return run(build_config(raw))


def _run_many(raws: list, jobs: int) -> list:
    if jobs > 1 and len(raws) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_raw, raws))
    return [_run_raw(r) for r in raws]


def sweep_rows(cfg: ExperimentConfig) -> tuple[list, tuple]:
    param, values = cfg.sweep.get("param"), list(cfg.sweep.get("values") or [])
    if not param:
        if cfg.problem is not None and cfg.problem.kind == "rotated_aniso2d":
            param, values = "problem.psi", [k * math.pi / 16 for k in range(9)]
        else:
            raise ConfigError("sweep needs sweep.param and sweep.values")
    if "." not in param:
        param = {"psi": "problem.psi", "n": "problem.n", "eps": "problem.eps",
                 "prefilter": "setup.interp.prefilter", "postfilter": "setup.interp.postfilter",
                 "degree": "setup.interp.degree", "method": "setup.method"}.get(param, param)
    if not values:
        raise ConfigError("sweep.values is empty")
    raws = []
    for v in values:
        r = copy.deepcopy(cfg.raw)
        try:
            _set(r, param, v)
        except (KeyError, TypeError):
            raise ConfigError(f"unknown sweep parameter {param!r}") from None
        build_config(r)
        raws.append(r)
    rows = _run_many(raws, cfg.jobs)
    name = param.split(".")[-1]
    for v, row in zip(values, rows):
        row[name] = v
    return rows, (name,) + SOLVE_COLUMNS


def table_rows(cfg: ExperimentConfig, table: int) -> tuple[list, tuple]:
    filters = TABLE1_FILTERS if table == 1 else TABLE2_FILTERS
    raws = []
    for pre, post in filters:
        r = copy.deepcopy(cfg.raw)
        r["setup"]["interp"]["prefilter"] = pre
        r["setup"]["interp"]["postfilter"] = post
        raws.append(r)
    rows = _run_many(raws, cfg.jobs)
    for (pre, post), row in zip(filters, rows):
        row["prefilter"], row["postfilter"] = pre, post
    return rows, TABLE1_COLUMNS if table == 1 else TABLE2_COLUMNS


def _emit(cfg: ExperimentConfig, rows, columns, stream):
    if cfg.output["format"] == "json":
        text = rows_to_json([{k: r.get(k) for k in columns} for r in rows]) + "\n"
    else:
        text = rows_to_csv(rows, columns)
    path = cfg.output["path"]
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        stream.write(text)


def _status(rows) -> int:
    return EXIT_OK if all(r.get("converged", True) for r in rows) else EXIT_FAIL


# -- argument handling -------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, (path, _) in FLAGS.items():
        common.add_argument(f"--{flag}", dest=f"flag_{flag}", metavar="VALUE",
                            help=f"overrides {path}")
    ap = argparse.ArgumentParser(prog="amg", description="Root-node AMG experiment runner.")
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="write a test problem")
    g.add_argument("stem", help="output path without extension")
    sub.add_parser("setup", parents=[common], help="build a hierarchy and print its summary")
    sub.add_parser("solve", parents=[common], help="set up and solve one problem")
    sub.add_parser("sweep", parents=[common], help="solve over a list of parameter values")
    v = sub.add_parser("verify", parents=[common], help="run the dense oracle checks")
    v.add_argument("--quick", action="store_true", help="fewer random instances")
    r = sub.add_parser("report", parents=[common], help="filter study in the setup-cost table layouts")
    r.add_argument("--table", type=int, choices=(1, 2), default=1)
    return ap


def _overrides(args) -> dict:
    out = {}
    for flag, (path, typ) in FLAGS.items():
        raw = getattr(args, f"flag_{flag}", None)
        if raw is None:
            continue
        try:
            out[path] = _parse_value(raw, typ)
        except ValueError as exc:
            raise ConfigError(f"--{flag}: {exc}") from None
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "generate":
            if cfg.problem is None:
                raise ConfigError("generate needs a problem kind, not a matrix file")
            mtx, side = export(generate(cfg.problem), args.stem)
            print(mtx)
            print(side)
            return EXIT_OK
        if args.command == "setup":
            A, B, B_hat, _ = _system(cfg)
            H = setup(A, B, B_hat, cfg.setup)
            summary = H.summary()
            nu = cfg.solve["nu"]
            summary["cycle_complexity"] = H.cycle_complexity(*nu)
            print(json.dumps(summary, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "solve":
            row = run(cfg)
            _emit(cfg, [row], SOLVE_COLUMNS, sys.stdout)
            return _status([row])
        if args.command == "sweep":
            rows, cols = sweep_rows(cfg)
            _emit(cfg, rows, cols, sys.stdout)
            return _status(rows)
        if args.command == "report":
            rows, cols = table_rows(cfg, args.table)
            _emit(cfg, rows, cols, sys.stdout)
            return _status(rows)
        if args.command == "verify":
            from . import theory

            rep = theory.quick_suite(cfg.seed) if args.quick else theory.verify_suite(cfg.seed)
            text = theory.report_json(rep) + "\n"
            if cfg.output["path"]:
                with open(cfg.output["path"], "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK if rep["passed"] else EXIT_FAIL
    except ConfigError as exc:
        print(f"amg: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # argument errors raised while building or solving (e.g. a zero diagonal)
        print(f"amg: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
