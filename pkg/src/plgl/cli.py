"""Command-line front end: ``plgl <check-algebra|linearize|verify> --config PATH``.

Exit codes are 0 when every check passes, 1 when a residual exceeds its
tolerance and 2 for configuration, input or domain errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .fields import GaugeError
from .lie_core import AlgebraError
from .linearization import Numerics
from .matrix_groups import DomainError

log = logging.getLogger("plgl")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
CSV_VERSION = 1
MAX_RADIUS = 0.5

EXPERIMENTS = ("scaling-laws", "orbit-product", "addmult", "functoriality")
NUMERIC_KEYS = {"fd_step": float, "rk4_steps": int, "quad_nodes": int, "newton_tol": float,
                "moser_nodes": int}
DOMAIN_KEYS = {"radius": float, "samples": int, "seed": int}
PARAM_KEYS = {"tolerance": float, "r1": float, "r2": float, "threads": int, "slope": bool,
              "ts": list}
OUTPUT_KEYS = {"dir": str, "report": str, "samples": str}
TOP_KEYS = {"algebra", "numerics", "domain", "experiment", "params", "output"}

# (radius, samples, tolerance) when the config leaves them open
DEFAULTS = {
    "linearize": (0.2, 50, 1e-5),
    "scaling-laws": (0.2, 5, 1e-5),
    "orbit-product": (0.16, 100, 1e-6),
    "addmult": (0.1, 30, 1e-4),
    "functoriality": (0.15, 30, 1e-5),
    "check-algebra": (0.0, 0, 1e-10),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algebra: str
    numerics: Numerics = field(default_factory=Numerics)
    radius: Optional[float] = None
    samples: Optional[int] = None
    seed: int = 0
    experiment: Optional[str] = None
    params: dict = field(default_factory=dict)
    out_dir: Optional[str] = None
    report_name: str = "report.json"
    samples_name: str = "samples.csv"


def _typed(section: str, data, schema: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    out = {}
    for k, v in data.items():
        typ = schema[k]
        if typ is bool:
            if not isinstance(v, bool):
                raise ConfigError(f"{section}.{k} must be true or false")
        elif typ in (int, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{section}.{k} must be a number")
            if typ is int and float(v) != int(v):
                raise ConfigError(f"{section}.{k} must be an integer")
            v = typ(v)
        elif not isinstance(v, typ):
            raise ConfigError(f"{section}.{k} must be of type {typ.__name__}")
        out[k] = v
    return out


def parse_config(data, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a decoded JSON config; raises ConfigError on any problem."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    algebra = data.get("algebra")
    if not isinstance(algebra, str) or not algebra:
        raise ConfigError("'algebra' must be a builtin name or a file path")
    from .registry import BUILTINS
    if algebra not in BUILTINS and not Path(algebra).is_absolute():
        algebra = str(base_dir / algebra)
    num = _typed("numerics", data.get("numerics", {}), NUMERIC_KEYS)
    dom = _typed("domain", data.get("domain", {}), DOMAIN_KEYS)
    params = _typed("params", data.get("params", {}), PARAM_KEYS)
    out = _typed("output", data.get("output", {}), OUTPUT_KEYS)
    exp = data.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {list(EXPERIMENTS)}")
    out_dir = out.get("dir")
    if out_dir is not None and not Path(out_dir).is_absolute():
        out_dir = str(base_dir / out_dir)
    cfg = RunConfig(algebra=algebra, numerics=replace(Numerics(), **num),
                    radius=dom.get("radius"), samples=dom.get("samples"),
                    seed=dom.get("seed", 0), experiment=exp, params=params, out_dir=out_dir,
                    report_name=out.get("report", "report.json"),
                    samples_name=out.get("samples", "samples.csv"))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    n = cfg.numerics
    for k in NUMERIC_KEYS:
        if not getattr(n, k) > 0:
            raise ConfigError(f"numerics.{k} must be positive")
    if cfg.radius is not None and not 0 < cfg.radius <= MAX_RADIUS:
        raise ConfigError(f"domain.radius must lie in (0, {MAX_RADIUS}]")
    if cfg.samples is not None and cfg.samples <= 0:
        raise ConfigError("domain.samples must be positive")
    if cfg.seed < 0:
        raise ConfigError("domain.seed must be non-negative")
    p = cfg.params
    if "tolerance" in p and not p["tolerance"] > 0:
        raise ConfigError("tolerance must be positive")
    if "threads" in p and p["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    for k in ("r1", "r2"):
        if k in p and p[k] < 0:
            raise ConfigError(f"{k} must be non-negative")
    if "ts" in p:
        ts = p["ts"]
        if not ts or not all(isinstance(t, (int, float)) and not isinstance(t, bool)
                             and 0 < t <= 1 for t in ts):
            raise ConfigError("params.ts must be a non-empty list of numbers in (0, 1]")
    for name in (cfg.report_name, cfg.samples_name):
        if not name or Path(name).name != name:
            raise ConfigError(f"output file name {name!r} must be a bare file name")


def load_config(path: str) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e.msg} at line {e.lineno}") from None
    return parse_config(data, p.parent)


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    num = cfg.numerics
    if args.steps is not None:
        num = replace(num, rk4_steps=args.steps)
    params = dict(cfg.params)
    for k in ("tolerance", "threads", "r1", "r2"):
        v = getattr(args, k)
        if v is not None:
            params[k] = v
    cfg = replace(cfg, numerics=num, params=params,
                  experiment=args.experiment if args.experiment is not None else cfg.experiment,
                  radius=args.radius if args.radius is not None else cfg.radius,
                  samples=args.points if args.points is not None else cfg.samples,
                  seed=args.seed if args.seed is not None else cfg.seed,
                  out_dir=args.out if args.out is not None else cfg.out_dir)
    if cfg.experiment is not None and cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {list(EXPERIMENTS)}")
    validate(cfg)
    return cfg


def _settings(cfg: RunConfig, kind: str):
    radius, samples, tol = DEFAULTS[kind]
    return (cfg.radius if cfg.radius is not None else radius,
            cfg.samples if cfg.samples is not None else samples,
            cfg.params.get("tolerance", tol))


# --- commands --------------------------------------------------------------

def cmd_check_algebra(cfg: RunConfig):
    from .registry import invariant_suite
    tol = cfg.params.get("tolerance", DEFAULTS["check-algebra"][2])
    suite = invariant_suite(cfg.algebra, tol)
    rep = suite.report(tol)
    if suite.failure:
        print(f"check-algebra: {suite.failure}", file=sys.stderr)
        return EXIT_FAIL, rep, None
    return (EXIT_OK if rep.passed else EXIT_FAIL), rep, None


def _pipeline(cfg: RunConfig):
    from .registry import BUILTINS, resolve
    if BUILTINS.get(cfg.algebra) == "morphism":
        raise ConfigError("u1-into-u2 is a morphism bundle; use it with "
                          "--experiment functoriality")
    return resolve(cfg.algebra, cfg.numerics)


def cmd_linearize(cfg: RunConfig):
    from .theorems import verify_linearization
    p = _pipeline(cfg)
    radius, samples, tol = _settings(cfg, "linearize")
    rep = verify_linearization(p, points=samples, radius=radius, seed=cfg.seed, tol=tol,
                               threads=cfg.params.get("threads", 1),
                               slope=cfg.params.get("slope", False))
    return (EXIT_OK if rep.passed else EXIT_FAIL), rep, _linearize_rows(rep)


def cmd_verify(cfg: RunConfig):
    from . import theorems as th
    from .registry import BUILTINS, resolve
    exp = cfg.experiment
    if exp is None:
        raise ConfigError(f"verify needs an experiment; choose from {list(EXPERIMENTS)}")
    radius, samples, tol = _settings(cfg, exp)
    threads = cfg.params.get("threads", 1)
    if exp == "functoriality":
        if BUILTINS.get(cfg.algebra) == "morphism":
            mor = resolve(cfg.algebra, cfg.numerics)
        else:
            mor = th.identity_morphism(resolve(cfg.algebra, cfg.numerics))
        reps = [th.verify_functoriality(mor, points=samples, radius=radius, seed=cfg.seed,
                                        tol=tol, threads=threads, name=mor.name)]
        if not mor.identity:
            ctrl = th.identity_morphism(mor.p2)
            reps.append(th.verify_functoriality(ctrl, points=samples, radius=radius,
                                                seed=cfg.seed, tol=1e-10, threads=threads,
                                                certificate_points=0, name="identity-control"))
        rep = th.merge_reports("functoriality", reps) if len(reps) > 1 else reps[0]
    else:
        p = _pipeline(cfg)
        if exp == "scaling-laws":
            rep = th.verify_scaling_laws(p, ts=tuple(cfg.params.get("ts", (0.25, 0.5, 0.75))),
                                         points=samples, radius=radius, seed=cfg.seed, tol=tol)
        elif exp == "orbit-product":
            rep = th.orbit_product_check(p, r1=cfg.params.get("r1", 0.06),
                                         r2=cfg.params.get("r2", 0.1), samples=samples,
                                         seed=cfg.seed, tol=tol)
        else:
            rep = th.verify_addmult(p, points=samples, radius=radius, seed=cfg.seed, tol=tol,
                                    threads=threads)
    return (EXIT_OK if rep.passed else EXIT_FAIL), rep, None


COMMANDS = {"check-algebra": cmd_check_algebra, "linearize": cmd_linearize, "verify": cmd_verify}


# --- output ------------------------------------------------------------------

def _check_row(c) -> list:
    return [c.id, repr(c.max_residual), repr(c.mean_residual), repr(c.tolerance),
            "pass" if c.passed else "fail"]


def _linearize_rows(rep):
    t = rep.table
    if not t:
        return None
    n = t["mu"].shape[1]
    header = (["index"] + [f"mu_{i}" for i in range(n)] + [f"exp_{i}" for i in range(n)]
              + [f"F1_{i}" for i in range(n)] + ["pushforward_residual"])
    rows = [[k] + [repr(float(v)) for v in np.r_[t["mu"][k], t["exp"][k], t["F1"][k]]]
            + [repr(float(t["point_residuals"][k]))] for k in range(len(t["mu"]))]
    return header, rows


def write_outputs(cfg: RunConfig, rep, rows) -> None:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / cfg.report_name).write_text(rep.to_json() + "\n", encoding="utf-8")
        if rows is None:
            header = ["check", "max_residual", "mean_residual", "tolerance", "verdict"]
            body = [_check_row(c) for c in rep.checks]
            kind = "checks"
        else:
            header, body = rows
            kind = "points"
        with open(out / cfg.samples_name, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# plgl samples v{CSV_VERSION} ({kind}): {','.join(header)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(body)
    except OSError as e:
        raise ConfigError(f"cannot write outputs to {out}: {e.strerror or e}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plgl", description="Poisson linearization of dual "
                                 "Poisson-Lie groups: algebra checks and numerical verdicts.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--experiment", help=f"one of {', '.join(EXPERIMENTS)} (verify only)")
    ap.add_argument("--tolerance", type=float)
    ap.add_argument("--steps", type=int, help="RK4 steps of the Moser flow")
    ap.add_argument("--radius", type=float, help="sample ball radius")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--points", type=int, help="number of sample points")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", help="directory for report.json and samples.csv")
    ap.add_argument("--r1", type=float, help="first orbit radius (orbit-product)")
    ap.add_argument("--r2", type=float, help="second orbit radius (orbit-product)")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("PLGL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        code, rep, rows = COMMANDS[args.command](cfg)
        if cfg.out_dir is not None:
            write_outputs(cfg, rep, rows)
    except (ConfigError, AlgebraError, DomainError, GaugeError, FileNotFoundError) as e:
        print(f"plgl: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"plgl: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, TypeError, np.linalg.LinAlgError) as e:
        log.debug("input rejected", exc_info=True)
        print(f"plgl: error: invalid input: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(rep.to_json())
    for c in rep.checks:
        if not c.passed:
            print(f"FAIL {c.id}: {c.max_residual:.3e} > {c.tolerance:.1e}", file=sys.stderr)
    return code


def main(argv=None) -> None:
    _setup_logging()
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
