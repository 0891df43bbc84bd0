"""Command-line front end: ``canontrace <task> --config <path> [--out <path>] [--cache <dir>]``.

Configs are strict JSON objects (unknown keys are errors).  Every knob has a
default listed in ``DEFAULTS``/the per-task schemas below.  Reports are JSON
with a ``schema_version`` field, written with sorted keys so identical
configs give byte-identical output.  Exit codes: 0 pass, 2 check failed,
1 error (including schema violations and unsupported anomaly pairs).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import conformal, laurent, spectral
from .cache import EigenCache
from .fields import CoefficientField, fourier_field, random_field
from .powers import power_symbol
from .symbols import (BracketSymbol, ClassicalSymbol, CutoffProfile, ball_integral_asymptotics, cutoff_integral,
                      symbol_product, wodzicki_residue)

SCHEMA_VERSION = "1.0"
TASKS = ("residue", "cutoff", "zeta", "heat-fit", "laurent", "anomaly", "covariance")

log = logging.getLogger("canontrace")


class ConfigError(ValueError):
    """Schema violation in a job config."""


# --------------------------------------------------------------------------
# schema

_REQUIRED = object()

GEOMETRY = {"kind": "torus", "lengths": None, "N": 64, "phi": 0.0}
OPERATOR = {"family": "laplacian", "twist": 0.25, "power": None}

SCHEMAS = {
    "residue": {"task": None, "geometry": GEOMETRY, "operator": OPERATOR, "power": 1.0, "weight": None,
                "depth": 4, "expect": None, "tolerance": 1e-12},
    "cutoff": {"task": None, "symbol": _REQUIRED, "x": None, "psi": None, "depth": None, "ball_check": True,
               "R_grid": None, "expect": None, "tolerance": 1e-5},
    "zeta": {"task": None, "geometry": GEOMETRY, "operator": OPERATOR, "z": [], "t0": 1.0, "expect": None,
             "tolerance": 1e-6},
    "heat-fit": {"task": None, "geometry": GEOMETRY, "operator": OPERATOR, "eps_window": None, "npoints": 24,
                 "weight": None, "signed": False, "max_exponent": None, "expect": None, "tolerance": 1e-6},
    "laurent": {"task": None, "geometry": GEOMETRY, "operator": OPERATOR, "operand": {"kind": "identity"},
                "K": 3, "radius": 0.1, "depth": 4, "expect": None, "tolerance": 1e-6},
    "anomaly": {"task": None, "geometry": GEOMETRY, "family": _REQUIRED, "twist": 0.25,
                "functional": _REQUIRED, "f": _REQUIRED, "t": 1e-3, "levels": 1, "pointwise": False,
                "depth": 4, "tolerance": 1e-6},
    "covariance": {"task": None, "geometry": GEOMETRY, "family": _REQUIRED, "twist": 0.25, "f": _REQUIRED,
                   "t": 1e-3, "tolerance": 1e-6},
}

OPERAND = {"kind": "identity", "s": 0.0, "f": None}
FUNCTIONAL = {"kind": _REQUIRED, "h": "one", "c": 1.0, "j": 0}
PSI = {"inner_radius": 0.5, "outer_radius": 1.0, "smoothness": 2}


def _merge(schema: dict, data, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, default in schema.items():
        if key in data:
            out[key] = data[key]
        elif default is _REQUIRED:
            raise ConfigError(f"{where}: missing required key {key!r}")
        else:
            out[key] = default
    return out


def normalize_config(task: str, data: dict) -> dict:
    """Validate ``data`` against the task schema and fill defaults."""
    if task not in SCHEMAS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    cfg = _merge(SCHEMAS[task], data, "config")
    if cfg.get("task") not in (None, task):
        raise ConfigError(f"config is for task {cfg['task']!r}, not {task!r}")
    cfg.pop("task", None)
    if "geometry" in cfg:
        cfg["geometry"] = _merge(GEOMETRY, cfg["geometry"], "geometry")
        if cfg["geometry"]["lengths"] is None:
            kind = cfg["geometry"]["kind"]
            cfg["geometry"]["lengths"] = [2 * math.pi] if kind == "circle" else [1.0, 1.0]
    if "operator" in cfg:
        cfg["operator"] = _merge(OPERATOR, cfg["operator"], "operator")
    if "operand" in cfg:
        cfg["operand"] = _merge(OPERAND, cfg["operand"], "operand")
    if "functional" in cfg:
        cfg["functional"] = _merge(FUNCTIONAL, cfg["functional"], "functional")
    if cfg.get("psi") is not None:
        cfg["psi"] = _merge(PSI, cfg["psi"], "psi")
    for key in ("N", "npoints", "K", "levels", "depth"):
        for holder in (cfg, cfg.get("geometry") or {}):
            v = holder.get(key)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
                raise ConfigError(f"{key} must be an integer")
    return cfg


# --------------------------------------------------------------------------
# builders


FIELD_KEYS = {"constant", "fourier", "random", "grid"}
RANDOM = {"band": 2, "amplitude": 0.2, "seed": 0, "offset": 0.0}


def parse_field(spec, lengths, N: int) -> CoefficientField:
    """Field from a config: a number, ``{"constant": c}``, ``{"fourier": [modes]}``,
    ``{"random": {band, amplitude, seed, offset}}`` or ``{"grid": ...}``."""
    if spec is None:
        return CoefficientField(0.0)
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return CoefficientField(float(spec))
    if not isinstance(spec, dict) or len(spec) != 1 or set(spec) - FIELD_KEYS:
        raise ConfigError(f"field spec must be a number or one of {sorted(FIELD_KEYS)}, got {spec!r}")
    (kind, val), = spec.items()
    if kind == "constant":
        return CoefficientField(float(val))
    if kind == "fourier":
        try:
            return fourier_field(lengths, N, val)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"fourier field: {exc}") from exc
    if kind == "random":
        r = _merge(RANDOM, val, "random")
        return random_field(lengths, N, band=r["band"], amplitude=r["amplitude"], seed=r["seed"]) + r["offset"]
    return CoefficientField.from_json(spec, dimension=len(lengths), lengths=lengths).resample(N)


def build_geometry(cfg: dict) -> spectral.ModelGeometry:
    kind, lengths, N = cfg["kind"], tuple(float(v) for v in cfg["lengths"]), cfg["N"]
    phi = parse_field(cfg["phi"], lengths, N)
    return spectral.ModelGeometry(kind, lengths, N, phi)


def build_op(geometry, cfg: dict) -> spectral.ModelOperator:
    fam = cfg["family"]
    if fam == "power":
        raise ConfigError("use operator.power with a base family instead of family='power'")
    op = spectral.build_operator(fam, geometry, twist=cfg["twist"])
    if cfg["power"] is not None:
        op = spectral.build_operator("power", geometry, base=op, power=float(cfg["power"]))
    log.info("operator %r: realization=%s eps_floor=%.6g", op, op.realization, op.eps_floor)
    return op


# --------------------------------------------------------------------------
# JSON helpers


def jsonable(v):
    """Convert numpy/complex values to JSON-safe types."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        v = complex(v)
        if v.imag == 0:
            return jsonable(v.real)
        return {"re": jsonable(v.real), "im": jsonable(v.imag)}
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else v
    return v


def _complex(v):
    if isinstance(v, dict):
        if set(v) != {"re", "im"}:
            raise ConfigError(f"complex numbers are {{re, im}} objects, got {v!r}")
        return complex(v["re"], v["im"])
    return complex(v)


def _check(name, value, expect, tol):
    gap = abs(complex(value) - complex(expect))
    return {"name": name, "value": value, "expected": expect, "abs_gap": gap, "tolerance": tol,
            "pass": bool(gap <= tol)}


def _expectations(result: dict, expect, tol) -> list:
    if expect is None:
        return []
    if not isinstance(expect, dict):
        raise ConfigError("expect must map result keys to values")
    checks = []
    for key in sorted(expect):
        if key not in result:
            raise ConfigError(f"expect refers to unknown result key {key!r}")
        checks.append(_check(key, result[key], _complex(expect[key]), tol))
    return checks


# --------------------------------------------------------------------------
# tasks


def task_residue(cfg, cache):
    g = build_geometry(cfg["geometry"])
    op = build_op(g, cfg["operator"])
    J = cfg["depth"]
    sym = op.symbol(J)
    c = float(cfg["power"])
    if c != 1:
        sym = power_symbol(sym, -c, J)
    if cfg["weight"] is not None:
        f = parse_field(cfg["weight"], g.lengths, g.N)
        sym = symbol_product(ClassicalSymbol.multiplication(f, g.dimension, lengths=g.lengths), sym, J)
    res = wodzicki_residue(sym, lengths=g.lengths)
    dens = wodzicki_residue(sym, density_only=True)
    dvals = np.asarray(dens.values)
    result = {"residue": res, "order": sym.order, "density_min": float(np.min(np.real(dvals))),
              "density_max": float(np.max(np.real(dvals)))}
    return result, _expectations(result, cfg["expect"], cfg["tolerance"]), {}, []


def _parse_symbol(spec):
    if not isinstance(spec, dict):
        raise ConfigError("symbol must be an object")
    if "bracket" in spec:
        if set(spec) != {"bracket"}:
            raise ConfigError("bracket symbol: unexpected sibling keys")
        b = _merge({"dimension": _REQUIRED, "terms": _REQUIRED, "mu": 1.0}, spec["bracket"], "bracket")
        terms = []
        for t in b["terms"]:
            t = _merge({"coeff": 1.0, "monomial": _REQUIRED, "beta": _REQUIRED}, t, "bracket term")
            terms.append((_complex(t["coeff"]), tuple(t["monomial"]), float(t["beta"])))
        return BracketSymbol(b["dimension"], tuple(terms), float(b["mu"]))
    try:
        return ClassicalSymbol.from_json(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"symbol: {exc}") from exc


def task_cutoff(cfg, cache):
    sigma = _parse_symbol(cfg["symbol"])
    psi = CutoffProfile(**cfg["psi"]) if cfg["psi"] is not None else None
    x = cfg["x"]
    res = cutoff_integral(sigma, psi, x, depth=cfg["depth"])
    result = {"c": res.c, "b": res.b, "cutoff_dependent": res.cutoff_dependent}
    checks = []
    if cfg["ball_check"]:
        fit = ball_integral_asymptotics(sigma, x, cfg["R_grid"], psi=psi)
        result["ball_c"] = fit.c
        result["ball_b"] = fit.b
        result["ball_residual"] = fit.residual
        checks.append(_check("c_vs_ball", res.c, fit.c, cfg["tolerance"]))
        checks.append(_check("b_vs_ball", res.b, fit.b, cfg["tolerance"]))
    checks += _expectations(result, cfg["expect"], cfg["tolerance"])
    return result, checks, {}, []


def task_zeta(cfg, cache):
    g = build_geometry(cfg["geometry"])
    op = build_op(g, cfg["operator"])
    t0 = cfg["t0"]
    result = {"zeta0": spectral.zeta(op, 0.0, t0=t0, cache=cache),
              "zeta_prime0": spectral.zeta(op, 0.0, derivative=1, t0=t0, cache=cache),
              "kernel_dim": op.kernel_dim}
    if op.is_signed:
        result["eta0"] = spectral.zeta(op, 0.0, signed=True, t0=t0, cache=cache)
    rows = []
    zs = [_complex(z) for z in cfg["z"]]
    if zs:
        vals = np.atleast_1d(spectral.zeta(op, np.array(zs), t0=t0, cache=cache))
        rows = [["z_re", "z_im", "zeta_re", "zeta_im"]] + [[z.real, z.imag, v.real, v.imag]
                                                            for z, v in zip(zs, vals.astype(complex))]
        result["values"] = [{"z": z, "zeta": v} for z, v in zip(zs, vals)]
    trust = {"eps_floor": op.eps_floor, "N": op.geometry.N, "realization": op.realization}
    return result, _expectations(result, cfg["expect"], cfg["tolerance"]), trust, rows


def task_heat_fit(cfg, cache):
    g = build_geometry(cfg["geometry"])
    op = build_op(g, cfg["operator"])
    lo, hi = cfg["eps_window"] if cfg["eps_window"] is not None else spectral.default_window(op)
    grid = np.geomspace(lo, hi, cfg["npoints"])
    w = parse_field(cfg["weight"], g.lengths, g.N) if cfg["weight"] is not None else None
    fit = spectral.heat_fit(op, grid, weight=w, signed=cfg["signed"], max_exponent=cfg["max_exponent"], cache=cache)
    theta = spectral.heat_trace(op, grid, w, cfg["signed"], cache=cache)
    rows = [["eps", "theta", "model"]] + [[e, t, m] for e, t, m in zip(grid, theta, fit.evaluate(grid))]
    result = fit.to_json()
    for j, v in fit.a.items():
        result[f"a{j}"] = v
    trust = {"eps_floor": op.eps_floor, "N": op.geometry.N, "realization": op.realization}
    return result, _expectations(result, cfg["expect"], cfg["tolerance"]), trust, rows


def _operand(cfg, g):
    kind = cfg["kind"]
    f = parse_field(cfg["f"], g.lengths, g.N) if cfg["f"] is not None else None
    if kind == "identity":
        return laurent.Operand("power", 0.0, f)
    if kind == "power":
        return laurent.Operand("power", float(cfg["s"]), f)
    if kind == "sign":
        return laurent.Operand("sign", 0.0, f)
    raise ConfigError(f"unknown operand kind {kind!r}; expected identity, power or sign")


def task_laurent(cfg, cache):
    g = build_geometry(cfg["geometry"])
    op = build_op(g, cfg["operator"])
    A = _operand(cfg["operand"], g)
    exp = laurent.laurent_TR(A, op, K=cfg["K"], radius=cfg["radius"], J=cfg["depth"], cache=cache)
    cons = laurent.consistency_check(A, op, radius=cfg["radius"], J=cfg["depth"], cache=cache)
    wt = float(np.real(exp.finite_part)) + laurent.kernel_correction(A, op)
    result = {"expansion": exp.to_json(), "weighted_trace": wt, "pole": exp.coefficient(-1),
              "finite_part": exp.finite_part, "consistency": cons.to_json()}
    checks = [{"name": "residue_pole_link", "value": cons.spectral, "expected": cons.symbolic,
               "abs_gap": cons.gap, "tolerance": cfg["tolerance"], "pass": cons.gap <= cfg["tolerance"]}]
    checks += _expectations(result, cfg["expect"], cfg["tolerance"])
    trust = {"eps_floor": op.eps_floor, "N": op.geometry.N, "realization": op.realization}
    return result, checks, trust, []


def task_anomaly(cfg, cache):
    g = build_geometry(cfg["geometry"])
    f = parse_field(cfg["f"], g.lengths, g.N)
    fs = cfg["functional"]
    try:
        spec = conformal.FunctionalSpec(fs["kind"], fs["h"], float(fs["c"]), int(fs["j"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep = conformal.anomaly_check(spec, cfg["family"], g, f, cfg["t"], cfg["tolerance"], levels=cfg["levels"],
                                  pointwise=cfg["pointwise"], twist=cfg["twist"], f_spec=cfg["f"],
                                  J=cfg["depth"], cache=cache)
    out = rep.to_json()
    checks = [{"name": "anomaly", "value": rep.lhs, "expected": rep.rhs, "abs_gap": rep.abs_gap,
               "tolerance": rep.tolerance, "pass": rep.passed}]
    return out, checks, {"N": g.N}, []


def task_covariance(cfg, cache):
    g = build_geometry(cfg["geometry"])
    f = parse_field(cfg["f"], g.lengths, g.N)
    r = conformal.covariance_residual(cfg["family"], g, f, cfg["t"], twist=cfg["twist"])
    result = {"residual": r, "family": cfg["family"], "t": cfg["t"]}
    checks = [{"name": "covariance", "value": r, "expected": 0.0, "abs_gap": r, "tolerance": cfg["tolerance"],
               "pass": bool(r <= cfg["tolerance"])}]
    return result, checks, {"N": g.N}, []


RUNNERS = {"residue": task_residue, "cutoff": task_cutoff, "zeta": task_zeta, "heat-fit": task_heat_fit,
           "laurent": task_laurent, "anomaly": task_anomaly, "covariance": task_covariance}


# --------------------------------------------------------------------------
# entry points


def config_hash(task: str, cfg: dict) -> str:
    blob = json.dumps({"task": task, "config": cfg}, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_job(task: str, data: dict, cache_dir=None) -> tuple[dict, list, int]:
    """Run one job; returns ``(report, csv_rows, exit_code)``."""
    cfg = normalize_config(task, data)
    cache = EigenCache(cache_dir) if cache_dir is not None else None
    result, checks, trust, rows = RUNNERS[task](cfg, cache)
    if trust.get("eps_floor") is not None:
        log.info("trust threshold eps_floor=%.6g at N=%s", trust["eps_floor"], trust.get("N"))
    if cache is not None:
        log.info("cache: %d hits, %d misses", cache.hits, cache.misses)
    passed = all(c["pass"] for c in checks)
    report = {"schema_version": SCHEMA_VERSION, "task": task, "config": cfg, "config_hash": config_hash(task, cfg),
              "result": result, "checks": checks, "trust": trust, "pass": passed}
    return jsonable(report), rows, 0 if passed else 2


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_csv(rows, path: Path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="canontrace", description=__doc__.splitlines()[0])
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True, help="JSON job config")
    parser.add_argument("--out", help="report path (default: stdout); a CSV table is written next to it")
    parser.add_argument("--cache", help="eigendecomposition cache directory")
    parser.add_argument("--quiet", action="store_true", help="only log warnings")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        data = json.loads(Path(args.config).read_text())
        report, rows, code = run_job(args.task, data, args.cache)
    except (ConfigError, json.JSONDecodeError, conformal.UnsupportedPair) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure is exit code 1
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    text = dumps_report(report)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        if rows:
            write_csv(rows, out.with_suffix(".csv"))
    else:
        sys.stdout.write(text)
    for c in report["checks"]:
        log.info("check %s: %s (gap %s, tol %s)", c["name"], "pass" if c["pass"] else "FAIL", c["abs_gap"],
                 c["tolerance"])
    return code


if __name__ == "__main__":
    sys.exit(main())
