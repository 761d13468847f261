"""Command-line front end.

Every command writes a CSV data file and a ``result.json`` to ``--out``.
The first CSV line is ``# manifest_sha256=<hash>``: the hash of the run
manifest without its timestamp and wall time, so reruns with identical
inputs give byte-identical CSV files.

Exit codes: 0 success, 1 usage error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, heteroclinic, linearization, model, observables, shooting
from .ode_core import IntegrationError, Tolerances

log = logging.getLogger("gpmorse")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
CONFIG_ENV = "GPMORSE_CONFIG"

DEFAULTS = {
    "d": 13,
    "rtol": 1e-10,
    "atol": 1e-14,
    "rmax": shooting.R_MAX_DEFAULT,
    "bisect_tol": shooting.BISECTION_TOL,
    "out": ".",
    "b": 1.0,
    "b_min": 0.25,
    "b_max": 32.0,
    "points": 8,
    "log": False,
    "a": 0.3,
    "T": 1.0,
    "eps": 1e-4,
    "workers": 1,
    "morse": True,
    "singular": False,
}
_TYPES = {"d": int, "points": int, "workers": int, "log": "bool", "morse": "bool",
          "singular": "bool", "out": str}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- configuration ---------------------------------------------------------------

def _coerce(key: str, value: str):
    kind = _TYPES.get(key, float)
    if kind == "bool":
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: not a boolean: {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys use flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{n}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve(args: argparse.Namespace, env=None) -> dict:
    """Flags over config file over defaults."""
    env = os.environ if env is None else env
    cfg_path = args.config or env.get(CONFIG_ENV)
    cfg = read_config(cfg_path) if cfg_path else {}
    out = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = cfg[key]
        else:
            out[key] = default
    out["config"] = str(cfg_path) if cfg_path else None
    return out


def _validate(opts: dict):
    if opts["d"] < 5:
        raise UsageError("--d must be at least 5")
    for key in ("rtol", "atol", "rmax", "bisect_tol"):
        if not opts[key] > 0:
            raise UsageError(f"--{key.replace('_', '-')} must be positive")
    if opts["b"] <= 0 or opts["b_min"] <= 0 or opts["b_max"] < opts["b_min"]:
        raise UsageError("amplitudes must be positive with b-min <= b-max")
    if opts["points"] < 1:
        raise UsageError("--points must be positive")
    if not 0 < opts["a"] < 1:
        raise UsageError("--a must lie in (0, 1)")


def shooting_config(opts: dict) -> shooting.ShootingConfig:
    tol = Tolerances(rtol=opts["rtol"], atol=opts["atol"])
    return shooting.ShootingConfig(tol=tol, r_max=opts["rmax"], bisection_tol=opts["bisect_tol"])


def b_grid(opts: dict) -> list[float]:
    n = opts["points"]
    lo, hi = opts["b_min"], opts["b_max"]
    if n == 1:
        return [lo]
    g = np.geomspace(lo, hi, n) if opts["log"] else np.linspace(lo, hi, n)
    return [float(x) for x in g]


# -- output --------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def manifest_hash(manifest: dict) -> str:
    stable = {k: v for k, v in manifest.items() if k not in ("timestamp", "wall_time")}
    blob = json.dumps(_jsonable(stable), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_csv(path: Path, header: Sequence[str], rows, digest: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# manifest_sha256={digest}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


class Run:
    """Collects the manifest of one command and writes its files."""

    def __init__(self, command: str, opts: dict, argv: Sequence[str]):
        self.t0 = time.perf_counter()
        self.out = Path(opts["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "options": {k: v for k, v in opts.items() if k not in ("out", "config")},
            "tolerances": {"rtol": opts["rtol"], "atol": opts["atol"],
                           "bisect_tol": opts["bisect_tol"], "rmax": opts["rmax"]},
            "d": opts["d"],
            "library_version": __version__,
            "tasks": [],
            "weight_note": observables.SPHERE_FACTOR_NOTE,
        }

    def task(self, name: str, status: str, detail: str = ""):
        self.manifest["tasks"].append({"task": name, "status": status, "detail": detail})

    @property
    def digest(self) -> str:
        return manifest_hash(self.manifest)

    def finish(self, csv_name: str, header, rows, results: dict, json_name="result.json"):
        digest = self.digest
        write_csv(self.out / csv_name, header, rows, digest)
        self.manifest["wall_time"] = time.perf_counter() - self.t0
        self.manifest["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        payload = {"version": __version__, "manifest_sha256": digest,
                   "manifest": self.manifest, "results": results, "data_file": csv_name}
        write_json(self.out / json_name, payload)


# -- commands ------------------------------------------------------------------

def _profile_rows(profile):
    return [(r, u, du) for r, u, du in zip(profile.x, profile.y, profile.yp)]


def cmd_solve(opts, argv):
    run = Run("solve", opts, argv)
    gs = shooting.solve_lambda(opts["d"], opts["b"], shooting_config(opts))
    run.task(f"b={fmt(opts['b'])}", "ok")
    results = {
        "b": gs.b, "lambda": gs.lam, "c": gs.c_coeff,
        "mass": observables.mass(gs), "energy": observables.energy(gs),
        "bracket": list(gs.bracket), "bracket_residual": gs.bracket_residual,
        "r0": gs.r0, "r_match": gs.r_match, "tail_T": gs.tail_T,
        "diagnostics": gs.diagnostics,
    }
    results["action"] = results["energy"] - gs.lam * results["mass"]
    run.finish("ground_state.csv", ["r", "u", "du"], _profile_rows(gs.profile), results)


def cmd_singular(opts, argv):
    run = Run("singular", opts, argv)
    s = shooting.solve_lambda_inf(opts["d"], shooting_config(opts))
    run.task("singular", "ok")
    results = {
        "lambda_inf": s.lam_inf, "c_inf": s.c_inf,
        "mass": observables.mass(s), "energy": observables.energy(s),
        "bracket": list(s.bracket), "r0": s.r0, "r_match": s.r_match, "tail_T": s.tail_T,
        "F_r0": float(s.profile.y[0]), "diagnostics": s.diagnostics,
    }
    rows = [(r, F, u, du) for r, F, u, du in
            zip(s.profile.x, s.profile.y, s.u_profile.y, s.u_profile.yp)]
    run.finish("singular.csv", ["r", "F", "u", "du"], rows, results)


def cmd_curve(opts, argv):
    run = Run("curve", opts, argv)
    grid = b_grid(opts)
    run.manifest["b_grid"] = grid
    pts, failures = shooting.sweep_curve(opts["d"], grid, shooting_config(opts),
                                         with_morse=opts["morse"], workers=opts["workers"])
    for p in pts:
        run.task(f"b={fmt(p.b)}", "ok")
    for b, msg in failures:
        run.task(f"b={fmt(b)}", "failed", msg)
    rows = [(p.b, p.lam, p.mass, p.energy, p.morse) for p in pts]
    results = {
        "points": len(pts), "failures": [[b, m] for b, m in failures],
        "regime": shooting.classify_regime(opts["d"]).value,
        "lambda_prime_sign_changes": observables.lambda_prime_sign_changes(pts) if pts else 0,
    }
    run.finish("curve.csv", ["b", "lambda", "mass", "energy", "morse"], rows, results)
    if not pts:
        raise shooting.ShootingError("no point of the curve converged")


def cmd_mass_curve(opts, argv):
    run = Run("mass-curve", opts, argv)
    grid = b_grid(opts)
    run.manifest["b_grid"] = grid
    cfg = shooting_config(opts)
    pts, failures = shooting.sweep_curve(opts["d"], grid, cfg, workers=opts["workers"])
    for b, msg in failures:
        run.task(f"b={fmt(b)}", "failed", msg)
    s = shooting.solve_lambda_inf(opts["d"], cfg)
    m_inf = observables.mass(s)
    run.task("singular", "ok")
    rep = observables.mass_curve(pts, m_inf)
    slopes = list(rep.slopes) + [None]
    rows = [(b, lam, m, sl, dist) for b, lam, m, sl, dist in
            zip(rep.b, rep.lam, rep.mass, slopes, rep.distance_to_singular)]
    results = {
        "verdict": rep.verdict, "note": rep.note, "singular_mass": m_inf,
        "lambda_inf": s.lam_inf, "slopes": list(rep.slopes),
        "distance_decreasing_in_b": rep.distance_decreasing_in_b,
        "failures": [[b, m] for b, m in failures],
        "oscillation_count": observables.oscillation_count(pts, s.lam_inf),
    }
    run.finish("mass_curve.csv", ["b", "lambda", "mass", "slope_to_next", "distance_to_singular"],
               rows, results)


def cmd_morse(opts, argv):
    run = Run("morse", opts, argv)
    cfg = shooting_config(opts)
    if opts["singular"]:
        base = shooting.solve_lambda_inf(opts["d"], cfg)
        label = "singular"
    else:
        base = shooting.solve_lambda(opts["d"], opts["b"], cfg)
        label = f"b={fmt(opts['b'])}"
    dc = linearization.solve_dc_psi(base)
    n_t = linearization.morse_index(dc)
    n_r = linearization.radial_morse_index(base)
    run.task(label, "ok")
    results = {
        "base": label, "lambda": base.lam, "morse_t": n_t, "morse_r": n_r,
        "zeros_t": [z.x_star for z in dc.zeros], "log_scale": dc.log_scale,
        "simple_zeros": dc.simple_zeros, "agree": n_t == n_r,
    }
    rows = [(t, g, dg) for t, g, dg in zip(dc.traj.x, dc.traj.y, dc.traj.yp)]
    run.finish("morse.csv", ["t", "gamma_mantissa", "dgamma_mantissa"], rows, results)


def verify_report(d: int, cfg: shooting.ShootingConfig, a: float = 0.3, T: float = 1.0,
                  eps: float = 1e-4, b_list=(8.0, 16.0, 32.0)) -> tuple[dict, list]:
    """Asymptotic fits and convergence-rate checks for dimension ``d``.  Returns (results, table rows)."""
    ex = model.kappa_exponents(d)
    res = {"d": d, "regime": shooting.classify_regime(d).value,
           "discriminant": ex.discriminant}
    if not ex.is_real or d < 13:
        res.update(kappa_plus=str(ex.kappa_plus), kappa_minus=str(ex.kappa_minus),
                   unsupported="complex exponents at the stable point")
        return res, []
    res.update(kappa_plus=float(ex.kappa_plus), kappa_minus=float(ex.kappa_minus),
               a0=heteroclinic.a0_threshold(d))
    theta = heteroclinic.solve_theta(d)
    fa = heteroclinic.fit_A0(theta, d)
    s = shooting.solve_lambda_inf(d, cfg)
    dc_inf = linearization.solve_dc_psi(s)
    fl = heteroclinic.fit_Linf(dc_inf, d)
    res["A0"] = {"value": fa.leading, "window": list(fa.window), "residual": fa.residual,
                 "free_exponents": list(fa.free_exponents),
                 "window_sensitivity": fa.window_sensitivity}
    res["Linf"] = {"value": fl.leading, "window": list(fl.window), "residual": fl.residual,
                   "free_exponents": list(fl.free_exponents),
                   "window_sensitivity": fl.window_sensitivity}
    res["theta_monotone"] = theta.monotone
    grounds = [shooting.solve_lambda(d, b, cfg) for b in b_list]
    lams = [g.lam for g in grounds]
    p21 = heteroclinic.check_prop21(d, b_list, lams, theta)
    l31 = linearization.check_db_scaling(d, b_list, lams, theta)
    p22 = linearization.check_prop22_bound(s, (eps, 2 * eps, 4 * eps), b=b_list[1], a=a)
    l41 = linearization.check_dc_linearity(s, (eps, 2 * eps, 4 * eps), b=b_list[1], a=a)
    c32 = heteroclinic.check_cor32(grounds, fa.leading, T=T, a=min(a, 0.2))
    c42 = heteroclinic.check_cor42(grounds, fl.leading, T=T, a=a, eps=eps)
    indep, tails = [], []
    for g in grounds:
        rep = linearization.check_independence(linearization.solve_db_psi(g),
                                               linearization.solve_dc_psi(g))
        indep.append({"b": g.b, "mean": float(np.mean(rep.scaled_wronskian)),
                      "spread": rep.spread, "normalized_margin": rep.normalized_margin,
                      "sign": rep.sign})
        ok, sign = linearization.tail_sign_constant(linearization.solve_dc_psi(g), a, g.b)
        tails.append({"b": g.b, "constant": ok, "sign": sign})
    res.update(
        theta_rate={"b": list(p21.b), "E": list(p21.errors), "ratios": list(p21.ratios),
                "target": p21.target},
        db_scaling={"b": list(l31.b), "E": list(l31.errors), "ratios": list(l31.ratios),
                 "target": l31.target},
        tail_bound={"eps": list(p22.eps), "constants": list(p22.ratios), "stability": p22.stability,
                "b": p22.b, "a": p22.a},
        dc_linearity={"eps": list(l41.eps), "sup": list(l41.sups), "sup_over_eps": list(l41.ratios),
                 "b": l41.b, "a": l41.a},
        db_slope={"b": list(c32.b), "deviation": list(c32.deviations), "a": c32.a, "T": c32.T,
               "conclusive": c32.conclusive, "decreasing": c32.decreasing},
        dc_slope={"b": list(c42.b), "deviation": list(c42.deviations), "a": c42.a, "T": c42.T,
               "decreasing": c42.decreasing},
        independence=indep, tail_sign=tails, lambda_inf=s.lam_inf, c_inf=s.c_inf,
        Linf_sign=int(np.sign(fl.leading)),
    )
    rows = []
    for name, rep in (("theta_rate", p21), ("db_scaling", l31)):
        for i, b in enumerate(rep.b):
            rows.append((name, b, rep.errors[i], rep.ratios[i - 1] if i else None))
    for name, rep in (("tail_bound", p22), ("dc_linearity", l41)):
        for i, e in enumerate(rep.eps):
            rows.append((name, e, rep.ratios[i], None))
    for name, rep in (("db_slope", c32), ("dc_slope", c42)):
        for i, b in enumerate(rep.b):
            rows.append((name, b, rep.deviations[i], None))
    return res, rows


def cmd_verify(opts, argv):
    run = Run("verify", opts, argv)
    res, rows = verify_report(opts["d"], shooting_config(opts), a=opts["a"], T=opts["T"],
                              eps=opts["eps"])
    run.task("verify", "ok" if "unsupported" not in res else "unsupported")
    run.finish("verify.csv", ["check", "parameter", "value", "ratio"], rows, res,
               json_name="verify.json")


COMMANDS = {
    "solve": cmd_solve,
    "curve": cmd_curve,
    "singular": cmd_singular,
    "morse": cmd_morse,
    "verify": cmd_verify,
    "mass-curve": cmd_mass_curve,
}


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--d", type=int, help="spatial dimension (default 13)")
    shared.add_argument("--rtol", type=float, help="relative integration tolerance")
    shared.add_argument("--atol", type=float, help="absolute integration tolerance")
    shared.add_argument("--rmax", type=float, help="outer radius of the shots")
    shared.add_argument("--bisect-tol", dest="bisect_tol", type=float,
                        help="bisection width in lambda")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--config", help=f"key=value config file (or ${CONFIG_ENV})")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gpmorse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[shared], help="ground state of amplitude b")
    s.add_argument("--b", type=float)

    def grid_flags(q):
        q.add_argument("--b-min", dest="b_min", type=float)
        q.add_argument("--b-max", dest="b_max", type=float)
        q.add_argument("--points", type=int)
        q.add_argument("--log", action="store_const", const=True, default=None,
                       help="log-spaced amplitudes")
        q.add_argument("--workers", type=int)

    c = sub.add_parser("curve", parents=[shared], help="solution curve lambda(b)")
    grid_flags(c)
    c.add_argument("--no-morse", dest="morse", action="store_const", const=False, default=None)

    sub.add_parser("singular", parents=[shared], help="limiting singular solution")

    m = sub.add_parser("morse", parents=[shared], help="Morse index by zero counting")
    m.add_argument("--b", type=float)
    m.add_argument("--singular", action="store_const", const=True, default=None)

    v = sub.add_parser("verify", parents=[shared], help="asymptotic fits and rate checks")
    v.add_argument("--a", type=float)
    v.add_argument("--T", type=float)
    v.add_argument("--eps", type=float)

    mc = sub.add_parser("mass-curve", parents=[shared], help="mass against lambda")
    grid_flags(mc)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve(args)
        _validate(opts)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"gpmorse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gpmorse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](opts, argv)
    except (shooting.ShootingError, IntegrationError, heteroclinic.NonConvergence,
            heteroclinic.SignalBelowNoise, linearization.WindowSuspect) as exc:
        print(f"gpmorse: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
