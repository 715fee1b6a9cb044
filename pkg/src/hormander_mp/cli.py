"""Command-line front end: one JSON document per run.

Every document carries ``version``, ``command``, the echoed ``inputs``, the
``constants`` in force with their ``provenance``, and ``results``. Wall-clock
timestamps go to a sidecar ``<output>.time.json`` so the document itself is
byte-identical across runs with equal inputs and seed.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, kernels
from . import fd_verifier as fd
from .cc_metric import MC_CONFIG, BoundingBoxError, DistanceConfig, calibrate_c1, estimate_distance
from .gamma_geometry import (MissingConstantError, QuasiTriangleError, curve_csv, gamma_ball_doubling,
                             gamma_ball_sandwich_check, gamma_ball_volume, gamma_decay_curve, gamma_hat,
                             is_decreasing, make_context, quasi_triangle_scan)
from .mp_criteria import (ConeRatioError, DescriptorError, DilationConeWitness, DiscreteMeasure,
                          HalfSpace, Whole, cartan_cover, classify_mp, cone_to_gamma_cone,
                          d_ball_cover_check, halfspace_to_cone, p_cover_check, parse_descriptor, random_measure)
from .nsw_volume import build_volume_table, volume_summary
from .operator_core import BudgetError, OperatorSpec, SpecError, parse_operator_spec, preset

DEFAULT_SEED = 20240611
OUTPUT_ENV = "HORMANDER_MP_OUTPUT_DIR"

NUMERICAL_ERRORS = (fd.MMatrixError, fd.SolverError, BoundingBoxError, QuasiTriangleError,
                    ConeRatioError, MissingConstantError, BudgetError, FloatingPointError,
                    np.linalg.LinAlgError)
INPUT_ERRORS = (SpecError, DescriptorError, fd.SemilinearSignError, ValueError, KeyError,
                json.JSONDecodeError, OSError)


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


# -- helpers ------------------------------------------------------------------------

def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_text(arg: str) -> str:
    """Inline text, or the contents of a file when ``arg`` names one (``@path`` also works)."""
    path = arg[1:] if arg.startswith("@") else arg
    if os.path.isfile(path):
        return Path(path).read_text()
    return arg


def _spec(args) -> OperatorSpec:
    if getattr(args, "spec", None):
        return parse_operator_spec(_load_text(args.spec))
    return preset(args.preset)


def _point(text: Optional[str], spec: OperatorSpec) -> np.ndarray:
    if text is None:
        raise InputError("a point argument (--x / --y) is required for this action")
    x = np.asarray(_floats(text))
    if x.size != spec.N:
        raise InputError(f"point {text!r} has {x.size} entries, expected N = {spec.N}")
    return x


def _constants(args) -> dict:
    out = {}
    if getattr(args, "constants", None):
        doc = json.loads(_load_text(args.constants))
        doc = doc.get("results", doc)
        for k in ("c1_hat", "c_hat", "calibration_id"):
            if doc.get(k) is not None:
                out[k] = doc[k]
    if getattr(args, "c1_hat", None) is not None:
        out["c1_hat"] = args.c1_hat
        out.setdefault("calibration_id", "command-line")
    if getattr(args, "c_hat", None) is not None:
        out["c_hat"] = args.c_hat
        out["calibration_id"] = out.get("calibration_id", "command-line")
    return out


def _context(args, spec: OperatorSpec):
    return make_context(spec, replace(MC_CONFIG, seed=int(args.seed)), **_constants(args))


def _inputs(args) -> dict:
    skip = {"func", "output", "csv"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _calibration_id(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode()
    return "cal-" + hashlib.sha256(blob).hexdigest()[:12]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


# -- commands ----------------------------------------------------------------------------

def cmd_ops_validate(args):
    spec = _spec(args)
    d = spec.dilation
    return {"name": spec.name, "valid": True, "N": spec.N, "m": spec.m, "Q": spec.Q,
            "sigma": list(spec.sigma), "step": d.step,
            "fields": [[c.to_string() for c in X.components] for X in spec.fields]}, {}


def cmd_volume(args):
    table = build_volume_table(_spec(args))
    return volume_summary(table), {}


def cmd_dist(args):
    spec = _spec(args)
    cfg = DistanceConfig(segments=args.segments, restarts=args.restarts, seed=args.seed)
    est = estimate_distance(spec, _point(args.x, spec), _point(args.y, spec), cfg)
    return est.to_dict(), {}


def cmd_calibrate(args):
    spec = _spec(args)
    table = build_volume_table(spec)
    cfg = replace(MC_CONFIG, seed=int(args.seed))
    c1 = calibrate_c1(spec, table, samples=args.samples, config=cfg, seed=args.seed)
    ctx = make_context(spec, cfg, table, c1_hat=c1.c1)
    scan = quasi_triangle_scan(ctx, args.trials, args.seed, strict=True)
    cid = _calibration_id({"spec": spec.name, "fields": [[c.to_string() for c in X.components]
                                                         for X in spec.fields],
                           "seed": args.seed, "samples": args.samples, "trials": args.trials})
    res = {"c1_hat": c1.c1, "c1_half_width": c1.half_width, "c_hat": scan.c_hat,
           "theta_hat": scan.theta_hat, "calibration_id": cid,
           "c1_samples": c1.ratios, "triangle_scan": scan.to_dict()}
    return res, {"c1_hat": c1.c1, "c_hat": scan.c_hat, "theta_hat": scan.theta_hat,
                 "c_theory": ctx.c_theory, "calibration_id": cid}


def cmd_gamma(args):
    spec = _spec(args)
    ctx = _context(args, spec)
    if args.action == "eval":
        g = float(gamma_hat(ctx, _point(args.x, spec), _point(args.y, spec)))
        return {"gamma_hat": g, "Gamma_hat": None if g == 0 else 1.0 / g}, ctx.constants()
    if args.action == "ball-volume":
        x = _point(args.x, spec)
        if args.radii:
            fit = gamma_ball_doubling(ctx, x, _floats(args.radii), args.samples, args.seed)
            return fit.to_dict(), ctx.constants()
        vol = gamma_ball_volume(ctx, x, args.r, args.samples, args.seed)
        out = vol.to_dict()
        if args.sandwich:
            out["sandwich"] = gamma_ball_sandwich_check(ctx, x, args.r, args.sandwich, args.seed).to_dict()
        return out, ctx.constants()
    if args.action == "triangle-scan":
        scan = quasi_triangle_scan(ctx, args.trials, args.seed, strict=ctx.c1_hat is not None)
        return scan.to_dict(), {**ctx.constants(), "c_hat": scan.c_hat, "theta_hat": scan.theta_hat}
    # decay
    curve = gamma_decay_curve(ctx, _point(args.y, spec), _floats(args.lambdas))
    if args.csv:
        Path(args.csv).write_text(curve_csv(curve))
    return {"curve": [{"lambda": l, "Gamma_hat": g} for l, g in curve],
            "decreasing": is_decreasing(curve)}, ctx.constants()


def _read_balls(text: str):
    doc = json.loads(_load_text(text))
    items = doc.get("balls", doc) if isinstance(doc, dict) else doc
    return [(tuple(float(c) for c in b["center"]), float(b["radius"])) if isinstance(b, dict)
            else (tuple(float(c) for c in b[0]), float(b[1])) for b in items]


def cmd_cover(args):
    spec = _spec(args)
    ctx = _context(args, spec)
    balls = _read_balls(args.cover)
    p = args.p if args.p is not None else spec.Q / (spec.Q - 2)
    if args.kind == "d_ball":
        cert = d_ball_cover_check(ctx, balls, p, args.finite)
    else:
        target = None
        if args.target:
            target = np.asarray(json.loads(_load_text(args.target)), dtype=float)
        cert = p_cover_check(ctx, balls, p, args.finite, target)
    return cert.to_dict(), ctx.constants()


def cmd_cone(args):
    spec = _spec(args)
    ctx = _context(args, spec)
    desc = parse_descriptor(_load_text(args.domain))
    out = {"descriptor": desc.to_json()}
    if isinstance(desc, HalfSpace):
        con = halfspace_to_cone(desc.v, desc.h, spec.dilation)
        out["cone"] = {"orthant": con.cone.to_json(), "lambda0": con.lambda0,
                       "interior_point": con.interior_point, "margin": con.margin,
                       "proof": con.proof,
                       "sampled_invariance": con.verify_sampled(spec.dilation, seed=args.seed)}
        seed = con.witness(ctx).seed
    elif isinstance(desc, DilationConeWitness):
        seed = desc.seed
    else:
        raise DescriptorError("cone detect expects a half-space or a dilation-cone descriptor")
    if args.gamma_cone:
        wit = cone_to_gamma_cone(ctx, seed, tuple(2.0 ** n for n in range(args.levels)))
        out["gamma_cone"] = wit.to_dict()
    out["seed_ball"] = {"center": list(seed.center), "radius": seed.radius}
    return out, ctx.constants()


def cmd_cartan(args):
    spec = _spec(args)
    ctx = _context(args, spec)
    if ctx.c_hat is None:
        raise MissingConstantError("cartan needs c_hat: pass --constants (from `calibrate`) or --c-hat")
    if args.measure:
        doc = json.loads(_load_text(args.measure))
        mu = DiscreteMeasure(np.asarray(doc["atoms"], float), np.asarray(doc["masses"], float))
    else:
        mu = random_measure(ctx, args.atoms, np.random.default_rng(args.seed))
    p = args.p if args.p is not None else spec.Q / (spec.Q - 2)
    h = args.h if args.h is not None else 0.003 * mu.total
    cov = cartan_cover(ctx, mu, h, p, args.test_points, args.seed)
    return {"measure": mu.to_dict(), **cov.to_dict()}, ctx.constants()


def cmd_mp_classify(args):
    spec = _spec(args)
    ctx = _context(args, spec)
    desc = parse_descriptor(_load_text(args.domain))
    v = classify_mp(ctx, desc, args.p)
    return v.to_dict(), ctx.constants()


def _fd_boundary(selector: str, rng: np.random.Generator, N: int):
    if selector == "random":
        return fd.random_nonpositive_boundary(rng, N)
    if selector.startswith("const:"):
        return fd.constant_boundary(float(selector.split(":", 1)[1]))
    if selector == "zero":
        return fd.constant_boundary(0.0)
    raise InputError(f"unknown boundary selector {selector!r}")


def cmd_fd_verify(args):
    spec = _spec(args)
    expop = fd.expand_operator(spec)
    desc = parse_descriptor(_load_text(args.domain)) if args.domain else Whole()
    n = args.n if args.h is None else int(round(2.0 * args.R ** spec.sigma[0] / args.h)) + 1
    grid = fd.weighted_box(spec, args.R, n)
    rng = np.random.default_rng(args.seed)
    out = {"grid": {"nodes_per_axis": n, "h": grid.h.tolist(), "lo": list(grid.lo), "hi": list(grid.hi)},
           "ellipticity": expop.ellipticity_report(seed=args.seed)}
    if isinstance(desc, HalfSpace):
        v = np.asarray(desc.v, float)
        probes = np.asarray(json.loads(args.probes)) if args.probes else \
            np.array([v / np.linalg.norm(v) * t for t in (0.1, 0.2, 0.4)]) + desc.h * v / (v @ v)
        radii = _floats(args.radii) if args.radii else [args.R]
        if desc.h != 0:
            raise InputError("fd verify supports half-spaces through the origin (h = 0)")
        out["truncation_study"] = fd.halfspace_truncation_study(expop, v, radii, n, args.eps,
                                                                probes, args.scheme)
        return out, {}
    if not isinstance(desc, Whole):
        raise InputError("fd verify domains: whole box or a half-space")
    prob = fd.assemble(expop, grid, args.scheme)
    out["assembly"] = prob.summary()
    out["m_matrix"] = fd.m_matrix_report(prob)
    if args.trials:
        out["trials"] = fd.randomized_mp_trials(prob, args.trials, args.seed)
    g = _fd_boundary(args.boundary, rng, spec.N)
    q = prob.with_boundary(g)
    u = fd.solve_dirichlet(q)
    out["solve"] = fd.check_discrete_mp(q, u)
    g2 = fd.random_nonpositive_boundary(rng, spec.N)
    out["comparison"] = fd.comparison_check(prob, lambda X: np.minimum(g(X), g2(X)), g)
    semi = fd.semilinear_check(q if args.boundary != "zero" else prob,
                               lambda X, z: -np.maximum(z, 0.0))
    semi.pop("u")
    out["semilinear"] = semi
    if args.csv:
        X = prob.coords()
        mid = X[:, -1] == X[np.argmin(np.abs(X[:, -1])), -1]
        rows = [",".join(f"x{i + 1}" for i in range(spec.N)) + ",u"]
        rows += [",".join(f"{c:.9g}" for c in x) + f",{val:.12g}" for x, val in zip(X[mid], u[mid])]
        Path(args.csv).write_text("\n".join(rows) + "\n")
    return out, {}


# -- parser -----------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, constants: bool = False):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", default="heisenberg", help="built-in operator (default heisenberg)")
    src.add_argument("--spec", help="operator config: inline JSON/YAML or a file path")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--output", "-o", help=f"JSON output path (default: ${OUTPUT_ENV}/<command>.json or stdout)")
    if constants:
        p.add_argument("--constants", help="calibration JSON written by `calibrate`")
        p.add_argument("--c1-hat", type=float)
        p.add_argument("--c-hat", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hormander-mp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ops = sub.add_parser("ops").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ops.add_parser("validate", help="check operator invariants")
    _common(p)
    p.set_defaults(func=cmd_ops_validate)

    p = sub.add_parser("volume", help="volume polynomials and doubling checks")
    _common(p)
    p.set_defaults(func=cmd_volume)

    p = sub.add_parser("dist", help="control-distance upper estimate")
    _common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--segments", type=int, default=12)
    p.add_argument("--restarts", type=int, default=16)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("calibrate", help="fit c1_hat and c_hat; writes a constants artifact")
    _common(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gamma", help="quasi-metric evaluations")
    p.add_argument("action", choices=["eval", "ball-volume", "triangle-scan", "decay"])
    _common(p, constants=True)
    p.add_argument("--x", default=None)
    p.add_argument("--y", default=None)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--radii", help="comma-separated radii: doubling fit instead of one volume")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--sandwich", type=int, default=0, help="points for the ball sandwich check")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--lambdas", default="1,2,4,8,16")
    p.add_argument("--csv", help="decay curve CSV path")
    p.set_defaults(func=cmd_gamma)

    cover = sub.add_parser("cover").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cover.add_parser("check", help="p-sum certificate of a ball family")
    _common(p, constants=True)
    p.add_argument("--cover", required=True, help="JSON list of {center, radius} (inline or file)")
    p.add_argument("--p", type=float)
    p.add_argument("--kind", choices=["gamma", "d_ball"], default="gamma")
    p.add_argument("--finite", action="store_true", help="the list is the whole family")
    p.add_argument("--target", help="JSON list of points that must be covered")
    p.set_defaults(func=cmd_cover)

    cone = sub.add_parser("cone").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cone.add_parser("detect", help="dilation cone inside a half-space, optional Gamma-cone")
    _common(p, constants=True)
    p.add_argument("--domain", required=True, help="set descriptor")
    p.add_argument("--gamma-cone", action="store_true")
    p.add_argument("--levels", type=int, default=8)
    p.set_defaults(func=cmd_cone)

    p = sub.add_parser("cartan", help="Cartan-type covering of a discrete potential")
    _common(p, constants=True)
    p.add_argument("--measure", help="JSON {atoms, masses} (inline or file)")
    p.add_argument("--atoms", type=int, default=20)
    p.add_argument("--h", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--test-points", type=int, default=1000)
    p.set_defaults(func=cmd_cartan)

    mp = sub.add_parser("mp").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = mp.add_parser("classify", help="maximum-principle verdict for a domain")
    _common(p, constants=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--p", type=float)
    p.set_defaults(func=cmd_mp_classify)

    fdp = sub.add_parser("fd").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = fdp.add_parser("verify", help="discrete maximum-principle checks")
    _common(p)
    p.add_argument("--domain", help="half-space descriptor; default is the whole box")
    p.add_argument("--R", type=float, default=1.0, help="box delta_R([-1,1]^N)")
    p.add_argument("--n", type=int, default=33, help="nodes per axis")
    p.add_argument("--h", type=float, help="first-axis spacing (overrides --n)")
    p.add_argument("--scheme", choices=["auto", "splitting", "flow"], default="auto")
    p.add_argument("--boundary", default="random", help="random | zero | const:<c>")
    p.add_argument("--trials", type=int, default=0, help="randomized Dirichlet problems")
    p.add_argument("--radii", help="half-space study: comma-separated box scales")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--probes", help="half-space study: JSON list of probe points")
    p.add_argument("--csv", help="solution slice CSV path")
    p.set_defaults(func=cmd_fd_verify)
    return ap


def _command_name(args) -> str:
    return " ".join(x for x in (getattr(args, "command", None), getattr(args, "action", None)) if x)


def _destination(args) -> Optional[Path]:
    if getattr(args, "output", None):
        return Path(args.output)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / (_command_name(args).replace(" ", "_") + ".json")
    return None


def _emit(doc: dict, dest: Optional[Path], started: float, stdout) -> None:
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if dest is None:
        stdout.write(text)
        return
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(text)
    stamp = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
             "elapsed_seconds": round(time.time() - started, 3)}
    dest.with_name(dest.name + ".time.json").write_text(json.dumps(stamp) + "\n")


def run(argv: Optional[List[str]] = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    started = time.time()
    args = None
    doc = {"version": __version__}
    try:
        args = build_parser().parse_args(argv)
        doc.update(command=_command_name(args), inputs=_inputs(args))
        results, constants = args.func(args)
        doc.update(status="ok", results=results, constants=constants,
                   provenance={"calibration_id": constants.get("calibration_id"),
                               "kernel_backend": kernels.BACKEND, "seed": args.seed})
        code = 0
    except NUMERICAL_ERRORS as exc:
        doc.update(status="error", error=_error(exc, "numerical"))
        code = 2
    except INPUT_ERRORS as exc:
        doc.update(status="error", error=_error(exc, "input"))
        code = 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # anything else is a failure of the computation itself
        doc.update(status="error", error=_error(exc, "numerical"))
        code = 2
    _emit(doc, _destination(args) if args is not None else None, started, stdout)
    return code


def _error(exc: BaseException, kind: str) -> dict:
    err = {"kind": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SpecError):
        err["check"] = exc.check
    if isinstance(exc, fd.MMatrixError):
        err["node"] = exc.node
    return err


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
