"""Command-line entry point: ``heisenvar <command> [options]``.

Every command writes its artifacts into ``--output-dir``.  Exit codes: 0 on
success, 2 on invalid input, 3 when an iterative method did not converge (partial
artifacts plus ``failure.json`` are still written).  Errors are also printed as a
JSON object on standard error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bubbles import (BubbleTrack, PSSpec, RecoverySpec, dE_residual, energy_E_lambda, energy_E_star,
                      recovery_glued, recovery_single, synth_ps_sequence)
from .errors import ConvergenceError, ValidationError
from .extremals import BubbleSpec, bubble_field, estimate_Sstar
from .grid import DomainMask, FieldFormatError, Grid, load_field, quadrature_lp, save_field
from .group import GroupPoint
from .hdiff import dirichlet_energy
from .measures import concentration_report
from .profiles import extract_profiles, splitting_report
from .subcrit import SubcritConfig, epsilon_sweep, holder_bound, solve_subcritical, sweep_csv

log = logging.getLogger("heisenvar")

EXIT_OK, EXIT_INVALID, EXIT_NOCONV = 0, 2, 3
_META = ("command", "config", "output_dir", "threads", "verbose", "func")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- number formatting -------------------------------------------------------------

def _num(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits and sorted keys."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


# -- argument helpers --------------------------------------------------------------

def _floats(text: str, n: int | None = None):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ValidationError(f"expected {n} numbers, got {text!r}")
    return vals


def _point(text: str) -> GroupPoint:
    return GroupPoint.from_xyt(*_floats(text, 3))


def _resolution(text: str):
    vals = [int(v) for v in _floats(text)]
    if len(vals) == 1:
        return vals * 3
    if len(vals) != 3:
        raise ValidationError(f"resolution needs 1 or 3 integers, got {text!r}")
    return vals


def _domain(args):
    res = _resolution(args.res)
    if args.domain == "ball":
        hw = [args.box] * 2 + [args.box**2] if args.half_widths is None else _floats(args.half_widths, 3)
        grid = Grid.box(hw, res)
        mask = DomainMask.koranyi_ball(grid, args.rho, _point(args.center))
    elif args.domain == "box":
        hw = _floats(args.half_widths or "1,1,1", 3)
        grid = Grid.box(hw, res)
        mask = DomainMask.full(grid)
    else:
        axes = _floats(args.semi_axes, 3)
        grid = Grid.box(_floats(args.half_widths, 3) if args.half_widths else axes, res)
        mask = DomainMask.ellipsoid(grid, axes)
    return grid, mask


def _add_domain(p, res="33"):
    g = p.add_argument_group("domain")
    g.add_argument("--domain", choices=("ball", "box", "ellipsoid"), default="ball")
    g.add_argument("--rho", type=float, default=0.8, help="Koranyi ball radius")
    g.add_argument("--center", default="0,0,0", help="ball centre x,y,t")
    g.add_argument("--box", type=float, default=1.0, help="ball grid: box [-b,b]^2 x [-b^2,b^2]")
    g.add_argument("--half-widths", default=None, help="grid half widths wx,wy,wt (overrides --box)")
    g.add_argument("--semi-axes", default="1,1,1", help="ellipsoid semi-axes")
    g.add_argument("--res", default=res, help="nodes per axis: N or Nx,Ny,Nt")


# -- provenance and output ------------------------------------------------------------

def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    def __init__(self, args):
        self.command = args.command
        self.config = {k: v for k, v in sorted(vars(args).items()) if k not in _META}
        self.out = Path(args.output_dir)
        self.inputs = {}
        for key in ("input", "base"):
            val = self.config.get(key)
            for path in ([val] if isinstance(val, str) else val or []):
                self.inputs[str(path)] = _file_digest(path)
        blob = json.dumps({"command": self.command, "config": self.config, "inputs": self.inputs},
                          sort_keys=True, default=str)
        self.hash = hashlib.sha256(blob.encode()).hexdigest()
        self.grid = None
        self.written = []

    def provenance(self) -> dict:
        p = {"tool": "heisenvar", "version": __version__, "command": self.command, "config_hash": self.hash,
             "config": self.config}
        if self.grid is not None:
            p["grid"] = self.grid.descriptor()
        if self.inputs:
            p["inputs"] = self.inputs
        return p

    def header_lines(self):
        lines = [f"heisenvar {__version__} {self.command}", f"config_hash {self.hash}"]
        if self.grid is not None:
            lines.append("grid " + json.dumps(self.grid.descriptor(), sort_keys=True))
        return lines

    def _path(self, name) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        self.written.append(str(path))
        return path

    def json(self, name, payload):
        body = {"provenance": self.provenance(), **payload}
        self._path(name).write_text(dumps(body) + "\n", encoding="utf-8")

    def csv(self, name, text):
        self._path(name).write_text(text, encoding="utf-8")

    def field(self, name, u):
        save_field(u, self._path(name), {"command": self.command, "config_hash": self.hash,
                                         "version": __version__})


# -- commands -------------------------------------------------------------------------

def cmd_extremal(args, run: Run) -> int:
    est = estimate_Sstar(tuple(int(v) for v in _floats(args.resolutions)), args.lam,
                         _point(args.bubble_center), tuple(_floats(args.quad_half_widths, 3)))
    run.json("extremal.json", {"s_star": est.value, "error": est.error, "resolutions": list(est.resolutions),
                               "quotients": list(est.quotients), "error_bars": list(est.error_bars),
                               "shrink_factor": est.shrink_factor if len(est.error_bars) > 1 else None,
                               "reference_1_over_4pi2": 1.0 / (4.0 * math.pi**2)})
    if args.write_field:
        grid, mask = _domain(args)
        run.grid = grid
        run.field("bubble.hsf", bubble_field(BubbleSpec(args.lam, _point(args.bubble_center)), grid, mask))
    return EXIT_OK


def cmd_energy(args, run: Run) -> int:
    u = load_field(args.input)
    run.grid = u.grid
    res = dE_residual(u, args.lambda_param, dual=args.dual)
    run.json("energy.json", {"dirichlet_energy": dirichlet_energy(u), "l2star_power": quadrature_lp(u, 4.0),
                             "e_lambda": energy_E_lambda(u, args.lambda_param), "e_star": energy_E_star(u),
                             "residual_bank": res.bank, "residual_l2": res.l2, "residual_dual": res.dual})
    return EXIT_OK


def _subcrit_config(args, eps):
    init = args.init
    if init not in ("bubble", "random"):
        init = load_field(init)
    return SubcritConfig(epsilon=eps, fp_tol=args.fp_tol, fp_max_iter=args.fp_max_iter, cg_tol=args.cg_tol,
                         init=init, init_lam=args.init_lam, seed=args.seed)


def cmd_solve(args, run: Run) -> int:
    grid, mask = _domain(args)
    run.grid = grid
    rep = solve_subcritical(_subcrit_config(args, args.eps), grid, mask)
    run.field("maximizer.hsf", rep.maximizer)
    payload = {"epsilon": rep.epsilon, "s_eps": rep.s_eps, "multiplier": rep.multiplier,
               "el_residual": rep.el_residual, "iterations": rep.iterations, "converged": rep.converged,
               "fixed_point_change": rep.fp_change, "max_descent": rep.max_descent, "history": rep.history}
    run.json("solve.json", payload)
    if not rep.converged:
        raise ConvergenceError(f"fixed point did not converge at eps={args.eps}", residual=rep.fp_change,
                               iterations=rep.iterations)
    return EXIT_OK


def cmd_sweep(args, run: Run) -> int:
    grid, mask = _domain(args)
    run.grid = grid
    eps = _floats(args.eps)
    base = _subcrit_config(args, eps[0])
    rows = epsilon_sweep(eps, grid, mask, warm_start=not args.cold, base=base, keep_fields=False)
    run.csv("sweep.csv", sweep_csv(rows, run.header_lines()))
    summary = {"volume": mask.volume, "koranyi_diameter": grid.koranyi_diameter,
               "rows": [{"epsilon": r.epsilon, "s_eps": r.s_eps, "converged": r.converged, "error": r.error}
                        for r in rows]}
    if args.s_star is not None:
        for r, d in zip(rows, summary["rows"]):
            d["holder_bound"] = holder_bound(args.s_star, mask.volume, r.epsilon)
    run.json("sweep.json", summary)
    bad = [r.epsilon for r in rows if not r.converged]
    if bad:
        raise ConvergenceError(f"sweep rows did not converge: eps={bad}")
    return EXIT_OK


def cmd_concentrate(args, run: Run) -> int:
    u = load_field(args.input)
    run.grid = u.grid
    radii = _floats(args.radii) if args.radii else [u.grid.koranyi_diameter / 8, u.grid.koranyi_diameter / 4]
    run.json("concentration.json", concentration_report(u, radii).as_dict())
    return EXIT_OK


def _bubble_track(text) -> BubbleTrack:
    v = _floats(text)
    if len(v) not in (5, 6, 7):
        raise ValidationError(f"--bubble needs lam0,rate,x,y,t[,cutoff_rho[,amplitude]], got {text!r}")
    kw = {}
    if len(v) >= 6 and v[5] > 0:
        kw["cutoff_rho"] = v[5]
    if len(v) == 7:
        kw["amplitude"] = v[6]
    return BubbleTrack(v[0], v[1], GroupPoint.from_xyt(*v[2:5]), **kw)


def cmd_synth(args, run: Run) -> int:
    grid, mask = _domain(args)
    run.grid = grid
    if args.kind == "ps":
        if not args.bubble:
            raise ValidationError("synth --kind ps needs at least one --bubble")
        k0, k1 = (int(v) for v in _floats(args.k_range, 2))
        spec = PSSpec([_bubble_track(b) for b in args.bubble], (k0, k1), args.lambda_param,
                      load_field(args.base) if args.base else None, args.noise, args.seed)
        seq = synth_ps_sequence(spec, grid, mask)
        names = [f"seq_{k:03d}.hsf" for k in spec.ks]
        meta = {"kind": "ps", "ks": spec.ks,
                "bubbles": [{"scales": [b.scale(k) for k in spec.ks], "center": list(b.center_at(k1)),
                             "amplitude": b.amplitude, "cutoff_rho": b.cutoff_rho} for b in spec.bubbles]}
    else:
        if not args.target:
            raise ValidationError("synth --kind recovery needs at least one --target")
        targets = [(v[0], GroupPoint.from_xyt(*v[1:])) for v in (_floats(t, 4) for t in args.target)]
        spec = RecoverySpec(targets, args.cutoff_rho, tuple(_floats(args.eps_ladder)))
        if len(targets) == 1 and targets[0][0] == 1.0:
            seq = [recovery_single(targets[0][1], e, args.cutoff_rho, grid, mask) for e in spec.eps_ladder]
        else:
            seq = [recovery_glued(spec, e, grid, mask) for e in spec.eps_ladder]
        names = [f"rec_{i:03d}.hsf" for i in range(len(seq))]
        meta = {"kind": "recovery", "eps_ladder": list(spec.eps_ladder),
                "targets": [{"weight": w, "center": list(c)} for w, c in spec.targets]}
    for name, u in zip(names, seq):
        run.field(name, u)
    meta["files"] = names
    meta["dirichlet_energy"] = [dirichlet_energy(u) for u in seq]
    run.json("synth.json", meta)
    return EXIT_OK


def _load_sequence(paths):
    seq = [load_field(p) for p in paths]
    if any(u.grid != seq[0].grid or not np.array_equal(u.mask.inside, seq[0].mask.inside) for u in seq):
        raise ValidationError("input fields do not share a grid and mask")
    mask = seq[0].mask
    from .grid import Field

    return [Field(mask, u.values) for u in seq]


def _base_on(seq, path):
    if not path:
        return None
    from .grid import Field

    b = load_field(path)
    if b.grid != seq[0].grid:
        raise ValidationError("base field lives on another grid")
    return Field(seq[0].mask, np.where(seq[0].mask.inside, b.values, 0.0))


def cmd_decompose(args, run: Run) -> int:
    seq = _load_sequence(args.input)
    run.grid = seq[0].grid
    base = _base_on(seq, args.base)
    ps = extract_profiles(seq, args.max_profiles, args.stop_tol, base)
    run.json("profiles.json", ps.as_dict())
    if ps.stalled:
        raise ConvergenceError("profile extraction stalled; partial result written")
    return EXIT_OK


def cmd_pscheck(args, run: Run) -> int:
    seq = _load_sequence(args.input)
    run.grid = seq[0].grid
    base = _base_on(seq, args.base)
    ps = extract_profiles(seq, args.max_profiles, args.stop_tol, base)
    rep = splitting_report(seq, base, ps, args.lambda_param)
    run.csv("splitting.csv", rep.to_csv(run.header_lines()))
    body = json.loads(rep.to_json())
    body["profiles"] = ps.as_dict()
    run.json("splitting.json", body)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heisenvar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"heisenvar {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of option values (flags given explicitly win)")
        sp.add_argument("--output-dir", default=".", help="directory for artifacts")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP threads (default: $HEISENVAR_THREADS or the CPU count)")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=func)
        return sp

    sp = add("extremal", cmd_extremal, "quadrature estimate of S* from the Jerison-Lee bubble")
    sp.add_argument("--resolutions", default="17,33,65")
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--bubble-center", default="0,0,0")
    sp.add_argument("--quad-half-widths", default="3,3,9")
    sp.add_argument("--write-field", action="store_true", help="also write the bubble on the domain grid")
    _add_domain(sp)

    sp = add("energy", cmd_energy, "energies and Euler-Lagrange residual of a field file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--lambda-param", type=float, default=0.0)
    sp.add_argument("--dual", action="store_true", help="also compute the exact dual residual norm")

    for name, func, help_ in (("solve", cmd_solve, "subcritical maximiser for one eps"),
                              ("sweep", cmd_sweep, "eps sweep with warm starts")):
        sp = add(name, func, help_)
        if name == "solve":
            sp.add_argument("--eps", type=float, required=True)
        else:
            sp.add_argument("--eps", required=True, help="descending list, e.g. 1.0,0.5,0.25")
            sp.add_argument("--cold", action="store_true", help="disable warm starts")
            sp.add_argument("--s-star", type=float, default=None, help="adds Holder bounds to sweep.json")
        sp.add_argument("--init", default="bubble", help="bubble, random or a field file")
        sp.add_argument("--init-lam", type=float, default=0.3)
        sp.add_argument("--fp-tol", type=float, default=1e-7)
        sp.add_argument("--fp-max-iter", type=int, default=2000)
        sp.add_argument("--cg-tol", type=float, default=1e-10)
        _add_domain(sp)

    sp = add("concentrate", cmd_concentrate, "energy concentration report of a field file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--radii", default=None, help="Koranyi radii (default: diam/8, diam/4)")

    sp = add("synth", cmd_synth, "Palais-Smale or recovery sequences as field files")
    sp.add_argument("--kind", choices=("ps", "recovery"), default="ps")
    sp.add_argument("--bubble", action="append", default=None, help="lam0,rate,x,y,t[,cutoff_rho[,amplitude]]")
    sp.add_argument("--k-range", default="0,6")
    sp.add_argument("--lambda-param", type=float, default=0.0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--base", default=None, help="field file added to every element")
    sp.add_argument("--target", action="append", default=None, help="weight,x,y,t")
    sp.add_argument("--cutoff-rho", type=float, default=0.4)
    sp.add_argument("--eps-ladder", default="0.2,0.1,0.05")
    _add_domain(sp)

    for name, func, help_ in (("decompose", cmd_decompose, "profile decomposition of a field sequence"),
                              ("pscheck", cmd_pscheck, "norm and energy splitting check")):
        sp = add(name, func, help_)
        sp.add_argument("--input", nargs="+", required=True, help="sequence field files in k order")
        sp.add_argument("--base", default=None)
        sp.add_argument("--stop-tol", type=float, default=0.05)
        sp.add_argument("--max-profiles", type=int, default=8)
        if name == "pscheck":
            sp.add_argument("--lambda-param", type=float, default=0.0)
    return p


def _apply_config(parser, argv):
    """Parse ``argv`` with values from ``--config`` as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    if not known.config or known.command not in sub.choices:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    sp = sub.choices[known.command]
    norm = {k.replace("-", "_"): v for k, v in cfg.items() if k not in ("command", "config")}
    unknown = sorted(set(norm) - {a.dest for a in sp._actions})
    if unknown:
        raise ValidationError(f"unknown config keys for {known.command}: {unknown}")
    for a in sp._actions:
        if a.dest in norm:
            a.required = False
    sp.set_defaults(**norm)
    return parser.parse_args(argv)


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("HEISENVAR_THREADS"):
        try:
            n = int(os.environ["HEISENVAR_THREADS"])
        except ValueError as exc:
            raise ValidationError("HEISENVAR_THREADS must be an integer") from exc
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValidationError("thread count must be positive")
    return n


def _fail(kind: str, message: str, command=None, **extra) -> None:
    rec = {"error": kind, "message": message}
    if command:
        rec["command"] = command
    rec.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps(rec, sort_keys=True, default=str) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        n_threads = _threads(args)
    except UsageError as exc:
        _fail("usage", str(exc))
        return EXIT_INVALID
    except ValidationError as exc:
        _fail("validation", str(exc))
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    run = None
    try:
        run = Run(args)
        with threadpool_limits(limits=n_threads):
            return args.func(args, run)
    except (ValidationError, FieldFormatError, ValueError, OSError) as exc:
        _fail("validation", str(exc), args.command)
        return EXIT_INVALID
    except ConvergenceError as exc:
        _fail("convergence", str(exc), args.command, residual=exc.residual, iterations=exc.iterations)
        if run is not None:
            run.json("failure.json", {"error": "convergence", "message": str(exc), "residual": exc.residual,
                                      "iterations": exc.iterations, "artifacts": list(run.written)})
        return EXIT_NOCONV
