"""Command-line interface: ``levelcurv <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .expr import DomainError, ExprError, parse

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment, values may be quoted."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if value[:1] in "\"'" and value[-1:] == value[:1] and len(value) >= 2:
                value = value[1:-1]
            elif " #" in value:
                value = value.split(" #", 1)[0].rstrip()
            out[key.replace("-", "_")] = value
    return out


def _common(p, t_range=False):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--function", help="expression in x, y[, z]")
    p.add_argument("--arity", type=int, choices=(2, 3))
    p.add_argument("--radius", type=float, default=None, help="truncation radius R")
    p.add_argument("--cell", type=float, default=None, help="grid cell size h")
    p.add_argument("--out", default=None, help="output directory")
    if t_range:
        p.add_argument("--t-min", type=float)
        p.add_argument("--t-max", type=float)
        p.add_argument("--n-t", type=int, default=41)
        p.add_argument("--plot", action="store_true", help="also write an SVG plot")
        p.add_argument("--export-mesh", type=float, default=None, metavar="T",
                       help="write the mesh of level T as OBJ")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="levelcurv", description="Total curvature of level sets.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _common(sub.add_parser("profile", help="scan K and |K| over a range of levels"), t_range=True)
    p = sub.add_parser("jumps", help="scan and detect discontinuities of |K|")
    _common(p, t_range=True)
    p.add_argument("--refine-budget", type=int, default=6)
    p = sub.add_parser("oracle", help="Monte-Carlo projection-count estimate of K, |K|")
    _common(p)
    p.add_argument("--t", type=float)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("gauss-image", help="rasterize the Gauss image of one level")
    _common(p)
    p.add_argument("--t", type=float)
    p.add_argument("--cells", type=int, default=None)
    p = sub.add_parser("escape", help="trace the curves nu_f = u around a level c")
    _common(p)
    p.add_argument("--c", type=float)
    p.add_argument("--direction", type=str)
    p.add_argument("--eps", type=float, default=0.1)
    return parser


def _parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: " + ", ".join(
            ["profile", "jumps", "oracle", "gauss-image", "escape"]))
    if getattr(args, "config", None):
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            if key not in known or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = action.type(value) if action.type else value
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {value!r}") from exc
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _defaults(args):
    if args.radius is None:
        args.radius = 5.0
    if args.cell is None:
        args.cell = min(0.05, args.radius / 40)


def _emit_json(obj, args, name):
    from .app import _clean

    text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / name).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {out / name}: {exc}") from exc
    sys.stdout.write(text)


def run(args) -> int:
    from . import app
    from .levelset import export_obj, extract_level

    _require(args, "function", "arity")
    field = parse(args.function, args.arity)
    _defaults(args)
    cmd = args.command
    if cmd in ("profile", "jumps"):
        _require(args, "t_min", "t_max")
        prof = app.scan(field, (args.t_min, args.t_max), args.n_t, args.radius, args.cell)
        report = app.detect_jumps(prof, args.refine_budget) if cmd == "jumps" else None
        formats = ["csv", "json"] + (["svg"] if args.plot else [])
        if args.out:
            app.emit(prof, report, args.out, formats, stem=cmd)
            if args.export_mesh is not None:
                mesh = extract_level(field, args.export_mesh, args.radius, args.cell)
                path = Path(args.out) / f"mesh_t{args.export_mesh!r}.obj"
                try:
                    export_obj(mesh, path)
                except OSError as exc:
                    raise OSError(f"cannot write {path}: {exc}") from exc
        if report is not None:
            sys.stdout.write(json.dumps(app._clean(report.as_dict()), indent=2, sort_keys=True) + "\n")
        elif not args.out:
            app.write_csv(prof, "/dev/stdout")
        return EXIT_OK
    if cmd == "oracle":
        from .curvature import level_totals
        from .oracle import mc_estimate

        _require(args, "t")
        mesh = extract_level(field, args.t, args.radius, args.cell)
        est = mc_estimate(field, args.t, args.radius, args.samples, seed=args.seed, mesh=mesh)
        out = est.as_dict()
        tt = level_totals(field, args.t, args.radius, args.cell)
        out.update({"K_mesh": tt.k_total, "absK_mesh": tt.k_abs})
        _emit_json(out, args, "oracle.json")
        return EXIT_OK
    if cmd == "gauss-image":
        from .sphimage import rasterize, strata_areas

        _require(args, "t")
        mesh = extract_level(field, args.t, args.radius, args.cell)
        r = rasterize(mesh, field, args.cells)
        if args.out:
            path = Path(args.out) / "raster.csv"
            try:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                r.to_csv(path)
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
        _emit_json({"t": args.t, "cells": r.partition.m, "cell_area": r.cell_area,
                    "strata": {str(k): v for k, v in strata_areas(r).items()},
                    "absK_raster": r.abs_total(), "K_raster": r.signed_total(),
                    "flagged_cells": int(r.flagged.sum())}, args, "strata.json")
        return EXIT_OK
    if cmd == "escape":
        from .sphimage import escape_diagnostic

        _require(args, "c", "direction")
        try:
            u = np.array([float(s) for s in args.direction.split(",")])
        except ValueError as exc:
            raise UsageError(f"bad direction {args.direction!r}") from exc
        if len(u) != field.arity or not np.linalg.norm(u) > 0:
            raise UsageError(f"direction must be a non-zero {field.arity}-vector")
        comps = escape_diagnostic(field, args.c, u, args.eps, args.radius, h=args.cell)
        _emit_json({"c": args.c, "direction": (u / np.linalg.norm(u)).tolist(), "components": [
            {"f_range": list(cp.f_range), "crosses_c": cp.crosses_c, "exits": cp.exits,
             "truncated": cp.truncated, "one_sided_escape": cp.one_sided_escape,
             "n_points": len(cp.points)} for cp in comps]}, args, "escape.json")
        return EXIT_OK
    raise UsageError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(args)
    except (UsageError, ExprError, ValueError) as exc:
        if isinstance(exc, DomainError):
            print(f"levelcurv: numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"levelcurv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"levelcurv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"levelcurv: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
