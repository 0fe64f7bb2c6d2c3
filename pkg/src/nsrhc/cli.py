"""Command-line interface.

::

    nsrhc run <config> --mode <mode> [--out DIR]
    nsrhc sweep <config> --param T=0.25,1,2 [--mode fom_rhc] [--out DIR]
    nsrhc mesh disc --radius 1 --half-width 0.25 --h 0.17 --out mesh.txt
    nsrhc mesh channel --h 0.07 --cyl-h 0.02 --out mesh.txt
    nsrhc check

``<config>`` is a path or the name of a bundled configuration
(``example1``, ``example1_lshape``, ``example2``).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, NsrhcError

log = logging.getLogger("nsrhc")


def _cmd_run(args) -> int:
    from .scenarios import resolve_config, run_scenario

    cfg = resolve_config(args.config)
    outcome = run_scenario(cfg, args.mode, args.out)
    print(outcome.summary)
    return outcome.exit_code


def _cmd_sweep(args) -> int:
    from .scenarios import resolve_config, run_sweep

    if "=" not in args.param:
        raise ConfigError(f"--param expects NAME=v1,v2,..., got {args.param!r}")
    name, raw = args.param.split("=", 1)
    values = [v for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("--param needs at least one value")
    cfg = resolve_config(args.config)
    _, table = run_sweep(cfg, name.strip(), values, args.mode, args.out, not args.no_uncontrolled)
    print(table)
    return 0


def _cmd_mesh(args) -> int:
    from .mesh import export_mesh, generate_channel_with_cylinder, generate_disc_with_hole, generate_rectangle

    if args.geometry == "disc":
        mesh = generate_disc_with_hole(args.radius, args.half_width, args.h)
    elif args.geometry == "channel":
        mesh = generate_channel_with_cylinder(
            args.length, args.height, (args.center_x, args.center_y), args.cyl_radius, args.h, args.cyl_h
        )
    else:
        mesh = generate_rectangle(0.0, args.length, 0.0, args.height, args.nx, args.ny)
    export_mesh(mesh, args.out)
    print(
        f"{args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
        f"h_max={mesh.h_max():.4g}, tags={sorted(mesh.tags)}"
    )
    return 0


def _cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsrhc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config")
    r.add_argument("--mode", required=True, choices=["uncontrolled", "fom_rhc", "mor_rhc", "stationary_only"])
    r.add_argument("--out", default=None, help="output directory (default: [output] dir)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="NAME=v1,v2,... with NAME in T, delta, T_inf, beta, ell, nu, dt")
    s.add_argument("--mode", default="fom_rhc", choices=["fom_rhc", "mor_rhc"])
    s.add_argument("--out", default=None)
    s.add_argument("--no-uncontrolled", action="store_true", help="omit the 'no controls' row")
    s.set_defaults(func=_cmd_sweep)

    m = sub.add_parser("mesh", help="generate and export a mesh")
    m.add_argument("geometry", choices=["disc", "channel", "rectangle"])
    m.add_argument("--out", required=True)
    m.add_argument("--h", type=float, default=0.17, help="target edge length")
    m.add_argument("--radius", type=float, default=1.0)
    m.add_argument("--half-width", type=float, default=0.25)
    m.add_argument("--length", type=float, default=2.2)
    m.add_argument("--height", type=float, default=0.41)
    m.add_argument("--center-x", type=float, default=0.2)
    m.add_argument("--center-y", type=float, default=0.2)
    m.add_argument("--cyl-radius", type=float, default=0.05)
    m.add_argument("--cyl-h", type=float, default=None)
    m.add_argument("--nx", type=int, default=8)
    m.add_argument("--ny", type=int, default=8)
    m.set_defaults(func=_cmd_mesh)

    c = sub.add_parser("check", help="run the fast invariant suite")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NsrhcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
