"""``bench`` command line: run a campaign, write meshes, draw SVGs."""

from __future__ import annotations

import argparse
import logging
import sys

from ..assembly import SolverError, apply_dirichlet, assemble_global, build_dof_map, direct_solve_reference, lid_velocity
from ..decomp import PartitionError, partition_mesh
from ..mesh import MeshError, read_mesh, write_mesh
from .config import FAMILIES, PARTITIONS, ConfigError, load_config
from .report import csv_text, details_text
from .runner import build_mesh, run_experiment_matrix
from .sinkers import SinkerField

log = logging.getLogger("vembddc.bench")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        cfg.output = args.out
    if args.details:
        cfg.details = args.details

    def progress(row):
        log.info("%s %s %s nsub=%d nsink=%d: n_pi=%s it=%s k2=%.4g %s", row.mesh, row.coarse, row.scaling,
                 row.nsub, row.nsink, row.n_pi, row.iters, row.k2, row.status)

    table = run_experiment_matrix(cfg, progress=progress)
    text = csv_text(table)
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if cfg.details:
        with open(cfg.details, "w") as fh:
            fh.write(details_text(table))
    bad = table.failed()
    if bad:
        print(f"{len(bad)} of {len(table)} runs failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_mesh(args) -> int:
    mesh = build_mesh(args.family, args.cells, args.seed, args.lloyd_iters)
    write_mesh(mesh, args.out)
    print(f"{args.out}: {mesh.n_cells} cells, {mesh.n_vertices} vertices")
    return EXIT_OK


def _cmd_svg(args) -> int:
    from .svg import emit_svg

    if args.mesh:
        mesh = read_mesh(args.mesh)
    else:
        mesh = build_mesh(args.family, args.cells, args.seed, args.lloyd_iters)
    sinkers = SinkerField.random(args.nsink, args.seed_sinkers)
    kw = {"sinkers": sinkers}
    if args.field == "partition":
        kw["decomp"] = partition_mesh(mesh, args.nsub, args.partition, seed=args.seed)
    elif args.field == "speed":
        dofmap = build_dof_map(mesh)
        system = assemble_global(mesh, dofmap, sinkers.viscosity, sinkers.load)
        system = apply_dirichlet(system, lambda p: lid_velocity(p, args.lid_speed))
        kw.update(dofmap=dofmap, u=direct_solve_reference(system).u)
    emit_svg(mesh, args.field, args.out, **kw)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description="VEM Stokes BDDC sinker benchmark")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment matrix")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="CSV path (default: config 'output' or stdout)")
    r.add_argument("--details", help="structured-text detail file")
    r.set_defaults(func=_cmd_run)

    def mesh_args(p, required):
        p.add_argument("--family", choices=FAMILIES, default="cvt")
        p.add_argument("--cells", type=int, required=required, default=None if required else 256)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--lloyd-iters", type=int, default=200)

    m = sub.add_parser("mesh", help="generate a mesh file")
    mesh_args(m, True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_mesh)

    s = sub.add_parser("svg", help="draw a cell field")
    s.add_argument("--field", choices=("viscosity", "partition", "speed"), required=True)
    s.add_argument("--mesh", help="mesh file; otherwise generated from --family/--cells/--seed")
    mesh_args(s, False)
    s.add_argument("--nsink", type=int, default=1)
    s.add_argument("--seed-sinkers", type=int, default=2)
    s.add_argument("--nsub", type=int, default=16)
    s.add_argument("--partition", choices=[p for p in PARTITIONS if p != "file"], default="coordinate-bisection")
    s.add_argument("--lid-speed", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_svg)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MeshError, PartitionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
