"""Experiment matrix: coarse space x scaling x mesh family x subdomains x sinkers."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import coarse as coarse_mod
from ..assembly import (
    SolverError,
    apply_dirichlet,
    assemble_global,
    back_substitute,
    build_dof_map,
    build_subdomain_operators,
    direct_solve_reference,
    interface_rhs_and_operator,
    lid_velocity,
)
from ..bddc import (
    ConvergenceError,
    SolveReport,
    build_edge_transformations,
    build_preconditioner,
    deluxe_scaling,
    multiplicity_scaling,
    pcg_solve,
)
from ..decomp import classify_dofs, extract_interface, partition_mesh
from ..mesh import generate_cvt, generate_random_voronoi
from .config import ExperimentConfig
from .sinkers import SinkerField

log = logging.getLogger(__name__)

CSV_COLUMNS = ("coarse", "scaling", "mesh", "cells", "nsub", "nsink", "tol", "n_pi", "iters", "k2",
               "rel_residual", "status", "seed_mesh", "seed_sinkers")


@dataclass
class ReportRow:
    coarse: str
    scaling: str
    mesh: str
    cells: int
    nsub: int
    nsink: int
    tol: float | None
    n_pi: int | None
    iters: int | None
    k2: float | None
    rel_residual: float | None
    status: str
    seed_mesh: int
    seed_sinkers: int
    report: SolveReport | None = field(default=None, repr=False, compare=False)
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def failed(self) -> list[ReportRow]:
        return [r for r in self.rows if r.status != "ok"]

    def select(self, **kw) -> list[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


def build_mesh(family: str, cells: int, seed: int, lloyd_max_iters: int = 200):
    if family == "cvt":
        return generate_cvt(cells, seed, max_lloyd_iters=lloyd_max_iters)
    if family == "rnd":
        return generate_random_voronoi(cells, seed)
    raise ValueError(f"unknown mesh family {family!r}")


@dataclass
class _Problem:
    system: object
    decomp: object
    skeleton: object
    cls: object
    subops: list
    problem: object
    reference: object | None


def _setup(mesh, dofmap, decomp, skeleton, cls, field_: SinkerField, cfg: ExperimentConfig) -> _Problem:
    system = assemble_global(mesh, dofmap, field_.viscosity, field_.load)
    system = apply_dirichlet(system, lambda p: lid_velocity(p, cfg.lid_speed))
    reference = None
    if dofmap.n_velocity <= cfg.direct_check_max:
        reference = direct_solve_reference(system)
    subops = build_subdomain_operators(system, cls)
    problem = interface_rhs_and_operator(subops, cls)
    return _Problem(system, decomp, skeleton, cls, subops, problem, reference)


def _solve_one(pb: _Problem, dofmap, kind: str, scaling, cfg: ExperimentConfig):
    tol = cfg.tol if kind in ("first", "second") else None
    cset = coarse_mod.enrich(kind, pb.skeleton, pb.subops, scaling, pb.cls, dofmap, pb.decomp,
                             tol=tol, max_per_edge=cfg.max_per_edge)
    transformations = build_edge_transformations(cset.matrices())
    precond = build_preconditioner(pb.problem, pb.cls, pb.skeleton, transformations, scaling)
    report = SolveReport(n_pi=precond.n_pi, coarse=kind, scaling=scaling.kind, dropped=precond.dropped)
    report.meta["n_pi_before_drops"] = cset.n_pi()
    x, report = pcg_solve(pb.problem, pb.problem.rhs, precond, rtol=cfg.rtol, maxit=cfg.maxit, report=report)
    u, p = back_substitute(pb.problem, x, pb.system)
    if pb.reference is not None:
        ref = pb.reference
        err = np.linalg.norm(u - ref.u) / max(np.linalg.norm(ref.u), 1e-300)
        report.meta["velocity_error"] = float(err)
        if err > 10 * cfg.rtol:
            report.status = "xcheck"
            log.warning("%s/%s: velocity differs from direct solve by %.2e", kind, scaling.kind, err)
    return report


def run_experiment_matrix(cfg: ExperimentConfig, progress=None) -> ReportTable:
    """Run every matrix entry; failures become rows with an error status."""
    table = ReportTable(config=cfg.to_dict())
    if not (cfg.families and cfg.nsub and cfg.nsink and cfg.coarse and cfg.scaling):
        return table
    for family in cfg.families:
        mesh = build_mesh(family, cfg.cells, cfg.seed_mesh, cfg.lloyd_max_iters)
        dofmap = build_dof_map(mesh)
        for nsub in cfg.nsub:
            decomp = partition_mesh(mesh, nsub, cfg.partition, seed=cfg.seed_mesh, path=cfg.partition_file)
            skeleton = extract_interface(mesh, decomp)
            cls = classify_dofs(dofmap, skeleton, decomp)
            for nsink in cfg.nsink:
                field_ = SinkerField.random(nsink, cfg.seed_sinkers, omega=cfg.omega, delta=cfg.delta,
                                            nu_min=cfg.nu_min, nu_max=cfg.nu_max, beta=cfg.beta)
                base = dict(mesh=family.upper(), cells=mesh.n_cells, nsub=nsub, nsink=nsink,
                            seed_mesh=cfg.seed_mesh, seed_sinkers=cfg.seed_sinkers)
                try:
                    pb = _setup(mesh, dofmap, decomp, skeleton, cls, field_, cfg)
                except SolverError as exc:
                    for sc in cfg.scaling:
                        for kind in cfg.coarse:
                            table.rows.append(_failed_row(kind, sc, cfg, base, exc))
                    continue
                for sc_name in cfg.scaling:
                    try:
                        if sc_name == "multiplicity":
                            scaling = multiplicity_scaling(skeleton, cls)
                        else:
                            scaling = deluxe_scaling(pb.subops, skeleton, cls, transformed=cfg.deluxe_transformed)
                    except SolverError as exc:
                        for kind in cfg.coarse:
                            table.rows.append(_failed_row(kind, sc_name, cfg, base, exc))
                        continue
                    for kind in cfg.coarse:
                        t0 = time.perf_counter()
                        try:
                            rep = _solve_one(pb, dofmap, kind, scaling, cfg)
                        except ConvergenceError as exc:
                            rep = exc.report
                        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
                            table.rows.append(_failed_row(kind, sc_name, cfg, base, exc))
                            continue
                        rep.meta["seconds"] = time.perf_counter() - t0
                        row = ReportRow(kind, sc_name, tol=cfg.tol if kind in ("first", "second") else None,
                                        n_pi=rep.n_pi, iters=rep.iterations, k2=rep.k2,
                                        rel_residual=rep.rel_residual, status=rep.status, report=rep, **base)
                        table.rows.append(row)
                        if progress:
                            progress(row)
    return table


def _failed_row(kind, sc_name, cfg, base, exc) -> ReportRow:
    log.error("%s/%s failed: %s", kind, sc_name, exc)
    tol = cfg.tol if kind in ("first", "second") else None
    return ReportRow(kind, sc_name, tol=tol, n_pi=None, iters=None, k2=None, rel_residual=None,
                     status=f"error:{type(exc).__name__}", extra={"message": str(exc)}, **base)
