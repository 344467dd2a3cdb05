"""Global dof numbering, saddle-point assembly and the direct reference solve."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..mesh import PolyMesh
from ..mesh.geometry import polygon_rule
from ..vem import GL_WEIGHTS, VemCell

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class DofMap:
    """Global velocity and pressure numbering.

    Velocity: ``2v+d`` for vertex ``v``, ``2nV+2e+d`` for the node of edge
    ``e`` and ``2nV+2nE+2c+a`` for the two divergence moments of cell ``c``.
    Pressure: ``3c+a`` for the coefficient of monomial ``a`` on cell ``c``.
    """

    VERTEX, EDGE, MOMENT = 0, 1, 2

    def __init__(self, mesh: PolyMesh):
        self.mesh = mesh
        nv, ne, nc = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.edge_offset = 2 * nv
        self.moment_offset = 2 * nv + 2 * ne
        self.n_velocity = 2 * nv + 2 * ne + 2 * nc
        self.n_pressure = 3 * nc
        kind = np.empty(self.n_velocity, dtype=np.int8)
        kind[: 2 * nv] = self.VERTEX
        kind[2 * nv: 2 * nv + 2 * ne] = self.EDGE
        kind[2 * nv + 2 * ne:] = self.MOMENT
        self.kind = kind
        # entity id (vertex, edge or cell) and component of every velocity dof
        ent = np.arange(self.n_velocity)
        self.entity = np.where(kind == self.VERTEX, ent // 2,
                               np.where(kind == self.EDGE, (ent - 2 * nv) // 2,
                                        (ent - 2 * nv - 2 * ne) // 2))
        self.component = ent % 2
        mids = mesh.vertices[mesh.edges].mean(axis=1)
        pos = np.full((self.n_velocity, 2), np.nan)
        pos[: 2 * nv] = np.repeat(mesh.vertices, 2, axis=0)
        pos[2 * nv: 2 * nv + 2 * ne] = np.repeat(mids, 2, axis=0)
        self.position = pos
        self._cell_dofs = [self._local_to_global(c) for c in range(nc)]

    def vertex_dof(self, v, d):
        return 2 * np.asarray(v) + d

    def edge_dof(self, e, d):
        return self.edge_offset + 2 * np.asarray(e) + d

    def moment_dof(self, c, a):
        return self.moment_offset + 2 * np.asarray(c) + a

    def _local_to_global(self, c: int) -> np.ndarray:
        loop = self.mesh.cells[c]
        edges = self.mesh.cell_edges[c]
        out = np.empty(4 * len(loop) + 2, dtype=np.int64)
        out[0: 2 * len(loop): 2] = 2 * loop
        out[1: 2 * len(loop): 2] = 2 * loop + 1
        n = len(loop)
        out[2 * n: 4 * n: 2] = self.edge_offset + 2 * edges
        out[2 * n + 1: 4 * n: 2] = self.edge_offset + 2 * edges + 1
        out[4 * n:] = self.moment_offset + 2 * c + np.arange(2)
        return out

    def cell_velocity_dofs(self, c: int) -> np.ndarray:
        return self._cell_dofs[c]

    def cell_pressure_dofs(self, c: int) -> np.ndarray:
        return 3 * c + np.arange(3)

    def boundary_velocity_dofs(self) -> np.ndarray:
        m = self.mesh
        bv = np.flatnonzero(m.boundary_vertex)
        be = np.flatnonzero(m.boundary_edge)
        return np.sort(np.concatenate([2 * bv, 2 * bv + 1,
                                       self.edge_offset + 2 * be, self.edge_offset + 2 * be + 1]))


def build_dof_map(mesh: PolyMesh) -> DofMap:
    return DofMap(mesh)


@dataclass
class CellBlocks:
    vdofs: np.ndarray
    pdofs: np.ndarray
    A: np.ndarray
    B: np.ndarray
    f: np.ndarray
    M_Q: np.ndarray
    flux: np.ndarray
    area: float
    nu: float


@dataclass
class GlobalSystem:
    """Assembled saddle-point system ``[[A, B^T], [B, 0]]``.

    After :func:`apply_dirichlet` the fields describing the reduced system
    (``free``, ``dirichlet_values``, ``rhs_u``, ``rhs_p``) are filled in.
    """

    mesh: PolyMesh
    dofmap: DofMap
    A: sp.csr_matrix
    B: sp.csr_matrix
    f: np.ndarray
    cells: list[CellBlocks]
    pressure_mean: np.ndarray  # row with pressure_mean @ p = int_Omega p
    dirichlet: np.ndarray | None = None
    dirichlet_values: np.ndarray | None = None
    free: np.ndarray | None = None
    rhs_u: np.ndarray | None = None
    rhs_p: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def reduced(self) -> bool:
        return self.free is not None

    @property
    def A_ff(self) -> sp.csr_matrix:
        return self.A[self.free][:, self.free]

    @property
    def B_f(self) -> sp.csr_matrix:
        return self.B[:, self.free]


def cell_viscosity(mesh: PolyMesh, viscosity) -> np.ndarray:
    """Viscosity sampled at cell centroids."""
    cen = mesh.cell_centroids()
    if callable(viscosity):
        return np.asarray(viscosity(cen), dtype=float).reshape(mesh.n_cells)
    return np.full(mesh.n_cells, float(viscosity))


def assemble_global(mesh: PolyMesh, dofmap: DofMap, viscosity, load=None) -> GlobalSystem:
    """Scatter-add local VEM blocks.

    ``viscosity`` is a scalar or a vectorised callable ``nu(points)``;
    ``load`` is a callable ``f(point) -> (2,)`` or ``None``.
    """
    nu = cell_viscosity(mesh, viscosity)
    rows, cols, vals = [], [], []
    brows, bcols, bvals = [], [], []
    f = np.zeros(dofmap.n_velocity)
    pmean = np.zeros(dofmap.n_pressure)
    cells = []
    for c in range(mesh.n_cells):
        try:
            cell = VemCell(mesh.cell_coords(c), cell_id=c)
            A_K = cell.stiffness(nu[c])
        except ValueError as exc:
            raise type(exc)(f"cell {c}: {exc}") from exc
        B_K = cell.divergence
        f_K = cell.load(load) if load is not None else np.zeros(cell.layout.n_velocity)
        vd = dofmap.cell_velocity_dofs(c)
        pd = dofmap.cell_pressure_dofs(c)
        n = len(vd)
        rows.append(np.repeat(vd, n))
        cols.append(np.tile(vd, n))
        vals.append(A_K.ravel())
        brows.append(np.repeat(pd, n))
        bcols.append(np.tile(vd, 3))
        bvals.append(B_K.ravel())
        np.add.at(f, vd, f_K)
        M_Q = cell.pressure_mass
        pmean[pd] = M_Q[0]
        cells.append(CellBlocks(vd, pd, A_K, B_K, f_K, M_Q, cell.flux_row, cell.area, nu[c]))
    nvel = dofmap.n_velocity
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nvel, nvel))
    B = sp.csr_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
                      shape=(dofmap.n_pressure, nvel))
    A.sum_duplicates()
    B.sum_duplicates()
    return GlobalSystem(mesh, dofmap, A, B, f, cells, pmean)


def boundary_data_vector(dofmap: DofMap, boundary_values) -> np.ndarray:
    """Full-length vector carrying the Dirichlet data on boundary dofs."""
    g = np.zeros(dofmap.n_velocity)
    bd = dofmap.boundary_velocity_dofs()
    if boundary_values is None:
        return g
    pts = dofmap.position[bd]
    vals = np.asarray(boundary_values(pts), dtype=float).reshape(-1, 2)
    g[bd] = vals[np.arange(len(bd)), dofmap.component[bd]]
    return g


def boundary_flux(dofmap: DofMap, g: np.ndarray) -> tuple[float, float]:
    """Net outward flux of the discrete boundary data and a magnitude scale."""
    mesh = dofmap.mesh
    flux, scale = 0.0, 0.0
    for e in np.flatnonzero(mesh.boundary_edge):
        c = mesh.edge_cells[e, 0]
        loop = mesh.cells[c]
        k = int(np.flatnonzero(mesh.cell_edges[c] == e)[0])
        a, b = loop[k], loop[(k + 1) % len(loop)]
        d = mesh.vertices[b] - mesh.vertices[a]
        ln = np.array([d[1], -d[0]])
        va = g[dofmap.vertex_dof(a, np.arange(2))]
        vm = g[dofmap.edge_dof(e, np.arange(2))]
        vb = g[dofmap.vertex_dof(b, np.arange(2))]
        vals = GL_WEIGHTS[0] * va + GL_WEIGHTS[1] * vm + GL_WEIGHTS[2] * vb
        flux += float(vals @ ln)
        scale += float(np.abs(vals) @ np.abs(ln))
    return flux, scale


def apply_dirichlet(system: GlobalSystem, boundary_values=None, flux_rtol: float = 1e-10) -> GlobalSystem:
    """Eliminate boundary velocity dofs and move the data to the right-hand side."""
    dm = system.dofmap
    g = boundary_data_vector(dm, boundary_values)
    flux, scale = boundary_flux(dm, g)
    if abs(flux) > flux_rtol * max(scale, 1.0):
        raise SolverError(f"boundary data has net flux {flux:.3e}; incompressible problem is inconsistent")
    mask = np.zeros(dm.n_velocity, dtype=bool)
    mask[dm.boundary_velocity_dofs()] = True
    free = np.flatnonzero(~mask)
    rhs_u = system.f[free] - system.A[free] @ g
    rhs_p = -(system.B @ g)
    return replace(system, dirichlet=mask, dirichlet_values=g, free=free, rhs_u=rhs_u, rhs_p=rhs_p)


def saddle_matrix(system: GlobalSystem) -> sp.csr_matrix:
    """Reduced KKT matrix with one multiplier row fixing the pressure mean."""
    A, B = system.A_ff, system.B_f
    w = sp.csr_matrix(system.pressure_mean.reshape(1, -1))
    return sp.bmat([[A, B.T, None], [B, None, w.T], [None, w, None]], format="csc")


@dataclass
class DirectSolution:
    u: np.ndarray  # full velocity vector including Dirichlet values
    p: np.ndarray  # pressure monomial coefficients, 3 per cell
    residual: float

    def pressure_moments(self, system: GlobalSystem) -> np.ndarray:
        out = np.empty_like(self.p)
        for blk in system.cells:
            out[blk.pdofs] = blk.M_Q @ self.p[blk.pdofs]
        return out


def direct_solve_reference(system: GlobalSystem) -> DirectSolution:
    """Gauge-fixed sparse LU solve of the reduced saddle-point system."""
    if not system.reduced:
        system = apply_dirichlet(system)
    K = saddle_matrix(system)
    rhs = np.concatenate([system.rhs_u, system.rhs_p, [0.0]])
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError(f"saddle-point matrix is singular: {exc}") from None
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite values")
    res = np.linalg.norm(K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    nf = len(system.free)
    u = system.dirichlet_values.copy()
    u[system.free] = x[:nf]
    p = x[nf: nf + system.dofmap.n_pressure]
    if res > 1e-10:
        log.warning("direct solve relative residual %.2e", res)
    return DirectSolution(u, p, float(res))


def interpolate_velocity(dofmap: DofMap, u, quad_order: int = 10) -> np.ndarray:
    """Global dof vector of the vector field ``u(points) -> (n, 2)``."""
    mesh = dofmap.mesh
    out = np.zeros(dofmap.n_velocity)
    nv, ne = mesh.n_vertices, mesh.n_edges
    out[: 2 * nv] = np.asarray(u(mesh.vertices)).ravel()
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    out[2 * nv: 2 * nv + 2 * ne] = np.asarray(u(mids)).ravel()
    for c in range(mesh.n_cells):
        cell = VemCell(mesh.cell_coords(c), c)
        out[dofmap.moment_dof(c, np.arange(2))] = cell.divergence_moments(u, quad_order)
    return out


def project_pressure(dofmap: DofMap, p, quad_order: int = 8) -> np.ndarray:
    """L2 projection of the scalar ``p(points)`` onto piecewise P1 coefficients."""
    mesh = dofmap.mesh
    out = np.zeros(dofmap.n_pressure)
    for c in range(mesh.n_cells):
        cell = VemCell(mesh.cell_coords(c), c)
        pts, w = polygon_rule(cell.xy, quad_order, cell.centroid, c)
        m = cell.basis.eval(pts)[:, :3]
        rhs = m.T @ (w * np.asarray(p(pts)))
        out[3 * c: 3 * c + 3] = np.linalg.solve(cell.pressure_mass, rhs)
    return out


def lid_velocity(points: np.ndarray, speed: float = 1.0) -> np.ndarray:
    """Unit lid on y = 1 with the two top corners held at zero."""
    pts = np.atleast_2d(points)
    out = np.zeros_like(pts, dtype=float)
    top = (np.abs(pts[:, 1] - 1.0) < 1e-12) & (pts[:, 0] > 1e-12) & (pts[:, 0] < 1 - 1e-12)
    out[top, 0] = speed
    return out
