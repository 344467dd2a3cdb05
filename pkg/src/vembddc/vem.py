"""Local degree-2 divergence-free Stokes virtual element.

Local dof ordering on a cell with ``n`` vertices (loop ``v_0 .. v_{n-1}``
counter-clockwise, edge ``k`` joining ``v_k`` and ``v_{k+1}``)::

    [v_0x, v_0y, ..., v_{n-1}x, v_{n-1}y,     vertex values
     e_0x, e_0y, ..., e_{n-1}x, e_{n-1}y,     edge midpoint values
     d_1, d_2]                                divergence moments

The midpoint is the single interior node of the 3-point Gauss-Lobatto rule.
The divergence moments are normalised as ``d_a = h/|K| * int_K div(v) m_a``
with ``m_1, m_2`` the centred linear monomials, so that they scale like
velocity values.  Pressures are represented by their coefficients in the
scaled monomial basis ``{1, m_1, m_2}`` of P1(K).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh.geometry import polygon_geometry, polygon_rule
from .mesh.polymesh import MeshError

QUAD_ORDER = 6
GL_WEIGHTS = np.array([1.0, 4.0, 1.0]) / 6.0
# Laplacian of the scaled monomials times h^2
_LAP = np.array([0.0, 0.0, 0.0, 2.0, 0.0, 2.0])


class ScaledMonomials:
    """P2 monomials ((x-x_K)/h_K)^a ((y-y_K)/h_K)^b, a+b <= 2.

    Ordering: 1, xi, eta, xi^2, xi*eta, eta^2.  The first three span P1.
    """

    exponents = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

    def __init__(self, centroid, diameter):
        self.center = np.asarray(centroid, dtype=float)
        self.h = float(diameter)

    def __len__(self):
        return 6

    def _local(self, pts):
        pts = np.atleast_2d(pts)
        return (pts[:, 0] - self.center[0]) / self.h, (pts[:, 1] - self.center[1]) / self.h

    def eval(self, pts) -> np.ndarray:
        xi, eta = self._local(pts)
        one = np.ones_like(xi)
        return np.column_stack([one, xi, eta, xi * xi, xi * eta, eta * eta])

    def grad(self, pts) -> tuple[np.ndarray, np.ndarray]:
        xi, eta = self._local(pts)
        z, one = np.zeros_like(xi), np.ones_like(xi)
        gx = np.column_stack([z, one, z, 2 * xi, eta, z]) / self.h
        gy = np.column_stack([z, z, one, z, xi, 2 * eta]) / self.h
        return gx, gy

    def laplacian(self) -> np.ndarray:
        return _LAP / self.h ** 2


@dataclass(frozen=True)
class LocalDofLayout:
    n_edges: int

    @property
    def n_velocity(self) -> int:
        return 4 * self.n_edges + 2

    n_pressure = 3

    def vertex(self, k: int, comp: int) -> int:
        return 2 * k + comp

    def edge(self, k: int, comp: int) -> int:
        return 2 * self.n_edges + 2 * k + comp

    def moment(self, a: int) -> int:
        return 4 * self.n_edges + a


@dataclass
class LocalMatrices:
    A: np.ndarray
    B: np.ndarray
    M_Q: np.ndarray
    f: np.ndarray
    proj: np.ndarray


class VemCell:
    """Dof-computable projections and local forms on one polygon."""

    def __init__(self, xy, cell_id=None):
        self.xy = np.asarray(xy, dtype=float)
        self.cell_id = cell_id
        self.n = len(self.xy)
        self.layout = LocalDofLayout(self.n)
        g = polygon_geometry(self.xy)
        if g.area <= 0:
            raise MeshError(f"cell {cell_id} has non-positive area")
        self.area, self.centroid, self.h = g.area, g.centroid, g.diameter
        self.basis = ScaledMonomials(self.centroid, self.h)
        self.mid = 0.5 * (self.xy + np.roll(self.xy, -1, axis=0))
        d = np.roll(self.xy, -1, axis=0) - self.xy
        # outward normal scaled by edge length
        self.ln = np.column_stack([d[:, 1], -d[:, 0]])

    @cached_property
    def quad(self):
        return polygon_rule(self.xy, QUAD_ORDER, self.centroid, self.cell_id)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        pts, w = self.quad
        return np.tensordot(w, values, axes=(0, 0))

    @cached_property
    def _mono_at_quad(self):
        pts, _ = self.quad
        return self.basis.eval(pts), *self.basis.grad(pts)

    @cached_property
    def gram_scalar(self) -> np.ndarray:
        _, gx, gy = self._mono_at_quad
        w = self.quad[1]
        return (gx.T * w) @ gx + (gy.T * w) @ gy

    @cached_property
    def gram(self) -> np.ndarray:
        """Exact [P2]^2 stiffness Gram matrix int grad p : grad q."""
        G = np.zeros((12, 12))
        G[:6, :6] = G[6:, 6:] = self.gram_scalar
        return G

    @cached_property
    def boundary_nodes(self):
        """Per edge: local vertex dof base, midpoint dof base, next vertex dof base."""
        n = self.n
        k = np.arange(n)
        return 2 * k, 2 * n + 2 * k, 2 * ((k + 1) % n)

    def _edge_functional(self, fa, fm, fb) -> np.ndarray:
        """Row vector for sum_e GL(v . w_e) given per-edge weight vectors at (a, mid, b).

        ``fa``, ``fm``, ``fb`` are (n, 2) arrays already multiplied by the
        scaled normal or any other edge factor.
        """
        row = np.zeros(self.layout.n_velocity)
        ia, im, ib = self.boundary_nodes
        for comp in range(2):
            np.add.at(row, ia + comp, GL_WEIGHTS[0] * fa[:, comp])
            np.add.at(row, im + comp, GL_WEIGHTS[1] * fm[:, comp])
            np.add.at(row, ib + comp, GL_WEIGHTS[2] * fb[:, comp])
        return row

    @cached_property
    def flux_row(self) -> np.ndarray:
        """int_{dK} v.n as a row acting on local dofs (exact for the VEM trace)."""
        return self._edge_functional(self.ln, self.ln, self.ln)

    @cached_property
    def mean_rows(self) -> np.ndarray:
        """Rows r_d with r_d . v = int_K v_d, recovered by parts from the dofs."""
        rows = np.zeros((2, self.layout.n_velocity))
        a, b = self.xy, np.roll(self.xy, -1, axis=0)
        for d in range(2):
            fa = self.ln * (a[:, d] - self.centroid[d])[:, None]
            fm = self.ln * (self.mid[:, d] - self.centroid[d])[:, None]
            fb = self.ln * (b[:, d] - self.centroid[d])[:, None]
            rows[d] = self._edge_functional(fa, fm, fb)
            rows[d, self.layout.moment(d)] -= self.area
        return rows

    @cached_property
    def dof_matrix(self) -> np.ndarray:
        """D[i, j] = i-th dof of the j-th [P2]^2 basis field."""
        n = self.n
        D = np.zeros((self.layout.n_velocity, 12))
        mv = self.basis.eval(self.xy)
        mm = self.basis.eval(self.mid)
        D[0:2 * n:2, :6] = mv
        D[1:2 * n:2, 6:] = mv
        D[2 * n:4 * n:2, :6] = mm
        D[2 * n + 1:4 * n:2, 6:] = mm
        m, gx, gy = self._mono_at_quad
        scale = self.h / self.area
        for a in (1, 2):
            D[self.layout.moment(a - 1), :6] = scale * self.integrate(gx * m[:, a:a + 1])
            D[self.layout.moment(a - 1), 6:] = scale * self.integrate(gy * m[:, a:a + 1])
        return D

    @cached_property
    def projector(self) -> np.ndarray:
        """Energy projection onto [P2]^2 as a 12 x ndof matrix of coefficients."""
        ndof = self.layout.n_velocity
        lap = self.basis.laplacian()
        a, b = self.xy, np.roll(self.xy, -1, axis=0)
        gxa, gya = self.basis.grad(a)
        gxm, gym = self.basis.grad(self.mid)
        gxb, gyb = self.basis.grad(b)
        R = np.zeros((12, ndof))
        ia, im, ib = self.boundary_nodes
        for alpha in range(6):
            dn_a = gxa[:, alpha] * self.ln[:, 0] + gya[:, alpha] * self.ln[:, 1]
            dn_m = gxm[:, alpha] * self.ln[:, 0] + gym[:, alpha] * self.ln[:, 1]
            dn_b = gxb[:, alpha] * self.ln[:, 0] + gyb[:, alpha] * self.ln[:, 1]
            for d in range(2):
                row = R[6 * d + alpha]
                np.add.at(row, ia + d, GL_WEIGHTS[0] * dn_a)
                np.add.at(row, im + d, GL_WEIGHTS[1] * dn_m)
                np.add.at(row, ib + d, GL_WEIGHTS[2] * dn_b)
                row -= lap[alpha] * self.mean_rows[d]
        Gt = self.gram.copy()
        # fix the constants through the vertex average
        mv = self.basis.eval(self.xy).mean(axis=0)
        for d in range(2):
            r = 6 * d
            Gt[r, :] = 0.0
            Gt[r, r:r + 6] = mv
            R[r, :] = 0.0
            R[r, 2 * np.arange(self.n) + d] = 1.0 / self.n
        try:
            return np.linalg.solve(Gt, R)
        except np.linalg.LinAlgError:
            raise MeshError(f"singular projection Gram matrix on cell {self.cell_id}") from None

    @cached_property
    def consistency(self) -> np.ndarray:
        P = self.projector
        return P.T @ self.gram @ P

    @cached_property
    def stabilization(self) -> np.ndarray:
        E = np.eye(self.layout.n_velocity) - self.dof_matrix @ self.projector
        sigma = np.trace(self.consistency) / self.layout.n_velocity
        return sigma * (E.T @ E)

    def stiffness(self, nu: float) -> np.ndarray:
        if not nu > 0:
            raise ValueError(f"viscosity must be positive on cell {self.cell_id}, got {nu}")
        A = nu * (self.consistency + self.stabilization)
        return 0.5 * (A + A.T)

    @cached_property
    def divergence(self) -> np.ndarray:
        """B[a] . v = int_K div(v) m_a for the pressure basis {1, m_1, m_2}."""
        B = np.zeros((3, self.layout.n_velocity))
        B[0] = self.flux_row
        B[1, self.layout.moment(0)] = self.area / self.h
        B[2, self.layout.moment(1)] = self.area / self.h
        return B

    @cached_property
    def pressure_mass(self) -> np.ndarray:
        m = self._mono_at_quad[0][:, :3]
        w = self.quad[1]
        M = (m.T * w) @ m
        return 0.5 * (M + M.T)

    def load(self, f) -> np.ndarray:
        """Lowest-order load: f(x_K) . int_K v."""
        fv = np.asarray(f(self.centroid), dtype=float).reshape(2)
        return fv @ self.mean_rows

    def local_matrices(self, nu: float, f=None) -> LocalMatrices:
        fvec = np.zeros(self.layout.n_velocity) if f is None else self.load(f)
        return LocalMatrices(self.stiffness(nu), self.divergence, self.pressure_mass,
                             fvec, self.projector)

    def interpolate(self, u, quad_order: int = 10) -> np.ndarray:
        """Local dof vector of a vector field ``u(points) -> (n, 2)``."""
        n = self.n
        out = np.zeros(self.layout.n_velocity)
        out[:2 * n] = np.asarray(u(self.xy)).ravel()
        out[2 * n:4 * n] = np.asarray(u(self.mid)).ravel()
        out[4 * n:] = self.divergence_moments(u, quad_order)
        return out

    def divergence_moments(self, u, quad_order: int = 10) -> np.ndarray:
        # int div(u) m_a = int_dK (u.n) m_a - int u . grad m_a
        n = self.n
        gl, gw = np.polynomial.legendre.leggauss((quad_order + 2) // 2)
        t, w = 0.5 * (gl + 1.0), 0.5 * gw
        a, b = self.xy, np.roll(self.xy, -1, axis=0)
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        uv = np.asarray(u(pts.reshape(-1, 2))).reshape(n, len(t), 2)
        un = np.einsum("ktd,kd->kt", uv, self.ln)
        m = self.basis.eval(pts.reshape(-1, 2))[:, 1:3].reshape(n, len(t), 2)
        bnd = np.einsum("t,kt,kta->a", w, un, m)
        qp, qw = polygon_rule(self.xy, quad_order, self.centroid, self.cell_id)
        uq = np.asarray(u(qp))
        vol = np.array([qw @ uq[:, 0], qw @ uq[:, 1]]) / self.h
        return (bnd - vol) * self.h / self.area


def scaled_monomials(xy) -> ScaledMonomials:
    return VemCell(xy).basis


def energy_projector(xy) -> np.ndarray:
    return VemCell(xy).projector


def local_divergence(xy) -> np.ndarray:
    return VemCell(xy).divergence


def local_stiffness(xy, nu: float) -> np.ndarray:
    return VemCell(xy).stiffness(nu)


def local_pressure_mass(xy) -> np.ndarray:
    return VemCell(xy).pressure_mass


def local_load(xy, f) -> np.ndarray:
    return VemCell(xy).load(f)
