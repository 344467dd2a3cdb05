"""Static condensation onto the subdomain interfaces.

Per subdomain the unknowns split into interior velocities ``u_I``, the
cell pressures with zero subdomain mean ``p_I``, interface velocities
``u_G`` and the subdomain-constant pressure ``p0``.  Interior pressures are
kept mean-free by a bordering multiplier, so the interior saddle block

    K = [[A_II, B_II^T, 0], [B_II, 0, w], [0, w^T, 0]]

is nonsingular.  The constant pressure only meets interface velocities,
through the flux row ``b0`` of the subdomain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..decomp import DofClassification
from .global_system import GlobalSystem, SolverError


@dataclass(eq=False)
class SubdomainOperator:
    sub: int
    cells: np.ndarray
    interior: np.ndarray  # global velocity ids
    interface: np.ndarray  # global velocity ids (sorted)
    gamma_index: np.ndarray  # positions of ``interface`` in the global interface numbering
    pressure: np.ndarray  # global pressure ids
    A_II: sp.csr_matrix
    A_GI: sp.csr_matrix
    A_GG: sp.csr_matrix
    B_II: sp.csr_matrix
    B_IG: sp.csr_matrix
    b0: np.ndarray  # flux row of the subdomain-constant pressure on interface dofs
    w: np.ndarray  # pressure mean row on the subdomain
    area: float
    lu: object
    K_IG: np.ndarray  # coupling of the bordered interior block to u_G (dense)
    S: np.ndarray  # local Schur complement on interface velocities
    r_I: np.ndarray  # bordered interior right-hand side
    r_G: np.ndarray  # interface right-hand side before condensation
    g: np.ndarray  # condensed interface right-hand side
    g0: float  # right-hand side of the constant-pressure row

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    def interior_solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)

    def apply_schur(self, u_G: np.ndarray) -> np.ndarray:
        return self.S @ u_G


def _sub_matrices(system: GlobalSystem, cells: np.ndarray):
    rows, cols, vals, brows, bcols, bvals = [], [], [], [], [], []
    f = np.zeros(system.dofmap.n_velocity)
    for c in cells:
        blk = system.cells[c]
        n = len(blk.vdofs)
        rows.append(np.repeat(blk.vdofs, n))
        cols.append(np.tile(blk.vdofs, n))
        vals.append(blk.A.ravel())
        brows.append(np.repeat(blk.pdofs, n))
        bcols.append(np.tile(blk.vdofs, 3))
        bvals.append(blk.B.ravel())
        np.add.at(f, blk.vdofs, blk.f)
    nv, npr = system.dofmap.n_velocity, system.dofmap.n_pressure
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv))
    B = sp.csr_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))), shape=(npr, nv))
    A.sum_duplicates()
    B.sum_duplicates()
    return A, B, f


def build_subdomain_operator(system: GlobalSystem, cls: DofClassification, s: int,
                             gamma_pos: np.ndarray) -> SubdomainOperator:
    cells = cls.sub_cells[s]
    A, B, f = _sub_matrices(system, cells)
    g = system.dirichlet_values
    r_u = f - A @ g
    pdofs = np.concatenate([system.cells[c].pdofs for c in cells])
    r_p = -(B[pdofs] @ g)
    I, G = cls.sub_interior[s], cls.sub_interface[s]
    A_II = A[I][:, I]
    A_GI = A[G][:, I]
    A_GG = A[G][:, G]
    B_II = B[pdofs][:, I]
    B_IG = B[pdofs][:, G]
    w = system.pressure_mean[pdofs]
    # the constant-pressure test function has unit coefficient on each cell's first monomial
    e0 = np.zeros(len(pdofs))
    e0[0::3] = 1.0
    b0 = np.asarray(e0 @ B_IG).ravel()
    g0 = float(e0 @ r_p)
    nI, nP = len(I), len(pdofs)
    wcol = sp.csr_matrix(w.reshape(-1, 1))
    K = sp.bmat([[A_II, B_II.T, None], [B_II, None, wcol], [None, wcol.T, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError(f"subdomain {s}: interior saddle block is singular ({exc})") from None
    K_IG = np.vstack([A_GI.T.toarray(), B_IG.toarray(), np.zeros((1, len(G)))])
    r_I = np.concatenate([r_u[I], r_p, [0.0]])
    if len(G):
        X = lu.solve(K_IG)
        S = A_GG.toarray() - K_IG.T @ X
        S = 0.5 * (S + S.T)
    else:
        S = np.zeros((0, 0))
    y = lu.solve(r_I)
    if not np.all(np.isfinite(y)):
        raise SolverError(f"subdomain {s}: interior saddle block is singular")
    g_loc = r_u[G] - K_IG.T @ y
    return SubdomainOperator(
        sub=s, cells=cells, interior=I, interface=G, gamma_index=gamma_pos[G], pressure=pdofs,
        A_II=A_II, A_GI=A_GI, A_GG=A_GG, B_II=B_II, B_IG=B_IG, b0=b0, w=w,
        area=float(sum(system.cells[c].area for c in cells)), lu=lu, K_IG=K_IG, S=S,
        r_I=r_I, r_G=r_u[G], g=g_loc, g0=g0,
    )


def build_subdomain_operators(system: GlobalSystem, cls: DofClassification) -> list[SubdomainOperator]:
    if not system.reduced:
        raise ValueError("apply_dirichlet must run before substructuring")
    gamma_pos = np.full(system.dofmap.n_velocity, -1, dtype=np.int64)
    gamma_pos[cls.interface] = np.arange(len(cls.interface))
    return [build_subdomain_operator(system, cls, s, gamma_pos) for s in range(cls.n_sub)]


@dataclass(eq=False)
class InterfaceProblem:
    """Interface saddle system on ``[u_Gamma; p0]``.

    ``n_gamma`` interface velocities in the order of ``interface`` (global
    velocity ids) followed by one constant pressure per subdomain.
    """

    subops: list[SubdomainOperator]
    interface: np.ndarray
    rhs: np.ndarray

    @property
    def n_gamma(self) -> int:
        return len(self.interface)

    @property
    def n_sub(self) -> int:
        return len(self.subops)

    @property
    def size(self) -> int:
        return self.n_gamma + self.n_sub

    def apply(self, x: np.ndarray) -> np.ndarray:
        ng = self.n_gamma
        u, p0 = x[:ng], x[ng:]
        y = np.zeros_like(x, dtype=float)
        for op in self.subops:
            ui = u[op.gamma_index]
            # fixed reduction order keeps the sum deterministic
            np.add.at(y, op.gamma_index, op.S @ ui + op.b0 * p0[op.sub])
            y[ng + op.sub] = op.b0 @ ui
        return y

    __matmul__ = apply

    def dense(self) -> np.ndarray:
        """Explicit matrix, for small fixtures only."""
        return np.column_stack([self.apply(e) for e in np.eye(self.size)])

    def flux_matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for op in self.subops:
            rows.append(np.full(len(op.gamma_index), op.sub))
            cols.append(op.gamma_index)
            vals.append(op.b0)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_sub, self.n_gamma))

    def areas(self) -> np.ndarray:
        return np.array([op.area for op in self.subops])

    def pressure_correction(self, r: np.ndarray) -> np.ndarray:
        """Least-squares constant pressures ``dp`` minimising ``||r_u - B0^T dp||``.

        Errors in the constant pressures only show up in the velocity
        residual through ``B0^T``; the minimum-norm solution leaves the
        global constant (the kernel of ``B0^T``) untouched.
        """
        if not hasattr(self, "_b0_pinv"):
            B0 = self.flux_matrix().toarray()
            self._B0 = B0
            self._b0_pinv = np.linalg.pinv(B0.T, rcond=1e-12)
        return self._b0_pinv @ r[: self.n_gamma]

    def benign_start(self, b: np.ndarray) -> np.ndarray:
        """Minimum-norm interface velocity with ``B0 u = b0``, zero pressures."""
        x = np.zeros_like(b, dtype=float)
        if self.n_gamma:
            self.pressure_correction(np.zeros(self.size))  # builds the cached B0
            x[: self.n_gamma] = np.linalg.pinv(self._B0, rcond=1e-12) @ b[self.n_gamma:]
        return x

    def correct_pressure(self, x: np.ndarray, r: np.ndarray) -> None:
        """Shift ``x``'s constant pressures in place and update ``r`` to match."""
        if self.n_gamma == 0:
            return
        dp = self.pressure_correction(r)
        x[self.n_gamma:] += dp
        r[: self.n_gamma] -= self._B0.T @ dp


def interface_rhs_and_operator(subops: list[SubdomainOperator], cls: DofClassification) -> InterfaceProblem:
    ng = len(cls.interface)
    rhs = np.zeros(ng + len(subops))
    for op in subops:
        np.add.at(rhs, op.gamma_index, op.g)
        rhs[ng + op.sub] = op.g0
    return InterfaceProblem(subops, cls.interface, rhs)


def back_substitute(problem: InterfaceProblem, x: np.ndarray, system: GlobalSystem):
    """Recover interior unknowns; returns (full velocity vector, pressure coefficients).

    The pressure is shifted to zero global mean.
    """
    ng = problem.n_gamma
    u = system.dirichlet_values.copy()
    u[problem.interface] = x[:ng]
    p = np.zeros(system.dofmap.n_pressure)
    for op in problem.subops:
        ui = x[:ng][op.gamma_index]
        y = op.lu.solve(op.r_I - op.K_IG @ ui)
        nI = op.n_interior
        u[op.interior] = y[:nI]
        pl = y[nI: nI + len(op.pressure)]
        pl[0::3] += x[ng + op.sub]
        p[op.pressure] = pl
    total = system.pressure_mean[0::3].sum()
    p[0::3] -= (system.pressure_mean @ p) / total
    return u, p
