"""BDDC preconditioner for the interface saddle system.

Primal unknowns are the velocity dofs at subdomain corners, the leading
dofs of each macro edge after an orthonormal change of basis (the first
always being the no-net-flux constraint) and one constant pressure per
subdomain.  The remaining transformed edge dofs are dual.  Because the
flux of every subdomain boundary is spanned by primal dofs, the
constant-pressure rows only see the coarse problem.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly.global_system import SolverError
from .assembly.substructure import InterfaceProblem, SubdomainOperator
from .decomp import DofClassification, InterfaceSkeleton, MacroEdge
from .vem import GL_WEIGHTS

log = logging.getLogger(__name__)

DROP_TOL = 1e-10


# ------------------------------------------------------------ constraints


def no_net_flux_constraint(E: MacroEdge, n_dofs: int | None = None, include_corners: bool = False):
    """Vector ``c`` with ``c @ v_E = int_E v . n`` (normal from ``E.pair[0]`` to ``E.pair[1]``).

    Acts on the edge dofs in :class:`DofClassification` order.  With
    ``include_corners`` the weights of the start and end vertices are
    returned as well, as ``(c, c_start, c_end)``.
    """
    t = E.tangents
    lengths = np.linalg.norm(t, axis=1)
    if np.any(lengths <= 0):
        raise ValueError(f"macro edge {E.id} has a zero-length fine edge")
    nrm = np.column_stack([t[:, 1], -t[:, 0]])  # length-scaled outward normals
    m = len(E.edges)
    c = np.zeros(4 * m - 2)
    for k in range(m):
        c[4 * k: 4 * k + 2] += GL_WEIGHTS[1] * nrm[k]
        if k > 0:
            c[4 * k - 2: 4 * k] += GL_WEIGHTS[0] * nrm[k]
        if k < m - 1:
            c[4 * k + 2: 4 * k + 4] += GL_WEIGHTS[2] * nrm[k]
    if n_dofs is not None and n_dofs != len(c):
        raise ValueError("edge dof count mismatch")
    if include_corners:
        return c, GL_WEIGHTS[0] * nrm[0], GL_WEIGHTS[2] * nrm[-1]
    return c


@dataclass
class EdgeTransformation:
    edge: int
    Q: np.ndarray
    n_primal: int
    dropped: int = 0


def _mgs_append(basis: list[np.ndarray], v: np.ndarray, tol: float) -> bool:
    ref = np.linalg.norm(v)
    if ref == 0:
        return False
    w = v.astype(float).copy()
    for _ in range(2):  # re-orthogonalization pass
        for q in basis:
            w -= (q @ w) * q
    nw = np.linalg.norm(w)
    if nw < tol * ref:
        return False
    basis.append(w / nw)
    return True


def orthonormal_transformation(constraints: np.ndarray, n: int, edge: int = -1) -> EdgeTransformation:
    """Orthonormal ``Q`` whose leading columns span the constraint columns."""
    basis: list[np.ndarray] = []
    dropped = 0
    C = np.asarray(constraints, dtype=float).reshape(n, -1) if n else np.zeros((0, 0))
    for k in range(C.shape[1]):
        if len(basis) == n:
            dropped += C.shape[1] - k
            log.info("edge %d: %d constraints exceed the %d edge dofs, truncated", edge, C.shape[1] - k, n)
            break
        if not _mgs_append(basis, C[:, k], DROP_TOL):
            dropped += 1
            log.warning("edge %d: near-dependent constraint %d dropped", edge, k)
    n_primal = len(basis)
    for k in range(n):
        if len(basis) == n:
            break
        _mgs_append(basis, np.eye(n)[k], 1e-8)
    Q = np.column_stack(basis) if n else np.zeros((0, 0))
    return EdgeTransformation(edge, Q, n_primal, dropped)


def build_edge_transformations(constraints: list[np.ndarray]) -> list[EdgeTransformation]:
    """One orthonormal basis per macro edge; ``constraints[E]`` is ``(n_E, k)``."""
    return [orthonormal_transformation(C, C.shape[0], e) for e, C in enumerate(constraints)]


# ---------------------------------------------------------------- scaling


@dataclass
class ScalingOperator:
    """Edge weights in the nodal basis, ``blocks[(E, s)]`` of size ``n_E``.

    For deluxe scaling ``transformed`` selects whether the dual blocks used
    by the preconditioner are recomputed from the transformed Schur blocks
    (flux-preserving variant) or obtained by rotating the nodal blocks.
    """

    kind: str
    blocks: dict
    corner_weights: np.ndarray
    transformed: bool = True

    def check_partition_of_unity(self, skeleton: InterfaceSkeleton) -> float:
        err = 0.0
        for E in skeleton.macro_edges:
            i, j = E.pair
            D = self.blocks[(E.id, i)] + self.blocks[(E.id, j)]
            err = max(err, float(np.abs(D - np.eye(len(D))).max(initial=0.0)))
        return err


def _edge_local_positions(E_dofs: np.ndarray, op: SubdomainOperator) -> np.ndarray:
    loc = np.searchsorted(op.interface, E_dofs)
    if np.any(op.interface[np.minimum(loc, len(op.interface) - 1)] != E_dofs):
        raise ValueError(f"edge dofs not on the interface of subdomain {op.sub}")
    return loc


def multiplicity_scaling(skeleton: InterfaceSkeleton, cls: DofClassification) -> ScalingOperator:
    blocks = {}
    for E in skeleton.macro_edges:
        n = len(cls.edge_dofs[E.id])
        for s in E.pair:
            blocks[(E.id, s)] = 0.5 * np.eye(n)
    return ScalingOperator("multiplicity", blocks, 1.0 / cls.multiplicity[cls.corner_dofs])


def deluxe_pair(Si: np.ndarray, Sj: np.ndarray, edge: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """``((Si+Sj)^-1 Si, (Si+Sj)^-1 Sj)``."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is checked below
            lu = sla.lu_factor(Si + Sj, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise SolverError(f"edge {edge}: deluxe sum is singular ({exc})") from None
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * max(np.abs(lu[0]).max(), 1e-300)):
        raise SolverError(f"edge {edge}: deluxe sum is singular")
    Di = sla.lu_solve(lu, Si)
    return Di, np.eye(len(Si)) - Di


def deluxe_scaling(subops: list[SubdomainOperator], skeleton: InterfaceSkeleton,
                   cls: DofClassification, transformed: bool = True) -> ScalingOperator:
    blocks = {}
    for E in skeleton.macro_edges:
        i, j = E.pair
        dofs = cls.edge_dofs[E.id]
        li = _edge_local_positions(dofs, subops[i])
        lj = _edge_local_positions(dofs, subops[j])
        Si = subops[i].S[np.ix_(li, li)]
        Sj = subops[j].S[np.ix_(lj, lj)]
        blocks[(E.id, i)], blocks[(E.id, j)] = deluxe_pair(Si, Sj, E.id)
    return ScalingOperator("deluxe", blocks, 1.0 / cls.multiplicity[cls.corner_dofs], transformed)


# ---------------------------------------------------------- preconditioner


@dataclass(eq=False)
class _LocalBddc:
    sub: int
    pos: np.ndarray  # global interface positions (sorted)
    T: np.ndarray
    S_bar: np.ndarray
    dual: np.ndarray  # local indices
    primal: np.ndarray  # local indices
    dual_global: np.ndarray  # global interface positions of dual dofs
    primal_global: np.ndarray  # coarse ids
    chol: object
    S_dp: np.ndarray
    coarse: np.ndarray
    b0_primal: np.ndarray
    D_dual: np.ndarray  # block-diagonal dual scaling, local dual ordering


@dataclass(eq=False)
class BddcPreconditioner:
    problem: InterfaceProblem
    transformations: list[EdgeTransformation]
    scaling: ScalingOperator
    T: sp.csr_matrix
    primal_mask: np.ndarray  # over interface positions
    coarse_index: np.ndarray  # interface position -> coarse id or -1
    local: list[_LocalBddc]
    coarse_lu: object
    n_primal_velocity: int
    meta: dict = field(default_factory=dict)

    @property
    def n_pi(self) -> int:
        return self.n_primal_velocity

    @property
    def dropped(self) -> int:
        return sum(t.dropped for t in self.transformations)

    def _coarse_solve(self, rhs_u: np.ndarray, rhs_p: np.ndarray):
        n_c, n_s = self.n_primal_velocity, self.problem.n_sub
        y = sla.lu_solve(self.coarse_lu, np.concatenate([rhs_u, rhs_p, [0.0]]))
        return y[:n_c], y[n_c: n_c + n_s]

    def restrict_scaled(self, rbar: np.ndarray) -> list[np.ndarray]:
        """Dual residual copies ``D_i^T R_i r`` per subdomain."""
        return [loc.D_dual.T @ rbar[loc.dual_global] for loc in self.local]

    def extend_scaled(self, parts: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.problem.n_gamma)
        for loc, v in zip(self.local, parts):
            np.add.at(out, loc.dual_global, loc.D_dual @ v)
        return out

    def average(self, parts: list[np.ndarray]) -> list[np.ndarray]:
        """Averaging operator ``E_D`` on dual copies."""
        merged = self.extend_scaled(parts)
        return [merged[loc.dual_global] for loc in self.local]

    def apply(self, r: np.ndarray) -> np.ndarray:
        pb = self.problem
        ng = pb.n_gamma
        rbar = self.T.T @ r[:ng]
        r_d = self.restrict_scaled(rbar)
        rc = np.zeros(self.n_primal_velocity)
        prim = np.flatnonzero(self.primal_mask)
        rc[self.coarse_index[prim]] = rbar[prim]
        sol_d = []
        for loc, rd in zip(self.local, r_d):
            y = sla.cho_solve(loc.chol, rd) if len(rd) else rd
            sol_d.append(y)
            np.add.at(rc, loc.primal_global, -(loc.S_dp.T @ y))
        u_c, p0 = self._coarse_solve(rc, r[ng:])
        parts = []
        for loc, rd in zip(self.local, r_d):
            if len(rd):
                parts.append(sla.cho_solve(loc.chol, rd - loc.S_dp @ u_c[loc.primal_global]))
            else:
                parts.append(rd)
        ubar = self.extend_scaled(parts)
        ubar[prim] = u_c[self.coarse_index[prim]]
        return np.concatenate([self.T @ ubar, p0])

    __call__ = apply

    def dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.problem.size)])


def _global_transformation(problem: InterfaceProblem, cls: DofClassification,
                           transformations: list[EdgeTransformation]):
    ng = problem.n_gamma
    pos = np.full(cls.label.shape[0], -1, dtype=np.int64)
    pos[problem.interface] = np.arange(ng)
    rows, cols, vals = [], [], []
    primal = np.zeros(ng, dtype=bool)
    covered = np.zeros(ng, dtype=bool)
    cpos = pos[cls.corner_dofs]
    cpos = cpos[cpos >= 0]
    rows.append(cpos)
    cols.append(cpos)
    vals.append(np.ones(len(cpos)))
    primal[cpos] = True
    covered[cpos] = True
    for tr in transformations:
        p = pos[cls.edge_dofs[tr.edge]]
        n = len(p)
        rows.append(np.repeat(p, n))
        cols.append(np.tile(p, n))
        vals.append(tr.Q.ravel())
        primal[p[: tr.n_primal]] = True
        covered[p] = True
    if not covered.all():
        raise ValueError("interface dofs not covered by corners and macro edges")
    T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ng, ng))
    return T, primal


def build_preconditioner(problem: InterfaceProblem, cls: DofClassification, skeleton: InterfaceSkeleton,
                         transformations: list[EdgeTransformation], scaling: ScalingOperator,
                         full_primal: bool = False) -> BddcPreconditioner:
    """Assemble the BDDC preconditioner ``M^-1 = R_D^T S~^-1 R_D``.

    ``full_primal`` makes every interface velocity primal, which turns the
    preconditioner into an exact solver (useful as a check).
    """
    if full_primal:
        transformations = [EdgeTransformation(t.edge, np.eye(len(t.Q)), len(t.Q)) for t in transformations]
    T, primal = _global_transformation(problem, cls, transformations)
    ng = problem.n_gamma
    coarse_index = np.full(ng, -1, dtype=np.int64)
    coarse_index[primal] = np.arange(int(primal.sum()))
    n_c = int(primal.sum())
    n_s = problem.n_sub
    T_dense = T.toarray() if ng <= 4000 else None

    # dual scaling in the transformed basis, per edge and subdomain
    tr_of = {t.edge: t for t in transformations}
    locs = []
    C = np.zeros((n_c + n_s + 1, n_c + n_s + 1))
    for op in problem.subops:
        p = op.gamma_index
        Ti = T_dense[np.ix_(p, p)] if T_dense is not None else T[p][:, p].toarray()
        Sb = Ti.T @ op.S @ Ti
        Sb = 0.5 * (Sb + Sb.T)
        b0 = Ti.T @ op.b0
        pm = primal[p]
        dual, prim = np.flatnonzero(~pm), np.flatnonzero(pm)
        if len(dual) and np.abs(b0[dual]).max() > 1e-8 * max(np.abs(b0).max(), 1e-300):
            log.warning("subdomain %d: flux row has dual components %.2e", op.sub, np.abs(b0[dual]).max())
        S_dd = Sb[np.ix_(dual, dual)]
        S_dp = Sb[np.ix_(dual, prim)]
        if len(dual):
            try:
                chol = sla.cho_factor(S_dd)
            except sla.LinAlgError:
                raise SolverError(f"subdomain {op.sub}: dual block is singular "
                                  "(missing primal constraints?)") from None
            X = sla.cho_solve(chol, S_dp)
            coarse = Sb[np.ix_(prim, prim)] - S_dp.T @ X
        else:
            chol = None
            coarse = Sb[np.ix_(prim, prim)]
        pg = coarse_index[p[prim]]
        C[np.ix_(pg, pg)] += coarse
        C[n_c + op.sub, pg] = b0[prim]
        C[pg, n_c + op.sub] = b0[prim]
        locs.append(_LocalBddc(op.sub, p, Ti, Sb, dual, prim, p[dual], pg, chol, S_dp, coarse,
                               b0[prim], np.zeros((len(dual), len(dual)))))
    # border fixing the area-weighted mean of the constant pressures
    areas = problem.areas()
    C[-1, n_c: n_c + n_s] = areas
    C[n_c: n_c + n_s, -1] = areas
    C[: n_c, : n_c] = 0.5 * (C[: n_c, : n_c] + C[: n_c, : n_c].T)
    coarse_lu = sla.lu_factor(C)
    if np.any(np.abs(np.diag(coarse_lu[0])) < 1e-13 * np.abs(coarse_lu[0]).max()):
        raise SolverError("coarse matrix is singular")

    _fill_dual_scaling(locs, skeleton, cls, transformations, tr_of, scaling, primal, problem)
    n_pi = n_c
    return BddcPreconditioner(problem, transformations, scaling, T, primal, coarse_index, locs,
                              coarse_lu, n_pi, {"n_coarse": n_c + n_s})


def _fill_dual_scaling(locs, skeleton, cls, transformations, tr_of, scaling, primal, problem):
    ng = problem.n_gamma
    pos = np.full(cls.label.shape[0], -1, dtype=np.int64)
    pos[problem.interface] = np.arange(ng)
    for E in skeleton.macro_edges:
        tr = tr_of[E.id]
        p = pos[cls.edge_dofs[E.id]]
        k = tr.n_primal
        dual_p = p[k:]
        if len(dual_p) == 0:
            continue
        i, j = E.pair
        li, lj = locs[i], locs[j]
        # positions of this edge's dual dofs inside each subdomain's dual list
        di = np.searchsorted(li.dual_global, dual_p) if _sorted(li.dual_global) else _find(li.dual_global, dual_p)
        dj = np.searchsorted(lj.dual_global, dual_p) if _sorted(lj.dual_global) else _find(lj.dual_global, dual_p)
        if scaling.kind == "multiplicity":
            Di = 0.5 * np.eye(len(dual_p))
            Dj = Di.copy()
        elif scaling.kind == "deluxe" and scaling.transformed:
            Si = li.S_bar[np.ix_(li.dual[di], li.dual[di])]
            Sj = lj.S_bar[np.ix_(lj.dual[dj], lj.dual[dj])]
            Di, Dj = deluxe_pair(Si, Sj, E.id)
        else:
            Qd = tr.Q[:, k:]
            Di = Qd.T @ scaling.blocks[(E.id, i)] @ Qd
            Dj = Qd.T @ scaling.blocks[(E.id, j)] @ Qd
        li.D_dual[np.ix_(di, di)] = Di
        lj.D_dual[np.ix_(dj, dj)] = Dj


def _sorted(a):
    return bool(np.all(a[1:] >= a[:-1]))


def _find(hay, needles):
    idx = {int(v): k for k, v in enumerate(hay)}
    return np.array([idx[int(v)] for v in needles], dtype=np.int64)


# -------------------------------------------------------------------- PCG


@dataclass
class SolveReport:
    n_pi: int = 0
    iterations: int = 0
    k2: float = float("nan")
    lambda_min: float = float("nan")
    lambda_max: float = float("nan")
    rel_residual: float = float("nan")
    residuals: list = field(default_factory=list)
    precond_residuals: list = field(default_factory=list)
    status: str = "ok"
    coarse: str = ""
    scaling: str = ""
    dropped: int = 0
    meta: dict = field(default_factory=dict)


class BenignSubspaceError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


def lanczos_extremes(alphas, betas) -> tuple[float, float]:
    """Extreme Ritz values from the CG coefficients."""
    k = len(alphas)
    if k == 0:
        return float("nan"), float("nan")
    d = np.empty(k)
    e = np.empty(max(k - 1, 0))
    d[0] = 1.0 / alphas[0]
    for m in range(1, k):
        d[m] = 1.0 / alphas[m] + betas[m - 1] / alphas[m - 1]
        e[m - 1] = np.sqrt(betas[m - 1]) / alphas[m - 1]
    ev = sla.eigh_tridiagonal(d, e, eigvals_only=True) if k > 1 else d
    return float(ev.min()), float(ev.max())


def pcg_solve(A, b: np.ndarray, M=None, rtol: float = 1e-6, maxit: int = 1000, x0=None,
              report: SolveReport | None = None, correct=None):
    """Preconditioned CG; stops on ``||r||_2 <= rtol ||b||_2``.

    ``A`` and ``M`` are callables (or objects with ``apply``).  With no
    ``x0`` an :class:`InterfaceProblem` starts from the minimum-norm
    velocity satisfying the flux rows (benign subspace), anything else
    from zero.  ``correct(x, r)`` may adjust both in
    place after every update; for an :class:`InterfaceProblem` it defaults
    to the least-squares fix of the constant pressures, a direction of zero
    energy that the velocity recursion cannot see.
    """
    if not 0 < rtol < 1:
        raise ValueError("rtol must lie in (0, 1)")
    Aop = A.apply if hasattr(A, "apply") else A
    Mop = (M.apply if hasattr(M, "apply") else M) if M is not None else (lambda v: v.copy())
    if correct is None and isinstance(A, InterfaceProblem):
        correct = A.correct_pressure
    rep = report or SolveReport()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        rep.rel_residual = 0.0
        rep.residuals = [0.0]
        rep.k2 = 1.0
        return np.zeros_like(b), rep
    if x0 is not None:
        x = np.array(x0, dtype=float)
    elif isinstance(A, InterfaceProblem):
        x = A.benign_start(b)
    else:
        x = np.zeros_like(b, dtype=float)
    r = b - Aop(x)
    if correct is not None:
        correct(x, r)
    rn = float(np.linalg.norm(r))
    rep.residuals = [rn / bnorm]
    alphas, betas = [], []
    z = Mop(r)
    rz = float(r @ z)
    p = z.copy()
    it = 0
    scale = bnorm * bnorm
    while rn > rtol * bnorm:
        if it >= maxit:
            rep.status = "maxit"
            rep.iterations = it
            rep.rel_residual = rn / bnorm
            _finish_k2(rep, alphas, betas)
            raise ConvergenceError(f"PCG did not converge in {maxit} iterations", rep)
        if rz <= -1e-14 * scale:
            raise BenignSubspaceError(f"benign subspace violated: r^T M r = {rz:.3e} at iteration {it}")
        rep.precond_residuals.append(np.sqrt(max(rz, 0.0)))
        q = Aop(p)
        pq = float(p @ q)
        if pq <= 0:
            raise BenignSubspaceError(f"benign subspace violated: p^T S p = {pq:.3e} at iteration {it}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        if correct is not None:
            correct(x, r)
        z_new = Mop(r)
        rz_new = float(r @ z_new)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        p = z_new + beta * p
        z, rz = z_new, rz_new
        rn = float(np.linalg.norm(r))
        it += 1
        rep.residuals.append(rn / bnorm)
    rep.iterations = it
    rep.rel_residual = rn / bnorm
    _finish_k2(rep, alphas, betas)
    return x, rep


def _finish_k2(rep: SolveReport, alphas, betas):
    if alphas:
        lo, hi = lanczos_extremes(alphas, betas[: len(alphas) - 1])
        rep.lambda_min, rep.lambda_max = lo, hi
        rep.k2 = max(hi / lo, 1.0) if lo > 0 else float("inf")
    else:
        rep.k2 = 1.0


def dense_condition_number(problem: InterfaceProblem, precond: BddcPreconditioner, tol: float = 1e-8):
    """Extreme eigenvalues of ``M^-1 S`` on the benign subspace (dense, small fixtures).

    The benign subspace is the range of ``M^-1`` applied to residuals with
    zero constant-pressure part.
    """
    ng = problem.n_gamma
    S = problem.dense()
    Minv = precond.dense()
    # basis of the benign subspace: images of interface-velocity residuals
    Z = Minv[:, :ng]
    U, s, _ = np.linalg.svd(Z, full_matrices=False)
    U = U[:, s > tol * s.max()]
    # M^-1 S maps the subspace into itself, so its spectrum there is that of U^T M^-1 S U.
    # Pure constant-pressure directions are resolved exactly by the coarse solve
    # (eigenvalue 1) and never enter the Krylov space; they are left out.
    ev, V = np.linalg.eig(U.T @ Minv @ S @ U)
    X = U @ V
    vel = np.linalg.norm(X[:ng], axis=0) > 1e-8 * np.linalg.norm(X, axis=0)
    ev = ev.real[vel]
    ev = ev[ev > tol * ev.max()]
    return float(ev.min()), float(ev.max())
