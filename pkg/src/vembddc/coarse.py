"""Edge constraints that enrich the BDDC coarse space.

``frugal``
    three constraints per macro edge from the rigid body modes pushed
    through the scaled jump operator; no eigenvalue problems.
``first``
    generalized eigenproblem with the deluxe-weighted edge Schur
    complements against their parallel sum.
``second``
    generalized eigenproblem of the scaled jump operator against the
    paired edge Schur complements.

Every edge always starts with its no-net-flux constraint.  For both
adaptive kinds the emitted vectors ``c`` satisfy: imposing ``c^T`` (jump)
``= 0`` leaves at most ``TOL`` as Rayleigh quotient of the pencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .assembly.substructure import SubdomainOperator
from .bddc import ScalingOperator, _edge_local_positions, no_net_flux_constraint
from .decomp import Decomposition, DofClassification, InterfaceSkeleton, MacroEdge

log = logging.getLogger(__name__)

KINDS = ("none", "frugal", "first", "second")
MAX_PER_EDGE = 10
PINV_RTOL = 1e-12

GEVP_CALLS = 0  # incremented by every gevp_sym call


def reset_gevp_counter() -> None:
    global GEVP_CALLS
    GEVP_CALLS = 0


# ------------------------------------------------------------ dense tools


def _sym_pinv(A: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    big = np.abs(lam).max(initial=0.0)
    keep = np.abs(lam) > rtol * big if big > 0 else np.zeros(len(lam), dtype=bool)
    return (V[:, keep] / lam[keep]) @ V[:, keep].T


def parallel_sum(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A : B = A (A+B)^+ B`` for symmetric positive semidefinite ``A``, ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.shape[0] != A.shape[-1]:
        raise ValueError("parallel_sum needs two square matrices of the same size")
    P = A @ _sym_pinv(A + B) @ B
    return 0.5 * (P + P.T)


def gevp_sym(A: np.ndarray, B: np.ndarray, tol_B: float = 1e-10):
    """Eigenpairs of ``A v = mu B v`` on the range of ``B``, ``mu`` descending.

    Eigenvectors are ``B``-orthonormal.  Directions where ``B`` falls below
    ``tol_B`` times its largest eigenvalue are deflated.
    """
    global GEVP_CALLS
    GEVP_CALLS += 1
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("pencil matrices differ in size")
    lam, V = np.linalg.eigh(0.5 * (B + B.T))
    top = lam.max(initial=0.0)
    if top <= 0 or not np.isfinite(top):
        raise ValueError("B is numerically zero")
    keep = lam > tol_B * top
    W = V[:, keep] / np.sqrt(lam[keep])
    Ar = W.T @ A @ W
    mu, Y = np.linalg.eigh(0.5 * (Ar + Ar.T))
    order = np.argsort(-mu, kind="stable")
    vecs = W @ Y[:, order]
    # deterministic sign: largest-magnitude entry positive
    for k in range(vecs.shape[1]):
        idx = np.argmax(np.abs(vecs[:, k]))
        if vecs[idx, k] < 0:
            vecs[:, k] = -vecs[:, k]
    return mu[order], vecs


def schur_onto(S: np.ndarray, keep: np.ndarray, drop: np.ndarray) -> np.ndarray:
    """Schur complement of ``S`` onto ``keep`` after eliminating the rest.

    Rows and columns in ``drop`` are fixed to zero (primal dofs).
    """
    n = S.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[keep] = False
    mask[drop] = False
    rest = np.flatnonzero(mask)
    Skk = S[np.ix_(keep, keep)]
    if len(rest) == 0:
        return 0.5 * (Skk + Skk.T)
    Skr = S[np.ix_(keep, rest)]
    Srr = S[np.ix_(rest, rest)]
    try:
        c = sla.cho_factor(Srr)
        X = sla.cho_solve(c, Skr.T)
    except sla.LinAlgError:
        X = _sym_pinv(Srr) @ Skr.T
    Sh = Skk - Skr @ X
    return 0.5 * (Sh + Sh.T)


# ---------------------------------------------------------- rigid modes


def rigid_body_modes(points: np.ndarray, H: float, center) -> np.ndarray:
    """Translations and the scaled rotation, shape ``(3, n, 2)``."""
    if H <= 0:
        raise ValueError("H must be positive")
    p = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.asarray(center, dtype=float)
    out = np.zeros((3, len(p), 2))
    out[0, :, 0] = 1.0
    out[1, :, 1] = 1.0
    out[2, :, 0] = (p[:, 1] - c[1]) / H
    out[2, :, 1] = -(p[:, 0] - c[0]) / H
    return out


def modes_on_dofs(dofmap, dofs: np.ndarray, H: float, center) -> np.ndarray:
    """Rigid modes sampled on velocity dofs, shape ``(len(dofs), 3)``."""
    r = rigid_body_modes(dofmap.position[dofs], H, center)
    comp = dofmap.component[dofs]
    return r[:, np.arange(len(dofs)), comp].T


# --------------------------------------------------------- edge context


@dataclass(eq=False)
class EdgeContext:
    edge: MacroEdge
    dofs: np.ndarray
    loc: tuple  # positions of the edge dofs in each subdomain's interface
    S: tuple  # full local Schur complements S_Gamma^(i), S_Gamma^(j)
    S_hat: tuple  # edge Schur complements, all other interface dofs eliminated
    D: tuple  # nodal scaling blocks D_E^(i), D_E^(j)
    flux: np.ndarray
    H: tuple
    centers: tuple

    @property
    def n(self) -> int:
        return len(self.dofs)

    @property
    def pair(self):
        return self.edge.pair

    def principal(self, l: int) -> np.ndarray:
        return self.S[l][np.ix_(self.loc[l], self.loc[l])]

    def jump_weighted(self, Si: np.ndarray, Sj: np.ndarray) -> np.ndarray:
        """``B_D diag(Si, Sj) B_D^T`` on the edge: ``D_j Si D_j^T + D_i Sj D_i^T``."""
        Di, Dj = self.D
        return Dj @ Si @ Dj.T + Di @ Sj @ Di.T


def edge_context(E: MacroEdge, cls: DofClassification, subops: list[SubdomainOperator],
                 scaling: ScalingOperator, decomp: Decomposition) -> EdgeContext:
    dofs = cls.edge_dofs[E.id]
    i, j = E.pair
    locs, S, Sh = [], [], []
    for l in (i, j):
        op = subops[l]
        loc = _edge_local_positions(dofs, op)
        locs.append(loc)
        S.append(op.S)
        # every other interface dof, corners included, is eliminated
        Sh.append(schur_onto(op.S, loc, np.zeros(0, dtype=int)))
    D = (scaling.blocks[(E.id, i)], scaling.blocks[(E.id, j)])
    return EdgeContext(E, dofs, tuple(locs), tuple(S), tuple(Sh), D, no_net_flux_constraint(E),
                       (decomp.diameters[i], decomp.diameters[j]),
                       (decomp.centers[i], decomp.centers[j]))


# ----------------------------------------------------------- constraints


def frugal_constraints(ctx: EdgeContext, dofmap) -> np.ndarray:
    """``c_m = B_D S_ij P_D v^(m)`` for the three rigid modes, shape ``(n_E, 3)``.

    ``v^(m) = [r_m^(i); -r_m^(j)]`` on the edge and zero on the rest of both
    interfaces, so only the principal edge blocks of ``S_ij`` contribute.
    """
    Di, Dj = ctx.D
    ri = modes_on_dofs(dofmap, ctx.dofs, ctx.H[0], ctx.centers[0])
    rj = modes_on_dofs(dofmap, ctx.dofs, ctx.H[1], ctx.centers[1])
    jump = ri + rj  # B_E v with v = [r_i; -r_j]
    yi = ctx.principal(0) @ (Dj.T @ jump)
    yj = ctx.principal(1) @ (-Di.T @ jump)
    return Dj @ yi - Di @ yj


@dataclass
class EdgeSpectrum:
    mu: np.ndarray
    vectors: np.ndarray
    A: np.ndarray
    B: np.ndarray


def _stiff_blocks(ctx: EdgeContext, energy: str):
    """Edge blocks for the stiffness side: zero extension (principal) or Schur."""
    if energy == "principal":
        return ctx.principal(0), ctx.principal(1)
    if energy == "schur":
        return ctx.S_hat
    raise ValueError(f"unknown edge energy {energy!r}")


def first_pencil(ctx: EdgeContext, energy: str = "principal") -> tuple[np.ndarray, np.ndarray]:
    Si, Sj = _stiff_blocks(ctx, energy)
    Di, Dj = ctx.D
    A = Dj.T @ Si @ Dj + Di.T @ Sj @ Di
    return 0.5 * (A + A.T), parallel_sum(*ctx.S_hat)


def kernel_directions(A: np.ndarray, B: np.ndarray, tol_B: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Orthonormal directions in the near-null space of ``B`` on which ``A`` acts.

    These carry infinite eigenvalues and are invisible to :func:`gevp_sym`.
    The flag is False when ``B`` has no usable range at all.
    """
    lam, V = np.linalg.eigh(0.5 * (B + B.T))
    a_scale = max(np.abs(A).max(initial=0.0), 1e-300)
    top = lam.max(initial=0.0)
    if top <= tol_B * a_scale:
        null = V
        has_range = False
    else:
        null = V[:, lam <= tol_B * top]
        has_range = True
    if null.shape[1] == 0:
        return null, has_range
    An = null.T @ A @ null
    a, Y = np.linalg.eigh(0.5 * (An + An.T))
    sig = a > tol_B * a_scale
    return null @ Y[:, sig][:, ::-1], has_range


def _split_spectrum(A, B, tol, tol_B):
    Z, has_range = kernel_directions(A, B, tol_B)
    if has_range:
        mu, V = gevp_sym(A, B, tol_B)
    else:
        mu, V = np.zeros(0), np.zeros((len(A), 0))
    return Z, mu, V, mu >= tol


def adaptive_first_constraints(ctx: EdgeContext, tol: float, tol_B: float = 1e-10,
                               energy: str = "principal"):
    """Constraints ``c_k = B_E v_k`` for all ``mu_k >= tol``; returns (C, spectrum).

    Kernel directions of ``B_E`` that ``A_E`` sees come first and are
    constrained directly.
    """
    A, B = first_pencil(ctx, energy)
    Z, mu, V, sel = _split_spectrum(A, B, tol, tol_B)
    C = np.hstack([Z, B @ V[:, sel]])
    return C, EdgeSpectrum(np.concatenate([np.full(Z.shape[1], np.inf), mu]), np.hstack([Z, V]), A, B)


def _flux_projector(ctx: EdgeContext) -> np.ndarray:
    """Orthogonal projector onto paired edge vectors with zero flux on both sides."""
    n = ctx.n
    c = ctx.flux / np.linalg.norm(ctx.flux)
    P = np.eye(n) - np.outer(c, c)
    return sla.block_diag(P, P)


def second_pencil(ctx: EdgeContext, energy: str = "principal") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = ctx.n
    Di, Dj = ctx.D
    S = sla.block_diag(*_stiff_blocks(ctx, energy))
    S_hat = sla.block_diag(*ctx.S_hat)
    Bj = np.hstack([np.eye(n), -np.eye(n)])  # jump
    BD = np.hstack([Dj, -Di])  # scaled jump
    PD = BD.T @ Bj
    Pi = _flux_projector(ctx)
    A = Pi @ PD.T @ S @ PD @ Pi
    B = Pi @ S_hat @ Pi
    return 0.5 * (A + A.T), 0.5 * (B + B.T), BD @ S @ PD


def adaptive_second_constraints(ctx: EdgeContext, tol: float, tol_B: float = 1e-10,
                                energy: str = "principal"):
    """Constraints ``c_k = B_D S P_D v_k`` for all ``mu_k >= tol``."""
    A, B, G = second_pencil(ctx, energy)
    Z, mu, V, sel = _split_spectrum(A, B, tol, tol_B)
    C = np.hstack([G @ Z, G @ V[:, sel]])
    return C, EdgeSpectrum(np.concatenate([np.full(Z.shape[1], np.inf), mu]), np.hstack([Z, V]), A, B)


def max_rayleigh(A: np.ndarray, B: np.ndarray, constraints: np.ndarray | None = None,
                 tol_B: float = 1e-10) -> float:
    """Largest Rayleigh quotient of ``(A, B)`` on ``{w : constraints^T w = 0}``."""
    n = A.shape[0]
    if constraints is None or constraints.size == 0:
        N = np.eye(n)
    else:
        N = sla.null_space(np.asarray(constraints).reshape(n, -1).T)
    if N.shape[1] == 0:
        return 0.0
    mu, _ = _gevp_plain(N.T @ A @ N, N.T @ B @ N, tol_B)
    return float(mu.max(initial=0.0))


def _gevp_plain(A, B, tol_B):
    lam, V = np.linalg.eigh(0.5 * (B + B.T))
    keep = lam > tol_B * max(lam.max(initial=0.0), 1e-300)
    W = V[:, keep] / np.sqrt(lam[keep])
    mu, Y = np.linalg.eigh(W.T @ A @ W)
    return mu, W @ Y


# ---------------------------------------------------------------- enrich


@dataclass
class EdgeConstraints:
    edge: int
    pair: tuple
    vectors: np.ndarray  # (n_E, k), flux first
    provenance: list
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class ConstraintSet:
    kind: str
    tol: float | None
    edges: list[EdgeConstraints]
    n_corners: int

    def matrices(self) -> list[np.ndarray]:
        return [e.vectors for e in self.edges]

    def n_pi(self, transformations=None) -> int:
        """``2 #corners + sum_E N_E`` with ``N_E`` after drops when known."""
        if transformations is not None:
            return 2 * self.n_corners + sum(t.n_primal for t in transformations)
        return 2 * self.n_corners + sum(e.vectors.shape[1] for e in self.edges)

    def dump(self, path) -> None:
        """Structured text: one block per edge with its spectrum and vectors."""
        lines = [f"constraints kind={self.kind} tol={self.tol} corners={self.n_corners}"]
        for e in self.edges:
            lines.append(f"edge {e.edge} pair {e.pair[0]} {e.pair[1]} n {e.vectors.shape[1]}")
            lines.append("provenance " + " ".join(e.provenance))
            lines.append("mu " + " ".join(f"{m:.10e}" for m in e.mu))
            for k in range(e.vectors.shape[1]):
                lines.append("vector " + " ".join(f"{v:.10e}" for v in e.vectors[:, k]))
        Path(path).write_text("\n".join(lines) + "\n")


def enrich(kind: str, skeleton: InterfaceSkeleton, subops: list[SubdomainOperator],
           scaling: ScalingOperator, cls: DofClassification, dofmap, decomp: Decomposition,
           tol: float | None = None, max_per_edge: int = MAX_PER_EDGE,
           energy: str = "principal") -> ConstraintSet:
    """Per-edge constraint lists: the flux first, then the kind-specific ones."""
    if kind not in KINDS:
        raise ValueError(f"unknown coarse space {kind!r}")
    if kind in ("first", "second"):
        if tol is None or not tol > 1:
            raise ValueError("adaptive coarse spaces need TOL > 1")
    out = []
    for E in sorted(skeleton.macro_edges, key=lambda e: (e.pair, e.id)):
        flux = no_net_flux_constraint(E)[:, None]
        prov = ["flux"]
        mu = np.zeros(0)
        extra = np.zeros((len(flux), 0))
        try:
            if kind != "none":
                ctx = edge_context(E, cls, subops, scaling, decomp)
                if kind == "frugal":
                    extra = frugal_constraints(ctx, dofmap)
                elif kind == "first":
                    extra, spec = adaptive_first_constraints(ctx, tol, energy=energy)
                    mu = spec.mu
                else:
                    extra, spec = adaptive_second_constraints(ctx, tol, energy=energy)
                    mu = spec.mu
        except Exception as exc:
            raise type(exc)(f"edge {E.id} {E.pair}: {exc}") from exc
        if extra.shape[1] > max_per_edge:
            log.warning("edge %d: %d constraints, keeping the first %d", E.id, extra.shape[1], max_per_edge)
            extra = extra[:, :max_per_edge]
        prov += [kind] * extra.shape[1]
        out.append(EdgeConstraints(E.id, E.pair, np.hstack([flux, extra]), prov, mu))
    out.sort(key=lambda e: e.edge)
    return ConstraintSet(kind, tol, out, len(skeleton.corners))
