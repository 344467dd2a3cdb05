"""Non-overlapping subdomain partitions, interface skeleton and dof labels.

Partitioners: recursive coordinate bisection on cell centroids (default),
greedy region growing, and import of a ``polypart 1`` file written by an
external tool.  Every part is made edge-connected by a bounded repair pass.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .mesh import PolyMesh

log = logging.getLogger(__name__)

MAX_REPAIR_PASSES = 10
BALANCE_LIMIT = 1.5


class PartitionError(ValueError):
    pass


@dataclass(eq=False)
class Decomposition:
    mesh: PolyMesh
    element_to_sub: np.ndarray
    method: str = "coordinate-bisection"
    sub_cells: list[np.ndarray] = field(init=False)
    diameters: np.ndarray = field(init=False)
    centers: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        e2s = np.asarray(self.element_to_sub, dtype=np.int64)
        if e2s.shape != (self.mesh.n_cells,):
            raise PartitionError("element_to_sub must have one entry per cell")
        n = int(e2s.max()) + 1 if len(e2s) else 0
        if n < 1 or e2s.min() < 0:
            raise PartitionError("subdomain ids must be non-negative")
        self.element_to_sub = e2s
        self.sub_cells = [np.flatnonzero(e2s == s) for s in range(n)]
        if any(len(c) == 0 for c in self.sub_cells):
            raise PartitionError("empty subdomain")
        m = self.mesh
        cell_area = m.cell_areas()
        cen = m.cell_centroids()
        self.areas = np.array([cell_area[c].sum() for c in self.sub_cells])
        self.centers = np.array([cell_area[c] @ cen[c] / cell_area[c].sum() for c in self.sub_cells])
        diam = np.empty(n)
        for s, cells in enumerate(self.sub_cells):
            pts = m.vertices[np.unique(np.concatenate([m.cells[c] for c in cells]))]
            diam[s] = _diameter(pts)
        self.diameters = diam

    @property
    def n_sub(self) -> int:
        return len(self.sub_cells)

    def balance(self) -> float:
        counts = np.array([len(c) for c in self.sub_cells])
        return counts.max() / counts.min()

    def connected(self) -> bool:
        adj = cell_adjacency(self.mesh)
        return all(_n_components(adj, cells) == 1 for cells in self.sub_cells)


def _diameter(pts: np.ndarray) -> float:
    if len(pts) > 64:
        from scipy.spatial import ConvexHull

        pts = pts[ConvexHull(pts).vertices]
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def cell_adjacency(mesh: PolyMesh, weighted: bool = False) -> sp.csr_matrix:
    """Cell graph through interior edges; weights are shared edge lengths."""
    inner = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)
    a, b = mesh.edge_cells[inner, 0], mesh.edge_cells[inner, 1]
    if weighted:
        p = mesh.vertices[mesh.edges[inner]]
        w = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    else:
        w = np.ones(len(inner))
    n = mesh.n_cells
    g = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n))
    return g.tocsr()


def _n_components(adj: sp.csr_matrix, cells: np.ndarray) -> int:
    return connected_components(adj[cells][:, cells], directed=False)[0]


def _bisect(cells: np.ndarray, cen: np.ndarray, nparts: int, first: int, out: np.ndarray) -> None:
    if nparts == 1:
        out[cells] = first
        return
    n_left = nparts // 2
    pts = cen[cells]
    axis = int(np.argmax(np.ptp(pts, axis=0)))
    order = np.lexsort((cells, pts[:, 1 - axis], pts[:, axis]))
    k = int(round(len(cells) * n_left / nparts))
    _bisect(cells[order[:k]], cen, n_left, first, out)
    _bisect(cells[order[k:]], cen, nparts - n_left, first + n_left, out)


def _grow(mesh: PolyMesh, n_sub: int, seed: int) -> np.ndarray:
    """Greedy BFS region growing from farthest-point seeds."""
    rng = np.random.Generator(np.random.Philox(seed))
    cen = mesh.cell_centroids()
    seeds = [int(rng.integers(mesh.n_cells))]
    dist = np.linalg.norm(cen - cen[seeds[0]], axis=1)
    for _ in range(n_sub - 1):
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(cen - cen[nxt], axis=1))
    part = np.full(mesh.n_cells, -1, dtype=np.int64)
    fronts = [deque([s]) for s in seeds]
    size = np.zeros(n_sub, dtype=np.int64)
    for s, c in enumerate(seeds):
        part[c] = s
        size[s] = 1
    nbrs = [mesh.cell_neighbors(c) for c in range(mesh.n_cells)]
    remaining = mesh.n_cells - n_sub
    while remaining:
        progressed = False
        # smallest part grows first; ties by id
        for s in np.lexsort((np.arange(n_sub), size)):
            q = fronts[s]
            while q:
                c = q[0]
                free = [n for n in nbrs[c] if part[n] < 0]
                if not free:
                    q.popleft()
                    continue
                part[free[0]] = s
                q.append(free[0])
                size[s] += 1
                remaining -= 1
                progressed = True
                break
            if progressed:
                break
        if not progressed:
            raise PartitionError("region growing stalled (disconnected mesh?)")
    return _rebalance(mesh, part)


def _rebalance(mesh: PolyMesh, part: np.ndarray) -> np.ndarray:
    """Feed the smallest parts with boundary cells of larger neighbours.

    A move needs the donor to be at least two cells larger and to stay
    connected, so the sum of squared sizes strictly decreases.
    """
    part = part.copy()
    adj = cell_adjacency(mesh)
    nbrs = [adj.indices[adj.indptr[c]:adj.indptr[c + 1]] for c in range(mesh.n_cells)]
    n_sub = int(part.max()) + 1
    size = np.bincount(part, minlength=n_sub)
    while size.max() > BALANCE_LIMIT * size.min():
        moved = False
        for s in np.lexsort((np.arange(n_sub), size)):
            cand = sorted({int(n) for c in np.flatnonzero(part == s) for n in nbrs[c]
                           if part[n] != s and size[part[n]] > size[s] + 1},
                          key=lambda c: (-size[part[c]], -int(np.sum(part[nbrs[c]] == s)), c))
            for c in cand:
                t = part[c]
                rest = np.flatnonzero(part == t)
                rest = rest[rest != c]
                if _n_components(adj, rest) != 1:
                    continue
                part[c] = s
                size[s] += 1
                size[t] -= 1
                moved = True
                break
            if moved:
                break
        if not moved:
            break
    return part


def read_partition(path, n_cells: int) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["polypart", "1"]:
        raise PartitionError(f"{path}:1: expected header 'polypart 1'")
    part = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] != "cell" or len(tok) != 3:
            raise PartitionError(f"{path}:{lineno}: expected 'cell <id> <subdomain>'")
        try:
            part[int(tok[1])] = int(tok[2])
        except ValueError:
            raise PartitionError(f"{path}:{lineno}: non-integer field") from None
    if sorted(part) != list(range(n_cells)):
        raise PartitionError(f"{path}: partition lists {len(part)} cells, mesh has {n_cells}")
    return np.array([part[c] for c in range(n_cells)], dtype=np.int64)


def write_partition(decomp: Decomposition, path) -> None:
    lines = ["polypart 1"] + [f"cell {c} {s}" for c, s in enumerate(decomp.element_to_sub)]
    Path(path).write_text("\n".join(lines) + "\n")


def repair_connectivity(mesh: PolyMesh, part: np.ndarray) -> np.ndarray:
    """Move stranded components to the neighbour part with the longest shared boundary."""
    part = part.copy()
    adj = cell_adjacency(mesh, weighted=True)
    for _ in range(MAX_REPAIR_PASSES):
        moved = False
        for s in range(part.max() + 1):
            cells = np.flatnonzero(part == s)
            ncomp, lab = connected_components(adj[cells][:, cells], directed=False)
            if ncomp <= 1:
                continue
            keep = np.argmax(np.bincount(lab))
            for comp in range(ncomp):
                if comp == keep:
                    continue
                stray = cells[lab == comp]
                row = adj[stray].tocoo()
                other = part[row.col]
                mask = other != s
                if not np.any(mask):
                    continue
                weight = np.bincount(other[mask], weights=row.data[mask])
                target = int(np.argmax(weight))
                log.info("moving %d stranded cells from subdomain %d to %d", len(stray), s, target)
                part[stray] = target
                moved = True
        if not moved:
            break
    if any(_n_components(adj, np.flatnonzero(part == s)) != 1 for s in range(part.max() + 1)):
        raise PartitionError(f"could not make subdomains connected in {MAX_REPAIR_PASSES} passes")
    return part


def partition_mesh(mesh: PolyMesh, n_sub: int, method: str = "coordinate-bisection",
                   seed: int = 0, path=None) -> Decomposition:
    """Split the cells into ``n_sub`` edge-connected parts.

    ``method`` is ``coordinate-bisection``, ``greedy-growing`` or ``file``
    (``path`` then names a ``polypart 1`` file).
    """
    if n_sub < 1:
        raise PartitionError("n_sub must be at least 1")
    if n_sub > mesh.n_cells:
        raise PartitionError(f"n_sub={n_sub} exceeds the number of cells {mesh.n_cells}")
    if method == "coordinate-bisection":
        part = np.empty(mesh.n_cells, dtype=np.int64)
        _bisect(np.arange(mesh.n_cells), mesh.cell_centroids(), n_sub, 0, part)
    elif method == "greedy-growing":
        part = _grow(mesh, n_sub, seed)
    elif method == "file":
        if path is None:
            raise PartitionError("file method needs a path")
        part = read_partition(path, mesh.n_cells)
        if part.min() < 0 or len(np.unique(part)) != part.max() + 1:
            raise PartitionError(f"{path}: subdomain ids must be contiguous from 0")
    else:
        raise PartitionError(f"unknown partition method {method!r}")
    part = repair_connectivity(mesh, part)
    dec = Decomposition(mesh, part, method)
    if method != "file" and dec.balance() > BALANCE_LIMIT:
        log.warning("partition balance %.2f exceeds %.1f", dec.balance(), BALANCE_LIMIT)
    return dec


# ---------------------------------------------------------------- skeleton


@dataclass
class MacroEdge:
    """Interface shared by subdomains ``i < j`` between two corners.

    ``edges`` are fine edges ordered along the polyline from ``start`` to
    ``end``; ``vertices`` the fine vertices strictly inside.  ``sign[k]`` is
    +1 when fine edge ``k`` runs counter-clockwise around subdomain ``i``,
    so the unit normal of that orientation points from ``i`` to ``j``.
    """

    id: int
    pair: tuple[int, int]
    edges: np.ndarray
    vertices: np.ndarray
    start: int
    end: int
    tangents: np.ndarray  # oriented fine-edge vectors, CCW around subdomain i

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.tangents, axis=1).sum())


@dataclass(eq=False)
class InterfaceSkeleton:
    macro_edges: list[MacroEdge]
    corners: np.ndarray  # interface vertices inside the domain that end macro edges
    boundary_corners: np.ndarray  # macro-edge endpoints on the physical boundary
    vertex_subs: list[tuple[int, ...]]  # subdomains whose closure holds each vertex
    interface_vertices: np.ndarray
    interface_edges: np.ndarray
    sub_edges: list[list[int]]  # macro-edge ids per subdomain

    @property
    def n_edges(self) -> int:
        return len(self.macro_edges)

    def pair_edges(self, i: int, j: int) -> list[MacroEdge]:
        key = (min(i, j), max(i, j))
        return [E for E in self.macro_edges if E.pair == key]


def _vertex_subs(mesh: PolyMesh, e2s: np.ndarray) -> list[tuple[int, ...]]:
    sets: list[set] = [set() for _ in range(mesh.n_vertices)]
    for c, loop in enumerate(mesh.cells):
        s = int(e2s[c])
        for v in loop:
            sets[v].add(s)
    return [tuple(sorted(s)) for s in sets]


def extract_interface(mesh: PolyMesh, decomp: Decomposition) -> InterfaceSkeleton:
    e2s = decomp.element_to_sub
    vsubs = _vertex_subs(mesh, e2s)
    ec = mesh.edge_cells
    inner = ec[:, 1] >= 0
    s0 = np.where(ec[:, 0] >= 0, e2s[ec[:, 0]], -1)
    s1 = np.where(inner, e2s[np.maximum(ec[:, 1], 0)], -1)
    iface_edges = np.flatnonzero(inner & (s0 != s1))
    iface_verts = np.array([v for v in range(mesh.n_vertices) if len(vsubs[v]) >= 2], dtype=np.int64)

    # fine edges grouped by subdomain pair
    groups: dict[tuple[int, int], list[int]] = {}
    for e in iface_edges:
        key = (int(min(s0[e], s1[e])), int(max(s0[e], s1[e])))
        groups.setdefault(key, []).append(int(e))

    corner = np.zeros(mesh.n_vertices, dtype=bool)
    for v in iface_verts:
        if len(vsubs[v]) >= 3 or mesh.boundary_vertex[v]:
            corner[v] = True
    # path ends inside a pair graph (disconnected shared boundaries) are corners too
    for key, elist in groups.items():
        deg = np.bincount(mesh.edges[elist].ravel(), minlength=mesh.n_vertices)
        corner[(deg == 1)] = True

    macro: list[MacroEdge] = []
    for key in sorted(groups):
        chains = _chains(mesh, groups[key], corner)
        for chain in chains:
            macro.append(_make_macro(mesh, decomp, len(macro), key, chain))

    sub_edges: list[list[int]] = [[] for _ in range(decomp.n_sub)]
    for E in macro:
        sub_edges[E.pair[0]].append(E.id)
        sub_edges[E.pair[1]].append(E.id)
    cset = np.flatnonzero(corner)
    return InterfaceSkeleton(
        macro_edges=macro,
        corners=cset[~mesh.boundary_vertex[cset]],
        boundary_corners=cset[mesh.boundary_vertex[cset]],
        vertex_subs=vsubs,
        interface_vertices=iface_verts,
        interface_edges=iface_edges,
        sub_edges=sub_edges,
    )


def _chains(mesh: PolyMesh, elist: list[int], corner: np.ndarray) -> list[list[int]]:
    """Split the fine edges of one subdomain pair into vertex chains between corners."""
    nbr: dict[int, list[tuple[int, int]]] = {}
    for e in elist:
        a, b = (int(x) for x in mesh.edges[e])
        nbr.setdefault(a, []).append((b, e))
        nbr.setdefault(b, []).append((a, e))
    used: set[int] = set()
    chains = []
    starts = sorted(v for v in nbr if corner[v])
    for s in starts:
        for w, e in sorted(nbr[s], key=lambda t: t[1]):
            if e in used:
                continue
            chain = [s]
            cur, edge = w, e
            while True:
                used.add(edge)
                chain.append(cur)
                if corner[cur]:
                    break
                nxt = [(x, f) for x, f in nbr[cur] if f not in used]
                cur, edge = nxt[0]
            chains.append(chain)
    # closed loops without any corner: promote two vertices to split them
    left = [e for e in elist if e not in used]
    while left:
        v0 = int(min(mesh.edges[left].ravel()))
        loop = [v0]
        cur = v0
        while True:
            nxt = [(x, f) for x, f in nbr[cur] if f not in used]
            if not nxt:
                break
            x, f = min(nxt, key=lambda t: t[1])
            used.add(f)
            if x == v0:
                break
            loop.append(x)
            cur = x
        half = len(loop) // 2
        log.warning("closed interface loop of %d vertices split at vertices %d and %d",
                    len(loop), loop[0], loop[half])
        corner[loop[0]] = corner[loop[half]] = True
        chains.append(loop[: half + 1])
        chains.append(loop[half:] + [loop[0]])
        left = [e for e in elist if e not in used]
    return chains


def _edge_id(mesh: PolyMesh, a: int, b: int) -> int:
    key = (min(a, b), max(a, b))
    if not hasattr(mesh, "_edge_index"):
        mesh._edge_index = {(int(p), int(q)): k for k, (p, q) in enumerate(mesh.edges)}
    return mesh._edge_index[key]


def _make_macro(mesh, decomp, mid, key, chain) -> MacroEdge:
    i, _ = key
    edges = np.array([_edge_id(mesh, a, b) for a, b in zip(chain[:-1], chain[1:])], dtype=np.int64)
    tang = mesh.vertices[chain[1:]] - mesh.vertices[chain[:-1]]
    # orient so that each fine edge is CCW around subdomain i (outward normal i -> j)
    e = edges[0]
    c = mesh.edge_cells[e, 0]
    if decomp.element_to_sub[c] != i:
        c = mesh.edge_cells[e, 1]
    loop = list(mesh.cells[c])
    k = loop.index(chain[0]) if chain[0] in loop else None
    ccw = k is not None and loop[(k + 1) % len(loop)] == chain[1]
    if not ccw:
        chain = chain[::-1]
        edges = edges[::-1].copy()
        tang = -tang[::-1]
    return MacroEdge(mid, key, edges, np.array(chain[1:-1], dtype=np.int64), chain[0], chain[-1], tang)


# ---------------------------------------------------------- classification

INTERIOR, DUAL, PRIMAL, DIRICHLET = 0, 1, 2, 3


@dataclass(eq=False)
class DofClassification:
    """Velocity dof labels and ownership.

    ``edge_dofs[E]`` lists the global velocity dofs in the interior of macro
    edge ``E`` in polyline order (fine edge node, inner vertex, fine edge
    node, ...) with the x component before the y component.
    """

    label: np.ndarray
    multiplicity: np.ndarray
    owners: list[tuple[int, ...]]
    interface: np.ndarray  # global ids of non-Dirichlet interface velocity dofs
    corner_dofs: np.ndarray
    edge_dofs: list[np.ndarray]
    sub_interior: list[np.ndarray]
    sub_interface: list[np.ndarray]
    sub_cells: list[np.ndarray]
    n_sub: int

    @property
    def primal(self) -> np.ndarray:
        return np.flatnonzero(self.label == PRIMAL)

    @property
    def dual(self) -> np.ndarray:
        return np.flatnonzero(self.label == DUAL)


def classify_dofs(dofmap, skeleton: InterfaceSkeleton, decomp: Decomposition,
                  dirichlet_boundary: bool = True) -> DofClassification:
    mesh = dofmap.mesh
    n = dofmap.n_velocity
    owners: list[tuple[int, ...]] = [()] * n
    vsubs = skeleton.vertex_subs
    e2s = decomp.element_to_sub
    for v in range(mesh.n_vertices):
        owners[2 * v] = owners[2 * v + 1] = vsubs[v]
    for e, (c0, c1) in enumerate(mesh.edge_cells):
        subs = tuple(sorted({int(e2s[c]) for c in (c0, c1) if c >= 0}))
        d = dofmap.edge_offset + 2 * e
        owners[d] = owners[d + 1] = subs
    for c in range(mesh.n_cells):
        d = dofmap.moment_offset + 2 * c
        owners[d] = owners[d + 1] = (int(e2s[c]),)
    mult = np.array([len(o) for o in owners], dtype=np.int64)

    label = np.where(mult >= 2, DUAL, INTERIOR).astype(np.int8)
    if dirichlet_boundary:
        label[dofmap.boundary_velocity_dofs()] = DIRICHLET
    corner_dofs = np.sort(np.concatenate([2 * skeleton.corners, 2 * skeleton.corners + 1])).astype(np.int64)
    label[corner_dofs] = PRIMAL
    interface = np.flatnonzero((label == DUAL) | (label == PRIMAL))

    edge_dofs = []
    for E in skeleton.macro_edges:
        ids = []
        for k, e in enumerate(E.edges):
            ids += [dofmap.edge_offset + 2 * e, dofmap.edge_offset + 2 * e + 1]
            if k < len(E.vertices):
                v = E.vertices[k]
                ids += [2 * v, 2 * v + 1]
        edge_dofs.append(np.array(ids, dtype=np.int64))

    sub_interior: list[list[int]] = [[] for _ in range(decomp.n_sub)]
    sub_interface: list[list[int]] = [[] for _ in range(decomp.n_sub)]
    for d in np.flatnonzero(label == INTERIOR):
        sub_interior[owners[d][0]].append(d)
    for d in interface:
        for s in owners[d]:
            sub_interface[s].append(d)
    return DofClassification(
        label=label,
        multiplicity=mult,
        owners=owners,
        interface=interface,
        corner_dofs=corner_dofs,
        edge_dofs=edge_dofs,
        sub_interior=[np.array(x, dtype=np.int64) for x in sub_interior],
        sub_interface=[np.array(x, dtype=np.int64) for x in sub_interface],
        sub_cells=decomp.sub_cells,
        n_sub=decomp.n_sub,
    )
