"""Planar polygonal mesh container with edge adjacency."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised when a tessellation violates the mesh invariants."""


@dataclass(eq=False)
class PolyMesh:
    """Polygonal tessellation of a planar domain.

    ``cells`` holds counter-clockwise vertex loops.  Edge adjacency is
    derived on construction: ``edges[e]`` is a vertex pair, ``edge_cells[e]``
    the one or two incident cells (``-1`` marks a missing neighbour) and
    ``cell_edges[c][k]`` the edge joining loop positions ``k`` and ``k+1``.
    """

    vertices: np.ndarray
    cells: list[np.ndarray]
    meta: dict = field(default_factory=dict)
    edges: np.ndarray = field(init=False)
    edge_cells: np.ndarray = field(init=False)
    cell_edges: list[np.ndarray] = field(init=False)
    boundary_vertex: np.ndarray = field(init=False)
    boundary_edge: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        self.cells = [np.asarray(c, dtype=np.int64) for c in self.cells]
        nv = len(self.vertices)
        for cid, loop in enumerate(self.cells):
            if len(loop) < 3:
                raise MeshError(f"cell {cid} has fewer than 3 vertices")
            if loop.min() < 0 or loop.max() >= nv:
                raise MeshError(f"cell {cid} references a missing vertex")
            if len(np.unique(loop)) != len(loop):
                raise MeshError(f"cell {cid} repeats a vertex")
        self._build_edges()

    def _build_edges(self):
        index: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        incidence: list[list[int]] = []
        cell_edges = []
        for cid, loop in enumerate(self.cells):
            ids = np.empty(len(loop), dtype=np.int64)
            for k in range(len(loop)):
                a, b = int(loop[k]), int(loop[(k + 1) % len(loop)])
                key = (a, b) if a < b else (b, a)
                e = index.get(key)
                if e is None:
                    e = len(edges)
                    index[key] = e
                    edges.append(key)
                    incidence.append([])
                incidence[e].append(cid)
                ids[k] = e
            cell_edges.append(ids)
        bad = [e for e, inc in enumerate(incidence) if len(inc) > 2]
        if bad:
            raise MeshError(f"edge {edges[bad[0]]} has more than two incident cells")
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_cells = np.array(
            [inc + [-1] * (2 - len(inc)) for inc in incidence], dtype=np.int64
        ).reshape(-1, 2)
        self.cell_edges = cell_edges
        self.boundary_edge = self.edge_cells[:, 1] < 0
        self.boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertex[self.edges[self.boundary_edge].ravel()] = True

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_coords(self, cid: int) -> np.ndarray:
        return self.vertices[self.cells[cid]]

    def cell_areas(self) -> np.ndarray:
        return np.array([_shoelace(self.cell_coords(c)) for c in range(self.n_cells)])

    def cell_centroids(self) -> np.ndarray:
        return np.array([_centroid(self.cell_coords(c)) for c in range(self.n_cells)])

    def cell_neighbors(self, cid: int) -> list[int]:
        out = []
        for e in self.cell_edges[cid]:
            a, b = self.edge_cells[e]
            other = b if a == cid else a
            if other >= 0:
                out.append(int(other))
        return out

    def check(self, area: float = 1.0, rtol: float = 1e-12) -> None:
        """Raise :class:`MeshError` unless the tessellation invariants hold."""
        areas = self.cell_areas()
        if np.any(areas <= 0):
            raise MeshError(f"cell {int(np.argmin(areas))} has non-positive area")
        if abs(areas.sum() - area) > rtol * area:
            raise MeshError(f"cell areas sum to {areas.sum():.17g}, expected {area}")
        for cid in range(self.n_cells):
            if not _is_simple(self.cell_coords(cid)):
                raise MeshError(f"cell {cid} is self-intersecting")
        # edges with a single incident cell must lie on the bounding box
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        ends = self.vertices[self.edges[self.boundary_edge]]
        on_side = np.zeros(len(ends), dtype=bool)
        for d in range(2):
            for bound in (lo[d], hi[d]):
                on_side |= np.all(np.abs(ends[:, :, d] - bound) <= 1e-12, axis=1)
        if not np.all(on_side):
            e = int(np.flatnonzero(self.boundary_edge)[np.argmin(on_side)])
            raise MeshError(f"edge {e} is a hanging interior edge")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        for c in self.cells:
            h.update(np.int64(len(c)).tobytes())
            h.update(c.tobytes())
        return h.hexdigest()

    def structurally_equal(self, other: "PolyMesh") -> bool:
        if self.vertices.shape != other.vertices.shape or self.n_cells != other.n_cells:
            return False
        if not np.array_equal(self.vertices, other.vertices):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.cells, other.cells))


def _shoelace(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _centroid(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if a == 0:  # degenerate; callers reject zero area
        return xy.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(r, s, p), orient(r, s, q)
    d3, d4 = orient(p, q, r), orient(p, q, s)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(xy: np.ndarray) -> bool:
    n = len(xy)
    if n <= 3:
        return True
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(xy[i], xy[(i + 1) % n], xy[j], xy[(j + 1) % n]):
                return False
    return True


def unit_square_grid(nx: int, ny: int | None = None) -> PolyMesh:
    """Structured ``nx`` x ``ny`` grid of squares on the unit square."""
    ny = nx if ny is None else ny
    xs, ys = np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1)
    verts = np.array([[x, y] for y in ys for x in xs])
    cells = []
    for j in range(ny):
        for i in range(nx):
            v0 = j * (nx + 1) + i
            cells.append([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    return PolyMesh(verts, cells)
