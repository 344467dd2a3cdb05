"""Per-cell geometry, polygon quadrature and mesh quality checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import pdist

from .polymesh import MeshError, PolyMesh, _centroid, _shoelace

MAX_QUAD_ORDER = 30


@dataclass(frozen=True)
class CellGeometry:
    area: float
    centroid: np.ndarray
    diameter: float
    edge_lengths: np.ndarray


def polygon_geometry(xy: np.ndarray) -> CellGeometry:
    lengths = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
    return CellGeometry(
        area=_shoelace(xy),
        centroid=_centroid(xy),
        diameter=float(pdist(xy).max()),
        edge_lengths=lengths,
    )


def cell_geometry(mesh: PolyMesh, cell_id: int) -> CellGeometry:
    if not 0 <= cell_id < mesh.n_cells:
        raise IndexError(f"cell id {cell_id} out of range")
    return polygon_geometry(mesh.cell_coords(cell_id))


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Returns barycentric-free reference points (n, 2) and weights summing
    to 1/2; exact for total degree ``order``.
    """
    m = (order + 3) // 2
    g, w = np.polynomial.legendre.leggauss(m)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([u.ravel(), (v * (1.0 - u)).ravel()])
    wts = (wu * wv * (1.0 - u)).ravel()
    return pts, wts


def polygon_rule(xy: np.ndarray, order: int, center: np.ndarray | None = None, cell_id=None):
    """Fan rule from ``center`` (default centroid) over the polygon ``xy``."""
    if not 1 <= order <= MAX_QUAD_ORDER:
        raise ValueError(f"quadrature order must be in [1, {MAX_QUAD_ORDER}]")
    if center is None:
        center = _centroid(xy)
    ref, rw = triangle_rule(order)
    a = xy - center
    b = np.roll(xy, -1, axis=0) - center
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    if np.any(det <= 0):
        raise MeshError(f"cell {cell_id if cell_id is not None else '?'} is not star-shaped "
                        "with respect to its centroid")
    # x = center + s*a + t*b for reference (s, t)
    pts = center + ref[:, 0, None, None] * a[None] + ref[:, 1, None, None] * b[None]
    wts = rw[:, None] * det[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def polygon_quadrature(mesh: PolyMesh, cell_id: int, order: int):
    """List of ``(point, weight)`` pairs exact to total degree ``order``."""
    pts, wts = polygon_rule(mesh.cell_coords(cell_id), order, cell_id=cell_id)
    return [(p, w) for p, w in zip(pts, wts)]


@dataclass
class MeshQualityReport:
    min_inradius_ratio: float
    min_vertex_gap_ratio: float
    offending_cells: list[int] = field(default_factory=list)
    gamma_min: float = 0.0
    c_min: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.offending_cells


def _quality(xy: np.ndarray) -> tuple[float, float]:
    g = polygon_geometry(xy)
    d = np.roll(xy, -1, axis=0) - xy
    rel = g.centroid - xy
    # signed distance from the centroid to each edge line (positive inside)
    dist = (d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0]) / g.edge_lengths
    inr = max(float(dist.min()), 0.0) / g.diameter
    gap = float(pdist(xy).min()) / g.diameter
    return inr, gap


def validate_mesh(mesh: PolyMesh, gamma_min: float, c_min: float) -> MeshQualityReport:
    """Flag cells whose inradius or vertex gap is small relative to h_K."""
    if not (0 < gamma_min < 1 and 0 < c_min < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    inr = np.empty(mesh.n_cells)
    gap = np.empty(mesh.n_cells)
    for c in range(mesh.n_cells):
        inr[c], gap[c] = _quality(mesh.cell_coords(c))
    bad = np.flatnonzero((inr < gamma_min) | (gap < c_min))
    return MeshQualityReport(
        min_inradius_ratio=float(inr.min()),
        min_vertex_gap_ratio=float(gap.min()),
        offending_cells=[int(c) for c in bad],
        gamma_min=gamma_min,
        c_min=c_min,
    )
