"""Random and centroidal Voronoi tessellations of the unit square.

The bounded diagram is obtained from the Qhull diagram of the seeds plus
their mirror images across the four sides of the box: the cell of an
original seed in that diagram is exactly its Voronoi cell clipped to the
box.  Random numbers come from numpy's Philox counter-based generator.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import QhullError, Voronoi, cKDTree

from .polymesh import MeshError, PolyMesh, _centroid

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox"
MAX_RETRIES = 5
_SNAP = 1e-10
_MERGE = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _mirrored(seeds: np.ndarray) -> np.ndarray:
    x, y = seeds[:, 0], seeds[:, 1]
    return np.vstack([
        seeds,
        np.column_stack([-x, y]),
        np.column_stack([2.0 - x, y]),
        np.column_stack([x, -y]),
        np.column_stack([x, 2.0 - y]),
    ])


def _raw_cells(seeds: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Qhull vertices and CCW vertex loops of the clipped cells."""
    vor = Voronoi(_mirrored(seeds))
    verts = vor.vertices.copy()
    verts[np.abs(verts) < _SNAP] = 0.0
    verts[np.abs(verts - 1.0) < _SNAP] = 1.0
    loops = []
    for i, p in enumerate(seeds):
        region = vor.regions[vor.point_region[i]]
        if not region or min(region) < 0:
            raise MeshError(f"unbounded Voronoi region for seed {i}")
        idx = np.asarray(region, dtype=np.int64)
        d = verts[idx] - p
        loops.append(idx[np.argsort(np.arctan2(d[:, 1], d[:, 0]), kind="stable")])
    return verts, loops


def _merge_close(verts: np.ndarray, loops: list[np.ndarray]):
    used = np.unique(np.concatenate(loops))
    pairs = cKDTree(verts[used]).query_pairs(_MERGE, output_type="ndarray")
    rep = np.arange(len(verts))
    if len(pairs):
        n = len(used)
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, label = connected_components(graph, directed=False)
        first = {}
        for k, lab in enumerate(label):
            first.setdefault(lab, used[k])
        rep[used] = [first[lab] for lab in label]
    merged = []
    for loop in loops:
        loop = rep[loop]
        keep = np.ones(len(loop), dtype=bool)
        keep[1:] = loop[1:] != loop[:-1]
        loop = loop[keep]
        if len(loop) > 1 and loop[0] == loop[-1]:
            loop = loop[:-1]
        merged.append(loop)
    return merged


def _assemble(seeds: np.ndarray) -> PolyMesh:
    verts, loops = _raw_cells(seeds)
    loops = _merge_close(verts, loops)
    # renumber vertices in order of first appearance
    order: dict[int, int] = {}
    for loop in loops:
        for v in loop:
            order.setdefault(int(v), len(order))
    new_verts = np.empty((len(order), 2))
    for old, new in order.items():
        new_verts[new] = verts[old]
    cells = [np.array([order[int(v)] for v in loop], dtype=np.int64) for loop in loops]
    mesh = PolyMesh(new_verts, cells)
    mesh.check()
    return mesh


def _with_retries(seeds: np.ndarray, rng: np.random.Generator) -> PolyMesh:
    last = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            if len(seeds) > 1 and cKDTree(seeds).query_pairs(1e-9):
                raise MeshError("coincident seeds")
            return _assemble(seeds)
        except (MeshError, QhullError) as exc:
            last = exc
            log.warning("degenerate Voronoi diagram (%s), perturbing seeds (attempt %d)", exc, attempt + 1)
            scale = 1e-6 / np.sqrt(len(seeds))
            seeds = np.clip(seeds + scale * rng.standard_normal(seeds.shape), 1e-9, 1 - 1e-9)
    raise MeshError(f"Voronoi generation failed after {MAX_RETRIES} retries: {last}")


def lloyd_step(seeds: np.ndarray) -> np.ndarray:
    """Move every seed to the centroid of its clipped Voronoi cell.

    Each cell is the union of the triangles (seed, ridge) over its ridges,
    which gives a vectorized area-weighted centroid.
    """
    n = len(seeds)
    vor = Voronoi(_mirrored(seeds))
    rp = np.asarray(vor.ridge_points)
    rv = np.asarray(vor.ridge_vertices)
    acc = np.zeros((n, 3))
    for side in (0, 1):
        owner = rp[:, side]
        mask = owner < n
        if not np.any(mask):
            continue
        if np.any(rv[mask] < 0):
            raise MeshError("unbounded Voronoi region during Lloyd step")
        p = seeds[owner[mask]]
        a = vor.vertices[rv[mask, 0]]
        b = vor.vertices[rv[mask, 1]]
        area = 0.5 * np.abs((a[:, 0] - p[:, 0]) * (b[:, 1] - p[:, 1])
                            - (a[:, 1] - p[:, 1]) * (b[:, 0] - p[:, 0]))
        cen = (p + a + b) / 3.0
        np.add.at(acc, owner[mask], np.column_stack([area * cen[:, 0], area * cen[:, 1], area]))
    return acc[:, :2] / acc[:, 2:3]


def lloyd(seeds: np.ndarray, tol: float, max_iters: int) -> tuple[np.ndarray, int, float]:
    """Lloyd iteration; returns (seeds, iterations, last max displacement)."""
    seeds = np.array(seeds, dtype=float)
    disp = np.inf
    it = 0
    while it < max_iters:
        new = lloyd_step(seeds)
        disp = float(np.max(np.linalg.norm(new - seeds, axis=1)))
        seeds = new
        it += 1
        if disp < tol:
            break
    return seeds, it, disp


def generate_random_voronoi(n_cells: int, seed: int, relax_steps: int = 0) -> PolyMesh:
    """Voronoi mesh of ``n_cells`` uniform random seeds clipped to [0,1]^2."""
    if n_cells < 1:
        raise ValueError("n_cells must be positive")
    rng = make_rng(seed)
    seeds = rng.random((n_cells, 2))
    for _ in range(relax_steps):
        seeds = lloyd_step(seeds)
    mesh = _with_retries(seeds, rng)
    mesh.meta = {"family": "rnd", "seed": seed, "rng": RNG_ALGORITHM, "relax_steps": relax_steps}
    return mesh


def generate_cvt(
    n_cells: int,
    seed: int,
    lloyd_tol: float | None = None,
    max_lloyd_iters: int = 200,
    init_seeds: np.ndarray | None = None,
) -> PolyMesh:
    """Centroidal Voronoi tessellation by Lloyd iteration from random seeds."""
    if n_cells < 1:
        raise ValueError("n_cells must be positive")
    if lloyd_tol is None:
        lloyd_tol = 1e-5 / np.sqrt(n_cells)
    if lloyd_tol <= 0:
        raise ValueError("lloyd_tol must be positive")
    rng = make_rng(seed)
    seeds = rng.random((n_cells, 2)) if init_seeds is None else np.array(init_seeds, dtype=float)
    if len(seeds) != n_cells:
        raise ValueError("init_seeds must have n_cells rows")
    seeds, iters, disp = lloyd(seeds, lloyd_tol, max_lloyd_iters)
    mesh = _with_retries(seeds, rng)
    mesh.meta = {
        "family": "cvt", "seed": seed, "rng": RNG_ALGORITHM,
        "lloyd_iters": iters, "lloyd_displacement": disp, "seeds": seeds,
    }
    return mesh
