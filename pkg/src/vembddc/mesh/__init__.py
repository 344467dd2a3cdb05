from .geometry import (
    CellGeometry,
    MeshQualityReport,
    cell_geometry,
    polygon_geometry,
    polygon_quadrature,
    polygon_rule,
    validate_mesh,
)
from .io import MeshFormatError, read_mesh, write_mesh
from .polymesh import MeshError, PolyMesh, unit_square_grid
from .voronoi import RNG_ALGORITHM, generate_cvt, generate_random_voronoi, lloyd, make_rng

__all__ = [
    "CellGeometry",
    "MeshError",
    "MeshFormatError",
    "MeshQualityReport",
    "PolyMesh",
    "RNG_ALGORITHM",
    "cell_geometry",
    "generate_cvt",
    "generate_random_voronoi",
    "lloyd",
    "make_rng",
    "polygon_geometry",
    "polygon_quadrature",
    "polygon_rule",
    "read_mesh",
    "unit_square_grid",
    "validate_mesh",
    "write_mesh",
]
