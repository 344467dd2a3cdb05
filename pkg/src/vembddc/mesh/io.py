"""Text serialization of polygonal meshes.

Format::

    polymesh 1
    vertex <id> <x> <y>
    ...
    cell <id> <v1> <v2> ...

Coordinates are written with 17 significant digits so that a round trip
reproduces every double exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .polymesh import MeshError, PolyMesh


class MeshFormatError(MeshError):
    pass


def write_mesh(mesh: PolyMesh, path) -> None:
    lines = ["polymesh 1"]
    for i, (x, y) in enumerate(mesh.vertices):
        lines.append(f"vertex {i} {x:.17e} {y:.17e}")
    for c, loop in enumerate(mesh.cells):
        lines.append(f"cell {c} " + " ".join(str(int(v)) for v in loop))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> PolyMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0].split() != ["polymesh", "1"]:
        raise MeshFormatError(f"{path}:1: expected header 'polymesh 1'")
    verts: dict[int, tuple[float, float]] = {}
    cells: dict[int, list[int]] = {}
    for lineno, raw in enumerate(text[1:], start=2):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "vertex" and len(tok) == 4:
                verts[int(tok[1])] = (float(tok[2]), float(tok[3]))
            elif tok[0] == "cell" and len(tok) >= 5:
                cells[int(tok[1])] = [int(t) for t in tok[2:]]
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{lineno}: {exc}") from None
    if sorted(verts) != list(range(len(verts))):
        raise MeshFormatError(f"{path}: vertex ids are not contiguous from 0")
    if sorted(cells) != list(range(len(cells))):
        raise MeshFormatError(f"{path}: cell ids are not contiguous from 0")
    for c, loop in cells.items():
        missing = [v for v in loop if v not in verts]
        if missing:
            raise MeshFormatError(f"{path}: cell {c} references missing vertex {missing[0]}")
    vertices = np.array([verts[i] for i in range(len(verts))], dtype=float).reshape(-1, 2)
    return PolyMesh(vertices, [cells[i] for i in range(len(cells))])
