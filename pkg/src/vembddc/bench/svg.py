"""Flat SVG rendering of cell fields with a legend."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .sinkers import SinkerField

SIZE = 600
LEGEND_W = 190

# categorical palette for partitions, cycled
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
           "#9c755f", "#bab0ac", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#17becf")
# sequential ramp, light to dark
RAMP = ("#fff7ec", "#fee8c8", "#fdd49e", "#fdbb84", "#fc8d59", "#ef6548", "#d7301f", "#990000")


def core_threshold(field: SinkerField) -> float:
    """Viscosity at distance omega from an isolated sinker center."""
    return field.nu_min + (field.nu_max - field.nu_min) * math.exp(-field.delta * (field.omega / 2) ** 2)


def viscosity_classes(nu, field: SinkerField) -> tuple[np.ndarray, list[str]]:
    """Class 0 is the sinker core (nu at or above :func:`core_threshold`); the rest are decades.

    Decade k >= 1 holds nu in [10^(e-k), 10^(e-k+1)) with e = log10 of the core threshold,
    clipped at nu_min.
    """
    nu = np.asarray(nu, dtype=float)
    thr = core_threshold(field)
    top = math.log10(thr)
    n_dec = max(1, math.ceil(top - math.log10(field.nu_min)))
    cls = np.zeros(len(nu), dtype=int)
    below = nu < thr
    k = np.ceil(top - np.log10(np.maximum(nu[below], field.nu_min)) + 1e-12).astype(int)
    cls[below] = np.clip(k, 1, n_dec)
    labels = [f"core: nu >= {thr:.3g}"]
    for d in range(1, n_dec + 1):
        lo = max(10 ** (top - d), field.nu_min)
        labels.append(f"{lo:.3g} <= nu < {10 ** (top - d + 1) if d > 1 else thr:.3g}")
    return cls, labels


def _ramp(n: int) -> list[str]:
    if n <= len(RAMP):
        idx = np.linspace(0, len(RAMP) - 1, n).round().astype(int)
        return [RAMP[i] for i in idx]
    return [RAMP[min(i * len(RAMP) // n, len(RAMP) - 1)] for i in range(n)]


def cell_speed(dofmap, u) -> np.ndarray:
    """Mean nodal speed over each cell's vertices and edge nodes."""
    mesh = dofmap.mesh
    u = np.asarray(u)
    out = np.zeros(mesh.n_cells)
    for c in range(mesh.n_cells):
        d = dofmap.cell_velocity_dofs(c)[:-2].reshape(-1, 2)
        out[c] = np.linalg.norm(u[d], axis=1).mean()
    return out


def render_svg(mesh, cls: np.ndarray, colors: list[str], labels: list[str], title: str = "") -> str:
    pad = 10
    s = SIZE - 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE + LEGEND_W}" height="{SIZE}" '
             f'viewBox="0 0 {SIZE + LEGEND_W} {SIZE}">']
    if title:
        parts.append(f"<title>{escape(title)}</title>")
    for c in range(mesh.n_cells):
        xy = mesh.cell_coords(c)
        pts = " ".join(f"{pad + s * x:.3f},{pad + s * (1 - y):.3f}" for x, y in xy)
        parts.append(f'<polygon points="{pts}" fill="{colors[cls[c]]}" stroke="#333" '
                     f'stroke-width="0.3" data-cell="{c}" data-class="{cls[c]}"/>')
    y = pad + 10
    for i, lab in enumerate(labels):
        parts.append(f'<rect x="{SIZE + 5}" y="{y}" width="14" height="14" fill="{colors[i]}" stroke="#333"/>')
        parts.append(f'<text x="{SIZE + 25}" y="{y + 11}" font-size="11" font-family="sans-serif">'
                     f"{escape(lab)}</text>")
        y += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(mesh, field: str, path, *, sinkers: SinkerField | None = None, decomp=None,
             dofmap=None, u=None) -> np.ndarray:
    """Write an SVG of ``field`` and return the per-cell class ids."""
    if field == "viscosity":
        if sinkers is None:
            raise ValueError("viscosity plot needs a sinker field")
        nu = sinkers.viscosity(mesh.cell_centroids())
        cls, labels = viscosity_classes(nu, sinkers)
        colors = list(reversed(_ramp(len(labels))))
    elif field == "partition":
        if decomp is None:
            raise ValueError("partition plot needs a decomposition")
        cls = np.asarray(decomp.element_to_sub, dtype=int)
        labels = [f"subdomain {i}" for i in range(decomp.n_sub)]
        colors = [PALETTE[i % len(PALETTE)] for i in range(decomp.n_sub)]
    elif field == "speed":
        if dofmap is None or u is None:
            raise ValueError("speed plot needs a dof map and velocity")
        sp = cell_speed(dofmap, u)
        n = len(RAMP)
        hi = max(float(sp.max()), 1e-300)
        cls = np.minimum((sp / hi * n).astype(int), n - 1)
        labels = [f"{hi * i / n:.3g} <= |u| < {hi * (i + 1) / n:.3g}" for i in range(n)]
        colors = list(RAMP)
    else:
        raise ValueError(f"unknown field {field!r}")
    text = render_svg(mesh, cls, colors, labels, title=field)
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return cls
