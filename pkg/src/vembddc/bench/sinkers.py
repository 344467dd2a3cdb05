"""Sinker viscosity model: smooth heavy inclusions in a light background."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OMEGA = 0.05
DELTA = 2000.0
NU_MIN = 1e-3
NU_MAX = 1e3
BETA = 10.0


def place_sinkers(n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. uniform centers in the unit square (overlaps allowed)."""
    if n < 0:
        raise ValueError("sinker count must be non-negative")
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.random((n, 2))


def chi(x, centers, delta: float = DELTA, omega: float = OMEGA) -> np.ndarray:
    """Indicator that vanishes inside every sinker and tends to 1 away from them."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.ones(len(pts))
    for c in np.atleast_2d(centers).reshape(-1, 2):
        d = np.linalg.norm(pts - c, axis=1)
        out *= 1.0 - np.exp(-delta * np.maximum(0.0, d - 0.5 * omega) ** 2)
    return out


@dataclass
class SinkerField:
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    omega: float = OMEGA
    delta: float = DELTA
    nu_min: float = NU_MIN
    nu_max: float = NU_MAX
    beta: float = BETA
    seed: int | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        if not self.nu_min < self.nu_max:
            raise ValueError("nu_min must be below nu_max")
        if self.omega <= 0 or self.delta <= 0:
            raise ValueError("omega and delta must be positive")

    @classmethod
    def random(cls, n: int, seed: int, **kw) -> "SinkerField":
        return cls(place_sinkers(n, seed), seed=seed, **kw)

    @property
    def n(self) -> int:
        return len(self.centers)

    def chi(self, x) -> np.ndarray:
        return chi(x, self.centers, self.delta, self.omega)

    def viscosity(self, x) -> np.ndarray:
        return (self.nu_max - self.nu_min) * (1.0 - self.chi(x)) + self.nu_min

    def body_force(self, x) -> np.ndarray:
        c = self.chi(x)
        return np.column_stack([np.zeros_like(c), self.beta * (c - 1.0)])

    def load(self, point) -> np.ndarray:
        """Single-point form used by the element load."""
        return self.body_force(np.asarray(point).reshape(1, 2))[0]


def viscosity(x, field: SinkerField) -> np.ndarray:
    return field.viscosity(x)


def body_force(x, field: SinkerField) -> np.ndarray:
    return field.body_force(x)
