"""Experiment configuration: a flat YAML mapping of keys to scalars or lists."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


FAMILIES = ("cvt", "rnd")
SCALINGS = ("multiplicity", "deluxe")
COARSE = ("none", "frugal", "first", "second")
PARTITIONS = ("coordinate-bisection", "greedy-growing", "file")


def parse_nsub(value) -> int:
    """Accept ``16`` or ``"4x4"``."""
    if isinstance(value, bool):
        raise ConfigError(f"bad subdomain count {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).lower().replace("×", "x")
    if "x" in text:
        a, b = text.split("x", 1)
        try:
            return int(a) * int(b)
        except ValueError:
            raise ConfigError(f"bad subdomain count {value!r}") from None
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad subdomain count {value!r}") from None


def nsub_label(n: int) -> str:
    r = math.isqrt(n)
    return f"{r}x{r}" if r * r == n else str(n)


@dataclass
class ExperimentConfig:
    families: list = field(default_factory=lambda: ["cvt", "rnd"])
    cells: int = 1024
    nsub: list = field(default_factory=lambda: [16])
    nsink: list = field(default_factory=lambda: [1, 5, 11, 20])
    coarse: list = field(default_factory=lambda: ["frugal", "first", "second"])
    scaling: list = field(default_factory=lambda: ["multiplicity", "deluxe"])
    tol: float = 100.0
    rtol: float = 1e-6
    maxit: int = 1000
    seed_mesh: int = 1
    seed_sinkers: int = 2
    omega: float = 0.05
    delta: float = 2000.0
    nu_min: float = 1e-3
    nu_max: float = 1e3
    beta: float = 10.0
    lid_speed: float = 1.0
    partition: str = "coordinate-bisection"
    partition_file: str | None = None
    lloyd_max_iters: int = 200
    deluxe_transformed: bool = True
    max_per_edge: int = 10
    direct_check_max: int = 60000  # velocity dofs; larger systems skip the direct cross-check
    output: str | None = None
    details: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("families", "nsub", "nsink", "coarse", "scaling"):
            v = getattr(self, name)
            if not isinstance(v, list):
                setattr(self, name, [v])
        self.families = [str(f).lower() for f in self.families]
        if isinstance(self.tol, int) and not isinstance(self.tol, bool):
            self.tol = float(self.tol)
        self.nsub = [parse_nsub(n) for n in self.nsub]
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ConfigError(f"unknown mesh family {bad[0]!r}")
        bad = [c for c in self.coarse if c not in COARSE]
        if bad:
            raise ConfigError(f"unknown coarse space {bad[0]!r}")
        bad = [s for s in self.scaling if s not in SCALINGS]
        if bad:
            raise ConfigError(f"unknown scaling {bad[0]!r}")
        if self.partition not in PARTITIONS:
            raise ConfigError(f"unknown partition method {self.partition!r}")
        if self.partition == "file" and not self.partition_file:
            raise ConfigError("partition 'file' needs partition_file")
        for name in ("cells", "maxit", "lloyd_max_iters", "max_per_edge"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        for n in self.nsub:
            if n <= 0 or n > self.cells:
                raise ConfigError(f"subdomain count {n} out of range")
        for n in self.nsink:
            if not isinstance(n, int) or n < 0:
                raise ConfigError(f"sinker count {n!r} must be a non-negative integer")
        for name in ("omega", "delta", "nu_min", "nu_max", "beta", "lid_speed"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.nu_min < self.nu_max:
            raise ConfigError("nu_min must be below nu_max")
        if not 0 < self.rtol < 1:
            raise ConfigError("rtol must lie in (0, 1)")
        if any(c in ("first", "second") for c in self.coarse) and not self.tol > 1:
            raise ConfigError("TOL must exceed 1 for adaptive coarse spaces")

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key {unknown[0]!r}")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigError(f"{path}: key {k!r} must be a scalar or a list")
    # yaml reads 1e-6 without a dot as a string
    for k in ("tol", "rtol", "omega", "delta", "nu_min", "nu_max", "beta", "lid_speed"):
        if isinstance(data.get(k), str):
            try:
                data[k] = float(data[k])
            except ValueError:
                raise ConfigError(f"{path}: {k} must be a number") from None
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
