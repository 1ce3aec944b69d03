"""Finite atomic probability measures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DiscreteMeasure:
    points: np.ndarray  # (n, d)
    masses: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if pts.shape[0] != m.shape[0]:
            raise ConfigError("one mass per atom required")
        if np.isnan(pts).any() or np.isnan(m).any():
            raise ConfigError("NaN in measure")
        if np.any(m <= 0):
            raise ConfigError("atom masses must be positive")
        pts.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def total(self) -> float:
        return math.fsum(self.masses)

    def mean(self) -> np.ndarray:
        return self.masses @ self.points

    def radius(self) -> float:
        """R = max |y| over the atoms."""
        return float(np.linalg.norm(self.points, axis=1).max())

    @classmethod
    def normalized(cls, points, masses) -> "DiscreteMeasure":
        return cls(points, normalize_masses(masses))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls.normalized(pts, np.full(n, 1.0 / n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.dim)] + ["mass"])
            for p, m in zip(self.points, self.masses):
                w.writerow([fmt(v) for v in p] + [fmt(m)])

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ConfigError(f"{path}: empty measure file")
        head = rows[0]
        if head[-1] != "mass" or any(h != f"x{j + 1}" for j, h in enumerate(head[:-1])):
            raise ConfigError(f"{path}: header must be x1..xd,mass")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if data.size == 0:
            raise ConfigError(f"{path}: no atoms")
        return cls(data[:, :-1], data[:, -1])


def normalize_masses(m) -> np.ndarray:
    """Scale masses so that their exactly rounded sum is 1."""
    m = np.array(m, dtype=float)
    s = math.fsum(m)
    if not s > 0:
        raise ConfigError("total mass must be positive")
    m = m / s
    for _ in range(4):
        r = 1.0 - math.fsum(m)
        if r == 0.0:
            break
        k = int(np.argmax(m))
        m[k] += r
    return m


def fmt(v: float) -> str:
    return repr(float(v)) if not math.isfinite(v) else f"{float(v):.17g}"
