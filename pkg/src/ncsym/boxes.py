"""Axis-aligned boxes with per-endpoint open/closed flags."""
from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np


@dataclass(frozen=True)
class Box:
    """Product of real intervals; ``hi_open[i]`` means the upper end of
    dimension ``i`` is excluded (and likewise for ``lo_open``)."""

    lo: tuple
    hi: tuple
    lo_open: tuple = None
    hi_open: tuple = None

    def __post_init__(self):
        n = len(self.lo)
        if len(self.hi) != n:
            raise ValueError("lo/hi dimension mismatch")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        for name in ("lo_open", "hi_open"):
            flags = getattr(self, name)
            flags = (False,) * n if flags is None else tuple(bool(f) for f in flags)
            if len(flags) != n:
                raise ValueError(f"{name} has wrong length")
            object.__setattr__(self, name, flags)
        for a, b in zip(self.lo, self.hi):
            if not a <= b:
                raise ValueError(f"empty interval [{a}, {b}]")

    @classmethod
    def closed(cls, lo, hi):
        return cls(tuple(lo), tuple(hi))

    @classmethod
    def half_open(cls, lo, hi):
        """Boxes of the form [a, b[ in every dimension."""
        return cls(tuple(lo), tuple(hi), None, (True,) * len(lo))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def bounded(self) -> bool:
        return all(np.isfinite(self.lo)) and all(np.isfinite(self.hi))

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def mu_hat(self) -> float:
        """Smallest side length of the box."""
        return float(np.min(self.widths))

    def contains(self, points) -> np.ndarray:
        """Vectorised membership over the last axis."""
        p = np.asarray(points, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        above = np.where(self.lo_open, p > lo, p >= lo)
        below = np.where(self.hi_open, p < hi, p <= hi)
        return np.all(above & below, axis=-1)

    def contains_box(self, other: "Box") -> bool:
        for i in range(self.dim):
            if other.lo[i] < self.lo[i] or other.hi[i] > self.hi[i]:
                return False
            if other.lo[i] == self.lo[i] and self.lo_open[i] and not other.lo_open[i]:
                return False
            if other.hi[i] == self.hi[i] and self.hi_open[i] and not other.hi_open[i]:
                return False
        return True

    def strictly_contains_origin(self) -> bool:
        return all(a < 0.0 < b for a, b in zip(self.lo, self.hi))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))

    def describe(self) -> str:
        parts = []
        for a, b, lo, ho in zip(self.lo, self.hi, self.lo_open, self.hi_open):
            parts.append(f"{']' if lo else '['}{a:g},{b:g}{'[' if ho else ']'}")
        return " x ".join(parts)
