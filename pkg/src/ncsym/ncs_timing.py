"""Quantization lattices, message sizes and the hold-interval range of a loop."""
from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from .boxes import Box
from .errors import EmptyGrid, InvalidParameter, InvalidValue

# Relative slack used when deciding whether a lattice point sits exactly on a
# box endpoint (k * mu is rarely bit-exact).
_ENDPOINT_RTOL = 1e-9


@dataclass(frozen=True)
class Quantizer:
    mu: float
    dimension: int

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidValue("lattice pitch must be positive")
        if self.dimension < 1:
            raise InvalidValue("dimension must be positive")

    def index(self, a) -> np.ndarray:
        """Integer lattice coordinates of the nearest lattice point."""
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.dimension,):
            raise InvalidValue(f"expected trailing dimension {self.dimension}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidValue("cannot quantize non-finite values")
        # floor(a/mu + 1/2) rounds to nearest with ties going toward +inf.
        return np.floor(a / self.mu + 0.5).astype(np.int64)

    def __call__(self, a) -> np.ndarray:
        return self.index(a) * self.mu


def quantize(q: Quantizer, a) -> np.ndarray:
    return q(a)


def lattice_range(lo: float, hi: float, lo_open: bool, hi_open: bool, mu: float):
    """Integer range ``[k_lo, k_hi]`` of multiples of ``mu`` inside one interval."""
    def on_point(v, k):
        return abs(k * mu - v) <= _ENDPOINT_RTOL * max(1.0, abs(v), mu)

    k_lo = math.ceil(lo / mu)
    if on_point(lo, k_lo - 1):
        k_lo -= 1
    if on_point(lo, k_lo) and lo_open:
        k_lo += 1
    k_hi = math.floor(hi / mu)
    if on_point(hi, k_hi + 1):
        k_hi += 1
    if on_point(hi, k_hi) and hi_open:
        k_hi -= 1
    return k_lo, k_hi


def grid_cardinality(box: Box, mu: float) -> tuple:
    """Number of points of ``mu * Z^n`` in ``box`` and the bits needed to name one."""
    if not mu > 0:
        raise InvalidValue("lattice pitch must be positive")
    count = 1
    for i in range(box.dim):
        k_lo, k_hi = lattice_range(box.lo[i], box.hi[i], box.lo_open[i], box.hi_open[i], mu)
        if k_hi < k_lo:
            raise EmptyGrid(f"no multiple of {mu} in dimension {i} of {box.describe()}")
        count *= k_hi - k_lo + 1
    return count, bit_length(count)


def bit_length(count: int) -> int:
    """ceil(log2(count)), exact for integers."""
    return (count - 1).bit_length() if count > 1 else 0


@dataclass(frozen=True)
class NcsParameters:
    """Computation and communication parameters of one loop (SI units)."""

    tau: float
    mu_x: float
    mu_u: float
    B_max: float
    delta_ctrl_min: float
    delta_ctrl_max: float
    delta_req_max: float
    delta_delay_min: float
    delta_delay_max: float
    header_bits: int = 0

    def __post_init__(self):
        for name in ("tau", "mu_x", "mu_u", "B_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) or v == math.inf) or not v > 0:
                raise InvalidParameter(f"{name} must be positive, got {v}")
        for name in ("delta_ctrl_min", "delta_ctrl_max", "delta_req_max",
                     "delta_delay_min", "delta_delay_max"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidParameter(f"{name} must be finite and nonnegative, got {v}")
        if self.delta_ctrl_min > self.delta_ctrl_max:
            raise InvalidParameter("delta_ctrl_min > delta_ctrl_max")
        if self.delta_delay_min > self.delta_delay_max:
            raise InvalidParameter("delta_delay_min > delta_delay_max")
        if self.header_bits < 0:
            raise InvalidParameter("header_bits must be nonnegative")

    def with_(self, **changes) -> "NcsParameters":
        return replace(self, **changes)

    def check_pitches(self, state_box: Box, input_box: Box) -> None:
        if self.mu_x > state_box.mu_hat:
            raise InvalidParameter(f"mu_x={self.mu_x} exceeds the state box side {state_box.mu_hat}")
        if self.mu_u > input_box.mu_hat:
            raise InvalidParameter(f"mu_u={self.mu_u} exceeds the input box side {input_box.mu_hat}")


@dataclass(frozen=True)
class DerivedTiming:
    delta_send_sc: float
    delta_send_ca: float
    delta_min: float
    delta_max: float
    n_min: int
    n_max: int
    state_count: int
    input_count: int
    state_bits: int
    input_bits: int

    @property
    def n_range(self) -> range:
        return range(self.n_min, self.n_max + 1)


def _ceil_ratio(a: float, b: float) -> int:
    """ceil(a/b) that does not round 2.0000000000000004 up to 3."""
    r = a / b
    k = math.ceil(r)
    if abs(r - (k - 1)) <= 1e-12 * max(1.0, abs(r)):
        k -= 1
    return k


def derive_timing(p: NcsParameters, state_box: Box, input_box: Box) -> DerivedTiming:
    p.check_pitches(state_box, input_box)
    n_x, bits_x = grid_cardinality(state_box, p.mu_x)
    n_u, bits_u = grid_cardinality(input_box, p.mu_u)
    send_sc = (bits_x + p.header_bits) / p.B_max
    send_ca = (bits_u + p.header_bits) / p.B_max
    d_min = send_sc + p.delta_ctrl_min + send_ca + 2 * p.delta_delay_min
    d_max = (send_sc + p.delta_ctrl_max + send_ca + 2 * p.delta_req_max
             + 2 * p.delta_delay_max)
    if not (math.isfinite(d_min) and math.isfinite(d_max)):
        raise InvalidParameter("non-finite delay bounds")
    n_min = max(1, _ceil_ratio(d_min, p.tau))
    n_max = max(n_min, _ceil_ratio(d_max, p.tau))
    return DerivedTiming(send_sc, send_ca, d_min, d_max, n_min, n_max, n_x, n_u, bits_x, bits_u)
