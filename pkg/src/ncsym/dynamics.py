"""Plant models, fixed-step trajectory integration and incremental-stability
certificates.

Vector fields are written against the last array axis so that one call can
evaluate a whole batch of (state, input) pairs::

    def f(x, u):
        return np.stack([x[..., 1], -x[..., 0] + u[..., 0]], axis=-1)
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import math
from typing import Callable, Optional
import warnings

import numpy as np

from .boxes import Box
from .errors import IntegrationDiverged, SignalExhausted, UnsupportedDomain

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]

EQUILIBRIUM_TOL = 1e-9


@dataclass(frozen=True)
class PlantModel:
    name: str
    state_dim: int
    input_dim: int
    vector_field: VectorField
    state_box: Box
    input_box: Box
    initial_box: Optional[Box] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state and input dimensions must be positive")
        if self.state_box.dim != self.state_dim or self.input_box.dim != self.input_dim:
            raise ValueError("box dimensions do not match the plant")
        if self.initial_box is None:
            object.__setattr__(self, "initial_box", self.state_box)
        if not self.state_box.contains_box(self.initial_box):
            raise ValueError("initial box must lie inside the state box")
        if not self.input_box.strictly_contains_origin():
            raise ValueError("0 must be an interior point of the input box")
        f0 = np.asarray(self.f(np.zeros(self.state_dim), np.zeros(self.input_dim)))
        if np.max(np.abs(f0)) > EQUILIBRIUM_TOL:
            warnings.warn(f"{self.name}: f(0,0) = {f0.tolist()} is not an equilibrium",
                          stacklevel=2)

    def f(self, x, u) -> np.ndarray:
        return self.vector_field(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant input as ``(duration, value)`` segments."""

    segments: tuple

    def __post_init__(self):
        segs = []
        for duration, value in self.segments:
            if not duration > 0:
                raise ValueError("segment durations must be positive")
            segs.append((float(duration), np.atleast_1d(np.asarray(value, dtype=float))))
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def constant(cls, value, duration: float) -> "ControlSignal":
        return cls(((duration, value),))

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def shifted(self, t: float) -> "ControlSignal":
        """The signal with its first ``t`` seconds removed."""
        out = []
        elapsed = 0.0
        for d, v in self.segments:
            start, end = elapsed, elapsed + d
            elapsed = end
            if end <= t:
                continue
            out.append((end - max(start, t), v))
        return ControlSignal(tuple(out))


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4; each ``tau`` of simulated time uses ``substeps_per_tau`` steps."""

    substeps_per_tau: int = 64
    tau: float = 1.0
    scheme: str = "rk4"

    def __post_init__(self):
        if self.substeps_per_tau < 1:
            raise ValueError("substeps_per_tau must be >= 1")
        if self.scheme != "rk4":
            raise ValueError("only the fixed-step 4th-order scheme is supported")

    def steps_for(self, duration: float) -> int:
        return max(1, math.ceil(duration / self.tau * self.substeps_per_tau - 1e-9))


def rk4_flow(f: VectorField, x, u, duration: float, steps: int, box: Optional[Box] = None):
    """Integrate ``x' = f(x, u)`` with constant ``u`` over ``duration``.

    Works on batches (leading axes of ``x`` and ``u`` broadcast).  When ``box``
    is given, also returns a mask telling whether every intermediate step
    point stayed inside it.
    """
    x = np.array(x, dtype=float, copy=True)
    u = np.asarray(u, dtype=float)
    h = duration / steps
    inside = box.contains(x) if box is not None else None
    for _ in range(steps):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if box is not None:
            inside &= box.contains(x)
    return x, inside


def integrate_trajectory(plant: PlantModel, x0, u: ControlSignal, t: float,
                         cfg: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """State reached at time ``t`` from ``x0`` under the piecewise-constant ``u``."""
    x = np.asarray(x0, dtype=float).reshape(plant.state_dim)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return x.copy()
    if t > u.duration * (1 + 1e-12):
        raise SignalExhausted(f"signal lasts {u.duration} s, requested t={t}")
    remaining = t
    for duration, value in u.segments:
        if remaining <= 0:
            break
        span = min(duration, remaining)
        x, _ = rk4_flow(plant.vector_field, x, value, span, cfg.steps_for(span))
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(f"non-finite state while integrating {plant.name}")
        remaining -= span
    return x


@dataclass(frozen=True)
class PowerLaw:
    """Class-K-infinity function ``r -> coeff * r**power``."""

    coeff: float
    power: float = 2.0

    def __post_init__(self):
        if self.coeff <= 0 or self.power < 1:
            raise ValueError("power law needs coeff > 0 and power >= 1")

    def __call__(self, r):
        return self.coeff * np.power(r, self.power)

    def inverse(self, v):
        return np.power(np.asarray(v, dtype=float) / self.coeff, 1.0 / self.power)


@dataclass(frozen=True)
class LyapunovCertificate:
    """Quadratic incremental Lyapunov function ``V(x, y) = 0.5 (x-y)' P (x-y)``."""

    P: np.ndarray
    lam: float
    alpha_lower: PowerLaw
    alpha_upper: PowerLaw
    gamma_slope: Optional[float] = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
            raise ValueError("P must be a symmetric square matrix")
        if np.min(np.linalg.eigvalsh(P)) <= 0:
            raise ValueError("P must be positive definite")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.gamma_slope is not None and not self.gamma_slope > 0:
            raise ValueError("gamma slope must be positive")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        rs = np.geomspace(1e-6, 1e6, 200)
        if np.any(self.alpha_lower(rs) > self.alpha_upper(rs) * (1 + 1e-12)):
            raise ValueError("alpha_lower must not exceed alpha_upper")

    def V(self, x1, x2) -> np.ndarray:
        e = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", e, self.P, e)

    def gamma(self, r):
        if self.gamma_slope is None:
            raise ValueError("certificate has no gamma slope; use gamma_from_diameter")
        return self.gamma_slope * np.asarray(r, dtype=float)

    def with_gamma(self, slope: float) -> "LyapunovCertificate":
        return LyapunovCertificate(self.P, self.lam, self.alpha_lower, self.alpha_upper, slope)


@dataclass
class CertificateReport:
    passed: bool
    worst_margin: float
    worst_sample: tuple
    violation: Optional[tuple]
    bounds_ok: bool
    bound_violation: Optional[tuple]
    sample_count: int
    seed: int
    notes: list = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed and self.bounds_ok else "FAIL"
        lines = [f"{status}: worst decay margin {self.worst_margin:.6g} over "
                 f"{self.sample_count} samples (seed {self.seed})"]
        if self.violation is not None:
            x1, x2, u = self.violation
            lines.append(f"  decay violated at x1={x1.tolist()} x2={x2.tolist()} u={u.tolist()}")
        if self.bound_violation is not None:
            x1, x2 = self.bound_violation
            lines.append(f"  sandwich bound violated at x1={x1.tolist()} x2={x2.tolist()}")
        lines.extend(f"  {n}" for n in self.notes)
        return "\n".join(lines)


def decay_margins(plant: PlantModel, cert: LyapunovCertificate, x1, x2, u) -> np.ndarray:
    """(x1-x2)' P (f(x1,u) - f(x2,u)) + lam V(x1, x2), row-wise."""
    e = x1 - x2
    df = plant.f(x1, u) - plant.f(x2, u)
    return np.einsum("...i,ij,...j->...", e, cert.P, df) + cert.lam * cert.V(x1, x2)


def validate_certificate(plant: PlantModel, cert: LyapunovCertificate,
                         sample_count: int, seed: int, chunk: int = 200_000) -> CertificateReport:
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    worst = -np.inf
    worst_sample = None
    bound_violation = None
    done = 0
    while done < sample_count:
        k = min(chunk, sample_count - done)
        x1 = plant.state_box.sample(rng, k)
        x2 = plant.state_box.sample(rng, k)
        u = plant.input_box.sample(rng, k)
        D = decay_margins(plant, cert, x1, x2, u)
        i = int(np.argmax(D))
        if D[i] > worst:
            worst = float(D[i])
            worst_sample = (x1[i].copy(), x2[i].copy(), u[i].copy())
        if bound_violation is None:
            r = np.max(np.abs(x1 - x2), axis=-1)
            v = cert.V(x1, x2)
            tol = 1e-9 * (1 + v)
            bad = (cert.alpha_lower(r) > v + tol) | (v > cert.alpha_upper(r) + tol)
            if np.any(bad):
                j = int(np.argmax(bad))
                bound_violation = (x1[j].copy(), x2[j].copy())
        done += k
    passed = worst <= 1e-9 * (1 + abs(worst))
    return CertificateReport(
        passed=bool(passed),
        worst_margin=worst,
        worst_sample=worst_sample,
        violation=None if passed else worst_sample,
        bounds_ok=bound_violation is None,
        bound_violation=bound_violation,
        sample_count=sample_count,
        seed=seed,
    )


def gamma_from_diameter(plant: PlantModel, cert: LyapunovCertificate) -> float:
    """Sup of ||P (y - x)||_inf over x, y in the state box.

    ``y - x`` ranges over the box ``[-w, w]`` so the sup is attained at one of
    its corners.
    """
    box = plant.state_box
    if not box.bounded:
        raise UnsupportedDomain("gamma_from_diameter needs a bounded state box")
    w = box.widths
    best = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=box.dim):
        best = max(best, float(np.max(np.abs(cert.P @ (np.asarray(signs) * w)))))
    return best


def quadratic_bounds(P: np.ndarray) -> tuple:
    """Power laws sandwiching 0.5 e'Pe in the infinity norm of e."""
    eig = np.linalg.eigvalsh(P)
    n = P.shape[0]
    return PowerLaw(0.5 * eig[0], 2.0), PowerLaw(0.5 * n * eig[-1], 2.0)


@dataclass
class CertificateSearchResult:
    certificate: LyapunovCertificate
    rate_estimate: float
    candidates_tried: int


def grid_search_certificate(plant: PlantModel, off_diagonal=None, diagonal=None,
                            sample_count: int = 20_000, seed: int = 0,
                            safety: float = 0.9) -> CertificateSearchResult:
    """Offline helper: look for a weighted quadratic certificate.

    Two-dimensional plants only.  ``P = [[1, b], [b, c]]`` is scanned over the
    given grids; for each candidate the largest sampled decay rate
    ``min(-e'P df / V)`` is estimated and the best candidate wins.  The
    returned rate is scaled by ``safety`` so that fresh samples still pass.
    """
    if plant.state_dim != 2:
        raise UnsupportedDomain("grid search is implemented for 2-state plants")
    if off_diagonal is None:
        off_diagonal = np.linspace(-1.0, 1.0, 41)
    if diagonal is None:
        diagonal = np.geomspace(0.05, 5.0, 41)
    rng = np.random.default_rng(seed)
    x1 = plant.state_box.sample(rng, sample_count)
    x2 = plant.state_box.sample(rng, sample_count)
    u = plant.input_box.sample(rng, sample_count)
    e = x1 - x2
    df = plant.f(x1, u) - plant.f(x2, u)
    best = (-np.inf, None)
    tried = 0
    for b in off_diagonal:
        for c in diagonal:
            if c - b * b <= 0:
                continue
            tried += 1
            quad = e[:, 0] ** 2 + 2 * b * e[:, 0] * e[:, 1] + c * e[:, 1] ** 2
            cross = (e[:, 0] * df[:, 0] + b * (e[:, 0] * df[:, 1] + e[:, 1] * df[:, 0])
                     + c * e[:, 1] * df[:, 1])
            ok = quad > 1e-12
            rate = float(np.min(-cross[ok] / (0.5 * quad[ok])))
            if rate > best[0]:
                best = (rate, (b, c))
    rate, (b, c) = best
    if not rate > 0:
        raise UnsupportedDomain("no candidate weight matrix gives a positive decay rate")
    P = np.array([[1.0, b], [b, c]])
    lo, hi = quadratic_bounds(P)
    cert = LyapunovCertificate(P, safety * rate, lo, hi)
    return CertificateSearchResult(cert.with_gamma(gamma_from_diameter(plant, cert)), rate, tried)


# --- built-in plants ---------------------------------------------------------

def _pendulum_field(x, u):
    return np.stack([x[..., 1], -5.0 * np.sin(x[..., 0]) - 4.0 * x[..., 1] + u[..., 0]], axis=-1)


def _plant_b_field(z, v):
    return np.stack([-2.5 * z[..., 0] + z[..., 1] ** 2,
                     2.0 * z[..., 0] - 6.0 * np.exp(z[..., 1]) + v[..., 0] + 6.0], axis=-1)


def _scalar_field(x, u):
    return -x + u


def pendulum_a() -> PlantModel:
    box = Box.half_open((-math.pi / 3, -1.0), (math.pi / 3, 1.0))
    return PlantModel("pendulum_a", 2, 1, _pendulum_field, box, Box.closed((-5.0,), (5.0,)))


def plant_b() -> PlantModel:
    box = Box.half_open((-1.0, -1.0), (1.0, 1.0))
    return PlantModel("plant_b", 2, 1, _plant_b_field, box, Box.closed((-5.0,), (5.0,)))


def scalar_decay(bound: float = 2.0, input_bound: float = 1.0) -> PlantModel:
    """x' = -x + u, the smallest contractive test plant."""
    return PlantModel("scalar_decay", 1, 1, _scalar_field,
                      Box.closed((-bound,), (bound,)),
                      Box.closed((-input_bound,), (input_bound,)))


PLANTS = {
    "pendulum_a": pendulum_a,
    "plant_b": plant_b,
    "scalar_decay": scalar_decay,
}


def get_plant(name: str) -> PlantModel:
    try:
        return PLANTS[name]()
    except KeyError:
        raise KeyError(f"unknown plant {name!r}; known: {sorted(PLANTS)}") from None


def identity_certificate(plant: PlantModel, lam: float) -> LyapunovCertificate:
    """The unweighted certificate V = 0.5 ||x - y||_2^2 with the usual bounds
    0.5 r^2 <= V <= r^2 (valid for two states)."""
    n = plant.state_dim
    cert = LyapunovCertificate(np.eye(n), lam, PowerLaw(0.5, 2.0), PowerLaw(0.5 * n, 2.0))
    return cert.with_gamma(gamma_from_diameter(plant, cert))
