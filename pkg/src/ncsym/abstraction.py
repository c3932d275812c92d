"""Symbolic models of a sampled plant whose input is held for N in
[n_min, n_max] sampling periods.

A symbolic state is stored compactly as ``(x1, u-, u+, N)``: the first sample
of the hold period, the input held through its interior, the input applied on
its last step, and its length.  All other samples are recomputed from the
one-step table ``nxt[m, k]`` (lattice index of the quantized state reached
from lattice point ``m`` after one period under input ``k``; ``-1`` when the
flow leaves X).  The interior input only matters when ``N >= 3``; shorter
states carry ``u- = -1``.  Initial states are bare lattice points (``N = 0``).

Successors of a state depend only on its *group* ``(last sample, u+)``: under
input ``u*`` the next state starts at ``nxt[last, u+]``, holds ``u+`` through
its interior and ends with a step under ``u*``.  An initial point ``x0`` under
``u*`` behaves like the group ``(x0, u*)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
import time
from typing import Optional

import numpy as np

from .boxes import Box
from .cache import content_hash, read_container, write_container
from .dynamics import IntegratorConfig, LyapunovCertificate, PlantModel, PowerLaw, get_plant, rk4_flow
from .errors import InvalidParameter, StateBudgetExceeded, UnsupportedCertificate
from .ncs_timing import DerivedTiming, NcsParameters, derive_timing, lattice_range

DEFAULT_STATE_CAP = 50_000_000
MODEL_MAGIC = b"NCSA"


# -- precision -----------------------------------------------------------------

@dataclass(frozen=True)
class PrecisionCheck:
    approved: bool
    binding_bound: float
    margin: float
    terms: tuple

    def __bool__(self):
        return self.approved


def _power_law(fn, what: str) -> PowerLaw:
    if not isinstance(fn, PowerLaw):
        raise UnsupportedCertificate(f"{what} must be a power law to be inverted")
    return fn


def check_precision(cert: LyapunovCertificate, tau: float, mu_x: float, epsilon: float,
                    state_box: Box) -> PrecisionCheck:
    """mu_x <= min(gamma^-1((1 - e^{-lam tau}) alpha_lo(eps)), alpha_hi^-1(alpha_lo(eps)), mu_hat)."""
    if not tau > 0:
        raise InvalidParameter("tau must be positive")
    lo = _power_law(cert.alpha_lower, "alpha_lower")
    hi = _power_law(cert.alpha_upper, "alpha_upper")
    if cert.gamma_slope is None:
        raise UnsupportedCertificate("certificate needs a linear gamma slope")
    a = float(lo(epsilon))
    t1 = (1.0 - math.exp(-cert.lam * tau)) * a / cert.gamma_slope
    t2 = float(hi.inverse(a))
    t3 = state_box.mu_hat
    bound = min(t1, t2, t3)
    return PrecisionCheck(mu_x <= bound, bound, bound - mu_x, (t1, t2, t3))


@dataclass(frozen=True)
class PrecisionBudget:
    epsilon: float
    theta: float
    mu_x: float
    tau: float
    binding_bound: float

    @property
    def approved(self) -> bool:
        return self.mu_x <= self.binding_bound

    @property
    def composable(self) -> bool:
        return self.epsilon >= self.theta + self.mu_x


def make_budget(cert: LyapunovCertificate, params: NcsParameters, state_box: Box,
                epsilon: float, theta: Optional[float] = None) -> PrecisionBudget:
    theta = 0.9 * epsilon if theta is None else theta
    chk = check_precision(cert, params.tau, params.mu_x, epsilon, state_box)
    return PrecisionBudget(epsilon, theta, params.mu_x, params.tau, chk.binding_bound)


# -- lattices --------------------------------------------------------------------

class Lattice:
    """Points of ``mu * Z^n`` inside a box, numbered in row-major order."""

    def __init__(self, box: Box, mu: float):
        self.box, self.mu = box, float(mu)
        lo, hi = [], []
        for i in range(box.dim):
            a, b = lattice_range(box.lo[i], box.hi[i], box.lo_open[i], box.hi_open[i], mu)
            lo.append(a)
            hi.append(b)
        self.k_lo = np.array(lo, dtype=np.int64)
        self.shape = tuple(int(b - a + 1) for a, b in zip(lo, hi))
        if min(self.shape) < 1:
            raise InvalidParameter(f"no lattice point of pitch {mu} in {box.describe()}")
        self.size = int(np.prod(self.shape, dtype=object))
        self.dim = box.dim

    def coords(self, idx) -> np.ndarray:
        ks = np.stack(np.unravel_index(np.asarray(idx, dtype=np.int64), self.shape), axis=-1)
        return (ks + self.k_lo) * self.mu

    def locate(self, points) -> np.ndarray:
        """Lattice index of the quantization of each point; -1 outside the box."""
        p = np.asarray(points, dtype=float)
        ks = np.floor(p / self.mu + 0.5).astype(np.int64) - self.k_lo
        ok = np.all((ks >= 0) & (ks < np.array(self.shape)), axis=-1)
        ks = np.where(ok[..., None], ks, 0)
        flat = np.ravel_multi_index(tuple(np.moveaxis(ks, -1, 0)), self.shape)
        return np.where(ok, flat, -1)

    def quantize(self, points) -> np.ndarray:
        """Nearest point of ``mu * Z^n``, inside the box or not."""
        return np.floor(np.asarray(points, dtype=float) / self.mu + 0.5) * self.mu

    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.size))


class StepTable:
    """Lazily filled ``nxt[m, k]``; rows are computed on first use."""

    def __init__(self, plant: PlantModel, lattice: Lattice, inputs: np.ndarray,
                 tau: float, integrator: IntegratorConfig):
        self.plant, self.lattice, self.inputs = plant, lattice, inputs
        self.tau = tau
        self.steps = integrator.steps_for(tau)
        self.table = np.full((lattice.size, len(inputs)), -2, dtype=np.int64)
        self.rows_computed = 0

    def ensure(self, ms, batch: int = 4096) -> None:
        ms = np.unique(np.asarray(ms, dtype=np.int64))
        ms = ms[(ms >= 0)]
        todo = ms[self.table[ms, 0] == -2]
        K = len(self.inputs)
        for s in range(0, len(todo), batch):
            rows = todo[s:s + batch]
            x = np.repeat(self.lattice.coords(rows)[:, None, :], K, axis=1)
            u = np.broadcast_to(self.inputs[None, :, :], (len(rows), K, self.inputs.shape[1]))
            y, inside = rk4_flow(self.plant.f, x, u, self.tau, self.steps, self.plant.state_box)
            nxt = self.lattice.locate(np.where(inside[..., None], y, 0.0))
            self.table[rows] = np.where(inside, nxt, -1)
            self.rows_computed += len(rows)

    def fill(self) -> np.ndarray:
        self.ensure(np.arange(self.lattice.size))
        return self.table

    def __call__(self, m, k) -> np.ndarray:
        """Vectorised lookup; ``m = -1`` propagates."""
        m = np.asarray(m, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        ok = m >= 0
        self.ensure(m[ok])
        out = self.table[np.where(ok, m, 0), k]
        return np.where(ok, out, -1)


# -- user-facing state objects -------------------------------------------------

@dataclass(frozen=True)
class Initial:
    x0: tuple


@dataclass(frozen=True)
class Held:
    x1: tuple
    u_minus: Optional[tuple]
    u_plus: tuple
    N: int


class AbstractionContext:
    """Everything needed to generate symbolic successors for one loop."""

    def __init__(self, plant: PlantModel, params: NcsParameters,
                 timing: Optional[DerivedTiming] = None,
                 integrator: Optional[IntegratorConfig] = None,
                 cap: int = DEFAULT_STATE_CAP):
        self.plant, self.params = plant, params
        self.timing = timing or derive_timing(params, plant.state_box, plant.input_box)
        self.n_min, self.n_max = self.timing.n_min, self.timing.n_max
        self.integrator = integrator or IntegratorConfig(tau=params.tau)
        self.lattice = Lattice(plant.state_box, params.mu_x)
        self.input_lattice = Lattice(plant.input_box, params.mu_u)
        self.inputs = self.input_lattice.all_coords()
        self.K = len(self.inputs)
        cells = self.lattice.size * self.K
        if cells > cap:
            raise StateBudgetExceeded(
                f"{self.lattice.size} lattice points x {self.K} inputs exceeds the cap {cap}",
                {"lattice_points": self.lattice.size, "inputs": self.K,
                 "state_upper_bound": self.lattice.size * self.K * self.K
                 * (self.n_max - self.n_min + 1)})
        self.step = StepTable(plant, self.lattice, self.inputs, params.tau, self.integrator)

    # id <-> object
    def _pt(self, m) -> tuple:
        return tuple(float(v) for v in self.lattice.coords(m))

    def _inp(self, k) -> Optional[tuple]:
        return None if k < 0 else tuple(float(v) for v in self.inputs[k])

    def point_id(self, x) -> int:
        m = int(self.lattice.locate(np.asarray(x, dtype=float)))
        if m < 0 or not np.allclose(self.lattice.coords(m), x, atol=1e-9 * max(1, self.params.mu_x)):
            raise ValueError(f"{x} is not a lattice point of X")
        return m

    def input_id(self, u) -> int:
        k = int(self.input_lattice.locate(np.atleast_1d(np.asarray(u, dtype=float))))
        if k < 0:
            raise ValueError(f"{u} is not an input lattice point")
        return k

    def state_obj(self, z1: int, um: int, up: int, N: int):
        if N == 0:
            return Initial(self._pt(z1))
        return Held(self._pt(z1), self._inp(um), self._inp(up), int(N))

    def state_ids(self, s) -> tuple:
        if isinstance(s, Initial):
            return self.point_id(s.x0), -1, -1, 0
        um = -1 if s.u_minus is None else self.input_id(s.u_minus)
        return self.point_id(s.x1), um, self.input_id(s.u_plus), s.N

    # expansions
    def expand_ids(self, z1, um, up, N) -> np.ndarray:
        """Sample indices, shape ``(..., n_max)``, padded with -1 past N."""
        z1, um, up, N = (np.asarray(a, dtype=np.int64) for a in (z1, um, up, N))
        width = max(1, self.n_max)
        out = np.full(z1.shape + (width,), -1, dtype=np.int64)
        out[..., 0] = z1
        cur = z1
        for i in range(1, width):
            interior = N >= i + 2
            final = N == i + 1
            k = np.where(interior, um, up)
            active = interior | final
            nxt = self.step(np.where(active, cur, -1), np.where(active, np.maximum(k, 0), 0))
            out[..., i] = np.where(active, nxt, -1)
            cur = np.where(active, nxt, cur)
        return out

    def expansion(self, s) -> np.ndarray:
        z1, um, up, N = self.state_ids(s)
        idx = self.expand_ids(z1, um, up, max(N, 1))[: max(N, 1)]
        return self.lattice.coords(idx)

    # successors
    def group_successors(self, L, p):
        """For groups ``(L, p)`` return ``(z1, last)`` arrays of shape
        ``(G, K, nN)``; -1 marks a candidate that leaves X."""
        L = np.asarray(L, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        chain = [self.step(L, p)]
        for _ in range(2, self.n_max):
            chain.append(self.step(chain[-1], p))
        G, K = len(L), self.K
        nN = self.n_max - self.n_min + 1
        z1 = np.full((G, K, nN), -1, dtype=np.int64)
        last = np.full((G, K, nN), -1, dtype=np.int64)
        ks = np.broadcast_to(np.arange(K)[None, :], (G, K))
        for j, N in enumerate(range(self.n_min, self.n_max + 1)):
            if N == 1:
                # a one-period hold: the single sample already runs under the new input
                fin = self.step(np.broadcast_to(L[:, None], (G, K)), ks)
                first = fin
            else:
                prev = np.broadcast_to(chain[N - 2][:, None], (G, K))
                fin = np.where(prev >= 0, self.step(prev, ks), -1)
                first = np.broadcast_to(chain[0][:, None], (G, K))
            ok = fin >= 0
            z1[:, :, j] = np.where(ok, first, -1)
            last[:, :, j] = np.where(ok, fin, -1)
        return z1, last

    def successor_set(self, s, u_star) -> set:
        k = self.input_id(u_star)
        z, um, up, N = self.state_ids(s)
        if N == 0:
            L, p = z, k
        else:
            L = int(self.expand_ids(z, um, up, N)[N - 1])
            p = up
        z1, last = self.group_successors([L], [p])
        out = set()
        for j, N2 in enumerate(range(self.n_min, self.n_max + 1)):
            if z1[0, k, j] >= 0:
                out.add(self.state_obj(int(z1[0, k, j]), p if N2 >= 3 else -1, k, N2))
        return out

    def initial_points(self) -> np.ndarray:
        pts = self.lattice.all_coords()
        return np.flatnonzero(self.plant.initial_box.contains(pts))


def encode_keys(z1, um, up, Nidx, K: int, nN: int) -> np.ndarray:
    return ((np.asarray(z1, dtype=np.int64) * (K + 1) + (np.asarray(um) + 1)) * K
            + np.asarray(up)) * nN + np.asarray(Nidx)


def decode_keys(keys, K: int, nN: int) -> tuple:
    keys = np.asarray(keys, dtype=np.int64)
    Nidx = keys % nN
    r = keys // nN
    up = r % K
    r //= K
    um = r % (K + 1) - 1
    z1 = r // (K + 1)
    return z1, um, up, Nidx


# -- the model -------------------------------------------------------------------

@dataclass
class SymbolicModel:
    """Finite symbolic model stored as arrays.

    States ``0 .. n_initial-1`` are initial lattice points, the rest are held
    states sorted by ``(x1, u-, u+, N)``.  ``group_succ[g, k, j]`` is the
    successor id reached with hold length ``n_min + j`` from any state of group
    ``g`` under input ``k`` (-1 if none).
    """

    ctx: AbstractionContext
    z1: np.ndarray
    um: np.ndarray
    up: np.ndarray
    N: np.ndarray
    group: np.ndarray           # per state; -1 for initial states
    group_L: np.ndarray
    group_p: np.ndarray
    group_succ: np.ndarray
    init_group: np.ndarray      # (n_initial, K)
    stats: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.z1)

    @property
    def n_initial(self) -> int:
        return len(self.init_group)

    @property
    def n_min(self) -> int:
        return self.ctx.n_min

    @property
    def n_max(self) -> int:
        return self.ctx.n_max

    @property
    def K(self) -> int:
        return self.ctx.K

    def successors(self, s: int, k: int) -> np.ndarray:
        g = self.init_group[s, k] if s < self.n_initial else self.group[s]
        row = self.group_succ[g, k]
        return row[row >= 0]

    def successor_matrix(self, states) -> np.ndarray:
        """``(len(states), K, nN)`` successor ids."""
        states = np.asarray(states, dtype=np.int64)
        ini = states < self.n_initial
        g = np.where(ini[:, None], self.init_group[np.where(ini, states, 0)],
                     self.group[states][:, None])
        return self.group_succ[g, np.arange(self.K)[None, :]]

    def expansion_ids(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        return self.ctx.expand_ids(self.z1[states], self.um[states], self.up[states],
                                   np.maximum(self.N[states], 1))

    def output(self, s: int) -> np.ndarray:
        n = max(int(self.N[s]), 1)
        return self.ctx.lattice.coords(self.expansion_ids([s])[0, :n])

    def state(self, s: int):
        return self.ctx.state_obj(int(self.z1[s]), int(self.um[s]), int(self.up[s]), int(self.N[s]))

    def state_id(self, obj) -> int:
        z1, um, up, N = self.ctx.state_ids(obj)
        hit = np.flatnonzero((self.z1 == z1) & (self.um == um) & (self.up == up) & (self.N == N))
        if not len(hit):
            raise KeyError(obj)
        return int(hit[0])

    @property
    def transition_count(self) -> int:
        per_group = (self.group_succ >= 0).sum(axis=(1, 2))
        held = per_group[self.group[self.n_initial:]].sum()
        ini = (self.group_succ[self.init_group, np.arange(self.K)[None, :]] >= 0).sum()
        return int(held + ini)

    def to_transition_system(self, max_states: int = 200_000):
        from .tsys import TransitionSystem
        if self.n_states > max_states:
            raise StateBudgetExceeded("model too large for an explicit transition system",
                                      {"states": self.n_states})
        trans = []
        succ = self.successor_matrix(np.arange(self.n_states))
        for s, k, j in zip(*np.nonzero(succ >= 0)):
            trans.append((int(s), int(k), int(succ[s, k, j])))
        return TransitionSystem(range(self.n_states), range(self.n_initial), range(self.K),
                                trans, [self.output(s) for s in range(self.n_states)],
                                name=self.stats.get("plant", "S*"))

    def write_text(self, stream) -> None:
        """Same grammar as :func:`ncsym.tsys.write_text`; input ids index the
        input lattice."""
        from .tsys import _fmt_vec
        stream.write(f"# symbolic model: {self.n_states} states, {self.K} inputs\n")
        for s in range(self.n_states):
            y = self.output(s)
            suffix = f" len={len(y)}" if len(y) != 1 else ""
            stream.write(f"state {s} output {_fmt_vec(y)}{suffix}\n")
        for s in range(self.n_initial):
            stream.write(f"init {s}\n")
        for s in range(self.n_states):
            m = self.successor_matrix([s])[0]
            for k, j in zip(*np.nonzero(m >= 0)):
                stream.write(f"trans {s} {k} {m[k, j]}\n")

    # binary cache
    def save(self, path) -> None:
        meta = {"plant": self.ctx.plant.name, "params": _params_dict(self.ctx.params),
                "substeps": self.ctx.integrator.substeps_per_tau, "stats": self.stats}
        arrays = {name: getattr(self, name) for name in
                  ("z1", "um", "up", "N", "group", "group_L", "group_p", "group_succ", "init_group")}
        arrays["step_table"] = self.ctx.step.table
        write_container(path, MODEL_MAGIC, meta, arrays)

    @classmethod
    def load(cls, path, plant: Optional[PlantModel] = None) -> "SymbolicModel":
        meta, arr = read_container(path, MODEL_MAGIC)
        plant = plant or get_plant(meta["plant"])
        params = NcsParameters(**meta["params"])
        ctx = AbstractionContext(plant, params, integrator=IntegratorConfig(
            substeps_per_tau=meta["substeps"], tau=params.tau))
        ctx.step.table = arr.pop("step_table")
        return cls(ctx, **arr, stats=meta["stats"])


def _params_dict(p: NcsParameters) -> dict:
    return {k: getattr(p, k) for k in p.__dataclass_fields__}


def model_cache_key(plant: PlantModel, params: NcsParameters, substeps: int) -> str:
    return content_hash(plant.name, plant.state_box.describe(), plant.input_box.describe(),
                        plant.initial_box.describe(), _params_dict(params), substeps)


def build_abstraction(plant: PlantModel, cert: Optional[LyapunovCertificate],
                      params: NcsParameters, budget: Optional[PrecisionBudget] = None,
                      cap: int = DEFAULT_STATE_CAP, allow_uncertified: bool = False,
                      integrator: Optional[IntegratorConfig] = None) -> SymbolicModel:
    """Breadth-first closure of the successor relation from ``[X0]``."""
    t0 = time.perf_counter()
    if not plant.state_box.bounded:
        raise InvalidParameter("the state box must be bounded")
    certified = budget is not None and budget.approved
    if not certified and not allow_uncertified:
        if budget is None:
            raise InvalidParameter("a precision budget is required (or allow_uncertified=True)")
        raise InvalidParameter(
            f"mu_x={params.mu_x} exceeds the precision bound {budget.binding_bound:.4g}")
    ctx = AbstractionContext(plant, params, integrator=integrator, cap=cap)
    K, nN = ctx.K, ctx.n_max - ctx.n_min + 1
    init = ctx.initial_points()

    seen = np.empty(0, dtype=np.int64)
    frontier = np.unique((init[:, None] * K + np.arange(K)[None, :]).ravel())
    order, succ_keys = [], []
    produced = 0
    while len(frontier):
        L, p = frontier // K, frontier % K
        z1, last = ctx.group_successors(L, p)
        ks = np.broadcast_to(np.arange(K)[None, :, None], z1.shape)
        Ns = np.arange(ctx.n_min, ctx.n_max + 1)[None, None, :]
        ums = np.where(Ns >= 3, p[:, None, None], -1)
        keys = np.where(z1 >= 0, encode_keys(np.maximum(z1, 0), ums, ks,
                                             np.arange(nN)[None, None, :], K, nN), -1)
        order.append(frontier)
        succ_keys.append(keys)
        seen = np.union1d(seen, frontier)
        produced += int((keys >= 0).sum())
        if produced + len(init) > cap:
            distinct = len(np.unique(np.concatenate([k[k >= 0] for k in succ_keys])))
            if distinct + len(init) > cap:
                raise StateBudgetExceeded(
                    f"more than {cap} states reached during exploration",
                    {"groups": len(seen), "states_so_far": distinct + len(init)})
        frontier = np.setdiff1d(np.unique((last * K + ks)[last >= 0]), seen)

    group_keys = np.concatenate(order)
    all_keys = np.concatenate(succ_keys)
    perm = np.argsort(group_keys)
    group_keys = group_keys[perm]
    all_keys = all_keys[perm]
    held_keys = np.unique(all_keys[all_keys >= 0])
    if len(held_keys) + len(init) > cap:
        raise StateBudgetExceeded(f"{len(held_keys) + len(init)} states exceed the cap {cap}",
                                  {"states": len(held_keys) + len(init), "groups": len(group_keys)})
    n_init = len(init)
    group_succ = np.where(all_keys >= 0, np.searchsorted(held_keys, all_keys) + n_init, -1)

    hz1, hum, hup, hNi = decode_keys(held_keys, K, nN)
    hN = hNi + ctx.n_min
    z1 = np.concatenate([init, hz1])
    um = np.concatenate([np.full(n_init, -1), hum])
    up = np.concatenate([np.full(n_init, -1), hup])
    N = np.concatenate([np.zeros(n_init, dtype=np.int64), hN])
    exp = ctx.expand_ids(hz1, hum, hup, hN)
    last = exp[np.arange(len(hN)), hN - 1]
    gk = last * K + hup
    group = np.concatenate([np.full(n_init, -1), np.searchsorted(group_keys, gk)])
    init_group = np.searchsorted(group_keys, init[:, None] * K + np.arange(K)[None, :])
    model = SymbolicModel(ctx, z1, um, up, N, group, group_keys // K, group_keys % K,
                          group_succ.astype(np.int64), init_group.astype(np.int64))
    model.stats = {
        "plant": plant.name,
        "states": model.n_states,
        "initial_states": n_init,
        "groups": len(group_keys),
        "lattice_points": ctx.lattice.size,
        "inputs": K,
        "n_min": ctx.n_min,
        "n_max": ctx.n_max,
        "certified": bool(certified),
        "seconds": round(time.perf_counter() - t0, 3),
    }
    model.stats["transitions"] = model.transition_count
    return model
