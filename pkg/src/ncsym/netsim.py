"""Discrete-event simulation of networked control loops running symbolic
controllers.

Timing of one loop (all indices count sampling periods of length tau):

* the ZoH starts with the policy input of the initial controller state;
* iteration k starts at refresh index ``r_k`` (``r_1 = n_min - 1``): the
  sensor waits, sends the latest quantized sample together with ``r_k``, the
  controller computes, the actuator message arrives after the total delay
  ``D`` and the ZoH is refreshed at ``r_{k+1} = r_k + ceil(D / tau)``;
* the controller resolves ``N_k = r_k - r_{k-1}`` from consecutive refresh
  indices (``r_0 = -1``), commits the matching successor and answers with the
  policy input of the committed state.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import heapq
import math
from pathlib import Path
from typing import Callable, Optional, Sequence
import warnings

import numpy as np

from .abstraction import AbstractionContext
from .dynamics import PlantModel, rk4_flow
from .errors import InfeasibleScenario, InvalidParameter, RuntimeDomainMiss
from .ncs_timing import NcsParameters, _ceil_ratio
from .specs import SpecAutomaton
from .synthesis import Controller

EVENT_KINDS = ("SensorSample", "NetDeparture", "NetArrival", "CtrlDone", "ZohRefresh", "Drop")
_TOL = 1e-9


@dataclass(frozen=True)
class DropoutModel:
    probability: float = 0.0
    max_consecutive: int = 0
    timeout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidParameter("dropout probability must lie in [0, 1]")
        if self.max_consecutive < 0 or self.timeout < 0:
            raise InvalidParameter("dropout cap and timeout must be nonnegative")

    @property
    def worst_extra(self) -> float:
        return self.max_consecutive * self.timeout


@dataclass
class LoopSetup:
    name: str
    plant: PlantModel
    params: NcsParameters
    ctx: AbstractionContext
    controller: Controller
    x0: np.ndarray
    theta: float
    spec: Optional[SpecAutomaton] = None
    epsilon: Optional[float] = None


@dataclass
class SimulationScenario:
    loops: list
    seed: int = 0
    horizon: float = 10.0
    shared_channel: bool = False
    dropout: DropoutModel = field(default_factory=DropoutModel)
    degenerate: bool = False          # every random quantity at its minimum
    req_wait_fraction: float = 0.5    # own waiting time drawn in [0, fraction * req_max]
    # (rng, lo, hi) -> delay; values outside [lo, hi] are clamped
    delay_distribution: Optional[Callable] = None

    def validate(self) -> None:
        for lp in self.loops:
            prov = lp.controller.provenance
            if (prov.get("n_min"), prov.get("n_max")) != (lp.ctx.n_min, lp.ctx.n_max):
                raise InvalidParameter(f"loop {lp.name}: controller was built for another N range")
            if not lp.controller.realizable:
                raise InvalidParameter(f"loop {lp.name}: controller is not realizable")
            if self.shared_channel:
                others = sum(max(o.ctx.timing.delta_send_sc, o.ctx.timing.delta_send_ca)
                             for o in self.loops if o is not lp)
                worst = self.req_wait_fraction * lp.params.delta_req_max + others
                if worst > lp.params.delta_req_max + _TOL:
                    raise InfeasibleScenario(
                        f"loop {lp.name}: a sensor or actuator message may wait {worst:.4g}s for the "
                        f"shared channel, more than delta_req_max={lp.params.delta_req_max}s")
            if self.dropout.worst_extra + lp.params.delta_delay_min > lp.params.delta_delay_max + _TOL:
                raise InfeasibleScenario(
                    f"loop {lp.name}: {self.dropout.max_consecutive} drops x {self.dropout.timeout}s "
                    f"do not fit in the delay bound {lp.params.delta_delay_max}")


@dataclass
class Event:
    time: float
    kind: str
    loop: int
    payload: dict = field(default_factory=dict)


@dataclass
class LoopTrace:
    name: str
    times: np.ndarray                 # substep resolution
    states: np.ndarray
    inputs: np.ndarray                # input applied on [times[i], times[i+1])
    samples: np.ndarray               # tau-spaced states, index = sample index
    quantized: np.ndarray
    N: list
    refreshes: list
    predicted: dict
    misses: list
    drops: int = 0


@dataclass
class Trace:
    seed: int
    loops: list
    events: list
    transmissions: list = field(default_factory=list)   # (start, end, channel, loop, label)

    @property
    def domain_misses(self) -> int:
        return sum(len(lp.misses) for lp in self.loops)


# -- controller runtime --------------------------------------------------------------

class Executor:
    """Tracks the controller state of one loop from incoming sensor messages."""

    def __init__(self, ctrl: Controller, ctx: AbstractionContext, theta: float, first_sample):
        self.ctrl, self.ctx, self.theta = ctrl, ctx, theta
        y = np.asarray(first_sample, dtype=float)
        best, best_d = -1, math.inf
        for c in ctrl.initial:
            d = float(np.max(np.abs(ctrl.output(int(c))[0] - y)))
            if d <= theta + _TOL and d < best_d - 1e-15:
                best, best_d = int(c), d
        if best < 0:
            raise RuntimeDomainMiss(f"no controller initial state within {theta} of {y.tolist()}")
        self.state = best
        self.tie_note = sum(1 for c in ctrl.initial
                            if abs(float(np.max(np.abs(ctrl.output(int(c))[0] - y))) - best_d) <= 1e-15) > 1
        self.last_refresh = -1
        self.predicted = {0: ctrl.output(best)[0]}

    def control(self) -> np.ndarray:
        k = int(self.ctrl.policy[self.state])
        return self.ctx.inputs[k]

    def step(self, sample, s: int, A: int) -> np.ndarray:
        return runtime_step(self, sample, s, A)


def runtime_step(ex: Executor, sample, s: int, A: int) -> np.ndarray:
    N = A - ex.last_refresh
    if not ex.ctx.n_min <= N <= ex.ctx.n_max:
        raise RuntimeDomainMiss(f"hold length {N} outside [{ex.ctx.n_min};{ex.ctx.n_max}]")
    k = int(ex.ctrl.policy[ex.state])
    succ = ex.ctrl.successors(ex.state, k, N - ex.ctx.n_min)
    if not len(succ):
        raise RuntimeDomainMiss(f"controller state {ex.state} has no successor for N={N}")
    nxt = int(succ.min())
    out = ex.ctrl.output(nxt)
    for i, y in enumerate(out):
        ex.predicted[ex.last_refresh + 2 + i] = y
    ex.state, ex.last_refresh = nxt, A
    pred = ex.predicted.get(s)
    if pred is None:
        raise RuntimeDomainMiss(f"sample index {s} is not covered by the committed run")
    dev = float(np.max(np.abs(np.asarray(sample) - pred)))
    if dev > ex.theta + _TOL:
        raise RuntimeDomainMiss(f"sample {s} deviates {dev:.4g} > theta={ex.theta} from the prediction")
    return ex.control()


# -- simulation -------------------------------------------------------------------

class _Plant:
    """Continuous state advanced one sampling period at a time."""

    def __init__(self, lp: LoopSetup):
        self.lp = lp
        self.tau = lp.params.tau
        self.steps = lp.ctx.integrator.steps_for(self.tau)
        self.x = np.asarray(lp.x0, dtype=float).copy()
        self.samples = [self.x.copy()]
        self.times, self.states, self.inputs = [0.0], [self.x.copy()], []
        self.zoh = {}               # refresh index -> input

    def input_at(self, i: int) -> np.ndarray:
        start = max(r for r in self.zoh if r <= i)
        return self.zoh[start]

    def advance_to(self, index: int) -> None:
        h = self.tau / self.steps
        while len(self.samples) <= index:
            i = len(self.samples) - 1
            u = self.input_at(i)
            x = self.x
            for j in range(self.steps):
                x, _ = rk4_flow(self.lp.plant.f, x, u, h, 1)
                self.times.append(i * self.tau + (j + 1) * h)
                self.states.append(x)
                self.inputs.append(u)
            if not np.all(np.isfinite(x)):
                raise RuntimeDomainMiss("plant state diverged")
            self.x = x
            self.samples.append(x.copy())


def run_simulation(scenario: SimulationScenario, horizon: Optional[float] = None) -> Trace:
    scenario.validate()
    horizon = scenario.horizon if horizon is None else horizon
    rng = np.random.default_rng(np.uint64(scenario.seed & (2 ** 64 - 1)))
    queue, seq = [], 0
    events, transmissions = [], []

    def push(t, kind, loop, **payload):
        nonlocal seq
        heapq.heappush(queue, (t, seq, kind, loop, payload))
        seq += 1

    def draw(lo, hi):
        return lo if scenario.degenerate or hi <= lo else float(rng.uniform(lo, hi))

    plants, execs, traces = [], [], []
    for li, lp in enumerate(scenario.loops):
        pl = _Plant(lp)
        q0 = lp.ctx.lattice.quantize(pl.x)
        ex = Executor(lp.controller, lp.ctx, lp.theta, q0)
        pl.zoh[0] = ex.control()
        plants.append(pl)
        execs.append(ex)
        traces.append({"N": [], "refreshes": [-1], "misses": [], "drops": 0, "halted": False})
        push((lp.ctx.n_min - 1) * lp.params.tau, "ZohRefresh", li, A=lp.ctx.n_min - 1, first=True)

    channel_free = [0.0] * (1 if scenario.shared_channel else len(scenario.loops))

    def channel(li):
        return 0 if scenario.shared_channel else li

    def transmit(t_req, li, bits, base_wait, label):
        """Grant the channel FIFO; return (departure time, total wait)."""
        lp = scenario.loops[li]
        ch = channel(li)
        start = max(t_req, channel_free[ch])
        wait = base_wait + (start - t_req)
        if wait > lp.params.delta_req_max + _TOL:
            raise InfeasibleScenario(
                f"loop {lp.name}: {label} at t={t_req:.4f}s would wait {wait:.4f}s "
                f"> {lp.params.delta_req_max}s")
        send = (bits + lp.params.header_bits) / lp.params.B_max
        channel_free[ch] = start + send
        transmissions.append((start, start + send, ch, li, label))
        return start + send, wait

    def net_delay(li, t, label):
        lp = scenario.loops[li]
        p = lp.params
        d = scenario.dropout
        lo, hi = p.delta_delay_min, p.delta_delay_max - d.worst_extra
        if scenario.delay_distribution is None or scenario.degenerate:
            raw = draw(lo, hi)
        else:
            raw = float(scenario.delay_distribution(rng, lo, hi))
            if not lo <= raw <= hi:
                warnings.warn(f"delay {raw:.4g} outside [{lo:.4g}, {hi:.4g}] clamped", stacklevel=2)
                raw = min(max(raw, lo), hi)
        extra = 0.0
        drops = 0
        while drops < d.max_consecutive and not scenario.degenerate and rng.random() < d.probability:
            drops += 1
            extra += d.timeout
            events.append(Event(t + extra, "Drop", li, {"message": label, "attempt": drops}))
        traces[li]["drops"] += drops
        return raw + extra

    while queue:
        t, _, kind, li, payload = heapq.heappop(queue)
        if t > horizon + _TOL:
            break
        lp, pl, ex, tr = scenario.loops[li], plants[li], execs[li], traces[li]
        if tr["halted"]:
            continue
        tau = lp.params.tau
        timing = lp.ctx.timing
        events.append(Event(t, kind, li, {k: v for k, v in payload.items() if k != "state"}))
        if kind == "ZohRefresh":
            A = payload["A"]
            if not payload.get("first"):
                pl.zoh[A] = payload["u"]
                tr["N"].append(A - tr["refreshes"][-1])
            tr["refreshes"].append(A)
            base = draw(0.0, scenario.req_wait_fraction * lp.params.delta_req_max)
            push(t + base, "SensorSample", li, A=A, base_wait=base)
        elif kind == "SensorSample":
            A = payload["A"]
            s = int(math.floor(t / tau + _TOL))
            pl.advance_to(s)
            y = lp.ctx.lattice.quantize(pl.samples[s])
            dep, wait = transmit(t, li, timing.state_bits, payload["base_wait"], f"sensor message A={A}")
            push(dep, "NetDeparture", li, A=A, s=s, y=y, wait=wait, leg="sc")
        elif kind == "NetDeparture":
            d = net_delay(li, t, f"{payload['leg']} A={payload['A']}")
            push(t + d, "NetArrival", li, **payload)
        elif kind == "NetArrival" and payload["leg"] == "sc":
            try:
                u = ex.step(payload["y"], payload["s"], payload["A"])
            except RuntimeDomainMiss as exc:
                tr["misses"].append((t, str(exc)))
                tr["halted"] = True
                continue
            push(t + draw(lp.params.delta_ctrl_min, lp.params.delta_ctrl_max), "CtrlDone", li,
                 A=payload["A"], u=u, t0=payload["A"] * tau, wait_sc=payload["wait"])
        elif kind == "CtrlDone":
            base = draw(0.0, scenario.req_wait_fraction * lp.params.delta_req_max)
            dep, _ = transmit(t + base, li, timing.input_bits, base, f"actuator message A={payload['A']}")
            push(dep, "NetDeparture", li, A=payload["A"], u=payload["u"], t0=payload["t0"], leg="ca")
        elif kind == "NetArrival":
            D = t - payload["t0"]
            A_next = payload["A"] + max(1, _ceil_ratio(D, tau))
            push(A_next * tau, "ZohRefresh", li, A=A_next, u=payload["u"])

    out = []
    for li, lp in enumerate(scenario.loops):
        pl, tr = plants[li], traces[li]
        last = int(math.floor(horizon / lp.params.tau + _TOL))
        if not tr["halted"]:
            pl.zoh.setdefault(0, pl.zoh[0])
            try:
                pl.advance_to(last)
            except RuntimeDomainMiss as exc:
                tr["misses"].append((horizon, str(exc)))
        samples = np.array(pl.samples[: last + 1])
        quant = lp.ctx.lattice.quantize(samples)
        n = len(pl.inputs)
        out.append(LoopTrace(lp.name, np.array(pl.times[: n + 1]), np.array(pl.states[: n + 1]),
                             np.array(pl.inputs), samples, quant, tr["N"], tr["refreshes"][1:],
                             dict(execs[li].predicted), tr["misses"], tr["drops"]))
    events.sort(key=lambda e: e.time)
    return Trace(scenario.seed, out, events, transmissions)


# -- tracking measure -------------------------------------------------------------

@dataclass
class TrackingResult:
    max_deviation: float
    passed: bool
    run: list
    witness: Optional[int] = None


def measure_tracking(samples, spec: SpecAutomaton, epsilon: float) -> TrackingResult:
    """Best spec run for the tau-spaced samples under the max deviation
    (bottleneck dynamic programming; sample i is matched with the i-th state
    of the run)."""
    Y = np.atleast_2d(np.asarray(samples, dtype=float))
    if isinstance(samples, LoopTrace):
        Y = samples.quantized
    P = spec.points
    diff = np.abs(Y[:, None, :] - P[None, :, :])
    dev = np.max(np.where(np.isnan(diff), 0.0, diff), axis=-1)       # (T, |Q|)
    T, Qn = dev.shape
    cost = np.full(Qn, math.inf)
    init = list(spec.initial)
    cost[init] = dev[0, init]
    back = np.full((T, Qn), -1, dtype=np.int64)
    preds = [[] for _ in range(Qn)]
    for a, b in spec.transitions:
        preds[b].append(a)
    for i in range(1, T):
        new = np.full(Qn, math.inf)
        for b in range(Qn):
            best, arg = math.inf, -1
            for a in preds[b]:
                if cost[a] < best:
                    best, arg = cost[a], a
            if arg >= 0:
                new[b] = max(best, dev[i, b])
                back[i, b] = arg
        if not np.isfinite(new).any():
            return TrackingResult(math.inf, False, [], witness=i)
        cost = new
    end = int(np.argmin(cost))
    run = [end]
    for i in range(T - 1, 0, -1):
        run.append(int(back[i, run[-1]]))
    run.reverse()
    worst = float(cost[end])
    return TrackingResult(worst, worst <= epsilon + _TOL, run)


# -- export ------------------------------------------------------------------------

def write_trace_csv(trace: Trace, path) -> None:
    """One row per integration substep plus one per event (state columns hold
    the latest substep state at the event time)."""
    path = Path(path)
    n = max(lp.states.shape[1] for lp in trace.loops)
    m = max(lp.inputs.shape[1] if len(lp.inputs) else 1 for lp in trace.loops)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "loop"] + [f"x{i + 1}" for i in range(n)] +
                   [f"u{i + 1}" for i in range(m)] + ["event_kind", "N_k", "seed"])
        rows = []
        for li, lp in enumerate(trace.loops):
            for i in range(len(lp.inputs)):
                rows.append((lp.times[i], 0, li, list(lp.states[i]), list(lp.inputs[i]), "", ""))
        for e in trace.events:
            lp = trace.loops[e.loop]
            i = min(int(np.searchsorted(lp.times, e.time + _TOL)) - 1, len(lp.inputs) - 1)
            i = max(i, 0)
            Nk = ""
            if e.kind == "ZohRefresh" and "u" in e.payload:
                Nk = e.payload["A"] - _prev_refresh(lp.refreshes, e.payload["A"])
            u = list(lp.inputs[i]) if len(lp.inputs) else [""]
            rows.append((e.time, 1, e.loop, list(lp.states[i]), u, e.kind, Nk))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for t, _, li, x, u, kind, Nk in rows:
            w.writerow([f"{t:.9f}", trace.loops[li].name] + [f"{v:.12g}" for v in x] +
                       [f"{v:.12g}" for v in u] + [kind, Nk, trace.seed])


def _prev_refresh(refreshes: Sequence[int], A: int) -> int:
    before = [r for r in refreshes if r < A]
    return before[-1] if before else -1


def write_index(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "file", "domain_misses", "max_deviation", "pass"])
        for r in rows:
            w.writerow([r["seed"], r["file"], r["domain_misses"], f"{r['max_deviation']:.6g}",
                        "pass" if r["pass"] else "fail"])
