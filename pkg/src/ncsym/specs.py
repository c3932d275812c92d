"""Specification automata and their extension to hold-length windows.

Spec points are real vectors; a NaN coordinate means "don't care" and is
ignored by :func:`ncsym.tsys.d_ext`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import SpecTooLarge
from .tsys import TransitionSystem, d_ext

DUMMY_INPUT = "u_q"
DEFAULT_PATH_CAP = 200_000


@dataclass
class SpecAutomaton:
    points: np.ndarray          # (n_states, n), NaN = don't care
    initial: tuple
    transitions: tuple          # (src, dst) index pairs
    name: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.initial = tuple(sorted(set(int(i) for i in self.initial)))
        self.transitions = tuple(sorted(set((int(a), int(b)) for a, b in self.transitions)))
        n = len(self.points)
        for a, b in self.transitions:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"transition ({a}, {b}) leaves the state set")
        for i in self.initial:
            if not 0 <= i < n:
                raise ValueError(f"initial state {i} out of range")
        self.succ = [[] for _ in range(n)]
        for a, b in self.transitions:
            self.succ[a].append(b)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class SpecReport:
    accessible: bool
    nonblocking: bool
    unreachable: list = field(default_factory=list)
    blocking: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.accessible and self.nonblocking


def validate_spec(Q: SpecAutomaton) -> SpecReport:
    seen = set(Q.initial)
    stack = list(Q.initial)
    while stack:
        a = stack.pop()
        for b in Q.succ[a]:
            if b not in seen:
                seen.add(b)
                stack.append(b)
    unreachable = [i for i in range(Q.size) if i not in seen]
    blocking = [i for i in range(Q.size) if not Q.succ[i]]
    return SpecReport(not unreachable, not blocking, unreachable, blocking)


def trajectory_to_spec(points: Sequence, name: str = "") -> SpecAutomaton:
    """Chain through ``points`` with a self-loop on the last one."""
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if not pts:
        raise ValueError("a trajectory spec needs at least one point")
    k = len(pts)
    trans = [(i, i + 1) for i in range(k - 1)] + [(k - 1, k - 1)]
    return SpecAutomaton(np.vstack(pts), (0,), trans, name)


def chains_to_spec(chains: Sequence[Sequence], name: str = "") -> SpecAutomaton:
    """Several disjoint chains, each with its own initial point and terminal hold."""
    pts, init, trans = [], [], []
    for chain in chains:
        base = len(pts)
        sub = trajectory_to_spec(chain)
        pts.extend(sub.points)
        init.append(base)
        trans.extend((a + base, b + base) for a, b in sub.transitions)
    return SpecAutomaton(np.vstack(pts), init, trans, name)


def parse_spec(text: str, dim: int = None, name: str = "") -> SpecAutomaton:
    """Spec file grammar (one declaration per line, ``#`` comments)::

        0.5, *        point of the current chain; '*' = don't care
        --            starts a new chain

    Every chain starts at an initial state and ends in a self-loop.
    """
    chains, cur = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "--":
            if cur:
                chains.append(cur)
            cur = []
            continue
        vals = []
        for tok in line.split(","):
            tok = tok.strip()
            if tok == "*":
                vals.append(np.nan)
            else:
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ValueError(f"line {lineno}: bad coordinate {tok!r}") from None
        if dim is not None and len(vals) != dim:
            raise ValueError(f"line {lineno}: expected {dim} coordinates, got {len(vals)}")
        cur.append(vals)
    if cur:
        chains.append(cur)
    if not chains:
        raise ValueError("spec file declares no points")
    widths = {len(p) for c in chains for p in c}
    if len(widths) != 1:
        raise ValueError("all spec points need the same number of coordinates")
    return chains_to_spec(chains, name)


def format_spec(Q: SpecAutomaton) -> str:
    """Inverse of :func:`parse_spec` for chain-shaped automata."""
    lines = []
    starts = set(Q.initial)
    for i, p in enumerate(Q.points):
        if i in starts and i != 0:
            lines.append("--")
        lines.append(", ".join("*" if np.isnan(v) else repr(float(v)) for v in p))
    return "\n".join(lines) + "\n"


# -- extended spec -------------------------------------------------------------

@dataclass(frozen=True)
class PathState:
    """A window of Q states; ``bare`` marks an initial state kept as-is."""

    path: tuple
    bare: bool = False

    @property
    def length(self) -> int:
        return len(self.path)

    @property
    def first(self) -> int:
        return self.path[0]

    @property
    def last(self) -> int:
        return self.path[-1]


class ExtendedSpec:
    """Q^e: windows of length N in [n_min, n_max] plus the bare initial states,
    one dummy input, identity output."""

    def __init__(self, Q: SpecAutomaton, n_min: int, n_max: int, cap: int = DEFAULT_PATH_CAP):
        if not 1 <= n_min <= n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        self.Q, self.n_min, self.n_max = Q, n_min, n_max
        states = [PathState((q,), bare=True) for q in Q.initial]
        for N in range(n_min, n_max + 1):
            for path in _paths(Q, N, cap - len(states)):
                states.append(PathState(path))
        self.states = states
        self.index = {s: i for i, s in enumerate(states)}
        self.lengths = np.array([s.length for s in states], dtype=np.int64)
        self.outputs = [Q.points[list(s.path)] for s in states]
        by_first = {}
        for i, s in enumerate(states):
            if not s.bare:
                by_first.setdefault(s.first, []).append(i)
        self.succ = []
        for s in states:
            out = []
            for q in Q.succ[s.last]:
                out.extend(by_first.get(q, ()))
            self.succ.append(sorted(out))
        self.initial_ids = list(range(len(Q.initial)))
        self._ts = None

    def __len__(self):
        return len(self.states)

    def successors_with_length(self, i: int, N: int) -> list:
        return [j for j in self.succ[i] if self.lengths[j] == N]

    def as_transition_system(self) -> TransitionSystem:
        if self._ts is None:
            trans = [(i, DUMMY_INPUT, j) for i, succ in enumerate(self.succ) for j in succ]
            self._ts = TransitionSystem(range(len(self.states)), self.initial_ids, [DUMMY_INPUT],
                                        trans, self.outputs, metric=d_ext, name="Qe")
        return self._ts

    def concatenate(self, run: Sequence[int]) -> list:
        """Q-state sequence obtained by chaining the windows of a Q^e run."""
        out = []
        for i in run:
            out.extend(self.states[i].path)
        return out


def _paths(Q: SpecAutomaton, N: int, cap: int) -> Iterable[tuple]:
    count = 0
    frontier = [(q,) for q in range(Q.size)]
    for _ in range(N - 1):
        nxt = []
        for p in frontier:
            for q in Q.succ[p[-1]]:
                nxt.append(p + (q,))
                if len(nxt) > cap:
                    raise SpecTooLarge(f"more than {cap} paths of length {N}")
        frontier = nxt
    for p in frontier:
        count += 1
        if count > cap:
            raise SpecTooLarge(f"more than {cap} spec path-states")
        yield p


def extend_spec(Q: SpecAutomaton, n_min: int, n_max: int,
                cap: int = DEFAULT_PATH_CAP) -> ExtendedSpec:
    return ExtendedSpec(Q, n_min, n_max, cap)


QA_FIRST_COORDINATE = (0.5, 0.4, 0.3, 0.2, 0.1, 0.0, -0.2, -0.35, -0.5,
                       -0.6, -0.7, -0.8, -0.8, -0.75, -0.7)

QB_POINTS = ((0.5, 0.5), (0.4, 0.3), (0.3, 0.2), (0.2, 0.1), (0.1, -0.1), (0.0, -0.25),
             (-0.1, -0.3), (-0.1, -0.4), (-0.15, -0.4), (-0.15, -0.4), (0.1, -0.3),
             (0.2, -0.2), (0.2, -0.1), (0.2, -0.1), (0.2, -0.05))


def tracking_spec_a() -> SpecAutomaton:
    """First-coordinate tracking sequence for the pendulum loop; the velocity
    coordinate is left free."""
    return trajectory_to_spec([(v, np.nan) for v in QA_FIRST_COORDINATE], "Q_a")


def tracking_spec_b() -> SpecAutomaton:
    return trajectory_to_spec(QB_POINTS, "Q_b")
