"""Finite transition systems, approximate (alternating) simulation checkers and
approximate parallel composition.

States and inputs are interned to dense integer ids; ``post`` and the
checkers take labels, the ``*_ids`` helpers work on ids.  Outputs may be any
value the attached metric understands; the default metric is ``d_ext`` over
arrays of shape ``(N, n)`` (or plain vectors, treated as ``N = 1``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Optional

import numpy as np

INF = float("inf")


def _as_tuple_array(y) -> np.ndarray:
    a = np.asarray(y, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    return a


def d_ext(y1, y2) -> float:
    """Max component distance between two equally long tuples of vectors.

    Tuples of different length are infinitely far apart.  NaN coordinates are
    "don't care" and contribute distance 0.
    """
    a = _as_tuple_array(y1)
    b = _as_tuple_array(y2)
    if a.shape != b.shape:
        return INF
    diff = np.abs(a - b)
    if diff.size == 0:
        return 0.0
    return float(np.max(np.where(np.isnan(diff), 0.0, diff)))


class TransitionSystem:
    """The sextuple (X, X0, U, ->, Y, H) over finite sets."""

    def __init__(self, states: Iterable[Hashable], initial: Iterable[Hashable],
                 inputs: Iterable[Hashable], transitions: Iterable[tuple],
                 outputs, metric: Callable = d_ext, name: str = ""):
        self.states = list(dict.fromkeys(states))
        self.state_id = {s: i for i, s in enumerate(self.states)}
        self.inputs = list(dict.fromkeys(inputs))
        self.input_id = {u: i for i, u in enumerate(self.inputs)}
        init = list(dict.fromkeys(initial))
        for s in init:
            if s not in self.state_id:
                raise ValueError(f"initial state {s!r} is not a state")
        self.initial_ids = sorted(self.state_id[s] for s in init)
        self._post = [dict() for _ in self.states]
        self.transition_count = 0
        for src, u, dst in transitions:
            try:
                i, a, j = self.state_id[src], self.input_id[u], self.state_id[dst]
            except KeyError as exc:
                raise ValueError(f"transition {(src, u, dst)!r} uses an unknown symbol") from exc
            succ = self._post[i].setdefault(a, set())
            if j not in succ:
                succ.add(j)
                self.transition_count += 1
        self._post = [{a: tuple(sorted(v)) for a, v in sorted(d.items())} for d in self._post]
        if callable(outputs):
            self.outputs = [outputs(s) for s in self.states]
        elif isinstance(outputs, dict):
            self.outputs = [outputs[s] for s in self.states]
        else:
            self.outputs = list(outputs)
            if len(self.outputs) != len(self.states):
                raise ValueError("one output per state required")
        self.metric = metric
        self.name = name
        self.initial_empty = not self.initial_ids

    # -- label level -------------------------------------------------------
    @property
    def initial(self) -> list:
        return [self.states[i] for i in self.initial_ids]

    def post(self, x, u) -> set:
        i = self.state_id[x]
        a = self.input_id[u]
        return {self.states[j] for j in self._post[i].get(a, ())}

    def transitions(self):
        for i, d in enumerate(self._post):
            for a, succ in d.items():
                for j in succ:
                    yield self.states[i], self.inputs[a], self.states[j]

    def output(self, x):
        return self.outputs[self.state_id[x]]

    # -- id level ----------------------------------------------------------
    def post_ids(self, i: int, a: int) -> tuple:
        return self._post[i].get(a, ())

    def enabled_ids(self, i: int) -> dict:
        return self._post[i]

    def successors_ids(self, i: int) -> set:
        out = set()
        for succ in self._post[i].values():
            out.update(succ)
        return out

    def distance_ids(self, other: "TransitionSystem", i: int, j: int) -> float:
        return self.metric(self.outputs[i], other.outputs[j])

    def __len__(self):
        return len(self.states)

    def __repr__(self):
        return (f"TransitionSystem({self.name or 'unnamed'}: {len(self.states)} states, "
                f"{len(self.inputs)} inputs, {self.transition_count} transitions)")


def post(S: TransitionSystem, x, u) -> set:
    return S.post(x, u)


def is_nonblocking(S: TransitionSystem) -> bool:
    return all(any(s for s in d.values()) for d in S._post)


def is_deterministic(S: TransitionSystem) -> bool:
    return all(len(s) <= 1 for d in S._post for s in d.values())


def is_subsystem(S1: TransitionSystem, S2: TransitionSystem, atol: float = 0.0) -> bool:
    """Containment of states, initial states, inputs and transitions, with
    matching outputs on the shared states."""
    if any(s not in S2.state_id for s in S1.states):
        return False
    if any(u not in S2.input_id for u in S1.inputs):
        return False
    if not set(S1.initial) <= set(S2.initial):
        return False
    t2 = set(S2.transitions())
    if any(t not in t2 for t in S1.transitions()):
        return False
    for s in S1.states:
        if S1.metric(S1.output(s), S2.output(s)) > atol:
            return False
    return True


# -- relations -----------------------------------------------------------------

KINDS = ("simulation", "bisimulation", "alternating-simulation", "alternating-bisimulation")


@dataclass
class ApproxRelation:
    pairs: frozenset
    epsilon: float
    kind: str
    passes: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")

    def __contains__(self, pair):
        return pair in self.pairs

    def __len__(self):
        return len(self.pairs)

    def inverse(self) -> "ApproxRelation":
        return ApproxRelation(frozenset((b, a) for a, b in self.pairs), self.epsilon, self.kind)


def _close_pairs(S1: TransitionSystem, S2: TransitionSystem, eps: float) -> set:
    return {(i, j) for i in range(len(S1)) for j in range(len(S2))
            if S1.distance_ids(S2, i, j) <= eps}


def _sim_ok(S1, S2, R, i, j) -> bool:
    # every successor of i (any input) is matched by some successor of j
    succ2 = S2.successors_ids(j)
    for i2 in S1.successors_ids(i):
        if not any((i2, j2) in R for j2 in succ2):
            return False
    return True


def _alt_ok(S1, S2, R, i, j) -> bool:
    # for all u1 exists u2 such that every u2-successor of j is matched by
    # some u1-successor of i
    for a1 in range(len(S1.inputs)):
        succ1 = S1.post_ids(i, a1)
        found = False
        for a2 in range(len(S2.inputs)):
            if all(any((i2, j2) in R for i2 in succ1) for j2 in S2.post_ids(j, a2)):
                found = True
                break
        if not found:
            return False
    return True


def _prune(R: set, violates: Callable) -> tuple:
    """Barrier-separated pruning passes: each pass evaluates every pair against
    the relation as it stood at the start of the pass."""
    passes = 0
    while True:
        dead = {p for p in sorted(R) if violates(R, p)}
        passes += 1
        if not dead:
            return R, passes
        R = R - dead


def _covers_initial(S1, S2, R) -> bool:
    init2 = set(S2.initial_ids)
    return all(any((i, j) in R for j in init2) for i in S1.initial_ids)


def _label_pairs(S1, S2, R) -> frozenset:
    return frozenset((S1.states[i], S2.states[j]) for i, j in R)


def greatest_approx_sim(S1, S2, eps) -> tuple:
    """Largest relation satisfying conditions (ii)-(iii) of the simulation
    definition, as id pairs, plus the number of passes."""
    return _prune(_close_pairs(S1, S2, eps), lambda R, p: not _sim_ok(S1, S2, R, *p))


def check_approx_sim(S1: TransitionSystem, S2: TransitionSystem,
                     epsilon: float) -> Optional[ApproxRelation]:
    R, passes = greatest_approx_sim(S1, S2, epsilon)
    if not _covers_initial(S1, S2, R):
        return None
    return ApproxRelation(_label_pairs(S1, S2, R), epsilon, "simulation", passes)


def check_approx_bisim(S1, S2, epsilon) -> Optional[ApproxRelation]:
    def bad(R, p):
        i, j = p
        Rinv = _InverseView(R)
        return not (_sim_ok(S1, S2, R, i, j) and _sim_ok(S2, S1, Rinv, j, i))
    R, passes = _prune(_close_pairs(S1, S2, epsilon), bad)
    if not (_covers_initial(S1, S2, R) and _covers_initial(S2, S1, _InverseView(R))):
        return None
    return ApproxRelation(_label_pairs(S1, S2, R), epsilon, "bisimulation", passes)


def check_alt_sim(S1, S2, epsilon) -> Optional[ApproxRelation]:
    R, passes = _prune(_close_pairs(S1, S2, epsilon),
                       lambda R, p: not _alt_ok(S1, S2, R, *p))
    if not _covers_initial(S1, S2, R):
        return None
    return ApproxRelation(_label_pairs(S1, S2, R), epsilon, "alternating-simulation", passes)


def check_alt_bisim(S1: TransitionSystem, S2: TransitionSystem,
                    epsilon: float) -> Optional[ApproxRelation]:
    def bad(R, p):
        i, j = p
        return not (_alt_ok(S1, S2, R, i, j) and _alt_ok(S2, S1, _InverseView(R), j, i))
    R, passes = _prune(_close_pairs(S1, S2, epsilon), bad)
    if not (_covers_initial(S1, S2, R) and _covers_initial(S2, S1, _InverseView(R))):
        return None
    return ApproxRelation(_label_pairs(S1, S2, R), epsilon, "alternating-bisimulation", passes)


class _InverseView:
    __slots__ = ("R",)

    def __init__(self, R):
        self.R = R

    def __contains__(self, pair):
        return (pair[1], pair[0]) in self.R


def is_approx_sim_relation(S1, S2, pairs, epsilon) -> bool:
    """Check a given label relation against conditions (i)-(iii) directly."""
    R = {(S1.state_id[a], S2.state_id[b]) for a, b in pairs}
    if any(S1.distance_ids(S2, i, j) > epsilon for i, j in R):
        return False
    if not _covers_initial(S1, S2, R):
        return False
    return all(_sim_ok(S1, S2, R, i, j) for i, j in R)


def compose_relations(R12, R23) -> frozenset:
    by_mid = {}
    for b, c in R23:
        by_mid.setdefault(b, []).append(c)
    return frozenset((a, c) for a, b in R12 for c in by_mid.get(b, ()))


# -- composition ---------------------------------------------------------------

def approx_parallel_compose(S1: TransitionSystem, S2: TransitionSystem,
                            theta: float) -> TransitionSystem:
    """theta-approximate parallel composition; states are label pairs and the
    output of a pair is the output of its first component."""
    pairs = sorted(_close_pairs(S1, S2, theta))
    pair_set = set(pairs)
    init1, init2 = set(S1.initial_ids), set(S2.initial_ids)
    initial = [p for p in pairs if p[0] in init1 and p[1] in init2]
    inputs = [(u1, u2) for u1 in range(len(S1.inputs)) for u2 in range(len(S2.inputs))]
    trans = []
    for i, j in pairs:
        for a1, s1 in S1.enabled_ids(i).items():
            for a2, s2 in S2.enabled_ids(j).items():
                for i2 in s1:
                    for j2 in s2:
                        if (i2, j2) in pair_set:
                            trans.append(((i, j), (a1, a2), (i2, j2)))

    def lab(p):
        return (S1.states[p[0]], S2.states[p[1]])

    def lab_u(a):
        return (S1.inputs[a[0]], S2.inputs[a[1]])

    return TransitionSystem(
        [lab(p) for p in pairs], [lab(p) for p in initial], [lab_u(a) for a in inputs],
        [(lab(p), lab_u(a), lab(q)) for p, a, q in trans],
        [S1.outputs[p[0]] for p in pairs], metric=S1.metric,
        name=f"{S1.name}||{S2.name}")


# -- text graph format ---------------------------------------------------------

def _fmt_vec(y) -> str:
    a = np.asarray(y, dtype=float).ravel()
    return ",".join("nan" if np.isnan(v) else repr(float(v)) for v in a)


def write_text(S: TransitionSystem, stream, extra_lines: Iterable[str] = ()) -> None:
    """``state <id> output <v1,...>``, ``init <id>``, ``trans <src> <input> <dst>``.

    Ids are the dense integer ids; outputs are flattened row-major, with the
    tuple length recorded as ``len=<N>`` when it is not 1.
    """
    stream.write(f"# {S!r}\n")
    for i, y in enumerate(S.outputs):
        a = _as_tuple_array(y)
        suffix = f" len={a.shape[0]}" if a.shape[0] != 1 else ""
        stream.write(f"state {i} output {_fmt_vec(a)}{suffix}\n")
    for i in S.initial_ids:
        stream.write(f"init {i}\n")
    for i, d in enumerate(S._post):
        for a, succ in d.items():
            for j in succ:
                stream.write(f"trans {i} {a} {j}\n")
    for line in extra_lines:
        stream.write(line.rstrip("\n") + "\n")


def read_text(stream, metric: Callable = d_ext) -> tuple:
    """Parse the text graph format.  Returns the system and any unrecognised
    declaration lines (e.g. controller ``policy`` lines) for the caller."""
    outputs, initial, trans, extra = {}, [], [], []
    inputs = set()
    for raw in stream:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "state":
            sid = tok[1]
            if len(tok) < 4 or tok[2] != "output":
                raise ValueError(f"malformed state line: {raw!r}")
            vals = np.array([float(v) for v in tok[3].split(",")], dtype=float)
            length = 1
            for t in tok[4:]:
                if t.startswith("len="):
                    length = int(t[4:])
            outputs[sid] = vals.reshape(length, -1)
        elif kind == "init":
            initial.append(tok[1])
        elif kind == "trans":
            if len(tok) != 4:
                raise ValueError(f"malformed trans line: {raw!r}")
            trans.append((tok[1], tok[2], tok[3]))
            inputs.add(tok[2])
        else:
            extra.append(tok)
    states = sorted(outputs, key=_natural_key)
    S = TransitionSystem(states, initial, sorted(inputs, key=_natural_key), trans,
                         outputs, metric=metric)
    return S, extra


def _natural_key(s: str):
    return (0, int(s)) if s.lstrip("-").isdigit() else (1, s)
