"""Random instances and brute-force oracles shared by the tests.

The oracles work from the plain definitions on label-level data (lists of
transitions, scalar outputs) and never call the checker internals.
"""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from ncsym.tsys import TransitionSystem

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FULL_NETWORK = dict(tau=0.2, B_max=1000, delta_ctrl_min=0.001, delta_ctrl_max=0.01,
                     delta_req_max=0.1)
FULL_A = dict(FULL_NETWORK, mu_x=2e-4, mu_u=0.0024, delta_delay_min=0.05, delta_delay_max=0.12)
FULL_B = dict(FULL_NETWORK, mu_x=2e-4, mu_u=2e-4, delta_delay_min=0.1, delta_delay_max=0.24)


def random_system(rng, max_states=6, max_inputs=3, density=0.3, name="S", values=4):
    n = int(rng.integers(1, max_states + 1))
    m = int(rng.integers(1, max_inputs + 1))
    states = [f"{name}{i}" for i in range(n)]
    inputs = [f"u{a}" for a in range(m)]
    trans = [(states[i], inputs[a], states[j]) for i in range(n) for a in range(m)
             for j in range(n) if rng.random() < density]
    k0 = int(rng.integers(1, n + 1))
    initial = list(rng.choice(states, size=k0, replace=False))
    outputs = [float(rng.integers(0, values)) for _ in range(n)]
    return TransitionSystem(states, initial, inputs, trans, outputs, name=name)


class _Plain:
    """Label-level view: post sets per (state, input) and scalar outputs."""

    def __init__(self, S: TransitionSystem):
        self.states = list(S.states)
        self.inputs = list(S.inputs)
        self.initial = set(S.initial)
        self.post = {(x, u): set() for x in self.states for u in self.inputs}
        for x, u, y in S.transitions():
            self.post[(x, u)].add(y)
        self.out = {x: float(np.asarray(S.output(x)).ravel()[0]) for x in self.states}

    def succ(self, x):
        return set().union(*(self.post[(x, u)] for u in self.inputs)) if self.inputs else set()


def _sim_cond(A, B, R, a, b):
    return all(any((a2, b2) in R for b2 in B.succ(b)) for a2 in A.succ(a))


def _alt_cond(A, B, R, a, b):
    return all(any(all(any((a2, b2) in R for a2 in A.post[(a, u1)]) for b2 in B.post[(b, u2)])
                   for u2 in B.inputs) for u1 in A.inputs)


def oracle_greatest(S1, S2, eps, kind):
    """Greatest relation by removing one offending pair at a time."""
    A, B = _Plain(S1), _Plain(S2)
    R = {(a, b) for a in A.states for b in B.states if abs(A.out[a] - B.out[b]) <= eps}

    def bad(R, p):
        a, b = p
        inv = {(y, x) for x, y in R}
        if kind == "simulation":
            return not _sim_cond(A, B, R, a, b)
        if kind == "bisimulation":
            return not (_sim_cond(A, B, R, a, b) and _sim_cond(B, A, inv, b, a))
        if kind == "alternating-simulation":
            return not _alt_cond(A, B, R, a, b)
        return not (_alt_cond(A, B, R, a, b) and _alt_cond(B, A, inv, b, a))

    changed = True
    while changed:
        changed = False
        for p in sorted(R):
            if bad(R, p):
                R.discard(p)
                changed = True
                break
    covers = all(any((a, b) in R for b in B.initial) for a in A.initial)
    if kind in ("bisimulation", "alternating-bisimulation"):
        covers = covers and all(any((a, b) in R for a in A.initial) for b in B.initial)
    return (frozenset(R) if covers else None)


def exhaustive_sim_exists(S1, S2, eps):
    """Try every relation (tiny systems only)."""
    A, B = _Plain(S1), _Plain(S2)
    pairs = [(a, b) for a in A.states for b in B.states if abs(A.out[a] - B.out[b]) <= eps]
    for r in range(len(pairs) + 1):
        for sub in itertools.combinations(pairs, r):
            R = set(sub)
            if not all(any((a, b) in R for b in B.initial) for a in A.initial):
                continue
            if all(_sim_cond(A, B, R, a, b) for a, b in R):
                return True
    return False


def random_composed_graph(rng, max_states=7, max_edges=30):
    """Small random game graph in the layout used by the fixpoint."""
    from ncsym.synthesis import ComposedGraph
    n = int(rng.integers(1, max_states + 1))
    cand_c, cand_k, slot_cand, slot_j, edge_slot, edge_dst = [], [], [], [], [], []
    for c in range(n):
        for k in range(int(rng.integers(0, 3))):
            ci = len(cand_c)
            cand_c.append(c)
            cand_k.append(k)
            for j in range(int(rng.integers(1, 3))):
                si = len(slot_cand)
                slot_cand.append(ci)
                slot_j.append(j)
                for d in rng.choice(n, size=int(rng.integers(0, 3)), replace=True):
                    if len(edge_slot) < max_edges:
                        edge_slot.append(si)
                        edge_dst.append(int(d))
    is_init = rng.random(n) < 0.4
    arr = lambda v: np.asarray(v, dtype=np.int64)
    return ComposedGraph(np.arange(n), is_init, arr(cand_c), arr(cand_k), arr(slot_cand),
                         arr(slot_j), arr(edge_slot), arr(edge_dst), 0)


def brute_force_maximal(G):
    """Largest state set in which every state keeps an input all of whose
    hold-length slots reach the set."""
    n = len(G.keys)
    cands = {}
    for ci, c in enumerate(G.cand_c):
        cands.setdefault(int(c), []).append(ci)
    slots = {}
    for si, ci in enumerate(G.slot_cand):
        slots.setdefault(int(ci), []).append(si)
    edges = {}
    for si, d in zip(G.edge_slot, G.edge_dst):
        edges.setdefault(int(si), set()).add(int(d))

    def ok_cand(ci, S):
        return all(edges.get(si, set()) & S for si in slots.get(ci, []))

    best = set()
    for mask in range(1 << n):
        S = {i for i in range(n) if mask >> i & 1}
        if all(any(ok_cand(ci, S) for ci in cands.get(c, [])) for c in S):
            if len(S) > len(best):
                best = S
    cand_ok = [c in best and ok_cand(ci, best) for ci, c in enumerate(G.cand_c)]
    return best, cand_ok


# criterion number -> (passed, detail); printed at the end of the session
ACCEPTANCE = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    return ok
