"""Maximal robust non-blocking controllers over the product of a symbolic model
and an extended specification.

Composed states are pairs ``(a, q)`` of an abstract state key and an extended
spec state whose outputs are within ``mu_x``.  For every composed state and
input ``k`` the abstract successors split into *slots*, one per hold length.
An input survives at a composed state only if every slot has at least one
surviving matched successor, and a composed state survives only if some input
survives.  The greatest fixpoint of these two rules is the controller.

Abstract keys: an initial lattice point ``m`` has key ``m``; a held state has
key ``M + encode_keys(...)`` with ``M`` the lattice size, so sorting keys puts
initial points first, as in :class:`ncsym.abstraction.SymbolicModel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import time
from typing import Optional

import numpy as np

from .abstraction import (AbstractionContext, SymbolicModel, check_precision,
                          decode_keys, encode_keys)
from .boxes import Box
from .cache import read_container, write_container
from .dynamics import LyapunovCertificate
from .errors import CapExceeded, InvalidParameter
from .specs import DUMMY_INPUT, ExtendedSpec
from .tsys import TransitionSystem, _fmt_vec

CONTROLLER_MAGIC = b"NCSC"
DEFAULT_COMPOSED_CAP = 20_000_000


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float
    theta: float
    mu_x: float
    mode: str = "on-the-fly"
    cap: int = DEFAULT_COMPOSED_CAP

    def __post_init__(self):
        if self.mode not in ("full", "on-the-fly"):
            raise InvalidParameter(f"unknown synthesis mode {self.mode!r}")
        for name in ("epsilon", "theta", "mu_x"):
            if not getattr(self, name) >= 0:
                raise InvalidParameter(f"{name} must be nonnegative")


@dataclass
class TheoremReport:
    composition_ok: bool
    composition_margin: float
    precision_ok: bool
    precision_bound: float
    precision_margin: float

    @property
    def ok(self) -> bool:
        return self.composition_ok and self.precision_ok

    def lines(self) -> list:
        return [
            f"mu_x + theta <= epsilon: {'ok' if self.composition_ok else 'FAIL'} "
            f"(margin {self.composition_margin:.4g})",
            f"mu_x <= bound at theta ({self.precision_bound:.4g}): "
            f"{'ok' if self.precision_ok else 'FAIL'} (margin {self.precision_margin:.4g})",
        ]


def check_theorem_conditions(cfg: SynthesisConfig, cert: LyapunovCertificate, tau: float,
                             state_box: Box) -> TheoremReport:
    m1 = cfg.epsilon - (cfg.mu_x + cfg.theta)
    chk = check_precision(cert, tau, cfg.mu_x, cfg.theta, state_box)
    return TheoremReport(m1 >= -1e-12, m1, chk.approved, chk.binding_bound, chk.margin)


# -- abstract side in key space ---------------------------------------------------

class AbstractOracle:
    """Successors and expansions of abstract states addressed by key."""

    def __init__(self, ctx: AbstractionContext):
        self.ctx = ctx
        self.M = ctx.lattice.size
        self.K = ctx.K
        self.nN = ctx.n_max - ctx.n_min + 1

    def decode(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        ini = keys < self.M
        z1, um, up, Ni = decode_keys(np.where(ini, 0, keys - self.M), self.K, self.nN)
        z1 = np.where(ini, keys, z1)
        um = np.where(ini, -1, um)
        up = np.where(ini, -1, up)
        N = np.where(ini, 0, Ni + self.ctx.n_min)
        return z1, um, up, N

    def expand(self, keys) -> np.ndarray:
        """Sample indices ``(len(keys), n_max)``, -1 padded."""
        z1, um, up, N = self.decode(keys)
        return self.ctx.expand_ids(z1, um, up, np.maximum(N, 1))

    def successors(self, keys) -> np.ndarray:
        """``(F, K, nN)`` successor keys, -1 where the candidate leaves X."""
        keys = np.asarray(keys, dtype=np.int64)
        F, K, nN = len(keys), self.K, self.nN
        z1, um, up, N = self.decode(keys)
        exp = self.ctx.expand_ids(z1, um, up, np.maximum(N, 1))
        last = exp[np.arange(F), np.maximum(N, 1) - 1]
        out = np.full((F, K, nN), -1, dtype=np.int64)
        ks = np.arange(K)
        Ns = np.arange(self.ctx.n_min, self.ctx.n_max + 1)

        held = np.flatnonzero(N > 0)
        if len(held):
            sz, _ = self.ctx.group_successors(last[held], up[held])
            p = up[held][:, None, None]
            um2 = np.where(Ns[None, None, :] >= 3, p, -1)
            enc = encode_keys(np.maximum(sz, 0), um2, ks[None, :, None], np.arange(nN)[None, None, :], K, nN)
            out[held] = np.where(sz >= 0, enc + self.M, -1)
        ini = np.flatnonzero(N == 0)
        if len(ini):
            L = np.repeat(last[ini], K)
            p = np.tile(ks, len(ini))
            sz, _ = self.ctx.group_successors(L, p)
            sz = sz.reshape(len(ini), K, K, nN)[:, ks, ks, :]
            um2 = np.where(Ns[None, None, :] >= 3, ks[None, :, None], -1)
            enc = encode_keys(np.maximum(sz, 0), um2, ks[None, :, None], np.arange(nN)[None, None, :], K, nN)
            out[ini] = np.where(sz >= 0, enc + self.M, -1)
        return out

    def model_keys(self, model: SymbolicModel) -> np.ndarray:
        held = model.N > 0
        enc = encode_keys(model.z1, model.um, model.up, np.maximum(model.N - self.ctx.n_min, 0),
                          self.K, self.nN) + self.M
        return np.where(held, enc, model.z1)


class SpecTables:
    """Extended-spec data laid out for vectorised matching."""

    def __init__(self, spec: ExtendedSpec, n_max: int, dim: int):
        self.spec = spec
        Qn = len(spec)
        self.size = Qn
        pts = np.full((Qn, n_max, dim), np.nan)
        for i, y in enumerate(spec.outputs):
            pts[i, :len(y)] = y[:n_max]
        self.points = pts
        self.lengths = spec.lengths.copy()
        self.bare = np.array([s.bare for s in spec.states], dtype=bool)
        self.initial = np.array(spec.initial_ids, dtype=np.int64)
        # successors split by length, as CSR over (q, length index)
        nN = spec.n_max - spec.n_min + 1
        self.n_min, self.nN = spec.n_min, nN
        rows = [[] for _ in range(Qn * nN)]
        for q, succ in enumerate(spec.succ):
            for q2 in succ:
                rows[q * nN + int(self.lengths[q2]) - spec.n_min].append(q2)
        self.offsets = np.zeros(Qn * nN + 1, dtype=np.int64)
        self.offsets[1:] = np.cumsum([len(r) for r in rows])
        self.targets = np.array([q for r in rows for q in r], dtype=np.int64)


def _distance(coords: np.ndarray, spec_pts: np.ndarray) -> np.ndarray:
    """Max coordinate deviation; NaN (don't care or padding) counts as 0."""
    d = np.abs(coords - spec_pts)
    return np.max(np.where(np.isnan(d), 0.0, d), axis=(-1, -2))


class ComposedGraph:
    """The explored part of the product, as flat arrays.

    ``cand_c, cand_k``: (composed state, input) pairs whose every slot has at
    least one matched successor.  ``slot_cand, slot_j``: the slots of each
    candidate.  ``edge_slot, edge_dst``: matched successors per slot.
    """

    def __init__(self, keys, is_initial, cand_c, cand_k, slot_cand, slot_j, edge_slot, edge_dst,
                 explored_abstract: int):
        self.keys = keys
        self.is_initial = is_initial
        self.cand_c, self.cand_k = cand_c, cand_k
        self.slot_cand, self.slot_j = slot_cand, slot_j
        self.edge_slot, self.edge_dst = edge_slot, edge_dst
        self.explored_abstract = explored_abstract


class _Builder:
    def __init__(self, oracle: AbstractOracle, spec: SpecTables, mu_x: float, cap: int):
        self.oracle, self.spec, self.mu_x, self.cap = oracle, spec, mu_x, cap
        self.Q = spec.size
        self.lat = oracle.ctx.lattice

    def close_spec_states(self, akeys: np.ndarray) -> tuple:
        """All (abstract index, q) pairs with matching kind, length and distance."""
        z1, um, up, N = self.oracle.decode(akeys)
        coords = self._coords(akeys, N)
        out_a, out_q = [], []
        for q in range(self.Q):
            if self.spec.bare[q]:
                sel = np.flatnonzero(N == 0)
            else:
                sel = np.flatnonzero(N == self.spec.lengths[q])
            if not len(sel):
                continue
            d = _distance(coords[sel], self.spec.points[q][None])
            hit = sel[d <= self.mu_x]
            out_a.append(hit)
            out_q.append(np.full(len(hit), q, dtype=np.int64))
        if not out_a:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(out_a), np.concatenate(out_q)

    def _coords(self, akeys, N) -> np.ndarray:
        exp = self.oracle.expand(akeys)
        coords = self.lat.coords(np.maximum(exp, 0))
        valid = np.arange(exp.shape[1])[None, :] < np.maximum(N, 1)[:, None]
        return np.where(valid[..., None], coords, np.nan)

    def expand_frontier(self, a: np.ndarray, q: np.ndarray) -> tuple:
        """Composed successors of the pairs ``(a[i], q[i])``.

        Returns candidate (i, k) arrays, slots and edges (edges carry the
        successor's abstract key and spec state)."""
        succ = self.oracle.successors(a)                       # (F, K, nN)
        F, K, nN = succ.shape
        fi, ki, ji = np.nonzero(succ >= 0)
        sk = succ[fi, ki, ji]
        # expand each slot over the spec successors of matching length
        row = q[fi] * nN + ji
        lo, hi = self.spec.offsets[row], self.spec.offsets[row + 1]
        cnt = hi - lo
        slot_idx = np.repeat(np.arange(len(fi)), cnt)
        start = np.repeat(lo - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
        q2 = self.spec.targets[start + np.arange(cnt.sum())] if cnt.sum() else np.empty(0, np.int64)
        # distance check, evaluated once per distinct abstract successor
        uk, inv = np.unique(sk, return_inverse=True)
        _, _, _, uN = self.oracle.decode(uk)
        ucoords = self._coords(uk, uN)
        d = _distance(ucoords[inv[slot_idx]], self.spec.points[q2])
        close = d <= self.mu_x
        slot_idx, q2 = slot_idx[close], q2[close]
        slot_has = np.bincount(slot_idx, minlength=len(fi)) > 0
        # an input is a candidate iff all its slots have a match
        fk = fi * K + ki
        # every hold length must stay inside X
        bad = (succ < 0).any(axis=2).ravel()
        bad[fk[~slot_has]] = True
        has_slot = np.zeros(F * K, dtype=bool)
        has_slot[fk] = True
        cand = np.flatnonzero(has_slot & ~bad)
        slot_keep = np.isin(fk, cand)
        keep_idx = np.flatnonzero(slot_keep)
        remap = np.full(len(fi), -1, dtype=np.int64)
        remap[keep_idx] = np.arange(len(keep_idx))
        cand_pos = np.searchsorted(cand, fk[keep_idx])
        emask = slot_keep[slot_idx]
        return (cand // K, cand % K, cand_pos, ji[keep_idx],
                remap[slot_idx[emask]], sk[slot_idx[emask]], q2[emask], uk)

    def build(self, start_a: np.ndarray, start_q: np.ndarray, start_initial: np.ndarray,
              explore: bool) -> ComposedGraph:
        Q = self.Q
        keys = np.unique(start_a * Q + start_q)
        init_keys = np.unique((start_a * Q + start_q)[start_initial])
        seen = keys
        frontier = keys
        parts = []
        abstract_seen = [np.unique(start_a)]
        while len(frontier):
            fa, fq = frontier // Q, frontier % Q
            cc, ck, cpos, sj, eslot, ea, eq, uk = self.expand_frontier(fa, fq)
            abstract_seen.append(uk)
            ekeys = ea * Q + eq
            parts.append((frontier[cc], ck, cpos, sj, eslot, ekeys))
            if explore:
                new = np.setdiff1d(np.unique(ekeys), seen)
                seen = np.union1d(seen, new)
                frontier = new
            else:
                frontier = np.empty(0, np.int64)
            if len(seen) > self.cap:
                raise CapExceeded(f"more than {self.cap} composed states explored")
        all_keys = seen
        if not explore:
            extra = np.concatenate([p[5] for p in parts]) if parts else np.empty(0, np.int64)
            all_keys = np.union1d(all_keys, extra)
        # stitch the per-frontier pieces into global arrays
        cand_c, cand_k, slot_cand, slot_j, edge_slot, edge_dst = [], [], [], [], [], []
        n_cand = n_slot = 0
        for ccomp, ck, cpos, sj, eslot, ekeys in parts:
            cand_c.append(np.searchsorted(all_keys, ccomp))
            cand_k.append(ck)
            slot_cand.append(cpos + n_cand)
            slot_j.append(sj)
            edge_slot.append(eslot + n_slot)
            edge_dst.append(np.searchsorted(all_keys, ekeys))
            n_cand += len(ck)
            n_slot += len(sj)

        def cat(xs):
            return np.concatenate(xs).astype(np.int64) if xs else np.empty(0, np.int64)

        is_init = np.isin(all_keys, init_keys)
        explored = len(np.unique(np.concatenate(abstract_seen)))
        return ComposedGraph(all_keys, is_init, cat(cand_c), cat(cand_k), cat(slot_cand),
                             cat(slot_j), cat(edge_slot), cat(edge_dst), explored)


# -- fixpoint --------------------------------------------------------------------

def greatest_fixpoint(G: ComposedGraph, alive: Optional[np.ndarray] = None) -> tuple:
    """Returns (alive states, surviving candidates, death pass per state)."""
    n = len(G.keys)
    alive = np.ones(n, dtype=bool) if alive is None else alive.copy()
    died = np.full(n, -1, dtype=np.int64)
    n_slot, n_cand = len(G.slot_cand), len(G.cand_c)
    passes = 0
    while True:
        passes += 1
        slot_ok = np.bincount(G.edge_slot, weights=alive[G.edge_dst], minlength=n_slot) > 0
        cand_bad = np.bincount(G.slot_cand, weights=~slot_ok, minlength=n_cand) > 0
        cand_ok = ~cand_bad & alive[G.cand_c]
        has = np.bincount(G.cand_c, weights=cand_ok, minlength=n) > 0
        new_alive = alive & has
        dead_now = alive & ~new_alive
        if not dead_now.any():
            return alive, cand_ok, died, passes
        died[dead_now] = passes
        alive = new_alive


# -- controller --------------------------------------------------------------------

@dataclass
class Controller:
    """Surviving composed states (sorted by abstract key, then spec state)
    with their robust inputs.  ``realizable`` is False when no initial pair
    survives; ``diagnostics`` then names the failed initial pairs."""

    realizable: bool
    akeys: np.ndarray
    qstates: np.ndarray
    initial: np.ndarray             # ids of composed initial states
    trans_c: np.ndarray             # transition source
    trans_k: np.ndarray             # input id
    trans_j: np.ndarray             # hold-length index
    trans_d: np.ndarray             # destination
    policy: np.ndarray              # lowest enabled input per state
    provenance: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    oracle: Optional[AbstractOracle] = None
    spec: Optional[ExtendedSpec] = None

    def __len__(self):
        return len(self.akeys)

    @property
    def transition_count(self) -> int:
        return len(self.trans_c)

    def enabled(self, c: int) -> np.ndarray:
        return np.unique(self.trans_k[self.trans_c == c])

    def _index(self):
        if not hasattr(self, "_order"):
            order = np.lexsort((self.trans_d, self.trans_j, self.trans_k, self.trans_c))
            self._order = order
            self._starts = np.searchsorted(self.trans_c[order], np.arange(len(self) + 1))
        return self._order, self._starts

    def successors(self, c: int, k: int, j: Optional[int] = None) -> np.ndarray:
        order, starts = self._index()
        sl = order[starts[c]:starts[c + 1]]
        sel = self.trans_k[sl] == k
        if j is not None:
            sel &= self.trans_j[sl] == j
        return self.trans_d[sl[sel]]

    def composed_id(self, akey: int, q: int) -> int:
        Q = self.provenance.get("spec_size", int(self.qstates.max(initial=0)) + 1)
        keys = self.akeys * Q + self.qstates
        i = int(np.searchsorted(keys, akey * Q + q))
        if i < len(keys) and keys[i] == akey * Q + q:
            return i
        return -1

    def output(self, c: int) -> np.ndarray:
        exp = self.oracle.expand([self.akeys[c]])[0]
        _, _, _, N = self.oracle.decode([self.akeys[c]])
        return self.oracle.ctx.lattice.coords(exp[: max(int(N[0]), 1)])

    def as_transition_system(self) -> TransitionSystem:
        trans = {(int(c), (int(k), DUMMY_INPUT), int(d)) for c, k, d in
                 zip(self.trans_c, self.trans_k, self.trans_d)}
        inputs = sorted({t[1] for t in trans})
        return TransitionSystem(range(len(self)), self.initial.tolist(), inputs, sorted(trans),
                                [self.output(c) for c in range(len(self))], name="C")

    def write_text(self, stream) -> None:
        stream.write(f"# controller: {len(self)} states, {self.transition_count} transitions,"
                     f" realizable={self.realizable}\n")
        for c in range(len(self)):
            y = self.output(c)
            suffix = f" len={len(y)}" if len(y) != 1 else ""
            stream.write(f"state {c} output {_fmt_vec(y)}{suffix}\n")
        for c in self.initial:
            stream.write(f"init {c}\n")
        seen = set()
        for c, k, d in zip(self.trans_c, self.trans_k, self.trans_d):
            if (c, k, d) not in seen:
                seen.add((c, k, d))
                stream.write(f"trans {c} {k} {d}\n")
        for c, k in enumerate(self.policy):
            stream.write(f"policy {c} {k}\n")

    def save(self, path) -> None:
        arrays = {n: getattr(self, n) for n in ("akeys", "qstates", "initial", "trans_c", "trans_k",
                                                   "trans_j", "trans_d", "policy")}
        meta = {"realizable": self.realizable, "provenance": self.provenance,
                "stats": self.stats, "diagnostics": _jsonable(self.diagnostics)}
        write_container(path, CONTROLLER_MAGIC, meta, arrays)

    @classmethod
    def load(cls, path, oracle: Optional[AbstractOracle] = None,
             spec: Optional[ExtendedSpec] = None) -> "Controller":
        meta, arr = read_container(path, CONTROLLER_MAGIC)
        return cls(meta["realizable"], **arr, provenance=meta["provenance"], stats=meta["stats"],
                   diagnostics=meta["diagnostics"], oracle=oracle, spec=spec)


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _finish(G: ComposedGraph, oracle: AbstractOracle, spec: ExtendedSpec, cfg: SynthesisConfig,
            t0: float, mode: str) -> Controller:
    alive, cand_ok, died, passes = greatest_fixpoint(G)
    Q = len(spec)
    # surviving transitions: candidate ok, destination alive
    slot_ok_cand = cand_ok[G.slot_cand]
    e_ok = slot_ok_cand[G.edge_slot] & alive[G.edge_dst]
    e_slot = G.edge_slot[e_ok]
    tc = G.cand_c[G.slot_cand[e_slot]]
    tk = G.cand_k[G.slot_cand[e_slot]]
    tj = G.slot_j[e_slot]
    td = G.edge_dst[e_ok]
    # keep what is reachable from surviving initial states
    init = np.flatnonzero(G.is_initial & alive)
    reach = np.zeros(len(G.keys), dtype=bool)
    reach[init] = True
    frontier = init
    order = np.argsort(tc, kind="stable")
    starts = np.searchsorted(tc[order], np.arange(len(G.keys) + 1))
    while len(frontier):
        nxt = np.concatenate([td[order[starts[c]:starts[c + 1]]] for c in frontier]) \
            if len(frontier) < 64 else td[np.isin(tc, frontier)]
        nxt = np.unique(nxt)
        nxt = nxt[~reach[nxt]]
        reach[nxt] = True
        frontier = nxt
    keep = np.flatnonzero(reach)
    newid = np.full(len(G.keys), -1, dtype=np.int64)
    newid[keep] = np.arange(len(keep))
    tsel = reach[tc]
    tc, tk, tj, td = newid[tc[tsel]], tk[tsel], tj[tsel], newid[td[tsel]]
    policy = np.full(len(keep), -1, dtype=np.int64)
    if len(tc):
        o = np.lexsort((tk, tc))
        first = np.unique(tc[o], return_index=True)
        policy[first[0]] = tk[o][first[1]]
    keys = G.keys[keep]
    init_all = np.flatnonzero(G.is_initial)
    diagnostics = {}
    if not len(init):
        diagnostics = {
            "initial_pairs": [(int(k // Q), int(k % Q)) for k in G.keys[init_all]],
            "death_pass": [int(p) for p in died[init_all]],
            "reason": "no composed initial state" if not len(init_all) else
                      "every composed initial state was pruned",
        }
    ctrl = Controller(
        realizable=bool(len(init)), akeys=keys // Q, qstates=keys % Q,
        initial=newid[init], trans_c=tc, trans_k=tk, trans_j=tj, trans_d=td, policy=policy,
        provenance={"epsilon": cfg.epsilon, "theta": cfg.theta, "mu_x": cfg.mu_x,
                    "spec": spec.Q.name, "spec_size": Q, "n_min": spec.n_min, "n_max": spec.n_max,
                    "plant": oracle.ctx.plant.name, "mode": mode},
        stats={"composed_explored": int(len(G.keys)), "abstract_explored": int(G.explored_abstract),
               "candidates": int(len(G.cand_c)), "passes": int(passes),
               "states": int(len(keep)), "transitions": int(len(tc)),
               "seconds": round(time.perf_counter() - t0, 3)},
        diagnostics=diagnostics, oracle=oracle, spec=spec)
    ctrl.fixpoint = (G, alive, cand_ok, died)
    return ctrl


def _spec_tables(ctx: AbstractionContext, spec: ExtendedSpec) -> SpecTables:
    if (spec.n_min, spec.n_max) != (ctx.n_min, ctx.n_max):
        raise InvalidParameter(f"spec extended for N in [{spec.n_min};{spec.n_max}] but the model "
                               f"uses [{ctx.n_min};{ctx.n_max}]")
    if spec.Q.dim != ctx.plant.state_dim:
        raise InvalidParameter("spec and plant dimensions differ")
    return SpecTables(spec, ctx.n_max, ctx.plant.state_dim)


def synthesize(model: SymbolicModel, spec: ExtendedSpec, cfg: SynthesisConfig) -> Controller:
    """Fixpoint over the full product of ``model`` and ``spec``."""
    t0 = time.perf_counter()
    oracle = AbstractOracle(model.ctx)
    tables = _spec_tables(model.ctx, spec)
    b = _Builder(oracle, tables, cfg.mu_x, cfg.cap)
    akeys = oracle.model_keys(model)
    ai, q = b.close_spec_states(akeys)
    a = akeys[ai]
    init = (ai < model.n_initial) & np.isin(q, tables.initial) & tables.bare[q]
    G = b.build(a, q, init, explore=False)
    return _finish(G, oracle, spec, cfg, t0, "full")


def initial_pairs(b: _Builder, ctx: AbstractionContext) -> tuple:
    pts = ctx.initial_points()
    ai, q = b.close_spec_states(pts)
    sel = b.spec.bare[q]
    return pts[ai[sel]], q[sel]


def synthesize_on_the_fly(ctx: AbstractionContext, spec: ExtendedSpec,
                          cfg: SynthesisConfig) -> Controller:
    """Explore the product forward from the initial pairs and run the same
    fixpoint on what was explored."""
    t0 = time.perf_counter()
    oracle = AbstractOracle(ctx)
    tables = _spec_tables(ctx, spec)
    b = _Builder(oracle, tables, cfg.mu_x, cfg.cap)
    a, q = initial_pairs(b, ctx)
    G = b.build(a, q, np.ones(len(a), dtype=bool), explore=True)
    ctrl = _finish(G, oracle, spec, cfg, t0, "on-the-fly")
    ctrl.stats["step_rows"] = int(ctx.step.rows_computed)
    return ctrl


# -- verification ------------------------------------------------------------------

@dataclass
class VerificationReport:
    vacuous: bool
    nonblocking: bool
    robust: bool
    simulation: bool
    route: str
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.vacuous or (self.nonblocking and self.robust and self.simulation)


def verify_closed_loop(ctrl: Controller, model: Optional[SymbolicModel], spec: ExtendedSpec,
                       cfg: SynthesisConfig, literal_limit: int = 400) -> VerificationReport:
    """Re-check a controller independently of the fixpoint code.

    Small instances compose the model with the controller literally and run the
    generic simulation checker against the extended spec at ``epsilon``.
    Larger ones check that the pairing ``(a, q) -> q`` is a ``mu_x``
    simulation of the controller into the spec, which implies the same
    conclusion at ``theta + mu_x <= epsilon``."""
    if not ctrl.realizable:
        return VerificationReport(True, True, True, True, "vacuous", ["controller is empty"])
    problems = []
    oracle = ctrl.oracle
    n = len(ctrl)
    has_out = np.bincount(ctrl.trans_c, minlength=n) > 0
    nonblocking = bool(has_out.all())
    if not nonblocking:
        problems.append(f"blocking controller states: {np.flatnonzero(~has_out)[:10].tolist()}")

    # robustness: each chosen (c, k) covers every abstract successor
    robust = True
    pairs = np.unique(np.stack([ctrl.trans_c, ctrl.trans_k], axis=1), axis=0)
    succ = oracle.successors(ctrl.akeys[pairs[:, 0]])
    for row, (c, k) in enumerate(pairs):
        need = set(int(s) for s in succ[row, k] if s >= 0)
        got = set(int(ctrl.akeys[d]) for d in ctrl.successors(c, k))
        if need - got:
            robust = False
            problems.append(f"state {c} input {k}: uncovered abstract successors {sorted(need - got)[:3]}")
            if len(problems) > 20:
                break

    sim_ok = True
    Qts = spec.as_transition_system()
    if model is not None and n <= literal_limit and model.n_states <= literal_limit:
        from .tsys import approx_parallel_compose, check_approx_sim
        route = "literal"
        closed = approx_parallel_compose(model.to_transition_system(), ctrl.as_transition_system(),
                                         cfg.theta)
        if closed.initial_empty:
            sim_ok = False
            problems.append("closed loop has no initial state")
        elif check_approx_sim(closed, Qts, cfg.epsilon) is None:
            sim_ok = False
            problems.append(f"closed loop is not {cfg.epsilon}-simulated by the extended spec")
    else:
        route = "pairing"
        for c in range(n):
            d = oracle_distance(ctrl, c)
            if d > cfg.mu_x + 1e-12:
                sim_ok = False
                problems.append(f"state {c}: output distance {d:.4g} > mu_x")
                break
        src_q, dst_q = ctrl.qstates[ctrl.trans_c], ctrl.qstates[ctrl.trans_d]
        ok_edge = np.array([int(b) in spec.succ[int(a)] for a, b in zip(src_q, dst_q)], dtype=bool)
        if not ok_edge.all():
            sim_ok = False
            problems.append("controller transition without a matching spec transition")
        init_q = set(spec.initial_ids)
        if not all(int(ctrl.qstates[c]) in init_q for c in ctrl.initial):
            sim_ok = False
            problems.append("controller initial state paired with a non-initial spec state")
        if cfg.mu_x + cfg.theta > cfg.epsilon + 1e-12:
            sim_ok = False
            problems.append("mu_x + theta exceeds epsilon")
    return VerificationReport(False, nonblocking, robust, sim_ok, route, problems)


def oracle_distance(ctrl: Controller, c: int) -> float:
    from .tsys import d_ext
    return d_ext(ctrl.output(c), ctrl.spec.outputs[int(ctrl.qstates[c])])
