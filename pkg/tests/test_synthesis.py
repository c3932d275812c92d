import io

import numpy as np
import pytest

from ncsym.abstraction import build_abstraction
from ncsym.dynamics import scalar_decay
from ncsym.errors import CapExceeded, InvalidParameter
from ncsym.ncs_timing import NcsParameters
from ncsym.specs import extend_spec, trajectory_to_spec
from ncsym.synthesis import (Controller, SynthesisConfig, greatest_fixpoint, synthesize,
                             verify_closed_loop)
from ncsym.tsys import d_ext, read_text

from helpers import FULL_NETWORK, brute_force_maximal, random_composed_graph


def _tiny(mu_x=0.5, mu_u=1.0, points=((1.0,), (0.5,), (0.0,)), eps=0.8, theta=0.3):
    p = NcsParameters(**dict(FULL_NETWORK, mu_x=mu_x, mu_u=mu_u, delta_delay_min=0.05,
                             delta_delay_max=0.12))
    m = build_abstraction(scalar_decay(1.0), None, p, allow_uncertified=True)
    Qe = extend_spec(trajectory_to_spec(points), m.n_min, m.n_max)
    return m, Qe, SynthesisConfig(eps, theta, mu_x, "full")


def _naive_fixpoint(G):
    """Drop one state at a time until every remaining state keeps an input."""
    slots = {}
    for si, ci in enumerate(G.slot_cand):
        slots.setdefault(int(ci), []).append(si)
    edges = {}
    for si, d in zip(G.edge_slot, G.edge_dst):
        edges.setdefault(int(si), set()).add(int(d))
    cands = {}
    for ci, c in enumerate(G.cand_c):
        cands.setdefault(int(c), []).append(ci)
    alive = set(range(len(G.keys)))
    while True:
        dead = next((c for c in sorted(alive) if not any(
            all(edges.get(si, set()) & alive for si in slots[ci]) for ci in cands.get(c, []))),
            None)
        if dead is None:
            return alive
        alive.discard(dead)


def test_fixpoint_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(500):
        G = random_composed_graph(rng)
        assert len(G.edge_slot) <= 30
        alive, cand_ok, _, _ = greatest_fixpoint(G)
        best, want_ok = brute_force_maximal(G)
        assert set(np.flatnonzero(alive).tolist()) == best
        assert cand_ok.tolist() == want_ok


@pytest.mark.parametrize("mu_u", [1.0, 0.5])
def test_fixpoint_matches_naive_removal_on_real_products(mu_u):
    m, Qe, cfg = _tiny(mu_u=mu_u)
    G = synthesize(m, Qe, cfg).fixpoint[0]
    alive = greatest_fixpoint(G)[0]
    assert set(np.flatnonzero(alive).tolist()) == _naive_fixpoint(G)


def test_full_and_on_the_fly_agree(scalar):
    cfg, ctrl, ctx, Qe = scalar
    model = build_abstraction(cfg.plant, cfg.cert, cfg.params, allow_uncertified=True)
    full = synthesize(model, Qe, cfg.synthesis_config())
    assert full.realizable and ctrl.realizable
    for name in ("akeys", "qstates", "initial", "policy"):
        np.testing.assert_array_equal(getattr(full, name), getattr(ctrl, name))
    edges = lambda c: set(zip(c.trans_c.tolist(), c.trans_k.tolist(), c.trans_j.tolist(),
                              c.trans_d.tolist()))
    assert edges(full) == edges(ctrl)


def test_controller_is_robust_and_nonblocking(scalar):
    cfg, ctrl, ctx, Qe = scalar
    rep = verify_closed_loop(ctrl, None, Qe, cfg.synthesis_config())
    assert rep.ok and rep.route == "pairing"
    assert all(len(ctrl.enabled(c)) for c in range(len(ctrl)))


def test_controller_outputs_track_spec(scalar):
    cfg, ctrl, ctx, Qe = scalar
    mu = cfg.params.mu_x
    for c in range(len(ctrl)):
        assert d_ext(ctrl.output(c), Qe.outputs[int(ctrl.qstates[c])]) <= mu + 1e-12


def test_literal_verification_route():
    m, Qe, cfg = _tiny()
    ctrl = synthesize(m, Qe, cfg)
    assert ctrl.realizable
    rep = verify_closed_loop(ctrl, m, Qe, cfg)
    assert rep.route == "literal"
    assert rep.ok, rep.problems


def test_unrealizable_spec_reports_initial_pairs():
    m, Qe, cfg = _tiny(points=((1.0,), (-1.0,)), eps=0.6, theta=0.1)
    ctrl = synthesize(m, Qe, cfg)
    assert not ctrl.realizable
    assert ctrl.diagnostics["initial_pairs"]
    assert len(ctrl.diagnostics["death_pass"]) == len(ctrl.diagnostics["initial_pairs"])
    assert verify_closed_loop(ctrl, m, Qe, cfg).vacuous


def test_composed_cap():
    m, Qe, _ = _tiny()
    with pytest.raises(CapExceeded):
        synthesize(m, Qe, SynthesisConfig(0.8, 0.3, 0.5, "full", cap=10))


def test_spec_hold_range_must_match():
    m, _, cfg = _tiny()
    with pytest.raises(InvalidParameter):
        synthesize(m, extend_spec(trajectory_to_spec([[0.0]]), 2, 4), cfg)


def test_bad_mode():
    with pytest.raises(InvalidParameter):
        SynthesisConfig(0.5, 0.1, 0.1, "greedy")


def test_controller_save_load_and_text(tmp_path, scalar):
    cfg, ctrl, ctx, Qe = scalar
    ctrl.save(tmp_path / "c.ncsc")
    back = Controller.load(tmp_path / "c.ncsc", ctrl.oracle, Qe)
    for name in ("akeys", "qstates", "initial", "trans_c", "trans_k", "trans_j", "trans_d",
                 "policy"):
        np.testing.assert_array_equal(getattr(ctrl, name), getattr(back, name))
    assert back.provenance == ctrl.provenance
    buf = io.StringIO()
    ctrl.write_text(buf)
    buf.seek(0)
    S, extra = read_text(buf)
    assert len(S) == len(ctrl)
    assert sum(1 for t in extra if t[0] == "policy") == len(ctrl)


def test_desk_controller_sizes(desk_a, desk_b):
    for (cfg, ctrl, ctx, Qe), want in ((desk_a, (618, 8010)), (desk_b, (1966, 60297))):
        assert ctrl.realizable
        assert (len(ctrl), ctrl.transition_count) == want
        assert verify_closed_loop(ctrl, None, Qe, cfg.synthesis_config()).ok
