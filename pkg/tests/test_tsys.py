import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncsym.tsys import (TransitionSystem, approx_parallel_compose, check_alt_bisim,
                        check_alt_sim, check_approx_bisim, check_approx_sim, compose_relations,
                        d_ext, is_approx_sim_relation, is_deterministic, is_nonblocking,
                        is_subsystem, read_text, write_text)

from helpers import exhaustive_sim_exists, oracle_greatest, random_system

CHECKERS = {
    "simulation": check_approx_sim,
    "bisimulation": check_approx_bisim,
    "alternating-simulation": check_alt_sim,
    "alternating-bisimulation": check_alt_bisim,
}


def _pairs(rng, n):
    for _ in range(n):
        yield (random_system(rng, name="a"), random_system(rng, name="b"),
               float(rng.choice([0.0, 0.5, 1.0, 2.0])))


def _agree(S1, S2, eps, kind):
    got = CHECKERS[kind](S1, S2, eps)
    want = oracle_greatest(S1, S2, eps, kind)
    if want is None:
        return got is None
    return got is not None and got.pairs == want


@pytest.mark.parametrize("kind", ["simulation", "alternating-bisimulation"])
def test_checkers_match_oracle_on_1000_systems(kind):
    rng = np.random.default_rng(11 if kind == "simulation" else 12)
    bad = [i for i, (S1, S2, eps) in enumerate(_pairs(rng, 1000)) if not _agree(S1, S2, eps, kind)]
    assert bad == []


@pytest.mark.parametrize("kind", ["bisimulation", "alternating-simulation"])
def test_other_checkers_match_oracle(kind):
    rng = np.random.default_rng(13)
    assert all(_agree(S1, S2, eps, kind) for S1, S2, eps in _pairs(rng, 300))


def test_simulation_matches_relation_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(150):
        S1 = random_system(rng, max_states=3, max_inputs=2, name="a", values=3)
        S2 = random_system(rng, max_states=3, max_inputs=2, name="b", values=3)
        assert (check_approx_sim(S1, S2, 1.0) is not None) == exhaustive_sim_exists(S1, S2, 1.0)


def test_returned_relation_is_a_simulation():
    rng = np.random.default_rng(21)
    for S1, S2, eps in _pairs(rng, 200):
        R = check_approx_sim(S1, S2, eps)
        if R is not None:
            assert is_approx_sim_relation(S1, S2, R.pairs, eps)


def test_monotone_in_epsilon():
    rng = np.random.default_rng(31)
    for S1, S2, eps in _pairs(rng, 200):
        if check_approx_sim(S1, S2, eps) is not None:
            for bigger in (eps + 0.5, eps + 3.0):
                assert check_approx_sim(S1, S2, bigger) is not None


def test_relations_compose_with_summed_precision():
    rng = np.random.default_rng(41)
    checked = 0
    for _ in range(200):
        S1, S2, S3 = (random_system(rng, name=n) for n in "abc")
        e1, e2 = rng.choice([0.0, 1.0, 2.0], size=2)
        R12, R23 = check_approx_sim(S1, S2, e1), check_approx_sim(S2, S3, e2)
        if R12 is None or R23 is None:
            continue
        checked += 1
        assert is_approx_sim_relation(S1, S3, compose_relations(R12.pairs, R23.pairs), e1 + e2)
    assert checked > 10


def test_composition_is_simulated_by_second_factor():
    rng = np.random.default_rng(51)
    for _ in range(200):
        S1, S2 = random_system(rng, name="a"), random_system(rng, name="b")
        theta = float(rng.choice([0.0, 1.0, 2.0]))
        C = approx_parallel_compose(S1, S2, theta)
        assert check_approx_sim(C, S2, theta) is not None


def test_composition_states_and_outputs():
    S1 = TransitionSystem(["p", "q"], ["p"], ["u"], [("p", "u", "q")], [0.0, 1.0])
    S2 = TransitionSystem(["r", "s"], ["r"], ["v"], [("r", "v", "s"), ("r", "v", "r")], [0.2, 5.0])
    C = approx_parallel_compose(S1, S2, 0.5)
    assert set(C.states) == {("p", "r")}
    assert C.output(("p", "r")) == 0.0
    assert list(C.transitions()) == []


def test_alternating_needs_a_matching_input():
    # S1 offers input a leading to 1, S2 can only answer with an input that may land on 9
    S1 = TransitionSystem([0, 1], [0], ["a"], [(0, "a", 1)], [0.0, 1.0])
    S2 = TransitionSystem([0, 1, 9], [0], ["b"], [(0, "b", 1), (0, "b", 9)], [0.0, 1.0, 9.0])
    assert check_approx_sim(S1, S2, 0.0) is not None
    assert check_alt_sim(S1, S2, 0.0) is None
    assert check_alt_sim(S1, S2, 8.0) is not None


def test_structural_predicates():
    S = TransitionSystem([0, 1], [0], ["a", "b"], [(0, "a", 1), (1, "a", 0)], [0.0, 1.0])
    assert is_nonblocking(S)
    assert is_deterministic(S)
    T = TransitionSystem([0, 1, 2], [0], ["a", "b"], [(0, "a", 1), (1, "a", 0), (0, "a", 2)],
                         [0.0, 1.0, 2.0])
    assert not is_deterministic(T)
    assert not is_nonblocking(T)
    assert is_subsystem(S, T)
    assert not is_subsystem(T, S)


def test_unknown_symbols_rejected():
    with pytest.raises(ValueError):
        TransitionSystem([0], [1], [], [], [0.0])
    with pytest.raises(ValueError):
        TransitionSystem([0], [0], ["a"], [(0, "b", 0)], [0.0])


def test_text_round_trip():
    rng = np.random.default_rng(61)
    for _ in range(20):
        S = random_system(rng)
        buf = io.StringIO()
        write_text(S, buf)
        buf.seek(0)
        T = read_text(buf)[0]
        # the text format names states and inputs by their ids
        want = {(str(S.state_id[a]), str(S.input_id[u]), str(S.state_id[b]))
                for a, u, b in S.transitions()}
        assert set(T.transitions()) == want
        assert set(T.initial) == {str(i) for i in S.initial_ids}
        for x in T.states:
            assert float(T.output(x).ravel()[0]) == S.outputs[int(x)]


finite = st.floats(-10, 10, allow_nan=False)
vec = st.lists(st.one_of(finite, st.just(float("nan"))), min_size=2, max_size=2)


@given(vec, vec, vec)
def test_d_ext_triangle_and_symmetry(a, b, c):
    assert d_ext(a, b) == d_ext(b, a)
    assert d_ext(a, a) == 0.0
    # don't-care entries may break the triangle inequality, so only check
    # it when the middle point is fully specified
    if not np.isnan(b).any():
        assert d_ext(a, c) <= d_ext(a, b) + d_ext(b, c) + 1e-12


@given(st.lists(finite, min_size=1, max_size=4), st.lists(finite, min_size=1, max_size=4))
@settings(max_examples=50)
def test_d_ext_mismatched_lengths_are_infinite(a, b):
    if len(a) != len(b):
        assert d_ext(a, b) == float("inf")
