import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from ncsym.boxes import Box
from ncsym.dynamics import (ControlSignal, IntegratorConfig, LyapunovCertificate, PlantModel,
                            PowerLaw, gamma_from_diameter, grid_search_certificate,
                            identity_certificate, integrate_trajectory, pendulum_a, plant_b,
                            quadratic_bounds, scalar_decay, validate_certificate)
from ncsym.errors import IntegrationDiverged, SignalExhausted


def test_scalar_decay_closed_form():
    x = integrate_trajectory(scalar_decay(), [1.0], ControlSignal.constant([0.0], 1.0), 1.0)
    assert x[0] == pytest.approx(math.exp(-1.0), abs=1e-9)
    assert x[0] == pytest.approx(0.367879, abs=1e-6)


def test_zero_time_is_identity():
    x0 = np.array([0.3, -0.2])
    x = integrate_trajectory(pendulum_a(), x0, ControlSignal.constant([1.0], 0.2), 0.0)
    assert np.array_equal(x, x0)


def test_signal_exhausted():
    with pytest.raises(SignalExhausted):
        integrate_trajectory(pendulum_a(), [0, 0], ControlSignal.constant([0.0], 0.2), 0.5)


def test_divergence_detected():
    blowup = PlantModel("blowup", 1, 1, lambda x, u: x ** 3 + u,
                        Box.closed((-1.0,), (1.0,)), Box.closed((-1.0,), (1.0,)))
    with pytest.raises(IntegrationDiverged), np.errstate(over="ignore", invalid="ignore"):
        integrate_trajectory(blowup, [10.0], ControlSignal.constant([0.0], 5.0), 5.0,
                             IntegratorConfig(substeps_per_tau=4))


@pytest.mark.parametrize("make", [pendulum_a, plant_b])
def test_piecewise_signal_matches_reference_solver(make):
    plant = make()
    rng = np.random.default_rng(3)
    for _ in range(5):
        x0 = plant.state_box.sample(rng, 1)[0]
        vals = rng.uniform(-5, 5, size=4)
        sig = ControlSignal(tuple((0.2, [v]) for v in vals))
        got = integrate_trajectory(plant, x0, sig, 0.8, IntegratorConfig(64, 0.2))
        x = x0
        for v in vals:
            sol = solve_ivp(lambda t, y: plant.f(y, [v]), (0, 0.2), x, rtol=1e-11, atol=1e-12)
            x = sol.y[:, -1]
        np.testing.assert_allclose(got, x, atol=1e-8)


def test_signal_shift():
    sig = ControlSignal(((0.2, [1.0]), (0.3, [2.0])))
    rest = sig.shifted(0.3)
    assert rest.duration == pytest.approx(0.2)
    assert rest.segments[0][1][0] == 2.0


def test_identity_certificate_fails_for_pendulum():
    rep = validate_certificate(pendulum_a(), identity_certificate(pendulum_a(), 0.75), 100_000, 0)
    assert not rep.passed
    assert rep.violation is not None
    assert rep.worst_margin > 1.0


def test_identity_certificate_holds_for_plant_b():
    rep = validate_certificate(plant_b(), identity_certificate(plant_b(), 0.2), 100_000, 0)
    assert rep.passed and rep.bounds_ok


def test_grid_search_finds_weighted_certificate():
    res = grid_search_certificate(pendulum_a(), seed=0)
    cert = res.certificate
    assert cert.lam > 0
    assert abs(cert.P[0, 1]) > 0
    rep = validate_certificate(pendulum_a(), cert, 100_000, seed=7)
    assert rep.passed and rep.bounds_ok


def test_gamma_values():
    ca = identity_certificate(pendulum_a(), 0.75)
    cb = identity_certificate(plant_b(), 0.2)
    assert gamma_from_diameter(pendulum_a(), ca) == pytest.approx(2 * math.pi / 3, abs=1e-12)
    assert gamma_from_diameter(plant_b(), cb) == pytest.approx(2.0, abs=1e-12)


def test_gamma_is_max_over_box_differences():
    plant = pendulum_a()
    P = np.array([[1.0, 0.55], [0.55, 0.4]])
    lo, hi = quadratic_bounds(P)
    cert = LyapunovCertificate(P, 1.0, lo, hi)
    # differences y - x fill [-w, w]; scan a grid that includes its corners
    w = plant.state_box.widths
    d = np.stack(np.meshgrid(*(np.linspace(-wi, wi, 41) for wi in w)), -1).reshape(-1, 2)
    scanned = np.max(np.abs(d @ P), axis=1).max()
    assert gamma_from_diameter(plant, cert) == pytest.approx(scanned, rel=1e-12)


def test_certificate_rejects_bad_matrices():
    with pytest.raises(ValueError):
        LyapunovCertificate(np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0, PowerLaw(0.1), PowerLaw(1.0))
    with pytest.raises(ValueError):
        LyapunovCertificate(np.eye(2), 0.0, PowerLaw(0.1), PowerLaw(1.0))


@given(st.floats(0.01, 100), st.floats(1, 4), st.floats(0, 1e3))
def test_power_law_inverse(c, p, r):
    f = PowerLaw(c, p)
    assert float(f.inverse(f(r))) == pytest.approx(r, rel=1e-9, abs=1e-9)


@given(st.floats(-0.9, 0.9), st.floats(1.0, 5.0),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_quadratic_bounds_sandwich(b, c, e):
    P = np.array([[1.0, b], [b, c]])
    lo, hi = quadratic_bounds(P)
    e = np.asarray(e)
    r = np.max(np.abs(e))
    V = 0.5 * e @ P @ e
    assert lo(r) <= V + 1e-9
    assert V <= hi(r) + 1e-9
