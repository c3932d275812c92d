import pytest

from ncsym.abstraction import build_abstraction
from ncsym.cli import get_controller, load_config

from helpers import CONFIGS


@pytest.fixture(scope="session")
def desk_a():
    """(config, controller, context, extended spec) for the pendulum loop."""
    cfg = load_config(CONFIGS / "sigma_a.cfg")
    ctrl, ctx, Qe, _ = get_controller(cfg, None)
    return cfg, ctrl, ctx, Qe


@pytest.fixture(scope="session")
def desk_b():
    cfg = load_config(CONFIGS / "sigma_b.cfg")
    ctrl, ctx, Qe, _ = get_controller(cfg, None)
    return cfg, ctrl, ctx, Qe


@pytest.fixture(scope="session")
def desk_a_model(desk_a):
    cfg = desk_a[0]
    return build_abstraction(cfg.plant, cfg.cert, cfg.params, allow_uncertified=True)


@pytest.fixture(scope="session")
def scalar():
    cfg = load_config(CONFIGS / "scalar.cfg")
    ctrl, ctx, Qe, _ = get_controller(cfg, None)
    return cfg, ctrl, ctx, Qe


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
