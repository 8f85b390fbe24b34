"""Phase-feedback controller tests: fixed point, convergence, calibration."""

import math

import pytest
from hypothesis import given, strategies as st

from granugait.control import (
    ControllerParams, ControllerState, PhaseController, calibrate_tau0,
    fixed_point, update_phase,
)
from granugait.errors import CalibrationError, ControllerStateError

PARAMS = ControllerParams(tau0=18.0)


def test_defaults():
    p = ControllerParams(tau0=0.0)
    assert p.b1 == pytest.approx(-0.004)
    assert p.k == pytest.approx(0.005)
    assert p.phi0 == pytest.approx(-math.pi / 6)
    assert (p.phi_min, p.phi_max) == (-math.pi / 2, 0.0)


@pytest.mark.parametrize("kwargs", [
    {"k": 0.0}, {"k": 1.0}, {"phi_min": 0.0, "phi_max": 0.0},
])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        ControllerParams(tau0=0.0, **kwargs)


def test_uncalibrated_controller_raises():
    p = ControllerParams()
    state = ControllerState(phi=0.0)
    with pytest.raises(ControllerStateError):
        update_phase(state, 10.0, p)
    with pytest.raises(ControllerStateError):
        fixed_point(10.0, p)


def test_fixed_point_of_update():
    state = ControllerState(phi=PARAMS.phi0)
    assert update_phase(state, PARAMS.tau0, PARAMS) == pytest.approx(PARAMS.phi0)


def test_high_load_drives_phase_more_negative():
    state = ControllerState(phi=PARAMS.phi0)
    assert update_phase(state, PARAMS.tau0 + 10.0, PARAMS) < PARAMS.phi0


def test_update_appends_history_and_counts_cycles():
    state = ControllerState(phi=0.0)
    update_phase(state, 20.0, PARAMS)
    update_phase(state, 21.0, PARAMS)
    assert state.cycle == 2
    assert len(state.history) == 2
    assert state.history[0] == (0.0, 20.0)


def test_fixed_point_examples():
    assert fixed_point(PARAMS.tau0, PARAMS) == pytest.approx(PARAMS.phi0)
    # load gap making (b1/k) * dtau = -pi/6 shifts the fixed point to -pi/3
    dtau = (math.pi / 6) / 0.8
    assert fixed_point(PARAMS.tau0 + dtau, PARAMS) == pytest.approx(-math.pi / 3)
    # large negative gap clamps at the top of the range
    assert fixed_point(PARAMS.tau0 - 1000.0, PARAMS) == 0.0


def test_fixed_point_monotone_decreasing_in_load():
    taus = [PARAMS.tau0 + d for d in (-0.5, -0.2, 0.0, 0.2, 0.5)]
    vals = [fixed_point(t, PARAMS) for t in taus]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@given(st.floats(min_value=-math.pi / 2, max_value=0.0),
       st.floats(min_value=-50, max_value=50))
def test_geometric_convergence_bound(phi_init, dtau):
    """|phi_N - phi_ss| <= (1-k)^N |phi_0 - phi_ss| for constant load."""
    tau = PARAMS.tau0 + dtau
    phi_ss = fixed_point(tau, PARAMS)
    state = ControllerState(phi=phi_init)
    err0 = abs(phi_init - phi_ss)
    for n in range(1, 200):
        update_phase(state, tau, PARAMS)
        assert abs(state.phi - phi_ss) <= (1 - PARAMS.k) ** n * err0 + 1e-12


def test_iterated_update_matches_closed_form_to_1e9():
    tau = PARAMS.tau0 + 0.4
    phi_ss = fixed_point(tau, PARAMS)
    state = ControllerState(phi=0.0)
    for _ in range(5000):
        update_phase(state, tau, PARAMS)
    assert state.phi == pytest.approx(phi_ss, abs=1e-9)


@given(st.floats(min_value=-1e6, max_value=1e6),
       st.floats(min_value=-math.pi / 2, max_value=0.0))
def test_clamp_safety(tau, phi_init):
    state = ControllerState(phi=phi_init)
    for _ in range(5):
        phi = update_phase(state, tau, PARAMS)
        assert -math.pi / 2 <= phi <= 0.0


def test_fixed_point_rejects_zero_k():
    class FakeParams:
        k = 0
        tau0 = 1.0
    with pytest.raises(ValueError):
        fixed_point(0.0, FakeParams())


# ---------------------------------------------------------------------------
# calibrate_tau0

def test_calibration_midpoint():
    assert calibrate_tau0(0.0, 10.0) == 5.0
    assert calibrate_tau0(2.0, 8.0) == 5.0


def test_calibration_rejects_inverted_loads():
    with pytest.raises(CalibrationError):
        calibrate_tau0(10.0, 10.0)
    with pytest.raises(CalibrationError):
        calibrate_tau0(12.0, 10.0)


# ---------------------------------------------------------------------------
# PhaseController

def test_phase_controller_clamps_initial_phase():
    ctl = PhaseController(PARAMS, -3.0)
    assert ctl.state.phi == -math.pi / 2


def test_phase_controller_callable_hook():
    ctl = PhaseController(PARAMS, PARAMS.phi0)
    phi = ctl(PARAMS.tau0)
    assert phi == pytest.approx(PARAMS.phi0)
    assert ctl.state.cycle == 1
