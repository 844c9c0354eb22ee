import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from yoctoforce import model
from yoctoforce.model import MeasurementConfig, MechanicalOscillator, TWO_PI


@pytest.fixture
def osc():
    return model.reference_oscillator()


def test_zero_point_scales_satisfy_uncertainty_relation(osc):
    assert osc.z_ho * osc.p_ho == pytest.approx(model.HBAR / 2, rel=1e-12)
    assert osc.mass == pytest.approx(1200 * model.M_RB87)


def test_sql_value(osc):
    # 4 Gamma p^2 with p^2 = hbar m omega / 2, evaluated by hand
    m = 1200 * 1.44316e-25
    expected = 4 * TWO_PI * 3e3 * 1.054571817e-34 * m * TWO_PI * 110e3 / 2
    assert model.sql_sensitivity(osc) == pytest.approx(expected, rel=1e-12)


def test_heterodyne_halves_detection_efficiency():
    assert MeasurementConfig(epsilon_det=0.11).epsilon_eff == pytest.approx(0.055)
    assert MeasurementConfig(epsilon_det=0.11, heterodyne=False).epsilon_eff == pytest.approx(0.11)


def test_susceptibility_on_resonance(osc):
    chi = model.susceptibility(osc, osc.omega_m)
    assert abs(chi) == pytest.approx(1 / (osc.mass * osc.omega_m * osc.gamma), rel=1e-12)


def test_susceptibility_approximates_full_oscillator_near_resonance(osc):
    # full damped oscillator 1/(m(w_m^2 - w^2 - i w Gamma)) agrees with the
    # single-pole form to O(Gamma/omega_m) within a few linewidths
    w = osc.omega_m + osc.gamma * np.linspace(-3, 3, 61)
    full = 1 / (osc.mass * (osc.omega_m**2 - w**2 - 1j * w * osc.gamma))
    approx = model.susceptibility(osc, w)
    assert np.max(np.abs(np.abs(approx) / np.abs(full) - 1)) < 0.1


def test_response_angle_is_continuous_and_quarter_turn_on_resonance():
    wm, g = 1e6, 1e4
    w = wm + g * np.linspace(-50, 50, 2001)
    phi = model.response_angle(w, wm, g)
    assert model.response_angle(wm, wm, g) == pytest.approx(-math.pi / 2)
    assert np.all(np.diff(phi) > 0)
    assert phi[0] > -math.pi and phi[-1] < 0


@settings(max_examples=60, deadline=None)
@given(c=st.floats(0.01, 100), eps=st.floats(0.01, 0.5), nu=st.floats(0, 5), x=st.floats(-20, 20))
def test_force_sensitivity_equals_psd_over_transduction(c, eps, nu, x):
    osc = model.reference_oscillator(nu=nu)
    meas = model.reference_measurement(cooperativity=c, epsilon_det=2 * eps)
    w = osc.omega_m + x * osc.gamma
    ratio = model.heterodyne_psd_pm(osc, meas, w) / model.transduction(osc, meas, w) ** 2
    assert ratio == pytest.approx(model.force_sensitivity(osc, meas, w), rel=1e-10)


def test_optimum_matches_numerical_minimum(osc):
    eps = 0.056
    def f(logc):
        meas = model.reference_measurement(cooperativity=math.exp(logc), epsilon_det=2 * eps)
        return float(model.force_sensitivity(osc, meas, osc.omega_m))
    res = minimize_scalar(f, bounds=(-5, 5), method="bounded", options={"xatol": 1e-10})
    assert math.exp(res.x) == pytest.approx(model.optimal_cooperativity(eps), rel=1e-4)
    assert res.fun == pytest.approx(model.min_sensitivity(osc, eps, osc.nu), rel=1e-9)


def test_ideal_optimum():
    terms = model.imprecision_terms(np.array([0.25, 0.5, 1.0]), 1.0, 0.0)
    assert terms["total"][1] == pytest.approx(2.0)
    assert np.all(terms["total"] >= 2.0)
    assert model.optimal_cooperativity(1.0) == pytest.approx(0.5)


def test_imprecision_terms_are_additive():
    c = np.geomspace(0.01, 100, 50)
    t = model.imprecision_terms(c, 0.055, 1.2)
    assert np.allclose(t["shot"] + t["zero_point"] + t["back_action"], t["total"], rtol=1e-14)


def test_imprecision_terms_match_force_sensitivity(osc):
    meas = model.reference_measurement(cooperativity=3.0)
    t = model.imprecision_terms(3.0, meas.epsilon_eff, osc.nu)
    assert float(t["total"]) * osc.zpm == pytest.approx(float(model.force_sensitivity(osc, meas, osc.omega_m)))


def test_nonpositive_cooperativity_rejected(osc):
    with pytest.raises(ValueError, match="shot-noise"):
        model.force_sensitivity(osc, MeasurementConfig(cooperativity=0.0), osc.omega_m)


@settings(max_examples=80, deadline=None)
@given(c=st.floats(1e-3, 1e3), eps=st.floats(0.01, 1.0), nu=st.floats(0, 5))
def test_peak_height_inversion_roundtrip(c, eps, nu):
    r = 0.5 + 2 * eps * c * (2 * nu + c + 1)
    assert model.cooperativity_from_peak(r, nu, eps) == pytest.approx(c, rel=1e-9)


def test_peak_height_inversion_slope_matches_finite_difference():
    r, nu, eps = 3.0, 1.2, 0.055
    h = 1e-6
    fd = (model.cooperativity_from_peak(r + h, nu, eps) - model.cooperativity_from_peak(r - h, nu, eps)) / (2 * h)
    assert model.cooperativity_from_peak_slope(r, nu, eps) == pytest.approx(fd, rel=1e-6)


def test_peak_below_floor_raises():
    with pytest.raises(model.PeakHeightError):
        model.cooperativity_from_peak(0.4, 1.2, 0.055)
    assert model.cooperativity_from_peak(0.5, 1.2, 0.055) == 0.0


def test_uncertainty_bound_equals_phase_space_chain(osc):
    eps = 0.056
    meas = model.reference_measurement(cooperativity=model.optimal_cooperativity(eps), epsilon_det=2 * eps)
    chi2 = abs(model.susceptibility(osc, osc.omega_m)) ** 2
    s_ff = float(model.force_sensitivity(osc, meas, osc.omega_m))
    chain = chi2 * s_ff / (meas.tau * osc.z_ho**2)
    assert model.uncertainty_bound(osc.nu, eps, meas.tau, osc.gamma) == pytest.approx(chain, rel=1e-12)


def test_acceleration_sensitivity_definition(osc):
    a = model.acceleration_sensitivity(osc, 0.056, 1.2)
    assert a == pytest.approx(math.sqrt(model.min_sensitivity(osc, 0.056, 1.2)) / (osc.mass * 9.81))


def test_recoil_splitting():
    # hbar k^2 / (2 m) for the 850 nm trap, about 2 pi x 3.2 kHz
    k = TWO_PI / 850e-9
    assert model.default_splitting() == pytest.approx(model.HBAR * k**2 / (2 * model.M_RB87))
    assert model.default_splitting() / TWO_PI == pytest.approx(3.18e3, rel=0.01)


def test_cavity_filter_is_flat_for_wide_cavity(osc):
    w = osc.omega_m + osc.gamma * np.linspace(-5, 5, 11)
    no_cav = model.heterodyne_psd_pm(osc, model.reference_measurement(), w, full_cavity=True)
    wide = model.heterodyne_psd_pm(osc, model.reference_measurement(kappa=1e6 * osc.omega_m), w, full_cavity=True)
    assert np.allclose(wide, no_cav, rtol=1e-6)


@pytest.mark.parametrize("kw, field", [
    (dict(omega_m=0.0), "omega_m"),
    (dict(gamma=0.0), "gamma"),
    (dict(nu=-1.0), "nu"),
    (dict(n_atoms=0.5), "n_atoms"),
])
def test_oscillator_validation(kw, field):
    base = dict(omega_m=TWO_PI * 110e3, gamma=TWO_PI * 3e3)
    base.update(kw)
    with pytest.raises(ValueError, match=field):
        MechanicalOscillator(**base)


def test_broad_resonance_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        MechanicalOscillator(omega_m=1e5, gamma=2e4)
    assert w


def test_measurement_validation():
    with pytest.raises(ValueError, match="epsilon"):
        MeasurementConfig(epsilon_det=1.5)
    with pytest.raises(ValueError):
        MeasurementConfig(tau=0.0)
