import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paircascade.cascade import CascadeParams, HBAR_UEV_PS, oscillation_period
from paircascade.coincidence import Binning, CoincidenceHistogram, DetectorModel, expected_histogram
from paircascade.fitting import (
    HC_EV_NM,
    NoPeakError,
    Spectrum,
    damped_cosine,
    fit_damped_cosine,
    fit_fss_oscillation,
    fit_fss_pair,
    fit_lorentzian,
    least_squares,
    lorentzian,
    wavelength_to_energy,
)
from paircascade.polarization import canonical_setting
from paircascade.scenario import OSC_FIT_RANGE_PS, scenario_detector, calibrated_params

seeds = st.integers(0, 2**32 - 1)
THETA = np.radians(np.arange(0.0, 181.0, 10.0))


def rosenbrock(p):
    return np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])


# -- engine -------------------------------------------------------------------

@settings(max_examples=30)
@given(seeds)
def test_linear_model_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(-2, 3, 25)
    a = np.column_stack([np.ones_like(x), x, x ** 2])
    y = a @ rng.normal(size=3) + rng.normal(0, 0.1, x.size)
    res = least_squares(lambda p: a @ p - y, rng.normal(size=3))
    exact = np.linalg.solve(a.T @ a, a.T @ y)
    assert res.converged
    assert np.allclose(list(res.params.values()), exact, atol=1e-10)


def test_zero_residual_start():
    res = least_squares(lambda p: p - 1.0, [1.0, 1.0])
    assert res.converged and res.n_iter == 0 and res.residual_norm == 0.0


def test_rank_deficient_flagged():
    x = np.linspace(0, 1, 10)
    res = least_squares(lambda p: (p[0] + p[1]) * x - 2 * x + 0.01 * np.sin(9 * x), [0.3, 0.1])
    assert res.rank_deficient
    assert np.isfinite(res.residual_norm)


@settings(max_examples=40)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_history_never_increases(a, b):
    res = least_squares(rosenbrock, [a, b])
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)
    if res.converged:
        assert res.params["p0"] == pytest.approx(1.0, abs=1e-5)


def test_max_iter_exceeded():
    res = least_squares(rosenbrock, [-1.2, 1.0], max_iter=2)
    assert not res.converged and res.n_iter == 2
    assert res.stderr is None
    assert res.residual_norm ** 2 <= res.history[0]


def test_engine_input_errors():
    with pytest.raises(ValueError):
        least_squares(rosenbrock, [math.nan, 0.0])
    with pytest.raises(ValueError):
        least_squares(lambda p: np.array([p[0] - 1]), [0.0, 0.0])


def test_numeric_jacobian_route_agrees_with_analytic():
    x = np.linspace(0, 4, 30)
    y = 2.0 * np.exp(-0.7 * x)

    def r(p):
        return p[0] * np.exp(-p[1] * x) - y

    def j(p):
        e = np.exp(-p[1] * x)
        return np.column_stack([e, -p[0] * x * e])

    a = least_squares(r, [1.0, 0.3], j)
    b = least_squares(r, [1.0, 0.3])
    assert a.params["p0"] == pytest.approx(2.0, abs=1e-8)
    assert b.params["p1"] == pytest.approx(0.7, abs=1e-8)


# -- spectral lines -------------------------------------------------------------

def test_energy_conversion():
    assert HC_EV_NM == pytest.approx(1239.841984)
    assert wavelength_to_energy(915.0) == pytest.approx(1239.841984 / 915.0 * 1e6)


def test_lorentzian_round_trip_wavelength():
    x = np.linspace(914.7, 915.3, 301)
    truth = dict(center=915.0, fwhm=0.05, amplitude=1000.0, offset=20.0)
    res = fit_lorentzian(Spectrum(x, lorentzian(x, **truth), "wavelength"))
    assert res.converged
    for k, v in truth.items():
        assert res.params[k] == pytest.approx(v, rel=1e-6)
    assert res.notes["axis_kind"] == "wavelength"


def test_lorentzian_round_trip_energy_axis():
    spec = Spectrum(np.linspace(914.7, 915.3, 301), lorentzian(np.linspace(914.7, 915.3, 301), 915.0, 0.05, 1000.0, 20.0), "wavelength")
    res = fit_lorentzian(spec.to_energy())
    e0 = wavelength_to_energy(915.0)
    assert res.params["center"] == pytest.approx(e0, rel=1e-7)
    # linewidth in energy: hc * dlambda / lambda^2 to first order
    assert res.params["fwhm"] == pytest.approx(e0 * 0.05 / 915.0, rel=1e-3)


def test_lorentzian_symmetric_center():
    x = np.linspace(-5, 7, 200)
    y = lorentzian(x, 1.0, 0.8, 50.0, 3.0) + 0.5 * np.cos(3 * (x - 1.0)) ** 2
    res = fit_lorentzian(Spectrum(x, y, "energy"))
    assert res.params["center"] == pytest.approx(1.0, abs=1e-9)


def test_lorentzian_coverage():
    x = np.linspace(-3, 3, 121)
    clean = lorentzian(x, 0.2, 0.5, 100.0, 5.0)
    hits = 0
    n = 200
    for seed in range(n):
        y = clean + np.random.default_rng(seed).normal(0, 100.0 / 20, x.size)
        res = fit_lorentzian(Spectrum(x, y, "energy"))
        hits += abs(res.params["center"] - 0.2) <= 3 * res.stderr["center"]
    assert hits / n >= 0.95


def test_lorentzian_no_peak():
    x = np.linspace(0, 1, 50)
    with pytest.raises(NoPeakError):
        fit_lorentzian(Spectrum(x, np.full(50, 10.0), "energy"))


@given(st.floats(-1e3, 1e3))
def test_lorentzian_translation(shift):
    x = np.linspace(-3, 3, 121)
    y = lorentzian(x, 0.2, 0.5, 100.0, 5.0) + 2 * np.sin(5 * x)
    a = fit_lorentzian(Spectrum(x, y, "energy"))
    b = fit_lorentzian(Spectrum(x + shift, y, "energy"))
    assert b.params["center"] - shift == pytest.approx(a.params["center"], abs=1e-8)
    for k in ("fwhm", "amplitude", "offset"):
        assert b.params[k] == pytest.approx(a.params[k], abs=1e-8)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum(np.arange(5.0), np.ones(5))
    with pytest.raises(ValueError):
        Spectrum(np.array([0, 1, 2, 2, 3, 4, 5, 6.0]), np.ones(8))
    with pytest.raises(ValueError):
        Spectrum(np.arange(8.0), np.ones(8), "frequency")


# -- FSS oscillation -------------------------------------------------------------

def fss_series(s, phase, theta=THETA, mean=1.3549e6):
    return mean + 0.5 * s * np.cos(4 * theta + phase)


def test_fss_flat_series():
    rng = np.random.default_rng(0)
    res = fit_fss_oscillation(THETA, np.full(THETA.size, 1.3549e6))
    assert res.params["S"] == pytest.approx(0.0, abs=1e-9)
    noisy = fit_fss_oscillation(THETA, 1.3549e6 + rng.normal(0, 0.5, THETA.size))
    assert noisy.params["S"] <= 3 * noisy.stderr["S"]


@pytest.mark.parametrize("phase", [0.0, 1.0, -2.5, 3.0])
def test_fss_round_trip(phase):
    res = fit_fss_oscillation(THETA, fss_series(18.0, phase))
    assert res.params["S"] == pytest.approx(18.0, abs=0.1)
    assert math.remainder(res.params["phase0"] - phase, 2 * math.pi) == pytest.approx(0.0, abs=1e-8)
    assert res.params["mean_energy"] == pytest.approx(1.3549e6, abs=1e-6)
    assert res.notes["with_qwp"] and "warning" not in res.notes


def test_fss_without_qwp_noted():
    res = fit_fss_oscillation(THETA, fss_series(7.0, 0.0), with_qwp=False)
    assert "warning" in res.notes


def test_fss_pair_shared_amplitude():
    rng = np.random.default_rng(4)
    ex = fss_series(18.0, 0.4) + rng.normal(0, 1.0, THETA.size)
    exx = fss_series(18.0, 0.4 + math.pi, mean=1.3514e6) + rng.normal(0, 1.0, THETA.size)
    pair = fit_fss_pair(THETA, ex, THETA, exx)
    sx = fit_fss_oscillation(THETA, ex)
    sxx = fit_fss_oscillation(THETA, exx)
    # separate amplitudes agree within error, and the joint fit matches them
    assert abs(sx.params["S"] - sxx.params["S"]) <= 3 * math.hypot(sx.stderr["S"], sxx.stderr["S"])
    assert pair.params["S"] == pytest.approx(18.0, abs=3 * pair.stderr["S"])
    assert pair.stderr["S"] < sx.stderr["S"]
    gap = abs(math.remainder(sxx.params["phase0"] - sx.params["phase0"], 2 * math.pi))
    assert gap == pytest.approx(math.pi, abs=0.3)


def test_fss_span_rejected():
    theta = np.linspace(0, 1.2, 12)
    with pytest.raises(ValueError):
        fit_fss_oscillation(theta, fss_series(18.0, 0.0, theta))
    with pytest.raises(ValueError):
        fit_fss_oscillation(THETA[:7], fss_series(18.0, 0.0, THETA[:7]))


@given(st.floats(-3, 3))
def test_fss_translation(shift):
    rng = np.random.default_rng(1)
    e = fss_series(18.0, 0.7) + rng.normal(0, 1.0, THETA.size)
    a = fit_fss_oscillation(THETA, e)
    b = fit_fss_oscillation(THETA + shift, e)
    assert b.params["S"] == pytest.approx(a.params["S"], abs=1e-8)
    assert b.params["mean_energy"] == pytest.approx(a.params["mean_energy"], abs=1e-8)
    assert math.remainder(b.params["phase0"] + 4 * shift - a.params["phase0"], 2 * math.pi) == pytest.approx(0.0, abs=1e-8)


# -- damped oscillations ---------------------------------------------------------

def test_damped_cosine_round_trip():
    tau = np.arange(0.0, 1200.0, 4.0)
    truth = dict(period=225.0, phase=0.6, amplitude=300.0, decay_time=900.0, offset=15.0, baseline=400.0)
    hist = CoincidenceHistogram(4.0, -2.0, damped_cosine(tau, **truth))
    res = fit_damped_cosine(hist)
    assert res.converged
    assert res.params["period"] == pytest.approx(225.0, abs=1.0)
    for k, v in truth.items():
        assert res.params[k] == pytest.approx(v, rel=1e-6)


def test_damped_cosine_span_rejected():
    tau = np.arange(0.0, 300.0, 4.0)
    hist = CoincidenceHistogram(4.0, -2.0, damped_cosine(tau, 225.0, 0.0, 100.0, 500.0, 1.0, 200.0))
    with pytest.raises(ValueError):
        fit_damped_cosine(hist, initial_guess={"period": 225.0})


def test_damped_cosine_negative_amplitude_folded():
    tau = np.arange(0.0, 1000.0, 4.0)
    hist = CoincidenceHistogram(4.0, -2.0, damped_cosine(tau, 230.0, 0.2, 200.0, 800.0, 5.0, 300.0))
    res = fit_damped_cosine(hist, initial_guess={"period": 231.0, "phase": 0.2 + math.pi, "amplitude": -190.0, "decay_time": 700.0})
    assert res.params["amplitude"] > 0
    assert res.params["phase"] == pytest.approx(0.2, abs=1e-6)


def _hist(params, label, binning=Binning(4.0, -200.0, 600), det=DetectorModel(35.0)):
    return expected_histogram(params, det, canonical_setting(label[0]), canonical_setting(label[1]), 1e6, binning)


def _phase_gap(a, b):
    return math.degrees(abs(math.remainder(a.params["phase"] - b.params["phase"], 2 * math.pi)))


def test_scenario_optics_dd_rr_antiphase():
    # ellipticity and QWP1 error alone tilt the gap by about 1.4 degrees
    p = calibrated_params(cross_dephasing_time=math.inf)
    rr = fit_damped_cosine(_hist(p, "RR", det=scenario_detector()), fit_range=OSC_FIT_RANGE_PS)
    dd = fit_damped_cosine(_hist(p, "DD", det=scenario_detector()), fit_range=OSC_FIT_RANGE_PS)
    assert _phase_gap(rr, dd) == pytest.approx(180.0, abs=5.0)


@pytest.mark.xfail(reason="single-envelope model cannot follow an oscillation that dephases faster than the population decays; gap lands near 174 degrees", strict=False)
def test_calibrated_dd_rr_antiphase():
    p = calibrated_params()
    rr = fit_damped_cosine(_hist(p, "RR", det=scenario_detector()), fit_range=OSC_FIT_RANGE_PS)
    dd = fit_damped_cosine(_hist(p, "DD", det=scenario_detector()), fit_range=OSC_FIT_RANGE_PS)
    assert _phase_gap(rr, dd) == pytest.approx(180.0, abs=5.0)


def test_period_matches_fss_identity():
    # self-consistent synthetic data: one S drives the histogram and the angle series
    s_true = 18.0
    rng = np.random.default_rng(7)
    hist = _hist(CascadeParams(fss_S=s_true), "RR")
    hist = CoincidenceHistogram(hist.bin_width, hist.bin_start, rng.poisson(hist.counts))
    osc = fit_damped_cosine(hist, fit_range=(50.0, 1200.0))
    fss = fit_fss_oscillation(THETA, fss_series(s_true, 0.3) + rng.normal(0, 1.0, THETA.size))
    t_fss = 2 * math.pi * HBAR_UEV_PS / fss.params["S"]
    err = math.hypot(osc.stderr["period"], t_fss * fss.stderr["S"] / fss.params["S"])
    assert abs(osc.params["period"] - t_fss) <= 3 * err
    assert oscillation_period(s_true) == pytest.approx(229.8, abs=0.05)
