import math

import numpy as np
import pytest

from paircascade import metrics, scenario
from paircascade.cascade import oscillation_period


def test_calibration_constant_is_current():
    td = scenario.calibrate_dephasing()
    assert td == pytest.approx(scenario.CALIBRATED_DEPHASING_PS, abs=0.1)
    c1 = metrics.concurrence(scenario.window_states(scenario.calibrated_params())[0])
    assert c1 == pytest.approx(scenario.TARGET_WINDOW1_CONCURRENCE, abs=1e-4)


def test_unreachable_target():
    # the flat mixture caps the concurrence at 1 - 1.5 b
    with pytest.raises(ValueError):
        scenario.calibrate_dephasing(target=0.9)


def test_window_geometry():
    w1, w2, w3 = scenario.scenario_windows()
    period = oscillation_period(scenario.FSS_UEV)
    assert (w1.start, w1.width) == (0.0, 65.0)
    assert w2.center == pytest.approx(period / 2)
    assert w3.center == pytest.approx(1.5 * period)


def test_window_states_physical():
    for rho in scenario.window_states(scenario.calibrated_params()):
        assert np.trace(rho).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_window_counts():
    rho = scenario.window_states(scenario.calibrated_params())[0]
    exact = scenario.window_counts(rho)
    # the 16 settings are not four complete bases, so this is only roughly 4x
    assert exact.counts.sum() == pytest.approx(4 * scenario.WINDOW_COUNTS, rel=0.1)
    a = scenario.window_counts(rho, seed=9)
    b = scenario.window_counts(rho, seed=9)
    assert np.array_equal(a.counts, b.counts)
    assert np.all(a.counts == np.round(a.counts))


def test_params_overrides():
    p = scenario.calibrated_params(background_fraction=0.0)
    assert p.background_fraction == 0.0
    assert p.cross_dephasing_time == scenario.CALIBRATED_DEPHASING_PS
    assert math.isinf(scenario.base_params().cross_dephasing_time)
    assert scenario.scenario_detector().irf_fwhm == 35.0
