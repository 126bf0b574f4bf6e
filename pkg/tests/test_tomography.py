import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paircascade import metrics
from paircascade.cascade import pure_density, two_photon_state
from paircascade.polarization import analyzer_projection_state, basis_state, canonical_setting, overlap
from paircascade.scenario import WINDOW_COUNTS, calibrated_params, window_counts, window_states
from paircascade.tomography import (
    STANDARD_LABELS,
    DegenerateSettingsError,
    MLEOptions,
    TomographyInput,
    check_completeness,
    density_to_params,
    error_bars,
    expected_counts,
    linear_reconstruct,
    mle_reconstruct,
    params_to_density,
    poisson_nll,
    predicted_probability,
    standard_settings,
)

from _states import random_density

PHI_P = pure_density(two_photon_state(0.0))
I4 = np.eye(4) / 4
seeds = st.integers(0, 2**32 - 1)


def test_standard_settings():
    pairs = standard_settings()
    labels = {(a.label, b.label) for a, b in pairs}
    assert len(pairs) == 16 and len(labels) == 16
    for a, b in pairs:
        for s in (a, b):
            assert overlap(analyzer_projection_state(s), basis_state(s.label)) == pytest.approx(1.0, abs=1e-12)
    assert check_completeness(expected_counts(I4).projectors()) < 1e3


def test_degenerate_settings_rejected():
    labels = ["HH"] * 16
    with pytest.raises(DegenerateSettingsError):
        linear_reconstruct(TomographyInput.from_labels(labels, np.ones(16)))


def test_input_validation():
    with pytest.raises(ValueError):
        TomographyInput.from_labels(STANDARD_LABELS[:15], np.ones(15))
    counts = np.ones(16)
    counts[3] = -1
    with pytest.raises(ValueError):
        TomographyInput.from_labels(STANDARD_LABELS, counts)


def test_predicted_probability_examples():
    hh = (canonical_setting("H"), canonical_setting("H"))
    hv = (canonical_setting("H"), canonical_setting("V"))
    assert predicted_probability(PHI_P, hh) == pytest.approx(0.5)
    assert predicted_probability(PHI_P, hv) == pytest.approx(0.0, abs=1e-15)
    for pair in standard_settings():
        assert predicted_probability(I4, pair) == pytest.approx(0.25)


def test_linear_examples():
    assert np.allclose(linear_reconstruct(expected_counts(PHI_P, 1000.0)), PHI_P, atol=1e-10)
    assert np.allclose(linear_reconstruct(expected_counts(I4, 1000.0)), I4, atol=1e-10)


def test_linear_can_be_unphysical():
    clean = expected_counts(PHI_P, 100.0)
    rng = np.random.default_rng(0)
    mins = [np.linalg.eigvalsh(linear_reconstruct(clean.with_counts(rng.poisson(clean.counts)))).min() for _ in range(30)]
    assert min(mins) < -1e-3


def test_cholesky_parameterization_round_trip():
    rng = np.random.default_rng(3)
    for rank in (1, 2, 4):
        rho = random_density(rng, rank)
        back = params_to_density(density_to_params(rho))
        assert metrics.trace_distance(rho, back) < 1e-8


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=16, max_size=16))
def test_params_always_physical(t):
    if np.allclose(t[:4], 0) and np.allclose(t[4:], 0):
        return
    try:
        rho = params_to_density(t)
    except FloatingPointError:
        return
    if not np.all(np.isfinite(rho)):
        return
    assert np.allclose(rho, rho.conj().T, atol=1e-12)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_mle_noiseless_i_state():
    psi = two_photon_state(math.pi / 2)
    rho, rep = mle_reconstruct(expected_counts(pure_density(psi), 1e4))
    assert metrics.fidelity_to_pure(rho, psi) >= 0.999
    assert rep.converged


def test_mle_equal_counts_gives_identity():
    rho, _ = mle_reconstruct(TomographyInput.from_labels(STANDARD_LABELS, np.full(16, 250.0)))
    assert metrics.trace_distance(rho, I4) < 1e-3


def test_mle_zero_counts_rejected():
    with pytest.raises(ValueError):
        mle_reconstruct(TomographyInput.from_labels(STANDARD_LABELS, np.zeros(16)))


def test_mle_single_setting_counts():
    # counts in DD alone invert to a non-positive trace; the MLE still starts and fits
    counts = np.zeros(16)
    counts[STANDARD_LABELS.index("DD")] = 40
    inp = TomographyInput.from_labels(STANDARD_LABELS, counts)
    with pytest.raises(ValueError):
        linear_reconstruct(inp)
    rho, rep = mle_reconstruct(inp)
    assert np.linalg.eigvalsh(rho).min() >= -1e-10
    assert rep.nll <= rep.nll_seed + 1e-9


def test_mle_handles_zero_count_settings():
    rho, rep = mle_reconstruct(expected_counts(PHI_P, 1000.0).with_counts(np.round(expected_counts(PHI_P, 1000.0).counts)))
    assert metrics.fidelity_to_pure(rho, two_photon_state(0.0)) > 0.999
    assert np.isfinite(rep.nll)


def test_mle_realistic_counts_window1():
    rho_true = window_states(calibrated_params())[0]
    ref = metrics.phase_reference_state(math.radians(70.0))
    fids = []
    for seed in range(5):
        rho, _ = mle_reconstruct(window_counts(rho_true, WINDOW_COUNTS, seed=seed))
        fids.append(metrics.fidelity_to_pure(rho, ref))
    assert np.mean(fids) == pytest.approx(0.76, abs=0.04)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=16, max_size=16))
def test_mle_physical_for_random_counts(counts):
    if sum(counts) == 0:
        return
    inp = TomographyInput.from_labels(STANDARD_LABELS, counts)
    rho, rep = mle_reconstruct(inp, MLEOptions(n_starts=2))
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
    assert abs(np.trace(rho) - 1) < 1e-10
    assert np.linalg.eigvalsh(rho).min() >= -1e-10
    assert rep.nll <= rep.nll_seed + 1e-9
    assert poisson_nll(rho, inp.projectors(), inp.counts)[0] == pytest.approx(rep.nll, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 4))
def test_mle_round_trip(seed, rank):
    rho = random_density(np.random.default_rng(seed), rank)
    out, _ = mle_reconstruct(expected_counts(rho, 1e5))
    assert metrics.trace_distance(rho, out) < 1e-4


@settings(max_examples=15, deadline=None)
@given(seeds, st.floats(0.01, 1000))
def test_mle_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    inp = expected_counts(random_density(rng), 1000.0)
    inp = inp.with_counts(rng.poisson(inp.counts).astype(float) + 1)
    a, _ = mle_reconstruct(inp)
    b, _ = mle_reconstruct(inp.with_counts(inp.counts * scale))
    assert metrics.trace_distance(a, b) < 1e-6


def test_error_bars_vanish_for_large_counts():
    inp = expected_counts(PHI_P, 4e8)  # 1e8 per setting on average
    rep = error_bars(inp, 100, seed=1, references={"phi+": two_photon_state(0.0)}, options=MLEOptions(n_starts=1))
    assert all(v < 1e-3 for v in rep["std"].values())


def test_error_bars_realistic_counts_and_deterministic():
    rho_true = window_states(calibrated_params())[0]
    inp = window_counts(rho_true, WINDOW_COUNTS, seed=3)
    refs = {"best": metrics.phase_reference_state(math.radians(70.0))}
    a = error_bars(inp, 100, seed=5, references=refs)
    b = error_bars(inp, 100, seed=5, references=refs)
    assert a == b
    assert 0.005 < a["std"]["fidelity[best]"] < 0.05


def test_error_bars_needs_100_resamples():
    with pytest.raises(ValueError):
        error_bars(expected_counts(PHI_P, 100.0), 99)
