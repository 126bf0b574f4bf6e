import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paircascade.fitting import Spectrum
from paircascade.io import (
    CONFIG_KEYS,
    ConfigError,
    RunConfig,
    angle_series_from_csv,
    angle_series_to_csv,
    density_from_json,
    density_to_json,
    format_config,
    parse_config,
    read_config,
    spectrum_from_csv,
    spectrum_to_csv,
    tomography_from_csv,
    tomography_to_csv,
    write_text,
    sha256_text,
)
from paircascade.tomography import STANDARD_LABELS, TomographyInput

from _states import random_density

finite = st.floats(-1e6, 1e6, allow_nan=False)

CONFIG = """
# calibrated run
fss_ueV = 18
exciton_lifetime_ps = 2000
cross_dephasing_time_ps = 223.013
background_fraction = 0.15   # flat mixture
irf_fwhm_ps = 35
seed = 11
n_pulses = 200000
bin_width_ps = 2
n_bins = 300
windows_ps = 0:65, 82.4:65
mode = sampled
"""


def test_parse_config():
    cfg = parse_config(CONFIG)
    assert cfg.cascade.fss_S == 18.0
    assert cfg.cascade.cross_dephasing_time == 223.013
    assert cfg.detector.irf_fwhm == 35.0
    assert (cfg.seed, cfg.n_pulses, cfg.mode) == (11, 200000, "sampled")
    assert cfg.binning.bin_width == 2.0 and cfg.binning.n_bins == 300
    assert cfg.binning.bin_start == RunConfig().binning.bin_start
    assert cfg.windows == [(0.0, 65.0), (82.4, 65.0)]
    assert cfg.window_overlaps() == []


def test_format_round_trip(tmp_path):
    cfg = parse_config(CONFIG)
    text = format_config(cfg)
    assert set(cfg.to_flat()) == set(CONFIG_KEYS)
    again = parse_config(text)
    assert again == cfg
    path = tmp_path / "run.cfg"
    path.write_text(text)
    assert read_config(path) == cfg


def test_window_overlap_is_informational():
    cfg = parse_config("windows_ps = 0:65, 40:65")
    assert cfg.window_overlaps() == [(0, 1)]


@pytest.mark.parametrize(
    "text, key",
    [
        ("fss_uev = 18", "fss_uev"),
        ("seed = 1\nseed = 2", "seed"),
        ("seed = 1.5", "seed"),
        ("irf_fwhm_ps = fast", "irf_fwhm_ps"),
        ("windows_ps = 0-65", "windows_ps"),
        ("mode = live", "mode"),
        ("n_pulses = 0", "n_pulses"),
    ],
)
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert key in str(exc.value)


def test_config_component_validation():
    with pytest.raises(ConfigError):
        parse_config("background_fraction = 2")
    with pytest.raises(ConfigError):
        parse_config("bin_width_ps = 0")
    with pytest.raises(ConfigError):
        parse_config("just some words")


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_density_json_round_trip(seed):
    rho = random_density(np.random.default_rng(seed))
    back = density_from_json(density_to_json(rho))
    assert np.array_equal(back, rho)


def test_density_json_errors():
    with pytest.raises(ValueError):
        density_from_json("{}")
    with pytest.raises(ValueError):
        density_from_json('{"re": [[1]], "im": [[0]]}')
    with pytest.raises(ValueError):
        density_from_json(density_to_json(np.diag([1.2, 0, 0, -0.2])))
    raw = density_from_json(density_to_json(np.diag([1.2, 0, 0, -0.2])), validate=False)
    assert raw[0, 0] == 1.2


@settings(max_examples=30)
@given(st.lists(st.one_of(st.integers(0, 10**9), st.floats(0, 1e9)), min_size=16, max_size=16))
def test_tomography_csv_round_trip(counts):
    inp = TomographyInput.from_labels(STANDARD_LABELS, counts, "20 min per projection")
    back = tomography_from_csv(tomography_to_csv(inp))
    assert back.labels() == inp.labels()
    assert np.array_equal(back.counts, inp.counts)


def test_tomography_csv_integer_formatting():
    text = tomography_to_csv(TomographyInput.from_labels(STANDARD_LABELS, np.arange(16.0)))
    assert text.splitlines()[0] == "label_xx,label_x,counts"
    assert text.splitlines()[2] == "H,V,1"


def test_tomography_csv_errors():
    good = tomography_to_csv(TomographyInput.from_labels(STANDARD_LABELS, np.ones(16)))
    lines = good.splitlines()
    with pytest.raises(ValueError):
        tomography_from_csv("\n".join(lines[:-1]))  # 15 rows
    with pytest.raises(ValueError):
        tomography_from_csv("a,b,c\n" + "\n".join(lines[1:]))
    with pytest.raises(ValueError):
        tomography_from_csv(good.replace("H,H,1", "H,H,lots"))
    with pytest.raises(ValueError):
        tomography_from_csv(good.replace("H,H,1", "H,Q,1"))
    with pytest.raises(ValueError):
        tomography_from_csv(good.replace("H,H,1", "H,H,-4"))


@given(st.lists(st.tuples(st.floats(-10, 10), finite), min_size=1, max_size=40))
def test_angle_series_round_trip(rows):
    ang, e = np.array(rows).T
    a2, e2 = angle_series_from_csv(angle_series_to_csv(ang, e))
    assert np.allclose(a2, ang, rtol=1e-15, atol=1e-15)
    assert np.array_equal(e2, e)


def test_angle_series_errors():
    with pytest.raises(ValueError):
        angle_series_from_csv("angle_deg,energy_ueV\n")
    with pytest.raises(ValueError):
        angle_series_from_csv("angle,energy\n1,2\n")
    with pytest.raises(ValueError):
        angle_series_from_csv("angle_deg,energy_ueV\n1,x\n")


@pytest.mark.parametrize("kind", ["wavelength", "energy"])
def test_spectrum_round_trip(kind):
    rng = np.random.default_rng(2)
    spec = Spectrum(np.sort(rng.uniform(900, 930, 50)), rng.uniform(0, 1e4, 50), kind)
    back = spectrum_from_csv(spectrum_to_csv(spec))
    assert back.axis_kind == kind
    assert np.array_equal(back.x, spec.x) and np.array_equal(back.intensity, spec.intensity)


def test_spectrum_csv_errors():
    with pytest.raises(ValueError):
        spectrum_from_csv("frequency,intensity\n" + "\n".join(f"{i},1" for i in range(10)))
    with pytest.raises(ValueError):
        spectrum_from_csv("energy_ueV,intensity\n1,2,3\n")


def test_write_text_hash(tmp_path):
    path = tmp_path / "a" / "b" / "out.txt"
    digest = write_text(path, "hello\n")
    assert path.read_text() == "hello\n"
    assert digest == sha256_text("hello\n")
    assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
