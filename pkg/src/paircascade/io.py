"""File formats: run configs, density matrices, tomography counts, angle
series, spectra and run manifests.

Config files are flat ``key = value`` text with units in the key names;
``#`` starts a comment. Floats are written with ``repr`` so every format
round-trips exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeParams, check_density_matrix
from .coincidence import Binning, DetectorModel, DEFAULT_REP_PERIOD
from .fitting import Spectrum
from .polarization import canonical_setting
from .tomography import TomographyInput, TomographyRecord

__all__ = [
    "ConfigError",
    "RunConfig",
    "CONFIG_KEYS",
    "parse_config",
    "read_config",
    "format_config",
    "density_to_json",
    "density_from_json",
    "tomography_to_csv",
    "tomography_from_csv",
    "angle_series_to_csv",
    "angle_series_from_csv",
    "spectrum_to_csv",
    "spectrum_from_csv",
    "sha256_text",
    "write_text",
]


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# key -> (section, field, parser)
_CASCADE_KEYS = {
    "fss_ueV": "fss_S",
    "exciton_lifetime_ps": "exciton_lifetime",
    "biexciton_lifetime_ps": "biexciton_lifetime",
    "cross_dephasing_time_ps": "cross_dephasing_time",
    "background_fraction": "background_fraction",
    "ellipticity_delta_rad": "ellipticity_delta",
    "qwp1_angle_rad": "qwp1_angle",
    "phase_offset_rad": "phase_offset",
}
_DETECTOR_KEYS = {
    "irf_fwhm_ps": "irf_fwhm",
    "efficiency": "efficiency",
    "dark_rate_hz": "dark_rate",
}
_RUN_KEYS = {
    "rep_period_ps": float,
    "n_pulses": int,
    "seed": int,
    "pairs_emitted": float,
    "bin_width_ps": float,
    "bin_start_ps": float,
    "n_bins": int,
    "windows_ps": str,
    "mode": str,
}
CONFIG_KEYS = tuple(_CASCADE_KEYS) + tuple(_DETECTOR_KEYS) + tuple(_RUN_KEYS)
MODES = ("expected", "sampled", "both")


@dataclass
class RunConfig:
    cascade: CascadeParams = field(default_factory=CascadeParams)
    detector: DetectorModel = field(default_factory=DetectorModel)
    rep_period: float = DEFAULT_REP_PERIOD
    n_pulses: int = 100_000
    seed: int = 0
    pairs_emitted: float = 1e6
    binning: Binning = field(default_factory=lambda: Binning(4.0, -200.0, 400))
    windows: list[tuple[float, float]] = field(default_factory=list)
    mode: str = "both"

    def __post_init__(self):
        if not self.rep_period > 0:
            raise ConfigError("rep_period_ps must be > 0", "rep_period_ps")
        if self.n_pulses <= 0:
            raise ConfigError("n_pulses must be > 0", "n_pulses")
        if not self.pairs_emitted > 0:
            raise ConfigError("pairs_emitted must be > 0", "pairs_emitted")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}", "mode")
        for start, width in self.windows:
            if not width > 0 or start < 0:
                raise ConfigError("windows need start >= 0 and width > 0", "windows_ps")

    def window_overlaps(self) -> list[tuple[int, int]]:
        """Index pairs of overlapping windows (informational only)."""
        out = []
        for i, (s1, w1) in enumerate(self.windows):
            for j, (s2, w2) in enumerate(self.windows[i + 1:], start=i + 1):
                if s1 < s2 + w2 and s2 < s1 + w1:
                    out.append((i, j))
        return out

    def to_flat(self) -> dict[str, str]:
        flat = {}
        for key, name in _CASCADE_KEYS.items():
            flat[key] = _fmt(getattr(self.cascade, name))
        for key, name in _DETECTOR_KEYS.items():
            flat[key] = _fmt(getattr(self.detector, name))
        flat["rep_period_ps"] = _fmt(self.rep_period)
        flat["n_pulses"] = str(self.n_pulses)
        flat["seed"] = str(self.seed)
        flat["pairs_emitted"] = _fmt(self.pairs_emitted)
        flat["bin_width_ps"] = _fmt(self.binning.bin_width)
        flat["bin_start_ps"] = _fmt(self.binning.bin_start)
        flat["n_bins"] = str(self.binning.n_bins)
        flat["windows_ps"] = ", ".join(f"{_fmt(s)}:{_fmt(w)}" for s, w in self.windows)
        flat["mode"] = self.mode
        return flat


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as a number", key) from None


def _parse_windows(text: str) -> list[tuple[float, float]]:
    windows = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"windows_ps: expected start:width, got {item!r}", "windows_ps")
        windows.append((_parse_float("windows_ps", parts[0]), _parse_float("windows_ps", parts[1])))
    return windows


def parse_config(text: str) -> RunConfig:
    """Parse flat config text; unknown keys raise :class:`ConfigError` naming the key."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})", key)
        if key in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})", key)
        values[key] = value

    cascade_kw = {name: _parse_float(key, values[key]) for key, name in _CASCADE_KEYS.items() if key in values}
    detector_kw = {name: _parse_float(key, values[key]) for key, name in _DETECTOR_KEYS.items() if key in values}
    try:
        cascade = CascadeParams(**cascade_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        detector = DetectorModel(**detector_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    run_kw = {}
    for key in ("rep_period_ps", "pairs_emitted"):
        if key in values:
            run_kw[key.removesuffix("_ps")] = _parse_float(key, values[key])
    for key in ("n_pulses", "seed"):
        if key in values:
            f = _parse_float(key, values[key])
            if f != int(f):
                raise ConfigError(f"{key} must be an integer", key)
            run_kw[key] = int(f)
    if "windows_ps" in values:
        run_kw["windows"] = _parse_windows(values["windows_ps"])
    if "mode" in values:
        run_kw["mode"] = values["mode"]

    default = RunConfig().binning
    try:
        binning = Binning(
            _parse_float("bin_width_ps", values["bin_width_ps"]) if "bin_width_ps" in values else default.bin_width,
            _parse_float("bin_start_ps", values["bin_start_ps"]) if "bin_start_ps" in values else default.bin_start,
            int(_parse_float("n_bins", values["n_bins"])) if "n_bins" in values else default.n_bins,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(cascade=cascade, detector=detector, binning=binning, **run_kw)


def read_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_flat().items())


# -- density matrices ---------------------------------------------------------


def density_to_json(rho) -> str:
    rho = np.asarray(rho, dtype=complex)
    return json.dumps({"re": rho.real.tolist(), "im": rho.imag.tolist()}, indent=1) + "\n"


def density_from_json(text: str, validate: bool = True) -> np.ndarray:
    try:
        obj = json.loads(text)
        rho = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed density-matrix JSON: {exc}") from None
    if rho.shape != (4, 4):
        raise ValueError(f"density matrix must be 4x4, got {rho.shape}")
    return check_density_matrix(rho, atol=1e-8) if validate else rho


# -- tomography counts --------------------------------------------------------

TOMO_HEADER = ("label_xx", "label_x", "counts")


def _fmt_count(c: float) -> str:
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def tomography_to_csv(inp: TomographyInput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOMO_HEADER)
    for rec in inp.records:
        w.writerow([rec.setting_xx.label, rec.setting_x.label, _fmt_count(rec.counts)])
    return buf.getvalue()


def tomography_from_csv(text: str, note: str = "") -> TomographyInput:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != TOMO_HEADER:
        raise ValueError(f"tomography CSV must start with header {','.join(TOMO_HEADER)}")
    records = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"line {n}: expected 3 columns, got {len(row)}")
        lxx, lx, c = (s.strip() for s in row)
        try:
            counts = float(c)
        except ValueError:
            raise ValueError(f"line {n}: bad count {c!r}") from None
        if not math.isfinite(counts):
            raise ValueError(f"line {n}: count must be finite")
        records.append(TomographyRecord(canonical_setting(lxx), canonical_setting(lx), counts))
    return TomographyInput(records, note)


# -- angle series and spectra ------------------------------------------------


def angle_series_to_csv(angles_rad, energies_ueV) -> str:
    lines = ["angle_deg,energy_ueV"]
    lines += [f"{math.degrees(a)!r},{float(e)!r}" for a, e in zip(angles_rad, energies_ueV)]
    return "\n".join(lines) + "\n"


def _numeric_table(text: str, what: str) -> tuple[list[str], np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ValueError(f"{what} CSV has no data rows")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{what} CSV: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{what} CSV rows do not match the header")
    return header, data


def angle_series_from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(angles_rad, energies_ueV)``."""
    header, data = _numeric_table(text, "angle-series")
    if header != ["angle_deg", "energy_ueV"]:
        raise ValueError("angle-series CSV header must be angle_deg,energy_ueV")
    return np.radians(data[:, 0]), data[:, 1]


_SPECTRUM_AXES = {"wavelength_nm": "wavelength", "energy_ueV": "energy"}


def spectrum_to_csv(spec: Spectrum) -> str:
    col = "wavelength_nm" if spec.axis_kind == "wavelength" else "energy_ueV"
    lines = [f"{col},intensity"] + [f"{float(x)!r},{float(y)!r}" for x, y in zip(spec.x, spec.intensity)]
    return "\n".join(lines) + "\n"


def spectrum_from_csv(text: str) -> Spectrum:
    header, data = _numeric_table(text, "spectrum")
    if len(header) != 2 or header[0] not in _SPECTRUM_AXES or header[1] != "intensity":
        raise ValueError("spectrum CSV header must be wavelength_nm,intensity or energy_ueV,intensity")
    return Spectrum(data[:, 0], data[:, 1], _SPECTRUM_AXES[header[0]])


# -- helpers -------------------------------------------------------------------


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_text(path: Path, text: str) -> str:
    """Write ``text`` and return its SHA-256 for the manifest."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return sha256_text(text)
