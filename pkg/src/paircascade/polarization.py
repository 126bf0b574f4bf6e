"""Jones calculus for single photons and the QWP/HWP/polarizer analyzer chain.

Conventions used everywhere in the package:

* basis ordering is (H, V); two-photon ordering is HH, HV, VH, VV with the
  biexciton (XX) photon in the first slot;
* D = (H + V)/sqrt(2), A = (H - V)/sqrt(2), R = (H - iV)/sqrt(2),
  L = (H + iV)/sqrt(2);
* a wave plate of retardance ``g`` with fast axis at ``theta`` is
  ``rot(theta) @ diag(1, exp(i g)) @ rot(-theta)``, so a QWP at 0 is diag(1, i)
  and a QWP at 45 degrees maps H to R.

Global phases are never meaningful; compare states with :func:`overlap`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "PolarizationVector",
    "AnalyzerSetting",
    "basis_state",
    "rotation",
    "jones_waveplate",
    "jones_hwp",
    "jones_qwp",
    "jones_polarizer",
    "analyzer_projection_state",
    "two_photon_projector",
    "canonical_setting",
    "overlap",
    "settings_to_json",
    "settings_from_json",
]

_SQ2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class PolarizationVector:
    """Pure single-photon polarization state, normalized on construction."""

    amp_h: complex
    amp_v: complex

    def __post_init__(self):
        h, v = complex(self.amp_h), complex(self.amp_v)
        norm = math.sqrt(abs(h) ** 2 + abs(v) ** 2)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("polarization vector must have finite nonzero norm")
        object.__setattr__(self, "amp_h", h / norm)
        object.__setattr__(self, "amp_v", v / norm)

    @classmethod
    def from_array(cls, vec) -> "PolarizationVector":
        vec = np.asarray(vec, dtype=complex).reshape(2)
        return cls(vec[0], vec[1])

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_h, self.amp_v], dtype=complex)

    def projector(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v.conj())


_BASIS = {
    "H": (1.0, 0.0),
    "V": (0.0, 1.0),
    "D": (_SQ2, _SQ2),
    "A": (_SQ2, -_SQ2),
    "R": (_SQ2, -1j * _SQ2),
    "L": (_SQ2, 1j * _SQ2),
}


def basis_state(label: str) -> PolarizationVector:
    """Return one of the six canonical states H, V, D, A, R, L."""
    try:
        h, v = _BASIS[label]
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}; expected one of {sorted(_BASIS)}") from None
    return PolarizationVector(h, v)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def jones_waveplate(theta: float, retardance: float) -> np.ndarray:
    """Linear retarder with fast axis at ``theta`` (radians from H)."""
    core = np.diag([1.0, np.exp(1j * retardance)])
    return rotation(theta) @ core @ rotation(-theta)


def jones_hwp(theta: float) -> np.ndarray:
    # The bare retarder would be -i times this; the Hermitian form is the
    # customary one and differs only by a global phase.
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def jones_qwp(theta: float) -> np.ndarray:
    return jones_waveplate(theta, math.pi / 2)


def jones_polarizer(axis: float) -> np.ndarray:
    c, s = math.cos(axis), math.sin(axis)
    return np.array([[c * c, c * s], [c * s, s * s]], dtype=complex)


@dataclass(frozen=True)
class AnalyzerSetting:
    """One arm of the analyzer: QWP, then HWP, then a linear polarizer.

    ``qwp_angle=None`` means the quarter-wave plate is removed from the path.
    Angles are radians measured from H.
    """

    qwp_angle: float | None
    hwp_angle: float
    pol_axis: float = 0.0
    label: str = ""

    def __post_init__(self):
        angles = [self.hwp_angle, self.pol_axis]
        if self.qwp_angle is not None:
            angles.append(self.qwp_angle)
        if not all(np.isfinite(a) for a in angles):
            raise ValueError("analyzer angles must be finite")

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "qwp_deg": None if self.qwp_angle is None else math.degrees(self.qwp_angle),
            "hwp_deg": math.degrees(self.hwp_angle),
            "pol_deg": math.degrees(self.pol_axis),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AnalyzerSetting":
        qwp = rec.get("qwp_deg")
        return cls(
            qwp_angle=None if qwp is None else math.radians(float(qwp)),
            hwp_angle=math.radians(float(rec["hwp_deg"])),
            pol_axis=math.radians(float(rec.get("pol_deg", 0.0))),
            label=str(rec.get("label", "")),
        )


def analyzer_projection_state(setting: AnalyzerSetting) -> PolarizationVector:
    """Input state that the analyzer chain transmits with unit probability.

    The transmitted amplitude for an input ``psi`` is
    ``<pol| HWP QWP |psi>``, hence the projection state is
    ``QWP^dagger HWP^dagger |pol>``.
    """
    pol = np.array([math.cos(setting.pol_axis), math.sin(setting.pol_axis)], dtype=complex)
    state = jones_hwp(setting.hwp_angle).conj().T @ pol
    if setting.qwp_angle is not None:
        state = jones_qwp(setting.qwp_angle).conj().T @ state
    return PolarizationVector.from_array(state)


# (qwp, hwp) angles that make a polarizer at H transmit each canonical state.
_CANONICAL_ANGLES = {
    "H": (0.0, 0.0),
    "V": (0.0, math.pi / 4),
    "D": (math.pi / 4, math.pi / 8),
    "A": (math.pi / 4, -math.pi / 8),
    "R": (0.0, math.pi / 8),
    "L": (0.0, -math.pi / 8),
}


def canonical_setting(label: str) -> AnalyzerSetting:
    if label not in _CANONICAL_ANGLES:
        raise ValueError(f"unknown polarization label {label!r}")
    qwp, hwp = _CANONICAL_ANGLES[label]
    return AnalyzerSetting(qwp_angle=qwp, hwp_angle=hwp, pol_axis=0.0, label=label)


def two_photon_projector(xx_arm: PolarizationVector, x_arm: PolarizationVector) -> np.ndarray:
    """``|xx><xx| (x) |x><x|`` in HH, HV, VH, VV ordering."""
    return np.kron(xx_arm.projector(), x_arm.projector())


def overlap(a: PolarizationVector | np.ndarray, b: PolarizationVector | np.ndarray) -> float:
    """Squared modulus of the inner product; insensitive to global phase."""
    va = a.vector if isinstance(a, PolarizationVector) else np.asarray(a, dtype=complex)
    vb = b.vector if isinstance(b, PolarizationVector) else np.asarray(b, dtype=complex)
    return float(abs(np.vdot(va, vb)) ** 2)


def settings_to_json(settings: Iterable[AnalyzerSetting]) -> str:
    return json.dumps([s.to_record() for s in settings], indent=2)


def settings_from_json(text: str) -> list[AnalyzerSetting]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("analyzer settings JSON must be a list of records")
    return [AnalyzerSetting.from_record(rec) for rec in data]
