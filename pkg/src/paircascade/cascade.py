"""Two-photon polarization state emitted by the biexciton-exciton cascade.

Energies are in micro-eV and times in ps throughout; the phase between the
HH and VV components grows as ``S * tau / hbar``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.integrate import trapezoid

from .polarization import PolarizationVector, basis_state, jones_qwp, jones_waveplate

__all__ = [
    "HBAR_UEV_PS",
    "CascadeParams",
    "phase_at_delay",
    "oscillation_period",
    "two_photon_state",
    "exciton_photon_state",
    "qwp1_error_unitary",
    "density_at_delay",
    "projection_probability",
    "projection_curve",
    "projection_terms",
    "coherence",
    "time_windowed_density",
    "check_density_matrix",
    "pure_density",
]

HBAR_UEV_PS = 658.2119569  # reduced Planck constant in micro-eV * ps


@dataclass(frozen=True)
class CascadeParams:
    """Physical source model.

    ``qwp1_angle`` is the QWP1 fast-axis offset from its nominal orientation
    (the one that maps the circular emission basis onto H/V), and
    ``ellipticity_delta`` is the retardance error of that conversion. With both
    zero the QWP1 step is the identity on the H/V-basis state.
    """

    fss_S: float = 18.0
    exciton_lifetime: float = 2000.0
    biexciton_lifetime: float = 1000.0
    cross_dephasing_time: float = math.inf
    background_fraction: float = 0.0
    ellipticity_delta: float = 0.0
    qwp1_angle: float = 0.0
    phase_offset: float = 0.0

    def __post_init__(self):
        if not (self.fss_S >= 0 and np.isfinite(self.fss_S)):
            raise ValueError(f"fss_S must be finite and >= 0, got {self.fss_S}")
        for name in ("exciton_lifetime", "biexciton_lifetime", "cross_dephasing_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.background_fraction <= 1.0:
            raise ValueError(f"background_fraction must lie in [0, 1], got {self.background_fraction}")
        for name in ("ellipticity_delta", "qwp1_angle", "phase_offset"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def replace(self, **changes) -> "CascadeParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def phase_at_delay(S, tau):
    """Pair phase accumulated after a delay ``tau`` (ps) for FSS ``S`` (micro-eV)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    phi = np.asarray(S, dtype=float) * tau / HBAR_UEV_PS
    return float(phi) if np.ndim(phi) == 0 else phi


def oscillation_period(S: float) -> float:
    """Period 2*pi*hbar/S in ps of the HH-VV phase (infinite for S = 0)."""
    return math.inf if S == 0 else 2 * math.pi * HBAR_UEV_PS / S


def two_photon_state(phi: float) -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, np.exp(1j * phi)], dtype=complex) / math.sqrt(2.0)


def exciton_photon_state(phi: float) -> PolarizationVector:
    """Exciton photon emitted after an R-polarized biexciton photon."""
    r = basis_state("R").vector
    l = basis_state("L").vector
    return PolarizationVector.from_array((np.exp(1j * phi) * l - 1j * np.exp(-1j * phi) * r) / math.sqrt(2.0))


def pure_density(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def qwp1_error_unitary(params: CascadeParams) -> np.ndarray:
    """Actual QWP1 (angle offset, retardance pi/2 + delta) times the inverse ideal QWP1."""
    actual = jones_waveplate(params.qwp1_angle, math.pi / 2 + params.ellipticity_delta)
    return actual @ jones_qwp(0.0).conj().T


def density_at_delay(params: CascadeParams, tau):
    """Density matrix of pairs detected with delay ``tau`` (scalar or array, ps).

    The HH-VV coherence of ``(|HH> + e^{i phi}|VV>)/sqrt(2)`` is damped by
    ``exp(-tau / cross_dephasing_time)``, the result is mixed with
    ``background_fraction`` of I/4, and both photons then pass the imperfect
    QWP1. Array input returns a stack of shape ``(n, 4, 4)``.
    """
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau_arr < 0) or not np.all(np.isfinite(tau_arr)):
        raise ValueError("tau must be finite and >= 0")
    coh = coherence(params, tau_arr)

    b = params.background_fraction
    rho = np.zeros((tau_arr.size, 4, 4), dtype=complex)
    rho[:, 0, 0] = 0.5
    rho[:, 3, 3] = 0.5
    rho[:, 0, 3] = coh
    rho[:, 3, 0] = coh.conj()
    rho = (1.0 - b) * rho + b * np.eye(4) / 4.0

    u = qwp1_error_unitary(params)
    uu = np.kron(u, u)
    rho = uu @ rho @ uu.conj().T
    return rho[0] if np.ndim(tau) == 0 else rho


def projection_probability(rho, proj):
    """``Tr(rho P)`` clamped to [0, 1]; broadcasts over a leading stack axis of ``rho``."""
    p = np.real(np.einsum("...ij,ji->...", np.asarray(rho), np.asarray(proj)))
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def projection_terms(params: CascadeParams, proj) -> tuple[float, complex]:
    """Constants ``(a, m)`` with ``Tr(rho(tau) P) = a + 2 Re(c(tau) m)``.

    rho(tau) is affine in the complex coherence ``c(tau) = <HH|rho|VV>``
    taken before the QWP1 step.
    """
    proj = np.asarray(proj, dtype=complex)
    b = params.background_fraction
    u = qwp1_error_unitary(params)
    uu = np.kron(u, u)
    p_rot = uu.conj().T @ proj @ uu
    a = (1 - b) * 0.5 * np.real(p_rot[0, 0] + p_rot[3, 3]) + b * 0.25 * np.real(np.trace(p_rot))
    m = (1 - b) * p_rot[3, 0]  # Tr(E_03 P') picks the (VV, HH) entry
    return float(a), complex(m)


def coherence(params: CascadeParams, tau):
    """``<HH|rho|VV>`` before background mixing and QWP1."""
    tau = np.asarray(tau, dtype=float)
    phi = params.phase_offset + params.fss_S * tau / HBAR_UEV_PS
    return 0.5 * np.exp(-tau / params.cross_dephasing_time) * np.exp(-1j * phi)


def projection_curve(params: CascadeParams, proj, tau) -> np.ndarray:
    """``Tr(rho(tau) P)`` on an array of delays without building the 4x4 stack."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    a, m = projection_terms(params, proj)
    return np.clip(a + 2 * np.real(coherence(params, tau) * m), 0.0, 1.0)


def time_windowed_density(params: CascadeParams, window_start: float, window_width: float) -> np.ndarray:
    """Exciton-decay-weighted average of rho(tau) over a delay window, unit trace."""
    if not window_width > 0:
        raise ValueError("window_width must be > 0")
    if window_start < 0:
        raise ValueError("window_start must be >= 0")
    step = min(1.0, window_width / 64.0)
    n = max(int(math.ceil(window_width / step)), 1) + 1
    tau = np.linspace(window_start, window_start + window_width, n)
    w = np.exp(-(tau - window_start) / params.exciton_lifetime)
    rho = trapezoid(w[:, None, None] * density_at_delay(params, tau), tau, axis=0)
    rho = rho / np.trace(rho).real
    return 0.5 * (rho + rho.conj().T)


def check_density_matrix(rho, atol: float = 1e-10) -> np.ndarray:
    """Validate a 4x4 density matrix and return it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 density matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > atol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -atol:
        raise ValueError("density matrix has negative eigenvalues")
    return rho
