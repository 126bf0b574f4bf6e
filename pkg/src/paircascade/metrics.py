"""Two-qubit state-quality and entanglement metrics.

All functions take 4x4 density matrices in HH, HV, VH, VV ordering.
Eigenvalues in [-1e-10, 0) are treated as exact zeros.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "EIG_TOL",
    "psd_sqrt",
    "fidelity",
    "fidelity_to_pure",
    "concurrence",
    "concurrence_pure",
    "purity",
    "trace_distance",
    "best_phase_reference",
    "phase_reference_state",
    "bell_state",
    "BELL_STATES",
]

EIG_TOL = 1e-10
_ROUNDOFF = 64 * np.finfo(float).eps

_SY = np.array([[0, -1j], [1j, 0]])
_SYSY = np.kron(_SY, _SY)


def _as_density(rho, name: str = "rho") -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"{name} must be 4x4, got {rho.shape}")
    return 0.5 * (rho + rho.conj().T)


def psd_sqrt(rho) -> np.ndarray:
    """Hermitian square root of a PSD matrix via eigendecomposition.

    Raises ValueError if an eigenvalue is below ``-EIG_TOL``. Eigenvalues
    within the eigensolver's roundoff of zero are set to exactly zero, since
    their square roots (~1e-8) would otherwise leak into fidelities.
    """
    w, v = np.linalg.eigh(rho)
    if w.min() < -EIG_TOL:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.where(w < _ROUNDOFF * max(w.max(), 0.0), 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    Evaluated as the squared trace norm of ``sqrt(rho) @ sqrt(sigma)``, which
    equals the textbook expression but keeps near-zero eigenvalues from
    turning into ~1e-8 errors through a second square root.
    """
    rho = _as_density(rho, "rho")
    sigma = _as_density(sigma, "sigma")
    s = np.linalg.svd(psd_sqrt(rho) @ psd_sqrt(sigma), compute_uv=False)
    return float(np.clip(np.sum(s) ** 2, 0.0, 1.0))


def fidelity_to_pure(rho, psi) -> float:
    psi = np.asarray(psi, dtype=complex).reshape(4)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("reference state must be normalized")
    val = np.real(np.vdot(psi, np.asarray(rho, dtype=complex) @ psi))
    return float(np.clip(val, 0.0, 1.0))


def concurrence(rho) -> float:
    """Wootters concurrence.

    The square roots of the eigenvalues of ``rho @ rho_tilde`` are the
    singular values of ``sqrt(rho) @ sqrt(rho_tilde)`` with
    ``sqrt(rho_tilde) = YY sqrt(rho)* YY``.
    """
    rho = _as_density(rho)
    r = psd_sqrt(rho)
    r_tilde = _SYSY @ r.conj() @ _SYSY
    lam = np.sort(np.linalg.svd(r @ r_tilde, compute_uv=False))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def concurrence_pure(psi) -> float:
    """``2|ad - bc|`` for the amplitudes of a pure state."""
    a, b, c, d = np.asarray(psi, dtype=complex).reshape(4) / np.linalg.norm(psi)
    return float(2 * abs(a * d - b * c))


def purity(rho) -> float:
    rho = _as_density(rho)
    return float(np.real(np.trace(rho @ rho)))


def trace_distance(rho, sigma) -> float:
    diff = _as_density(rho) - _as_density(sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def phase_reference_state(theta: float) -> np.ndarray:
    """``(|HH> + e^{i theta}|VV>)/sqrt(2)``."""
    return np.array([1.0, 0.0, 0.0, np.exp(1j * theta)], dtype=complex) / math.sqrt(2.0)


BELL_STATES = {
    "phi+": np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2.0),
    "phi-": np.array([1, 0, 0, -1], dtype=complex) / math.sqrt(2.0),
    "psi+": np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2.0),
    "psi-": np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2.0),
}


def bell_state(name: str) -> np.ndarray:
    try:
        return BELL_STATES[name.lower()].copy()
    except KeyError:
        raise ValueError(f"unknown Bell state {name!r}; expected one of {sorted(BELL_STATES)}") from None


def best_phase_reference(rho) -> tuple[float, float]:
    """Phase ``theta`` in [0, 2pi) maximizing the fidelity to ``(|HH> + e^{i theta}|VV>)/sqrt(2)``.

    The fidelity is ``(rho_HH,HH + rho_VV,VV)/2 + Re(e^{-i theta} rho_VV,HH)``, so
    the optimum sits at the phase of the VV-HH coherence. Zero coherence gives
    ``theta = 0``.
    """
    rho = _as_density(rho)
    coh = rho[3, 0]
    base = 0.5 * float(np.real(rho[0, 0] + rho[3, 3]))
    if abs(coh) < 1e-15:
        return 0.0, float(np.clip(base, 0.0, 1.0))
    theta = float(np.angle(coh)) % (2 * math.pi)
    return theta, float(np.clip(base + abs(coh), 0.0, 1.0))
