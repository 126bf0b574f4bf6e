"""Two-qubit polarization tomography from 16 projective coincidence counts.

Reconstruction follows the usual two stages: a linear inversion that can
return unphysical matrices, then a Poisson maximum-likelihood fit over a
triangular parameterization ``rho = T^dagger T / Tr(T^dagger T)`` which is
physical by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import metrics
from .cascade import projection_probability
from .polarization import AnalyzerSetting, analyzer_projection_state, canonical_setting, two_photon_projector

__all__ = [
    "STANDARD_LABELS",
    "DegenerateSettingsError",
    "TomographyRecord",
    "TomographyInput",
    "MLEOptions",
    "FitReport",
    "standard_settings",
    "check_completeness",
    "predicted_probability",
    "expected_counts",
    "linear_reconstruct",
    "params_to_density",
    "density_to_params",
    "poisson_nll",
    "mle_reconstruct",
    "error_bars",
]

# The standard 16-setting product-projection set (XX label first).
STANDARD_LABELS = (
    "HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH",
    "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL",
)

P_FLOOR = 1e-12
_COND_LIMIT = 1e12


class DegenerateSettingsError(ValueError):
    """The measured projectors do not determine a 4x4 density matrix."""


@dataclass(frozen=True)
class TomographyRecord:
    setting_xx: AnalyzerSetting
    setting_x: AnalyzerSetting
    counts: float

    @property
    def label(self) -> str:
        return f"{self.setting_xx.label}{self.setting_x.label}"

    def projector(self) -> np.ndarray:
        return two_photon_projector(
            analyzer_projection_state(self.setting_xx), analyzer_projection_state(self.setting_x)
        )


@dataclass
class TomographyInput:
    records: list[TomographyRecord]
    acquisition_note: str = ""

    def __post_init__(self):
        if len(self.records) != 16:
            raise ValueError(f"tomography needs exactly 16 records, got {len(self.records)}")
        counts = self.counts
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.counts for r in self.records], dtype=float)

    def projectors(self) -> np.ndarray:
        return np.array([r.projector() for r in self.records])

    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def with_counts(self, counts) -> "TomographyInput":
        counts = np.asarray(counts, dtype=float)
        recs = [TomographyRecord(r.setting_xx, r.setting_x, float(c)) for r, c in zip(self.records, counts)]
        return TomographyInput(recs, self.acquisition_note)

    @classmethod
    def from_labels(cls, labels: Sequence[str], counts, note: str = "") -> "TomographyInput":
        """Build from two-letter labels such as ``"DR"`` using the canonical analyzer angles."""
        counts = np.asarray(counts, dtype=float)
        if len(labels) != len(counts):
            raise ValueError("labels and counts differ in length")
        recs = []
        for lab, c in zip(labels, counts):
            if len(lab) != 2:
                raise ValueError(f"setting label must have two letters, got {lab!r}")
            recs.append(TomographyRecord(canonical_setting(lab[0]), canonical_setting(lab[1]), float(c)))
        return cls(recs, note)


def standard_settings() -> list[tuple[AnalyzerSetting, AnalyzerSetting]]:
    return [(canonical_setting(lab[0]), canonical_setting(lab[1])) for lab in STANDARD_LABELS]


def predicted_probability(rho, pair: tuple[AnalyzerSetting, AnalyzerSetting]) -> float:
    proj = two_photon_projector(analyzer_projection_state(pair[0]), analyzer_projection_state(pair[1]))
    return projection_probability(rho, proj)


def expected_counts(rho, total: float = 1.0, pairs=None) -> TomographyInput:
    """Noiseless counts ``total * p_k`` for the standard settings (or ``pairs``)."""
    pairs = standard_settings() if pairs is None else list(pairs)
    recs = [TomographyRecord(a, b, total * predicted_probability(rho, (a, b))) for a, b in pairs]
    return TomographyInput(recs)


# Hermitian operator basis: the 16 two-qubit Pauli products.
_PAULI = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]
_BASIS = np.array([np.kron(a, b) for a in _PAULI for b in _PAULI])


def _design_matrix(projectors: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("kij,bji->kb", projectors, _BASIS)) / 4.0


def check_completeness(projectors: np.ndarray) -> float:
    """Condition number of the linear map from rho to projection probabilities."""
    a = _design_matrix(np.asarray(projectors))
    if a.shape != (16, 16):
        raise DegenerateSettingsError("need 16 projectors")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise DegenerateSettingsError(f"projector set is not informationally complete (cond={cond:.3g})")
    return float(cond)


def _inverted(inp: TomographyInput) -> np.ndarray:
    """``N * rho`` from linear inversion, before normalization."""
    projs = inp.projectors()
    check_completeness(projs)
    if inp.counts.sum() <= 0:
        raise ValueError("all counts are zero")
    coeffs = np.linalg.solve(_design_matrix(projs), inp.counts)
    m = np.einsum("b,bij->ij", coeffs, _BASIS) / 4.0
    return 0.5 * (m + m.conj().T)


def linear_reconstruct(inp: TomographyInput) -> np.ndarray:
    """Linear inversion; Hermitian and unit-trace but possibly not PSD.

    The shared exposure factor is absorbed by solving for ``N * rho`` and
    dividing by its trace.
    """
    m = _inverted(inp)
    tr = np.trace(m).real
    if tr <= 1e-12 * inp.counts.sum():
        raise ValueError("linear inversion produced a non-positive trace")
    return m / tr


_TRIL = np.tril_indices(4, -1)


def params_to_density(t) -> np.ndarray:
    """16 reals (4 diagonal, 6 complex off-diagonal) to a density matrix."""
    tmat = _params_to_tmat(t)
    g = tmat.conj().T @ tmat
    return g / np.trace(g).real


def _params_to_tmat(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tmat = np.zeros((4, 4), dtype=complex)
    tmat[np.diag_indices(4)] = t[:4]
    tmat[_TRIL] = t[4:10] + 1j * t[10:16]
    return tmat


def density_to_params(rho, eps: float = 1e-9) -> np.ndarray:
    """Lower-triangular ``T`` with ``T^dagger T`` proportional to ``rho``.

    A Cholesky factor of the index-reversed matrix gives the reverse-order
    factorization; ``eps`` of I/4 is mixed in so the factorization exists at
    the PSD boundary.
    """
    rho = np.asarray(rho, dtype=complex)
    rho = (1 - eps) * rho + eps * np.eye(4) / 4
    j = np.eye(4)[::-1]
    low = np.linalg.cholesky(j @ rho @ j)
    tmat = (j @ low @ j).conj().T
    return np.concatenate([tmat[np.diag_indices(4)].real, tmat[_TRIL].real, tmat[_TRIL].imag])


def poisson_nll(rho, projectors, counts) -> tuple[float, float]:
    """Poisson negative log-likelihood with the shared normalization profiled out.

    Returns ``(nll, n_tot)`` where ``n_tot = sum(counts) / sum(p)``.
    Zero-count settings contribute only their ``n_tot * p_k`` term.
    """
    counts = np.asarray(counts, dtype=float)
    p = np.maximum(np.real(np.einsum("ij,kji->k", rho, projectors)), P_FLOOR)
    n_tot = counts.sum() / p.sum()
    mu = n_tot * p
    pos = counts > 0
    nll = float(np.sum(mu) - np.sum(counts[pos] * np.log(mu[pos])))
    return nll, float(n_tot)


@dataclass(frozen=True)
class MLEOptions:
    max_iter: int = 2000
    tol: float = 1e-12
    seed: int = 0
    n_starts: int = 4
    perturbation: float = 0.1


@dataclass
class FitReport:
    converged: bool
    iterations: int
    nll: float
    nll_seed: float
    gradient_norm: float
    n_tot: float
    n_starts: int
    message: str = ""
    start_nlls: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "nll": self.nll,
            "nll_seed": self.nll_seed,
            "gradient_norm": self.gradient_norm,
            "n_tot": self.n_tot,
            "n_starts": self.n_starts,
            "message": self.message,
            "start_nlls": list(self.start_nlls),
        }


def _objective(projectors: np.ndarray, freqs: np.ndarray) -> Callable:
    """Scaled profiled NLL ``ln(sum q) - sum f_k ln q_k`` of ``G = T^dagger T`` and its gradient.

    The trace normalization of ``G`` cancels between the two terms.
    """
    pos = freqs > 0

    def fun(t):
        tmat = _params_to_tmat(t)
        g = tmat.conj().T @ tmat
        q = np.real(np.einsum("ij,kji->k", g, projectors))
        qsum = q.sum()
        if qsum <= 0:
            return math.inf, np.zeros_like(t)
        q = np.maximum(q, P_FLOOR * qsum)
        val = math.log(qsum) - float(np.sum(freqs[pos] * np.log(q[pos])))
        dq = np.full(q.shape, 1.0 / qsum)
        dq[pos] -= freqs[pos] / q[pos]
        grad_t = 2.0 * tmat @ np.einsum("k,kij->ij", dq, projectors)
        grad = np.concatenate([grad_t[np.diag_indices(4)].real, grad_t[_TRIL].real, grad_t[_TRIL].imag])
        return val, grad

    return fun


def _clipped(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(4, dtype=complex) / 4
    w /= w.sum()
    return (v * w) @ v.conj().T


def mle_reconstruct(inp: TomographyInput, options: MLEOptions | None = None) -> tuple[np.ndarray, FitReport]:
    """Maximum-likelihood density matrix under a Poisson count model.

    Starts from the clipped linear inversion plus ``n_starts - 1`` seeded
    perturbations of it; the lowest NLL wins (first found on ties). Failure
    to converge is reported in the :class:`FitReport`, never raised.
    """
    opts = options or MLEOptions()
    counts = inp.counts
    n_sum = counts.sum()
    if n_sum <= 0:
        raise ValueError("all counts are zero")
    projs = inp.projectors()
    freqs = counts / n_sum
    fun = _objective(projs, freqs)

    # sparse counts can invert to a non-positive trace; clipping the raw
    # inversion still gives a usable start
    seed_rho = _clipped(_inverted(inp))
    nll_seed, _ = poisson_nll(seed_rho, projs, counts)

    t0 = density_to_params(seed_rho)
    rng = np.random.default_rng(opts.seed)
    starts = [t0]
    scale = opts.perturbation * max(np.max(np.abs(t0)), 1e-3)
    for _ in range(max(opts.n_starts, 1) - 1):
        starts.append(t0 + scale * rng.standard_normal(t0.shape))

    best = None
    start_nlls = []
    total_iter = 0
    for x0 in starts:
        res = minimize(
            fun, x0, jac=True, method="BFGS",
            options={"maxiter": opts.max_iter, "gtol": opts.tol, "xrtol": 0.0},
        )
        total_iter += int(res.nit)
        rho = params_to_density(res.x)
        nll, _ = poisson_nll(rho, projs, counts)
        start_nlls.append(nll)
        if best is None or nll < best[0]:
            best = (nll, rho, res)

    nll, rho, res = best
    if nll_seed < nll:
        # The optimizer never ends above its start, but the start is the
        # eps-regularized seed; keep the exact clipped seed if it is better.
        nll, rho = nll_seed, seed_rho
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    _, n_tot = poisson_nll(rho, projs, counts)
    grad_norm = float(np.linalg.norm(fun(res.x)[1]))
    # BFGS reports precision loss at rank-deficient optima; with the
    # objective normalized to frequencies a gradient this small is the floor.
    converged = bool(res.success) or grad_norm < 1e-8 or (res.status == 2 and grad_norm < 1e-6)
    report = FitReport(
        converged=converged,
        iterations=total_iter,
        nll=float(nll),
        nll_seed=float(nll_seed),
        gradient_norm=grad_norm,
        n_tot=n_tot,
        n_starts=len(starts),
        message=str(res.message),
        start_nlls=start_nlls,
    )
    return rho, report


def error_bars(
    inp: TomographyInput,
    n_resamples: int = 100,
    seed: int = 0,
    references: Mapping[str, np.ndarray] | None = None,
    options: MLEOptions | None = None,
) -> dict:
    """Poisson-resampled standard deviations of fidelity, concurrence and purity.

    ``references`` maps names to pure reference states. Each resample draws
    its counts from its own child seed, so results depend only on ``seed``.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    references = dict(references or {})
    opts = options or MLEOptions(n_starts=2)
    children = np.random.SeedSequence(seed).spawn(n_resamples)
    base = inp.counts

    rows = []
    failures = 0
    for child in children:
        rng = np.random.default_rng(child)
        sample = rng.poisson(base).astype(float)
        try:
            rho, _ = mle_reconstruct(inp.with_counts(sample), opts)
        except ValueError:
            failures += 1
            continue
        row = {f"fidelity[{name}]": metrics.fidelity_to_pure(rho, psi) for name, psi in references.items()}
        row["concurrence"] = metrics.concurrence(rho)
        row["purity"] = metrics.purity(rho)
        rows.append(row)

    if failures > 0.1 * n_resamples:
        raise RuntimeError(f"{failures} of {n_resamples} resamples failed")
    keys = list(rows[0])
    report = {"n_resamples": n_resamples, "n_failed": failures, "seed": seed, "mean": {}, "std": {}}
    for k in keys:
        vals = np.array([r[k] for r in rows])
        report["mean"][k] = float(vals.mean())
        report["std"][k] = float(vals.std(ddof=1))
    return report
