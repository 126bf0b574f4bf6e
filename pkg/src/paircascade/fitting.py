"""Least-squares fits: Lorentzian lines, FSS oscillations vs. HWP angle and
damped-cosine coincidence oscillations.

All fits share :func:`least_squares`, a small Levenberg-Marquardt engine
with Marquardt diagonal scaling. Energies are in micro-eV and delays in ps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .coincidence import CoincidenceHistogram

__all__ = [
    "HC_EV_NM",
    "FitResult",
    "NoPeakError",
    "Spectrum",
    "least_squares",
    "lorentzian",
    "fit_lorentzian",
    "fit_fss_oscillation",
    "fit_fss_pair",
    "damped_cosine",
    "fit_damped_cosine",
    "wavelength_to_energy",
]

HC_EV_NM = 1239.841984  # E[eV] = HC_EV_NM / lambda[nm]


class NoPeakError(ValueError):
    pass


@dataclass
class FitResult:
    params: dict[str, float]
    stderr: dict[str, float] | None
    residual_norm: float
    converged: bool
    n_iter: int
    rank_deficient: bool = False
    message: str = ""
    history: list[float] = field(default_factory=list, repr=False)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "stderr": None if self.stderr is None else dict(self.stderr),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "rank_deficient": self.rank_deficient,
            "message": self.message,
            "notes": dict(self.notes),
        }


def _numeric_jacobian(fun: Callable, p: np.ndarray, r0: np.ndarray) -> np.ndarray:
    jac = np.empty((r0.size, p.size))
    for j in range(p.size):
        h = 1e-6 * max(abs(p[j]), 1e-3)
        dp = np.zeros_like(p)
        dp[j] = h
        jac[:, j] = (fun(p + dp) - fun(p - dp)) / (2 * h)
    return jac


def least_squares(
    residuals: Callable[[np.ndarray], np.ndarray],
    p0: Sequence[float],
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
    names: Sequence[str] | None = None,
    max_iter: int = 500,
    tol: float = 1e-10,
    xtol: float = 1e-12,
) -> FitResult:
    """Minimize ``sum(residuals(p)**2)`` with Levenberg-Marquardt.

    Converges when both the actual and the predicted relative decrease of
    the cost fall below ``tol``, or when the step is below ``xtol`` relative
    to the parameters. Only cost-decreasing steps are accepted, so
    ``history`` (cost after each accepted step) is non-increasing.
    Exceeding ``max_iter`` returns ``converged=False`` with the best point.
    """
    p = np.asarray(p0, dtype=float).copy()
    names = list(names) if names is not None else [f"p{i}" for i in range(p.size)]
    if not np.all(np.isfinite(p)):
        raise ValueError("initial guess must be finite")
    r = np.asarray(residuals(p), dtype=float)
    if r.size < p.size:
        raise ValueError(f"need at least as many residuals ({r.size}) as parameters ({p.size})")
    jac_fn = jacobian or (lambda q: _numeric_jacobian(residuals, q, residuals(q)))
    cost = float(r @ r)
    history = [cost]
    converged = False
    message = "max_iter exceeded"
    n_iter = 0
    lam = None

    if cost == 0.0:
        converged, message = True, "zero residual at start"
    else:
        jac = jac_fn(p)
        while n_iter < max_iter:
            n_iter += 1
            jtj = jac.T @ jac
            g = jac.T @ r
            diag = np.maximum(np.diag(jtj), 1e-300)
            if lam is None:
                lam = 1e-3 * float(diag.max())
            accepted = False
            for _ in range(60):
                a = np.vstack([jac, np.diag(np.sqrt(lam * diag))])
                rhs = np.concatenate([-r, np.zeros(p.size)])
                step = np.linalg.lstsq(a, rhs, rcond=None)[0]
                p_new = p + step
                r_new = np.asarray(residuals(p_new), dtype=float)
                cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
                predicted = -(2 * g @ step + step @ jtj @ step)
                if cost_new < cost:
                    accepted = True
                    break
                lam *= 4.0
            if not accepted:
                converged, message = True, "no further decrease possible"
                break
            actual_rel = (cost - cost_new) / cost
            pred_rel = predicted / cost
            small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
            p, r, cost = p_new, r_new, cost_new
            history.append(cost)
            lam = max(lam / 3.0, 1e-300)
            if cost == 0.0:
                converged, message = True, "zero residual"
                break
            if (actual_rel < tol and pred_rel < tol) or small_step:
                converged, message = True, "converged"
                break
            jac = jac_fn(p)

    jac = jac_fn(p)
    sv = np.linalg.svd(jac, compute_uv=False)
    rank_def = bool(sv.size == 0 or sv[-1] <= 1e-10 * sv[0])
    stderr = None
    if converged:
        dof = max(r.size - p.size, 1)
        s2 = cost / dof
        cov = np.linalg.pinv(jac.T @ jac) * s2
        stderr = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    return FitResult(
        params={n: float(v) for n, v in zip(names, p)},
        stderr=stderr,
        residual_norm=float(math.sqrt(cost)),
        converged=converged,
        n_iter=n_iter,
        rank_deficient=rank_def,
        message=message,
        history=history,
    )


# -- spectra -----------------------------------------------------------------


@dataclass
class Spectrum:
    x: np.ndarray
    intensity: np.ndarray
    axis_kind: str = "energy"  # "energy" (micro-eV) or "wavelength" (nm)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.axis_kind not in ("energy", "wavelength"):
            raise ValueError("axis_kind must be 'energy' or 'wavelength'")
        if self.x.shape != self.intensity.shape or self.x.ndim != 1:
            raise ValueError("axis and intensity must be 1-D arrays of equal length")
        if self.x.size < 8:
            raise ValueError("a spectrum needs at least 8 points")
        d = np.diff(self.x)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("spectral axis must be strictly monotonic")

    def to_energy(self) -> "Spectrum":
        if self.axis_kind == "energy":
            return self
        e = wavelength_to_energy(self.x)
        order = np.argsort(e)
        return Spectrum(e[order], self.intensity[order], "energy")


def wavelength_to_energy(wavelength_nm):
    """Photon energy in micro-eV."""
    return HC_EV_NM / np.asarray(wavelength_nm, dtype=float) * 1e6


def lorentzian(x, center, fwhm, amplitude, offset):
    hw2 = (0.5 * fwhm) ** 2
    return amplitude * hw2 / ((np.asarray(x) - center) ** 2 + hw2) + offset


def _half_max_width(x: np.ndarray, y: np.ndarray, i_peak: int, level: float) -> float:
    def crossing(direction):
        i = i_peak
        while 0 <= i + direction < x.size and y[i + direction] > level:
            i += direction
        j = i + direction
        if not 0 <= j < x.size:
            return x[i]
        # linear interpolation between the last point above and first below
        return x[i] + (x[j] - x[i]) * (y[i] - level) / (y[i] - y[j])

    width = abs(crossing(1) - crossing(-1))
    return max(width, float(np.min(np.abs(np.diff(x)))))


def fit_lorentzian(spec: Spectrum, initial_guess: Mapping[str, float] | None = None) -> FitResult:
    """Fit ``A (G/2)^2 / ((x - x0)^2 + (G/2)^2) + B`` on the spectrum's own axis."""
    x, y = spec.x, spec.intensity
    med = float(np.median(y))
    if not y.max() > 3 * med or y.max() <= y.min():
        raise NoPeakError("no peak: maximum intensity does not exceed 3x the median")
    if initial_guess is None:
        i = int(np.argmax(y))
        base = float(min(med, y.min())) if med > 0 else float(y.min())
        amp = float(y[i] - base)
        guess = {
            "center": float(x[i]),
            "fwhm": _half_max_width(x, y, i, base + 0.5 * amp),
            "amplitude": amp,
            "offset": base,
        }
    else:
        guess = {k: float(initial_guess[k]) for k in ("center", "fwhm", "amplitude", "offset")}

    ref = guess["center"]
    xs = x - ref  # fit in a shifted frame so the center parameter is O(fwhm)

    def model_parts(p):
        c, w, a, b = p
        d = xs - c
        hw2 = 0.25 * w * w
        den = d * d + hw2
        return d, hw2, den, a, b, w

    def resid(p):
        d, hw2, den, a, b, _ = model_parts(p)
        return a * hw2 / den + b - y

    def jac(p):
        d, hw2, den, a, b, w = model_parts(p)
        j = np.empty((x.size, 4))
        j[:, 0] = a * hw2 * 2 * d / den ** 2
        j[:, 1] = a * (0.5 * w * den - hw2 * 0.5 * w) / den ** 2
        j[:, 2] = hw2 / den
        j[:, 3] = 1.0
        return j

    p0 = [guess["center"] - ref, guess["fwhm"], guess["amplitude"], guess["offset"]]
    res = least_squares(resid, p0, jac, names=["center", "fwhm", "amplitude", "offset"])
    res.params["center"] += ref
    res.params["fwhm"] = abs(res.params["fwhm"])
    res.notes["axis_kind"] = spec.axis_kind
    return res


# -- fine-structure splitting ------------------------------------------------


def _check_angles(theta: np.ndarray, min_points: int = 8):
    if theta.size < min_points:
        raise ValueError(f"need at least {min_points} angle points")
    if np.ptp(theta) < math.pi / 2 - 1e-12:
        raise ValueError("HWP angles must span at least pi/2")


def _amplitude_phase(a: float, b: float, cov_ab: np.ndarray) -> tuple[float, float, float, float]:
    """``(S, phase0, err_S, err_phase0)`` from ``a cos4t + b sin4t = (S/2) cos(4t + phase0)``."""
    s = 2.0 * math.hypot(a, b)
    phase = math.atan2(-b, a)
    if s > 0:
        ga = np.array([a, b]) * 2 / math.hypot(a, b)  # dS/d(a, b)
        gp = np.array([b, -a]) / (a * a + b * b)  # dphase/d(a, b)
        err_s = math.sqrt(max(ga @ cov_ab @ ga, 0.0))
        err_p = math.sqrt(max(gp @ cov_ab @ gp, 0.0))
    else:
        err_s = 2.0 * math.sqrt(max(np.max(np.diag(cov_ab)), 0.0))
        err_p = math.pi
    return s, phase, err_s, err_p


def fit_fss_oscillation(angles, energies, with_qwp: bool = True) -> FitResult:
    """Fit ``E(t) = E0 + (S/2) cos(4t + phase0)`` to line centers vs. HWP angle.

    The model is linear in ``(E0, a, b)`` with ``a cos 4t + b sin 4t``; S is
    reported as the positive peak-to-peak amplitude. Without QWP1 in the
    path the amplitude of circularly coupled emission underestimates the
    splitting, which is recorded in ``notes``.
    """
    theta = np.asarray(angles, dtype=float)
    e = np.asarray(energies, dtype=float)
    if theta.shape != e.shape:
        raise ValueError("angles and energies differ in length")
    _check_angles(theta)
    ref = float(np.mean(e))
    design = np.column_stack([np.ones_like(theta), np.cos(4 * theta), np.sin(4 * theta)])
    res = _fit_linear(design, e - ref, ["E0", "a", "b"])
    a, b = res.params["a"], res.params["b"]
    cov = _cov_from(res, design)
    s, phase, err_s, err_p = _amplitude_phase(a, b, cov[1:, 1:])
    out = FitResult(
        params={"S": s, "phase0": phase, "mean_energy": res.params["E0"] + ref},
        stderr=None if res.stderr is None else {"S": err_s, "phase0": err_p, "mean_energy": res.stderr["E0"]},
        residual_norm=res.residual_norm,
        converged=res.converged,
        n_iter=res.n_iter,
        rank_deficient=res.rank_deficient,
        message=res.message,
        history=res.history,
        notes={"with_qwp": bool(with_qwp)},
    )
    if not with_qwp:
        out.notes["warning"] = "measured without QWP1; amplitude is a lower bound on the splitting"
    return out


def fit_fss_pair(angles_x, energies_x, angles_xx, energies_xx) -> FitResult:
    """Joint X/XX fit with one shared splitting and anti-phase oscillations.

    ``E_X = E0_X + (S/2) cos(4t + phase0)`` and
    ``E_XX = E0_XX + (S/2) cos(4t + phase0 + pi)``.
    """
    tx = np.asarray(angles_x, dtype=float)
    txx = np.asarray(angles_xx, dtype=float)
    ex = np.asarray(energies_x, dtype=float)
    exx = np.asarray(energies_xx, dtype=float)
    _check_angles(tx)
    _check_angles(txx)
    ref_x, ref_xx = float(ex.mean()), float(exx.mean())
    rows_x = np.column_stack([np.ones_like(tx), np.zeros_like(tx), np.cos(4 * tx), np.sin(4 * tx)])
    rows_xx = np.column_stack([np.zeros_like(txx), np.ones_like(txx), -np.cos(4 * txx), -np.sin(4 * txx)])
    design = np.vstack([rows_x, rows_xx])
    target = np.concatenate([ex - ref_x, exx - ref_xx])
    res = _fit_linear(design, target, ["E0_X", "E0_XX", "a", "b"])
    cov = _cov_from(res, design)
    s, phase, err_s, err_p = _amplitude_phase(res.params["a"], res.params["b"], cov[2:, 2:])
    stderr = None
    if res.stderr is not None:
        stderr = {"S": err_s, "phase0": err_p, "mean_energy_X": res.stderr["E0_X"], "mean_energy_XX": res.stderr["E0_XX"]}
    return FitResult(
        params={"S": s, "phase0": phase, "mean_energy_X": res.params["E0_X"] + ref_x, "mean_energy_XX": res.params["E0_XX"] + ref_xx},
        stderr=stderr,
        residual_norm=res.residual_norm,
        converged=res.converged,
        n_iter=res.n_iter,
        rank_deficient=res.rank_deficient,
        message=res.message,
        history=res.history,
    )


def _fit_linear(design: np.ndarray, target: np.ndarray, names) -> FitResult:
    p0 = np.linalg.lstsq(design, target, rcond=None)[0]
    return least_squares(lambda p: design @ p - target, p0, lambda p: design, names=names)


def _cov_from(res: FitResult, design: np.ndarray) -> np.ndarray:
    dof = max(design.shape[0] - design.shape[1], 1)
    return np.linalg.pinv(design.T @ design) * res.residual_norm ** 2 / dof


# -- damped oscillations -----------------------------------------------------

_OSC_NAMES = ["period", "phase", "amplitude", "decay_time", "offset", "baseline"]


def damped_cosine(tau, period, phase, amplitude, decay_time, offset, baseline):
    """``exp(-tau/T_d) (baseline + amplitude cos(2 pi tau / T + phase)) + offset``."""
    tau = np.asarray(tau, dtype=float)
    return np.exp(-tau / decay_time) * (baseline + amplitude * np.cos(2 * np.pi * tau / period + phase)) + offset


def _osc_linear_solve(tau, y, w, period, decay):
    env = np.exp(-tau / decay)
    arg = 2 * np.pi * tau / period
    design = np.column_stack([env, env * np.cos(arg), env * np.sin(arg), np.ones_like(tau)])
    coef = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)[0]
    sse = float(np.sum(((design @ coef) - y) ** 2 * w ** 2))
    return sse, coef


def fit_damped_cosine(
    hist: CoincidenceHistogram,
    initial_guess: Mapping[str, float] | None = None,
    fit_range: tuple[float, float] | None = None,
    poisson_weights: bool = True,
) -> FitResult:
    """Fit a damped cosine to a coincidence histogram over ``fit_range`` (ps).

    Without an initial guess, the period is located by a coarse scan of 64
    periods between 50 and 1000 ps (with a small decay-time grid), solving
    the remaining linear coefficients exactly at each grid point. Bins are
    weighted by ``1/sqrt(max(N, 1))`` when ``poisson_weights`` is set.
    """
    tau = hist.centers
    y = np.asarray(hist.counts, dtype=float)
    lo, hi = fit_range if fit_range is not None else (tau[0], tau[-1])
    mask = (tau >= lo) & (tau <= hi)
    tau, y = tau[mask], y[mask]
    if tau.size < 6:
        raise ValueError("fit range holds fewer than 6 bins")
    span = float(tau[-1] - tau[0])
    w = 1.0 / np.sqrt(np.maximum(y, 1.0)) if poisson_weights else np.ones_like(y)

    if initial_guess is None:
        best = None
        for period in np.geomspace(50.0, 1000.0, 64):
            if 1.5 * period > span:
                continue
            for decay in span * np.geomspace(0.25, 20.0, 9):
                sse, coef = _osc_linear_solve(tau, y, w, period, decay)
                if best is None or sse < best[0]:
                    best = (sse, period, decay, coef)
        if best is None:
            raise ValueError("histogram spans less than 1.5 periods of the shortest trial period")
        _, period, decay, (base, c, s, off) = best
        guess = {
            "period": period,
            "phase": math.atan2(-s, c),
            "amplitude": math.hypot(c, s),
            "decay_time": decay,
            "offset": off,
            "baseline": base,
        }
    else:
        guess = dict(initial_guess)
        if 1.5 * guess["period"] > span:
            raise ValueError("histogram must span at least 1.5 periods of the initial-guess period")
        if "baseline" not in guess or "offset" not in guess or "amplitude" not in guess:
            _, (base, c, s, off) = _osc_linear_solve(tau, y, w, guess["period"], guess.get("decay_time", span))
            guess.setdefault("baseline", base)
            guess.setdefault("offset", off)
            guess.setdefault("amplitude", math.hypot(c, s))
        guess.setdefault("decay_time", span)
        guess.setdefault("phase", 0.0)

    def resid(p):
        return (damped_cosine(tau, *p) - y) * w

    def jac(p):
        period, phase, amp, decay, _, base = p
        env = np.exp(-tau / decay)
        arg = 2 * np.pi * tau / period + phase
        cos, sin = np.cos(arg), np.sin(arg)
        j = np.empty((tau.size, 6))
        j[:, 0] = env * amp * sin * 2 * np.pi * tau / period ** 2
        j[:, 1] = -env * amp * sin
        j[:, 2] = env * cos
        j[:, 3] = env * (base + amp * cos) * tau / decay ** 2
        j[:, 4] = 1.0
        j[:, 5] = env
        return j * w[:, None]

    res = least_squares(resid, [guess[n] for n in _OSC_NAMES], jac, names=_OSC_NAMES)
    if res.params["amplitude"] < 0:
        res.params["amplitude"] = -res.params["amplitude"]
        res.params["phase"] += math.pi
    res.params["phase"] = math.remainder(res.params["phase"], 2 * math.pi)
    res.notes["fit_range"] = [float(lo), float(hi)]
    return res
