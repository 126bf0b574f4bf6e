"""Time-resolved coincidence counting: expected histograms, Monte Carlo
time-tag streams, start-stop correlation, postselection and g(2).

Delays are ``t_X - t_XX`` in ps. One excitation pulse emits at most one
photon pair in the cascade model.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc, wofz

from .cascade import HBAR_UEV_PS, CascadeParams, projection_curve, projection_terms
from .polarization import AnalyzerSetting, analyzer_projection_state

__all__ = [
    "DEFAULT_REP_PERIOD",
    "FWHM_TO_SIGMA",
    "DetectorModel",
    "Binning",
    "CoincidenceHistogram",
    "TimeTagStream",
    "setting_projector",
    "expected_histogram",
    "sample_stream",
    "sample_emitter_stream",
    "correlate",
    "postselect_counts",
    "g2_autocorrelation",
    "g2_center_ratio",
]

DEFAULT_REP_PERIOD = 13158.0  # ps, 76 MHz Ti:Sapphire
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
CHANNELS = ("XX", "X")


@dataclass(frozen=True)
class DetectorModel:
    """Detector pair model shared by both arms.

    ``irf_fwhm`` is the FWHM (ps) of the combined Gaussian timing response on
    the pair delay; ``dark_rate`` is per detector in counts/s.
    """

    irf_fwhm: float = 35.0
    efficiency: float = 1.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not self.irf_fwhm >= 0:
            raise ValueError("irf_fwhm must be >= 0")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")
        if not self.dark_rate >= 0:
            raise ValueError("dark_rate must be >= 0")

    @property
    def sigma(self) -> float:
        return self.irf_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class Binning:
    bin_width: float
    bin_start: float
    n_bins: int

    def __post_init__(self):
        if not (self.bin_width > 0 and np.isfinite(self.bin_width)):
            raise ValueError("bin_width must be positive")
        if not np.isfinite(self.bin_start):
            raise ValueError("bin_start must be finite")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ValueError("n_bins must be a positive integer")

    @property
    def edges(self) -> np.ndarray:
        return self.bin_start + self.bin_width * np.arange(self.n_bins + 1)

    @property
    def stop(self) -> float:
        return self.bin_start + self.bin_width * self.n_bins


@dataclass
class CoincidenceHistogram:
    bin_width: float
    bin_start: float
    counts: np.ndarray
    setting_label: str = ""

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("counts must be a non-empty 1-D array")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def binning(self) -> Binning:
        return Binning(self.bin_width, self.bin_start, self.counts.size)

    @property
    def edges(self) -> np.ndarray:
        return self.binning.edges

    @property
    def centers(self) -> np.ndarray:
        return self.bin_start + self.bin_width * (np.arange(self.counts.size) + 0.5)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_start_ps,counts\n")
        integer = np.issubdtype(self.counts.dtype, np.integer)
        for left, c in zip(self.edges[:-1], self.counts):
            buf.write(f"{float(left)!r},{int(c) if integer else repr(float(c))}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, setting_label: str = "") -> "CoincidenceHistogram":
        rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or rows[0].replace(" ", "") != "bin_start_ps,counts":
            raise ValueError("histogram CSV must start with header 'bin_start_ps,counts'")
        if len(rows) < 2:
            raise ValueError("histogram CSV has no bins")
        starts, vals = [], []
        for ln in rows[1:]:
            a, b = ln.split(",")
            starts.append(float(a))
            vals.append(b.strip())
        integer = all(v.lstrip("-").isdigit() for v in vals)
        counts = np.array([int(v) for v in vals]) if integer else np.array([float(v) for v in vals])
        starts = np.array(starts)
        width = starts[1] - starts[0] if len(starts) > 1 else 1.0
        if len(starts) > 2 and not np.allclose(np.diff(starts), width, rtol=1e-9, atol=1e-9):
            raise ValueError("histogram bins must be uniform")
        return cls(float(width), float(starts[0]), counts, setting_label)


@dataclass
class TimeTagStream:
    """Time-ordered detection events; ``channels`` holds 0 for XX and 1 for X."""

    channels: np.ndarray
    times: np.ndarray
    duration: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.int8)
        self.times = np.asarray(self.times, dtype=float)
        if self.channels.shape != self.times.shape:
            raise ValueError("channels and times differ in length")
        if self.times.size and np.any(np.diff(self.times) < 0):
            raise ValueError("event times must be non-decreasing")
        if np.any((self.channels != 0) & (self.channels != 1)):
            raise ValueError("channel labels must be XX (0) or X (1)")

    def channel_times(self, channel: str) -> np.ndarray:
        return self.times[self.channels == CHANNELS.index(channel)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("channel,time_ps\n")
        for c, t in zip(self.channels, self.times):
            buf.write(f"{CHANNELS[c]},{float(t)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, duration: float | None = None) -> "TimeTagStream":
        rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or rows[0].replace(" ", "") != "channel,time_ps":
            raise ValueError("stream CSV must start with header 'channel,time_ps'")
        chans, times = [], []
        for ln in rows[1:]:
            c, t = ln.split(",")
            c = c.strip()
            if c not in CHANNELS:
                raise ValueError(f"unknown channel {c!r}")
            chans.append(CHANNELS.index(c))
            times.append(float(t))
        times_arr = np.array(times, dtype=float)
        if duration is None:
            duration = float(times_arr.max()) if times_arr.size else 0.0
        return cls(np.array(chans, dtype=np.int8), times_arr, duration)


def setting_projector(setting_xx: AnalyzerSetting | None, setting_x: AnalyzerSetting | None) -> np.ndarray:
    """Two-photon projector; ``None`` on an arm means no analyzer (identity)."""
    return np.kron(*_arm_projectors(setting_xx, setting_x))


def _label(setting_xx, setting_x) -> str:
    return "".join("-" if s is None else (s.label or "?") for s in (setting_xx, setting_x))


def _smoothed_exp_cdf(x: np.ndarray, kappa: complex, sigma: float) -> np.ndarray:
    """``int_0^inf exp(-kappa s) Phi((x - s)/sigma) ds`` for Re(kappa) > 0.

    This is the cumulative of a one-sided (complex) exponential convolved
    with a unit Gaussian. The Gaussian tail factor is evaluated through the
    Faddeeva function so that neither branch overflows.
    """
    x = np.asarray(x, dtype=float)
    kappa = complex(kappa)
    if sigma == 0:
        xp = np.clip(x, 0.0, None)
        return (1.0 - np.exp(-kappa * xp)) / kappa
    phi = 0.5 * erfc(-x / (sigma * math.sqrt(2.0)))
    w = (kappa * sigma - x / sigma) / math.sqrt(2.0)
    gauss = np.exp(-0.5 * (x / sigma) ** 2)
    tail = np.empty(x.shape, dtype=complex)
    right = w.real >= 0
    # erfc(w) = exp(-w^2) erfcx(w) and erfcx(w) = wofz(i w)
    tail[right] = 0.5 * gauss[right] * wofz(1j * w[right])
    xl, wl = x[~right], w[~right]
    tail[~right] = np.exp(-kappa * xl + 0.5 * (kappa * sigma) ** 2) - 0.5 * gauss[~right] * wofz(-1j * wl)
    return (phi - tail) / kappa


def _pair_cdf(params: CascadeParams, proj: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
    """Cumulative detected-pair probability up to delay ``x`` (per emitted pair, unit efficiency)."""
    a, m = projection_terms(params, proj)
    t_x = params.exciton_lifetime
    omega = params.fss_S / HBAR_UEV_PS
    cdf = (a / t_x) * _smoothed_exp_cdf(x, 1.0 / t_x, sigma).real
    if m != 0:
        kappa = 1.0 / t_x + 1.0 / params.cross_dephasing_time + 1j * omega
        coef = (m / t_x) * np.exp(-1j * params.phase_offset)
        cdf = cdf + np.real(coef * _smoothed_exp_cdf(x, kappa, sigma))
    return cdf


def expected_histogram(
    params: CascadeParams,
    detector: DetectorModel,
    setting_xx: AnalyzerSetting | None,
    setting_x: AnalyzerSetting | None,
    pairs_emitted: float,
    binning: Binning,
    rep_period: float = DEFAULT_REP_PERIOD,
) -> CoincidenceHistogram:
    """Expected coincidences per delay bin.

    The true-pair density ``eta^2 N exp(-tau/T_X)/T_X * P(tau)`` is a sum of
    one-sided exponentials, so its convolution with the Gaussian IRF is
    integrated over each bin in closed form. A
    flat accidental floor comes from dark counts against the singles rates
    over the acquisition time ``pairs_emitted * rep_period``.
    """
    if not pairs_emitted > 0:
        raise ValueError("pairs_emitted must be > 0")
    if not rep_period > 0:
        raise ValueError("rep_period must be > 0")
    proj = setting_projector(setting_xx, setting_x)
    edges = binning.edges
    sigma = detector.sigma
    eta2 = detector.efficiency ** 2

    counts = pairs_emitted * eta2 * np.diff(_pair_cdf(params, proj, edges, sigma))
    counts = np.clip(counts, 0.0, None)

    if detector.dark_rate > 0:
        pa, pb = _arm_projectors(setting_xx, setting_x)
        counts = counts + _accidental_floor(params, detector, pa, pb, pairs_emitted, rep_period, binning.bin_width)
    return CoincidenceHistogram(binning.bin_width, binning.bin_start, np.clip(counts, 0, None), _label(setting_xx, setting_x))


def _marginals(params: CascadeParams, proj_xx: np.ndarray, proj_x: np.ndarray) -> tuple[float, float]:
    # single-arm marginals do not depend on the delay for this state family
    m_xx = float(projection_curve(params, np.kron(proj_xx, np.eye(2)), 0.0))
    m_x = float(projection_curve(params, np.kron(np.eye(2), proj_x), 0.0))
    return m_xx, m_x


def _arm_projectors(setting_xx, setting_x):
    a = np.eye(2) if setting_xx is None else analyzer_projection_state(setting_xx).projector()
    b = np.eye(2) if setting_x is None else analyzer_projection_state(setting_x).projector()
    return a, b


def _accidental_floor(params, detector, pa, pb, pairs_emitted, rep_period, bin_width) -> float:
    eta = detector.efficiency
    m_xx, m_x = _marginals(params, pa, pb)
    s_xx = eta * m_xx / rep_period  # singles per ps
    s_x = eta * m_x / rep_period
    d = detector.dark_rate * 1e-12
    t_acq = pairs_emitted * rep_period
    return (d * s_x + s_xx * d + d * d) * bin_width * t_acq


def sample_stream(
    params: CascadeParams,
    detector: DetectorModel,
    setting_xx: AnalyzerSetting | None,
    setting_x: AnalyzerSetting | None,
    rep_period: float = DEFAULT_REP_PERIOD,
    n_pulses: int = 100_000,
    seed: int = 0,
) -> TimeTagStream:
    """Monte Carlo time tags for one analyzer setting.

    Each pulse emits XX after an exponential delay and X after a further
    exponential delay ``tau``. The XX photon passes its analyzer with its
    marginal probability; the X photon then passes with the probability
    conditioned on the XX outcome and on ``rho(tau)``. Efficiency thinning,
    Gaussian jitter (the pair IRF split evenly over the two photons) and
    Poissonian dark counts follow. A fixed seed reproduces the stream exactly.
    """
    if not rep_period > 0:
        raise ValueError("rep_period must be > 0")
    if int(n_pulses) != n_pulses or n_pulses < 1:
        raise ValueError("n_pulses must be a positive integer")
    n = int(n_pulses)
    rng = np.random.default_rng(seed)

    pulse = np.arange(n) * rep_period
    t_xx = pulse + rng.exponential(params.biexciton_lifetime, n)
    tau = rng.exponential(params.exciton_lifetime, n)
    t_x = t_xx + tau

    pa, pb = _arm_projectors(setting_xx, setting_x)
    joint = projection_curve(params, np.kron(pa, pb), tau)
    m_xx, m_x = _marginals(params, pa, pb)
    u = rng.random((2, n))
    pass_xx = u[0] < m_xx
    with np.errstate(divide="ignore", invalid="ignore"):
        p_x_given_pass = np.where(m_xx > 0, joint / m_xx, 0.0)
        p_x_given_block = np.where(m_xx < 1, (m_x - joint) / (1 - m_xx), 0.0)
    p_x = np.clip(np.where(pass_xx, p_x_given_pass, p_x_given_block), 0.0, 1.0)
    pass_x = u[1] < p_x

    eff = rng.random((2, n)) < detector.efficiency
    keep_xx = pass_xx & eff[0]
    keep_x = pass_x & eff[1]

    jitter = detector.sigma / math.sqrt(2.0)
    noise = rng.standard_normal((2, n)) * jitter
    times_xx = t_xx[keep_xx] + noise[0][keep_xx]
    times_x = t_x[keep_x] + noise[1][keep_x]

    duration = n * rep_period
    dark = []
    for _ in range(2):
        k = rng.poisson(detector.dark_rate * 1e-12 * duration)
        dark.append(rng.uniform(0.0, duration, k))
    times = np.concatenate([times_xx, dark[0], times_x, dark[1]])
    chans = np.concatenate([
        np.zeros(times_xx.size + dark[0].size, dtype=np.int8),
        np.ones(times_x.size + dark[1].size, dtype=np.int8),
    ])
    order = np.argsort(times, kind="stable")
    meta = {"setting": _label(setting_xx, setting_x), "rep_period": rep_period, "n_pulses": n}
    return TimeTagStream(chans[order], times[order], duration, seed, meta)


def sample_emitter_stream(
    n_pulses: int,
    rep_period: float = DEFAULT_REP_PERIOD,
    lifetime: float = 2000.0,
    photon_number_probs: Sequence[float] | None = None,
    poisson_mean: float | None = None,
    efficiency: float = 1.0,
    jitter_fwhm: float = 0.0,
    dark_rate: float = 0.0,
    seed: int = 0,
) -> TimeTagStream:
    """Single-channel stream from a pulsed emitter for g(2) studies.

    The photon number per pulse follows ``photon_number_probs`` (index = number
    of photons, default: exactly one) or a Poisson law of ``poisson_mean``.
    Photons are emitted with exponential delays, thinned by ``efficiency``
    and jittered. All events are tagged on the X channel.
    """
    rng = np.random.default_rng(seed)
    n = int(n_pulses)
    if poisson_mean is not None:
        k = rng.poisson(poisson_mean, n)
    else:
        probs = np.asarray([0.0, 1.0] if photon_number_probs is None else photon_number_probs, dtype=float)
        if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("photon_number_probs must be a probability vector")
        k = rng.choice(probs.size, size=n, p=probs)
    k = rng.binomial(k, efficiency)
    pulse_idx = np.repeat(np.arange(n), k)
    t = pulse_idx * rep_period + rng.exponential(lifetime, pulse_idx.size)
    if jitter_fwhm > 0:
        t = t + rng.standard_normal(t.size) * jitter_fwhm * FWHM_TO_SIGMA
    duration = n * rep_period
    nd = rng.poisson(dark_rate * 1e-12 * duration)
    t = np.sort(np.concatenate([t, rng.uniform(0.0, duration, nd)]), kind="stable")
    return TimeTagStream(np.ones(t.size, dtype=np.int8), t, duration, seed, {"rep_period": rep_period})


def _pair_delays(starts: np.ndarray, stops: np.ndarray, lo: float, hi: float, exclude_self: bool = False) -> np.ndarray:
    """All ``stop - start`` delays within [lo, hi); ``stops`` must be sorted."""
    if starts.size == 0 or stops.size == 0:
        return np.empty(0)
    first = np.searchsorted(stops, starts + lo, side="left")
    last = np.searchsorted(stops, starts + hi, side="left")
    n_per = last - first
    total = int(n_per.sum())
    if total == 0:
        return np.empty(0)
    owner = np.repeat(np.arange(starts.size), n_per)
    offset = np.arange(total) - np.repeat(np.cumsum(n_per) - n_per, n_per)
    idx = first[owner] + offset
    delays = stops[idx] - starts[owner]
    if exclude_self:
        delays = delays[idx != owner]
    return delays


def correlate(stream: TimeTagStream, binning: Binning) -> CoincidenceHistogram:
    """Histogram of ``t_X - t_XX`` over all XX-X event pairs inside the binning span."""
    delays = _pair_delays(stream.channel_times("XX"), stream.channel_times("X"), binning.bin_start, binning.stop)
    counts, _ = np.histogram(delays, bins=binning.edges)
    return CoincidenceHistogram(binning.bin_width, binning.bin_start, counts.astype(np.int64), stream.meta.get("setting", ""))


def postselect_counts(hist: CoincidenceHistogram, window_start: float, window_width: float) -> float:
    """Sum of bins whose centers fall in ``[window_start, window_start + window_width)``."""
    if not window_width > 0:
        raise ValueError("window_width must be > 0")
    lo, hi = hist.edges[0], hist.edges[-1]
    eps = 1e-9 * max(1.0, abs(hi - lo))
    if window_start < lo - eps or window_start + window_width > hi + eps:
        raise ValueError(f"window [{window_start}, {window_start + window_width}) lies outside the histogram span [{lo}, {hi})")
    c = hist.centers
    mask = (c >= window_start) & (c < window_start + window_width)
    total = hist.counts[mask].sum()
    return int(total) if np.issubdtype(hist.counts.dtype, np.integer) else float(total)


def g2_autocorrelation(
    stream: TimeTagStream,
    rep_period: float,
    binning: Binning,
    channel: str | None = None,
) -> CoincidenceHistogram:
    """Normalized intensity autocorrelation of one channel.

    Delays between distinct events are histogrammed and scaled so that the
    side peaks, each integrated over +-rep_period/2 around a nonzero multiple
    of the period fully inside the span, have mean area 1. The area of the
    center peak is then g(2)(0); see :func:`g2_center_ratio`.
    """
    if channel is None:
        present = np.unique(stream.channels)
        if present.size > 1:
            raise ValueError("stream has two channels; pass channel='XX' or 'X'")
        times = stream.times
    else:
        times = stream.channel_times(channel)
    delays = _pair_delays(times, times, binning.bin_start, binning.stop, exclude_self=True)
    counts, _ = np.histogram(delays, bins=binning.edges)
    hist = CoincidenceHistogram(binning.bin_width, binning.bin_start, counts.astype(float), "g2")
    areas = _peak_areas(hist, rep_period)
    side = [a for m, a in areas.items() if m != 0]
    if not side:
        raise ValueError("binning span must contain at least one full side peak")
    norm = float(np.mean(side))
    if norm > 0:
        hist.counts = hist.counts / norm
    return hist


def _peak_areas(hist: CoincidenceHistogram, rep_period: float) -> dict[int, float]:
    c = hist.centers
    lo, hi = hist.edges[0], hist.edges[-1]
    out = {}
    m_lo = int(math.ceil((lo + rep_period / 2) / rep_period))
    m_hi = int(math.floor((hi - rep_period / 2) / rep_period))
    for m in range(m_lo, m_hi + 1):
        mask = np.abs(c - m * rep_period) < rep_period / 2
        out[m] = float(hist.counts[mask].sum())
    return out


def g2_center_ratio(hist: CoincidenceHistogram, rep_period: float) -> float:
    """Center-peak area over the mean side-peak area."""
    areas = _peak_areas(hist, rep_period)
    if 0 not in areas:
        raise ValueError("binning span does not contain the full center peak")
    side = [a for m, a in areas.items() if m != 0]
    mean_side = float(np.mean(side)) if side else 0.0
    if mean_side == 0:
        return math.nan
    return areas[0] / mean_side
