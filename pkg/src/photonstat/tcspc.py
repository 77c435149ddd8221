"""Time-correlated single photon counting analysis.

Decay histograms and bi-exponential lifetime fits, start-stop correlation
histograms between click streams, pulsed antibunching metrics (zero-peak to
side-peak area ratio) and the central-dip timescale fit.

Times are picoseconds throughout; fitted lifetimes are reported in
nanoseconds to match the config units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import FitError, FitProblem, least_squares
from .streams import ClickStream, PhotonStream

__all__ = [
    "DecayHistogram",
    "DecayFit",
    "DecayFitError",
    "CorrelationHistogram",
    "PurityReport",
    "DipFitDegenerateError",
    "build_decay_histogram",
    "fit_biexponential",
    "correlate",
    "purity_from_histogram",
    "fit_dip_time",
]

_GAUSS_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class DecayHistogram:
    """Uniform decay histogram; bin_centers in ps."""

    bin_centers: np.ndarray
    counts: np.ndarray
    bin_width: float

    @property
    def total_counts(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class DecayFit:
    """Bi-exponential decay fit. Lifetimes in ns, amplitudes in counts per
    bin at the fit start, slow_fraction is the slow share of the fitted
    signal counts (excluding background).  reduced_chi_square is the weighted
    residual statistic per degree of freedom."""

    tau_fast: float
    tau_slow: float
    amplitude_fast: float
    amplitude_slow: float
    background: float
    covariance: np.ndarray
    converged: bool
    fit_start: float
    reduced_chi_square: float
    message: str

    @property
    def slow_fraction(self) -> float:
        fast = self.amplitude_fast * self.tau_fast
        slow = self.amplitude_slow * self.tau_slow
        return slow / (fast + slow)


class DecayFitError(FitError):
    """Decay fit did not converge; last_fit holds the final iterate."""

    def __init__(self, message: str, last_fit: "DecayFit"):
        super().__init__(message)
        self.last_fit = last_fit


@dataclass(frozen=True)
class CorrelationHistogram:
    """Cross-correlation counts on centered delay bins (ps). The middle bin
    is centered at zero delay.  rep_period is carried for pulsed data and
    None for CW streams."""

    delays: np.ndarray
    counts: np.ndarray
    bin_width: float
    rep_period: float | None = None


@dataclass(frozen=True)
class PurityReport:
    """Pulsed antibunching summary from peak-area ratios."""

    g2_zero: float
    purity: float
    zero_peak_area: int
    mean_side_peak_area: float
    n_side_peaks: int
    uncertainty: float
    reexcitation_time: float | None = None


class DipFitDegenerateError(RuntimeError):
    """Raised when the zero-delay peak carries too few counts to fit the
    central dip; carries the measured g2_zero for reporting."""

    def __init__(self, message: str, g2_zero: float):
        super().__init__(message)
        self.g2_zero = g2_zero


def build_decay_histogram(events, bin_width: float, window: float | None = None,
                          fold: float | None = None) -> DecayHistogram:
    """Histogram event times (ps) into pulse-relative bins.

    events may be a PhotonStream (pulse-relative emission times are used
    directly), a ClickStream, or a plain array of times.  fold wraps times
    modulo a pulse period before binning, which is how absolute click times
    become pulse-relative; window truncates (defaults to the folded period
    or the latest event).  Empty input produces an empty histogram, which
    the fit rejects later.
    """
    if isinstance(events, PhotonStream):
        times = np.asarray(events.emission_time, dtype=np.float64)
    elif isinstance(events, ClickStream):
        times = events.timestamps.astype(np.float64)
    else:
        times = np.asarray(events, dtype=np.float64)
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if fold is not None:
        if fold <= 0:
            raise ValueError("fold period must be > 0")
        times = np.mod(times, fold)
    if window is None:
        if fold is not None:
            window = fold
        elif times.size:
            window = float(times.max()) + bin_width
        else:
            window = bin_width
    n_bins = max(int(math.ceil(window / bin_width)), 1)
    counts, edges = np.histogram(times, bins=n_bins, range=(0.0, n_bins * bin_width))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return DecayHistogram(bin_centers=centers, counts=counts.astype(np.int64), bin_width=bin_width)


def _log_linear_tau(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least squares line through log(y) on positive bins: returns
    (tau, amplitude at t[0]).  Falls back to the span if degenerate."""
    pos = y > 0
    if pos.sum() < 2:
        return max(float(t[-1] - t[0]), 1.0), max(float(y.max(initial=1.0)), 1.0)
    tt = t[pos]
    ly = np.log(y[pos])
    slope, intercept = np.polyfit(tt - tt[0], ly, 1)
    if slope >= 0:
        return max(float(t[-1] - t[0]), 1.0), float(math.exp(intercept))
    return -1.0 / slope, float(math.exp(intercept))


def fit_biexponential(hist: DecayHistogram, fit_start: float | None = None,
                      min_counts: int = 1000) -> DecayFit:
    """Weighted bi-exponential fit a e^{-t/tf} + b e^{-t/ts} + c.

    Poisson weights 1/max(count, 1).  The fit starts two bins after the
    histogram peak unless fit_start (ps) says otherwise; starting past the
    peak keeps instrument-response distortion out of the lifetime estimate.
    Raises ValueError below min_counts; an iteration-capped fit comes back
    with converged=False rather than raising.
    """
    if hist.total_counts < min_counts:
        raise ValueError(
            f"decay histogram holds {hist.total_counts} counts, "
            f"need at least {min_counts} for a stable fit")
    centers = hist.bin_centers
    counts = hist.counts.astype(np.float64)
    if fit_start is None:
        i_start = min(int(np.argmax(counts)) + 2, centers.size - 2)
        fit_start = float(centers[i_start])
    sel = centers >= fit_start
    if sel.sum() < 6:
        raise ValueError("fewer than 6 bins past the fit start")
    t = centers[sel] - fit_start
    y = counts[sel]
    w = 1.0 / np.maximum(y, 1.0)

    # Deterministic starting point.  The rough fast lifetime is the 1/e
    # crossing of the lightly smoothed head; anything window-relative would
    # swallow the slow plateau when the window is much longer than the fast
    # decay.  It anchors where the slow component takes over, and the slow
    # estimate is a moment estimator over that tail (log-linear fits are
    # useless there because sparse Poisson bins force dropping zeros).
    n = t.size
    y_pad = np.concatenate([y[:1], y, y[-1:]])
    y_smooth = (y_pad[:-2] + y_pad[1:-1] + y_pad[2:]) / 3.0
    peak = float(max(y_smooth[: max(n // 50, 4)].max(), 1.0))
    below = np.nonzero(y_smooth < peak / math.e)[0]
    if below.size:
        tau_f_rough = float(t[max(int(below[0]), 1)])
    else:
        total0 = float(y.sum())
        tau_f_rough = float((y * t).sum()) / total0 if total0 > 0 else hist.bin_width
    tau_f_rough = min(max(tau_f_rough, hist.bin_width * 0.5), float(t[-1]) / 2 + hist.bin_width)
    head = t < 3.5 * tau_f_rough
    if int(head.sum()) < 4:
        head = slice(0, 4)
    j0 = int(np.searchsorted(t, 7.0 * tau_f_rough))
    j0 = min(max(j0, 2), n - 5)
    tail_y = y[j0:]
    tail_t = t[j0:] - t[j0]
    tail_sum = float(tail_y.sum())
    if tail_sum >= 10.0:
        tau_s0 = max(float((tail_y * tail_t).sum()) / tail_sum, hist.bin_width)
        b_at0 = tail_sum * hist.bin_width / tau_s0 * math.exp(min(t[j0] / tau_s0, 500.0))
    else:
        tau_s0 = 3.0 * tau_f_rough
        b_at0 = 1e-3
    peeled = np.maximum(y - b_at0 * np.exp(-np.minimum(t / tau_s0, 500.0)), 0.0)
    tau_f0, a0 = _log_linear_tau(t[head], peeled[head])
    if tau_f0 > tau_s0:
        tau_f0, tau_s0 = tau_s0, tau_f0
        a0, b_at0 = b_at0, a0
    tau_cap = 1e3 * float(t[-1] + hist.bin_width)
    tau_f0 = min(max(tau_f0, hist.bin_width * 0.5), tau_cap)
    tau_s0 = min(max(tau_s0, tau_f0 * 1.5), tau_cap)
    a0 = max(a0, 1.0)
    b_at0 = max(b_at0, 1e-3)

    def biexp(params, tt):
        a, tf, b, ts, c = params
        return a * np.exp(-tt / tf) + b * np.exp(-tt / ts) + c

    def two_pass(model_fn, init, bounds, w0):
        first = least_squares(FitProblem(
            model=model_fn, x=t, y=y, initial_params=init, bounds=bounds,
            weights=w0, max_iterations=6000))
        w_run = 1.0 / np.maximum(model_fn(first.params, t), 1.0)
        try:
            return least_squares(FitProblem(
                model=model_fn, x=t, y=y, initial_params=first.params,
                bounds=bounds, weights=w_run, max_iterations=6000))
        except FitError:
            # The refinement pass can wander into a flat direction (slow
            # amplitude pinned at zero, or a lifetime so long the window
            # cannot distinguish it from a constant) where a parameter goes
            # numerically dead.  The first-pass estimate stands.
            return first

    # Two weighting passes: raw-count Poisson weights first, then weights
    # from the fitted model, which removes the downward lifetime bias that
    # raw-count weights produce in sparsely populated tail bins.
    # Lifetimes above 1000x the window are indistinguishable from the flat
    # background term, so cap them there; the cap also keeps the forward
    # differences alive instead of underflowing when the optimizer probes
    # the long-lifetime direction.
    bounds5 = [(0.0, None), (hist.bin_width * 1e-3, tau_cap), (0.0, None),
               (hist.bin_width * 1e-3, tau_cap), (0.0, None)]
    try:
        result = two_pass(biexp, np.array([a0, tau_f0, b_at0, tau_s0, 0.0]), bounds5, w)
    except FitError:
        result = None
    if result is not None:
        a, tf, b, ts, c = result.params
        if tf > ts:
            a, b = b, a
            tf, ts = ts, tf
        signal = a * tf + b * ts
        resolvable = ts > 1.5 * tf and signal > 0 and b * ts / signal > 1e-6
    else:
        resolvable = False

    if resolvable:
        cov = result.covariance
        if result.params[1] > result.params[3]:
            order = [2, 3, 0, 1, 4]
            cov = cov[np.ix_(order, order)]
        n_params = 5
    else:
        # Components are not separable (or the full model is degenerate):
        # report a single exponential with zero slow amplitude.
        def single(params, tt):
            a, tf, c = params
            return a * np.exp(-tt / tf) + c

        total = float(y.sum())
        tau0 = max(float((y * t).sum()) / total, hist.bin_width) if total else hist.bin_width
        result = two_pass(
            single, np.array([max(float(y.max(initial=1.0)), 1.0), min(tau0, tau_cap), 0.0]),
            [(0.0, None), (hist.bin_width * 1e-3, tau_cap), (0.0, None)],
            1.0 / np.maximum(y, 1.0))
        a, tf, c = result.params
        b, ts = 0.0, tf
        cov = np.zeros((5, 5))
        cov[np.ix_([0, 1, 4], [0, 1, 4])] = result.covariance
        n_params = 3
    # ps -> ns for the lifetime entries
    scale = np.array([1.0, 1e-3, 1.0, 1e-3, 1.0])
    cov = cov * np.outer(scale, scale)
    fit = DecayFit(
        tau_fast=tf * 1e-3,
        tau_slow=ts * 1e-3,
        amplitude_fast=a,
        amplitude_slow=b,
        background=c,
        covariance=cov,
        converged=result.converged,
        fit_start=fit_start,
        reduced_chi_square=result.residual_norm**2 / max(t.size - n_params, 1),
        message=result.message,
    )
    if not result.converged:
        raise DecayFitError(f"decay fit did not converge: {result.message}", fit)
    return fit


def _timestamps(stream) -> np.ndarray:
    if isinstance(stream, ClickStream):
        return stream.timestamps
    ts = np.asarray(stream, dtype=np.int64)
    if ts.ndim != 1:
        raise ValueError("timestamps must be one-dimensional")
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        raise ValueError("timestamps must be sorted ascending")
    return ts


def correlate(start, stop, bin_width: float, window: float,
              rep_period: float | None = None,
              chunk: int = 1 << 16) -> CorrelationHistogram:
    """Histogram of delays (stop - start) between two sorted click streams.

    Bins are centered: the middle bin spans [-bin_width/2, bin_width/2).
    Every pair within the window is counted (full pair correlation, not
    first-stop), which keeps long-delay side peaks unbiased at high rates.
    The sweep is sorted two-pointer style, so cost scales with clicks times
    the mean occupancy of the window, never with all pairs.  rep_period
    (ps) tags pulsed data and enables the peak-area metrics downstream.
    """
    a = _timestamps(start)
    b = _timestamps(stop)
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if window < bin_width:
        raise ValueError("window must cover at least one bin")
    half = int(math.floor(window / bin_width))
    n_bins = 2 * half + 1
    counts = np.zeros(n_bins, dtype=np.int64)
    lo_bound = -(half + 0.5) * bin_width
    hi_bound = (half + 0.5) * bin_width
    for s in range(0, a.size, chunk):
        a_c = a[s:s + chunk]
        lo = np.searchsorted(b, a_c + lo_bound, side="left")
        hi = np.searchsorted(b, a_c + hi_bound, side="left")
        reps = hi - lo
        m = int(reps.sum())
        if m == 0:
            continue
        starts = np.repeat(lo, reps)
        offsets = np.arange(m) - np.repeat(np.cumsum(reps) - reps, reps)
        d = b[starts + offsets].astype(np.float64) - np.repeat(a_c, reps).astype(np.float64)
        k = np.floor(d / bin_width + 0.5).astype(np.int64) + half
        k = k[(k >= 0) & (k < n_bins)]
        counts += np.bincount(k, minlength=n_bins)
    delays = (np.arange(n_bins) - half) * bin_width
    if rep_period is not None and rep_period <= 0:
        raise ValueError("rep_period must be > 0 when given")
    return CorrelationHistogram(delays=delays, counts=counts, bin_width=bin_width,
                                rep_period=rep_period)


def _peak_area(hist: CorrelationHistogram, center: float, half_width: float) -> int:
    sel = (hist.delays >= center - half_width) & (hist.delays < center + half_width)
    return int(hist.counts[sel].sum())


def purity_from_histogram(hist: CorrelationHistogram,
                          n_side_peaks: int = 10) -> PurityReport:
    """Zero-peak area over the mean of n_side_peaks side-peak areas on each
    side, each integrated over one full period.  purity = 1 - that ratio.

    The quoted uncertainty propagates Poisson counting error from the zero
    and side areas.
    """
    if hist.rep_period is None:
        raise ValueError("histogram carries no rep_period; peak areas are undefined")
    rep_period = hist.rep_period
    if n_side_peaks < 1:
        raise ValueError("n_side_peaks must be >= 1")
    needed = (n_side_peaks + 0.5) * rep_period
    span = float(hist.delays[-1]) + 0.5 * hist.bin_width
    if span + 1e-9 < needed:
        raise ValueError(
            f"correlation window {span:.0f} ps too short for {n_side_peaks} "
            f"side peaks (needs {needed:.0f} ps)")
    half = 0.5 * rep_period
    zero_area = _peak_area(hist, 0.0, half)
    side_areas = [
        _peak_area(hist, sign * j * rep_period, half)
        for j in range(1, n_side_peaks + 1)
        for sign in (-1.0, 1.0)
    ]
    side_total = float(sum(side_areas))
    if side_total <= 0:
        raise ValueError("side peaks are empty; not enough coincidences")
    mean_side = side_total / len(side_areas)
    g2 = zero_area / mean_side
    # Poisson error on the zero area plus the side-mean contribution.
    var = max(zero_area, 1) / mean_side**2 + (g2**2) / side_total
    return PurityReport(
        g2_zero=g2,
        purity=1.0 - g2,
        zero_peak_area=zero_area,
        mean_side_peak_area=mean_side,
        n_side_peaks=n_side_peaks,
        uncertainty=math.sqrt(var),
    )


def _dip_model_factory(bin_width: float, sigma: float):
    """Central-peak model A e^{-|t|/tau_env} (1 - e^{-|t|/tau_dip}),
    numerically convolved with the pair-jitter Gaussian when it matters."""
    if sigma < 0.1 * bin_width:
        def model(params, t):
            amp, tau_env, tau_dip = params
            at = np.abs(t)
            return amp * np.exp(-at / tau_env) * (1.0 - np.exp(-at / tau_dip))
        return model

    pad = int(math.ceil(5.0 * sigma / bin_width))
    kx = np.arange(-pad, pad + 1) * bin_width
    kernel = np.exp(-0.5 * (kx / sigma) ** 2)
    kernel /= kernel.sum()

    def model(params, t):
        amp, tau_env, tau_dip = params
        # extend the grid so the convolution sees the tails
        ext = np.concatenate([
            t[0] + np.arange(-pad, 0) * bin_width,
            t,
            t[-1] + np.arange(1, pad + 1) * bin_width,
        ])
        at = np.abs(ext)
        f = amp * np.exp(-at / tau_env) * (1.0 - np.exp(-at / tau_dip))
        return np.convolve(f, kernel, mode="same")[pad:pad + t.size]

    return model


def fit_dip_time(hist: CorrelationHistogram, jitter_fwhm: float,
                 n_side_peaks: int = 10) -> float:
    """Timescale (ps) of the dip carved into the zero-delay peak by the
    delayed re-excitation path.

    Fits the central period of the correlation histogram with a symmetric
    envelope times a saturating dip, convolved with the pair timing jitter
    (sigma = sqrt(2) * jitter_fwhm / 2.3548 since both clicks jitter
    independently).  This is forward-model fitting, not inverse filtering.
    Raises DipFitDegenerateError when the zero peak is too empty to carry
    dip structure, FitError when the fit cannot converge.
    """
    if jitter_fwhm < 0:
        raise ValueError("jitter_fwhm must be >= 0")
    report = purity_from_histogram(hist, n_side_peaks=n_side_peaks)
    rep_period = hist.rep_period
    threshold = max(16.0, 0.01 * report.mean_side_peak_area)
    if report.zero_peak_area < threshold:
        raise DipFitDegenerateError(
            f"zero peak holds {report.zero_peak_area} counts "
            f"(threshold {threshold:.0f}); no dip to fit",
            g2_zero=report.g2_zero)

    half = 0.5 * rep_period
    sel = (hist.delays >= -half) & (hist.delays < half)
    t = hist.delays[sel]
    y = hist.counts[sel].astype(np.float64)
    sigma_pair = math.sqrt(2.0) * jitter_fwhm * _GAUSS_FWHM_TO_SIGMA
    model = _dip_model_factory(hist.bin_width, sigma_pair)

    amp0 = float(y.max(initial=1.0))
    total = float(y.sum())
    tau_env0 = max(float((y * np.abs(t)).sum()) / total, hist.bin_width) if total > 0 else half / 3
    # Coarse deterministic scan for the dip scale before the local fit.
    best = None
    for tau_dip0 in np.geomspace(max(hist.bin_width * 0.25, 1.0), tau_env0, 24):
        r = model(np.array([amp0, tau_env0, tau_dip0]), t) - y
        ssr = float(np.sum(r * r))
        if best is None or ssr < best[1]:
            best = (tau_dip0, ssr)
    # Two passes: an unweighted fit shapes the model, then model-based
    # Poisson weights (not raw-count weights, which bias the shallow dip
    # bins where downward fluctuations would earn inflated weight).
    params = np.array([amp0, tau_env0, best[0]])
    result = None
    weights = None
    for _ in range(2):
        problem = FitProblem(
            model=model,
            x=t,
            y=y,
            initial_params=params,
            bounds=[(0.0, None), (hist.bin_width * 1e-3, None), (1e-3, None)],
            weights=weights,
            max_iterations=3000,
        )
        result = least_squares(problem)
        params = result.params
        weights = 1.0 / np.maximum(model(params, t), 1.0)
    if not result.converged:
        raise FitError(f"dip fit did not converge: {result.message}")
    return float(result.params[2])
