"""Event extraction and amplitude/timing statistics."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from collections.abc import Mapping, Sequence

import numpy as np
from scipy import optimize, signal as sps, stats

from .errors import (InsufficientData, InvalidComponentCount, NoCrossing, NonConvergence,
                     PeakNotBracketed, Saturated, ValidationError)
from .signal_model import Trace

FWHM_PER_SIGMA = 2.355

MIN_SAMPLES_GAUSSIAN_FIT = 100
MIN_SAMPLES_DIRECT_FWHM = 1000

FIT_FTOL = 1e-8
FIT_MAX_ITERATIONS = 500


@dataclass(frozen=True)
class DetectionEvent:
    peak_amplitude: float
    peak_time: float
    assigned_n: int | None = None


# -- peak and edge timing --------------------------------------------------


def _window_indices(trace: Trace, window):
    if window is None:
        return 0, len(trace)
    t0, t1 = window
    lo = max(int(math.ceil((t0 - trace.start_time) * trace.sample_rate - 1e-9)), 0)
    hi = min(int(math.floor((t1 - trace.start_time) * trace.sample_rate + 1e-9)) + 1, len(trace))
    return lo, hi


def parabolic_vertex(y_left, y_mid, y_right):
    """Vertex offset (in samples) and height of the parabola through three points."""
    y_left, y_mid, y_right = (np.asarray(v, dtype=float) for v in (y_left, y_mid, y_right))
    curvature = y_left - 2 * y_mid + y_right
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(curvature != 0, 0.5 * (y_left - y_right) / curvature, 0.0)
    height = y_mid - 0.25 * (y_left - y_right) * offset
    return offset, height


def refine_peaks(y, lo=0, hi=None):
    """Batched argmax plus 3-point parabolic refinement along the last axis.

    Returns ``(position, height, bracketed)``; ``position`` is a fractional
    sample index and ``bracketed`` is False where the discrete maximum sits on
    the search-window edge.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    hi = y.shape[-1] if hi is None else hi
    idx = lo + np.argmax(y[:, lo:hi], axis=1)
    bracketed = (idx > lo) & (idx < hi - 1) & (idx > 0) & (idx < y.shape[-1] - 1)
    safe = np.clip(idx, 1, y.shape[-1] - 2)
    rows = np.arange(y.shape[0])
    offset, height = parabolic_vertex(y[rows, safe - 1], y[rows, safe], y[rows, safe + 1])
    offset = np.where(bracketed, offset, 0.0)
    height = np.where(bracketed, height, y[rows, idx])
    return idx + offset, height, bracketed


def detect_peak(trace: Trace, search_window=None) -> DetectionEvent:
    """Peak amplitude and sub-sample peak time inside ``search_window`` (seconds)."""
    lo, hi = _window_indices(trace, search_window)
    if hi - lo < 3:
        raise ValidationError("search_window", "window must span at least 3 samples")
    pos, height, ok = refine_peaks(trace.samples, lo, hi)
    if not ok[0]:
        raise PeakNotBracketed("maximum lies on the search-window boundary")
    return DetectionEvent(float(height[0]), trace.start_time + float(pos[0]) / trace.sample_rate)


def crossing_positions(y, threshold, lo=0, hi=None, direction="rising", last=False):
    """Threshold crossing per row as a fractional sample index (NaN if none).

    Returns the first crossing in ``[lo, hi)``, or the last one with ``last=True``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    hi = y.shape[-1] if hi is None else hi
    seg = y[:, lo:hi]
    thr = np.asarray(threshold, dtype=float).reshape(-1, 1)
    a, b = seg[:, :-1], seg[:, 1:]
    if direction == "rising":
        hit = (a < thr) & (b >= thr)
    elif direction == "falling":
        hit = (a > thr) & (b <= thr)
    else:
        raise ValidationError("direction", f"unknown direction {direction!r}")
    found = hit.any(axis=1)
    if last:
        first = hit.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    else:
        first = np.argmax(hit, axis=1)
    rows = np.arange(y.shape[0])
    ya, yb = a[rows, first], b[rows, first]
    frac = (thr[:, 0] - ya) / np.where(found, yb - ya, 1.0)
    return np.where(found, lo + first + frac, np.nan)


def threshold_crossing_time(trace: Trace, threshold, direction="rising", search_window=None):
    """First crossing of ``threshold`` with linear interpolation between samples."""
    lo, hi = _window_indices(trace, search_window)
    pos = crossing_positions(trace.samples, threshold, lo, hi, direction)[0]
    if np.isnan(pos):
        raise NoCrossing(f"trace never crosses {threshold} mV ({direction})")
    return trace.start_time + float(pos) / trace.sample_rate


# -- histograms and mixture fits -------------------------------------------


@dataclass(frozen=True, eq=False)
class AmplitudeHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if np.any(np.diff(edges) <= 0):
            raise ValidationError("bin_edges", "edges must increase strictly")
        if counts.shape != (edges.size - 1,):
            raise ValidationError("counts", "need one count per bin")
        if np.any(counts < 0):
            raise ValidationError("counts", "counts must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self):
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def total(self):
        return int(self.counts.sum())

    def mean(self):
        return float(np.sum(self.centers * self.counts) / self.total)


def freedman_diaconis_bins(values, minimum=50, maximum=20000):
    values = np.asarray(values, dtype=float)
    span = np.ptp(values)
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    if span == 0 or iqr == 0:
        return minimum
    width = 2 * iqr / values.size ** (1 / 3)
    return int(min(max(math.ceil(span / width), minimum), maximum))


def build_histogram(amplitudes: Sequence[float], bin_count=None) -> AmplitudeHistogram:
    """Uniform-bin histogram over [min, max]; Freedman-Diaconis (>= 50 bins) by default."""
    values = np.asarray(amplitudes, dtype=float).ravel()
    if values.size == 0:
        raise InsufficientData("cannot histogram an empty amplitude list")
    if bin_count is None:
        bin_count = freedman_diaconis_bins(values)
    if bin_count < 2:
        raise ValidationError("bin_count", "need at least 2 bins")
    counts, edges = np.histogram(values, bins=int(bin_count))
    return AmplitudeHistogram(edges, counts)


@dataclass(frozen=True)
class MixtureFit:
    """Gaussian components ``(weight, mean, std)`` sorted by mean.

    ``weight`` is the fitted peak height in counts, so ``weight * exp(...)``
    is the fitted histogram curve.
    """

    components: tuple
    residual_norm: float = 0.0

    def __post_init__(self):
        comps = tuple(tuple(float(v) for v in c) for c in self.components)
        if not comps:
            raise ValidationError("components", "a fit needs at least one component")
        means = [c[1] for c in comps]
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ValidationError("components", "means must increase strictly")
        if any(c[2] <= 0 for c in comps) or any(c[0] <= 0 for c in comps):
            raise ValidationError("components", "weights and stds must be positive")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self):
        return np.array([c[0] for c in self.components])

    @property
    def means(self):
        return np.array([c[1] for c in self.components])

    @property
    def stds(self):
        return np.array([c[2] for c in self.components])

    def __len__(self):
        return len(self.components)

    def curve(self, x):
        return _mixture(np.asarray(x, dtype=float), self.weights, self.means, self.stds)

    def to_dict(self):
        return {
            "components": [{"weight": w, "mean_mV": m, "std_mV": s}
                           for w, m, s in self.components],
            "residual_norm": self.residual_norm,
        }


def _mixture(x, a, p, s):
    return np.sum(a[:, None] * np.exp(-0.5 * ((x[None, :] - p[:, None]) / s[:, None]) ** 2), axis=0)


def _initial_guess(hist: AmplitudeHistogram, k):
    x, y = hist.centers, hist.counts.astype(float)
    smooth = np.convolve(y, np.ones(5) / 5, mode="same")
    peaks, props = sps.find_peaks(smooth, prominence=0)
    populated = x[y > 0]
    if k == 1:
        # moments are a steadier start than any single bump on a ragged histogram
        mean = hist.mean()
        sd = math.sqrt(max(np.sum(y * (x - mean) ** 2) / y.sum(), 0.0))
        return np.array([max(smooth.max(), 1.0)]), np.array([mean]), \
            np.array([max(sd, hist.bin_width)])
    if peaks.size >= k:
        # rank by prominence over counting noise so small real peaks beat bumps on big ones
        significance = props["prominences"] / np.sqrt(np.maximum(smooth[peaks], 1.0))
        order = np.argsort(significance, kind="stable")[::-1][:k]
        means = np.sort(x[peaks[order]])
    else:
        lo, hi = populated[0], populated[-1]
        means = lo + (np.arange(k) + 0.5) * (hi - lo) / k
    gap = np.min(np.diff(means))
    cap = max(gap / (2 * FWHM_PER_SIGMA), hist.bin_width)
    stds = np.array([min(_half_width_sigma(y, x, m, hist.bin_width), cap) for m in means])
    heights = np.array([y[max(np.searchsorted(x, m) - 2, 0):np.searchsorted(x, m) + 3].max()
                        for m in means])
    return np.maximum(heights, 1.0), means, stds


def _half_width_sigma(y, x, mean, width):
    """Sigma implied by the half-maximum width of the raw peak nearest ``mean``."""
    i = int(np.clip(np.searchsorted(x, mean), 0, y.size - 1))
    lo, hi = max(i - 2, 0), min(i + 3, y.size)
    i = lo + int(np.argmax(y[lo:hi]))
    half = y[i] / 2
    left = i
    while left > 0 and y[left - 1] > half:
        left -= 1
    right = i
    while right < y.size - 1 and y[right + 1] > half:
        right += 1
    return max((right - left + 1) * width / FWHM_PER_SIGMA, width / 2)


def fit_gaussian_mixture(hist: AmplitudeHistogram, k: int, init=None) -> MixtureFit:
    """Least-squares fit of ``sum_k a_k exp(-(x - p_k)^2 / (2 s_k^2))`` to bin counts.

    ``init`` may be a sequence of ``(a, p, s)`` triples (e.g. a previous fit's
    components) or of means only. Without it, means start at the ``k`` most
    prominent maxima of a 5-bin moving average, falling back to evenly spaced
    means when there are fewer than ``k`` maxima.
    """
    if k < 1:
        raise InvalidComponentCount(f"component count must be >= 1, got {k}")
    if np.count_nonzero(hist.counts) < 3 * k:
        raise InvalidComponentCount(f"{k} components need at least {3 * k} non-empty bins")
    y = hist.counts.astype(float)
    # work in bin units so seconds and millivolts condition the solver alike
    origin, width = hist.bin_edges[0], hist.bin_width
    x = (hist.centers - origin) / width

    if init is None:
        a0, p0, s0 = _initial_guess(hist, k)
    else:
        init = np.asarray(init, dtype=float)
        if init.ndim == 1:
            a_guess, _, s_guess = _initial_guess(hist, k)
            p0 = np.sort(init)
            s0 = s_guess
            a0 = np.maximum(np.interp(p0, hist.centers, y), 1.0)
        else:
            a0, p0, s0 = init[:, 0], init[:, 1], init[:, 2]
        if p0.size != k:
            raise InvalidComponentCount("init length does not match k")
    p0 = (np.asarray(p0, dtype=float) - origin) / width
    s0 = np.asarray(s0, dtype=float) / width

    def unpack(theta):
        return theta[:k], theta[k:2 * k], theta[2 * k:]

    def residuals(theta):
        a, p, s = unpack(theta)
        return _mixture(x, a, p, s) - y

    def jacobian(theta):
        a, p, s = unpack(theta)
        z = (x[None, :] - p[:, None]) / s[:, None]
        g = np.exp(-0.5 * z**2)
        d_a = g
        d_p = a[:, None] * g * z / s[:, None]
        d_s = a[:, None] * g * z**2 / s[:, None]
        return np.vstack([d_a, d_p, d_s]).T

    nbins = y.size
    lower = np.concatenate([np.full(k, 1e-9 * max(y.max(), 1.0)), np.zeros(k),
                            np.full(k, 1e-3)])
    upper = np.concatenate([np.full(k, np.inf), np.full(k, float(nbins)),
                            np.full(k, float(nbins))])
    theta0 = np.clip(np.concatenate([a0, p0, s0]), lower, upper)
    result = optimize.least_squares(residuals, theta0, jac=jacobian, bounds=(lower, upper),
                                    method="trf", ftol=FIT_FTOL, max_nfev=FIT_MAX_ITERATIONS)
    a, p, s = unpack(result.x)
    p, s = origin + p * width, s * width
    residual_norm = float(np.linalg.norm(result.fun) / max(np.linalg.norm(y), 1e-300))
    order = np.argsort(p)
    comps = tuple(zip(a[order], p[order], s[order]))
    if np.any(np.diff(p[order]) <= 0):
        raise NonConvergence("fit collapsed two components onto the same mean")
    fit = MixtureFit(comps, residual_norm)
    if result.status == 0:
        raise NonConvergence(
            f"mixture fit hit {FIT_MAX_ITERATIONS} evaluations "
            f"(relative residual {residual_norm:.3g})", partial=fit)
    return fit


def spacing_from_moments(means, stds):
    """Adjacent-peak spacing in units of the mean FWHM of the pair."""
    p = np.asarray(means, dtype=float)
    s = np.asarray(stds, dtype=float)
    if p.size < 2 or s.size != p.size:
        raise InvalidComponentCount("spacing needs at least two components")
    return (p[1:] - p[:-1]) / (FWHM_PER_SIGMA * (s[1:] + s[:-1]) / 2)


def normalized_spacing(fit: MixtureFit):
    """``S_{n,n+1}`` for each adjacent pair of mixture components."""
    return spacing_from_moments(fit.means, fit.stds)


# -- timing jitter -----------------------------------------------------------


def _delay_histogram(delays):
    center = np.median(delays)
    q75, q25 = np.percentile(delays, [75, 25])
    spread = (q75 - q25) / 1.349
    if spread == 0:
        spread = np.std(delays)
    core = delays[np.abs(delays - center) <= 8 * spread]
    return build_histogram(core - center), center


def timing_jitter(arrival_times: Sequence[float], method="gaussian_fit") -> float:
    """FWHM of the delay distribution.

    ``gaussian_fit`` fits one Gaussian to the histogram and returns
    2.355 sigma; ``direct_fwhm`` reads the half-maximum crossings of the
    histogram after a 5-bin moving average. Points beyond 8 robust standard
    deviations from the median are left out of the histogram.
    """
    delays = np.asarray(arrival_times, dtype=float).ravel()
    needed = {"gaussian_fit": MIN_SAMPLES_GAUSSIAN_FIT,
              "direct_fwhm": MIN_SAMPLES_DIRECT_FWHM}.get(method)
    if needed is None:
        raise ValidationError("method", f"unknown jitter method {method!r}")
    if delays.size < needed:
        raise InsufficientData(f"{method} needs at least {needed} delays, got {delays.size}")
    if np.ptp(delays) == 0:
        return 0.0
    hist, _ = _delay_histogram(delays)
    if method == "gaussian_fit":
        fit = fit_gaussian_mixture(hist, 1)
        return FWHM_PER_SIGMA * float(fit.stds[0])
    return _direct_fwhm(hist)


def _direct_fwhm(hist: AmplitudeHistogram) -> float:
    x = hist.centers
    y = np.convolve(hist.counts.astype(float), np.ones(5) / 5, mode="same")
    top = int(np.argmax(y))
    half = y[top] / 2
    left = top
    while left > 0 and y[left] > half:
        left -= 1
    right = top
    while right < y.size - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise InsufficientData("histogram does not fall to half maximum on both sides")
    xl = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]])
    xr = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]])
    return float(xr - xl)


# -- photon statistics -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhotonStatistics:
    num_pixels: int
    mean_photon_number: float
    fired_probabilities: np.ndarray

    def mean_fired(self):
        k = np.arange(self.num_pixels + 1)
        return float(np.sum(k * self.fired_probabilities))


def fired_pixel_distribution(mu: float, num_pixels: int) -> PhotonStatistics:
    """Distribution of fired-pixel counts for Poisson light spread uniformly over N pixels.

    Each pixel fires with ``q = 1 - exp(-mu/N)``; collisions of several
    photons on one pixel count once.
    """
    if mu < 0:
        raise ValidationError("mu", "mean photon number must be >= 0")
    if num_pixels < 1:
        raise ValidationError("num_pixels", "need at least one pixel")
    q = -math.expm1(-mu / num_pixels)
    probs = stats.binom.pmf(np.arange(num_pixels + 1), num_pixels, q)
    return PhotonStatistics(num_pixels, float(mu), probs)


def _counts_array(fired_counts, num_pixels):
    if isinstance(fired_counts, Mapping):
        counts = np.zeros(num_pixels + 1)
        for k, c in fired_counts.items():
            if not 0 <= int(k) <= num_pixels:
                raise ValidationError("fired_counts", f"fired count {k} outside 0..{num_pixels}")
            counts[int(k)] += c
    else:
        counts = np.asarray(fired_counts, dtype=float)
        if counts.size != num_pixels + 1:
            raise ValidationError("fired_counts", "need one count per k = 0..N")
    if np.any(counts < 0):
        raise ValidationError("fired_counts", "counts must be non-negative")
    if counts.sum() == 0:
        raise InsufficientData("all fired counts are zero")
    return counts


def estimate_mean_photon_number(fired_counts, num_pixels: int, rtol=1e-6) -> float:
    """Maximum-likelihood mean photon number from fired-pixel counts."""
    counts = _counts_array(fired_counts, num_pixels)
    k = np.arange(num_pixels + 1)
    if counts[1:].sum() == 0:
        return 0.0
    if counts[:-1].sum() == 0:
        raise Saturated("every event fired all pixels; the likelihood has no maximum")
    fired = float(np.sum(k * counts))
    missed = float(np.sum((num_pixels - k) * counts))

    def score(mu):
        # d/dmu of the log-likelihood, divided by dq/dmu > 0
        q = -math.expm1(-mu / num_pixels)
        return fired / q - missed / (1 - q)

    hi = 1.0
    while score(hi) > 0:
        hi *= 2
    lo = hi / 2
    while score(lo) < 0 and lo > 1e-300:
        lo /= 2
    return float(optimize.brentq(score, lo, hi, rtol=rtol * 1e-3, xtol=1e-300))


# -- classification and export -------------------------------------------------


def assign_components(amplitudes, fit: MixtureFit, mode="likelihood"):
    """Photon number (1-based component index) for each amplitude.

    Ties go to the lower component.
    """
    x = np.asarray(amplitudes, dtype=float).ravel()
    p = fit.means
    if mode == "likelihood":
        score = (np.log(fit.weights)[:, None]
                 - 0.5 * ((x[None, :] - p[:, None]) / fit.stds[:, None]) ** 2)
        return np.argmax(score, axis=0) + 1
    if mode == "midpoint":
        bounds = 0.5 * (p[1:] + p[:-1])
        return np.searchsorted(bounds, x, side="left") + 1
    raise ValidationError("mode", f"unknown classification mode {mode!r}")


def classify_events(events: Sequence[DetectionEvent], fit: MixtureFit, mode="likelihood"):
    labels = assign_components([e.peak_amplitude for e in events], fit, mode)
    return [replace(e, assigned_n=int(n)) for e, n in zip(events, labels)]


def fired_counts_from_labels(labels, num_pixels, zero_count=0):
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_pixels + 1)
    counts = counts[:num_pixels + 1].astype(np.int64)
    counts[0] += zero_count
    return counts


def events_to_csv(events: Sequence[DetectionEvent]) -> str:
    buf = io.StringIO()
    buf.write("peak_mV,time_s,assigned_n\n")
    for e in events:
        n = "" if e.assigned_n is None else str(e.assigned_n)
        buf.write(f"{float(e.peak_amplitude)!r},{float(e.peak_time)!r},{n}\n")
    return buf.getvalue()


def histogram_to_csv(hist: AmplitudeHistogram) -> str:
    buf = io.StringIO()
    buf.write("bin_low_mV,bin_high_mV,count\n")
    for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
        buf.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")
    return buf.getvalue()
