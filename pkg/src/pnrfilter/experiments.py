"""Monte Carlo studies: SNR, amplitude discrimination, timing jitter, low-pass sweeps.

Every study draws trials in fixed-size blocks. Block ``b`` of random stream
``s`` uses ``SeedSequence(seed, spawn_key=(s, b))``, so results do not depend
on how many worker threads process the blocks (``PNR_THREADS``).
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from collections.abc import Mapping, Sequence

import numpy as np

from . import discrimination as disc
from .errors import InfiniteSNR, InsufficientData, NoValidSize, ValidationError
from .filtering import FilterKernel, build_matched_template, convolve, lowpass
from .signal_model import (DEFAULT_DURATION, DEFAULT_SAMPLE_RATE, NOISE_SIGMA_MV, NoiseModel,
                           PulseShape, ReadoutConfig)

BLOCK_SIZE = 2048

# random stream ids
_NOISE = 0
_PHOTONS = 1
_PHASE = 2

FILTER_KINDS = ("none", "matched", "lowpass", "kernel")


@dataclass(frozen=True)
class FilterSpec:
    """Which filter a study applies.

    ``template`` replaces the auto-built matched template (``kind="matched"``)
    or is the FIR kernel to use (``kind="kernel"``). ``per_n_templates`` maps a
    photon number to its own template for per-n studies.
    """

    kind: str = "matched"
    cutoff: float | None = None
    lowpass_kind: str = "brickwall_fft"
    template: FilterKernel | None = None
    per_n_templates: Mapping[int, FilterKernel] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValidationError("filter", f"unknown filter kind {self.kind!r}")
        if self.kind == "lowpass" and not (self.cutoff and self.cutoff > 0):
            raise ValidationError("filter", "lowpass filter needs a positive cutoff")
        if self.kind == "kernel" and self.template is None:
            raise ValidationError("filter", "kernel filter needs a template")

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse ``none``, ``matched`` or ``lowpass:<hz>[:single_pole]``."""
        parts = text.strip().split(":")
        if parts[0] in ("none", "matched") and len(parts) == 1:
            return cls(parts[0])
        if parts[0] == "lowpass" and len(parts) in (2, 3):
            try:
                cutoff = float(parts[1])
            except ValueError:
                raise ValidationError("filter", f"bad cutoff in {text!r}") from None
            kind = parts[2] if len(parts) == 3 else "brickwall_fft"
            return cls("lowpass", cutoff, kind)
        raise ValidationError("filter", f"cannot parse filter spec {text!r}")

    def label(self) -> str:
        if self.kind == "lowpass":
            return f"lowpass:{self.cutoff:g}:{self.lowpass_kind}"
        return self.kind

    def to_dict(self):
        return {"kind": self.kind, "cutoff_hz": self.cutoff, "lowpass_kind": self.lowpass_kind,
                "custom_template": self.template is not None,
                "per_n_templates": sorted(self.per_n_templates)}


@dataclass(frozen=True)
class ExperimentConfig:
    shape: PulseShape = field(default_factory=PulseShape.linear)
    noise: NoiseModel = field(default_factory=NoiseModel)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    filter: FilterSpec = field(default_factory=FilterSpec)
    trials: int = 10_000
    seed: int = 0
    sample_rate: float = DEFAULT_SAMPLE_RATE
    duration: float = DEFAULT_DURATION
    pulse_delay: float = 20e-9
    random_phase: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValidationError("trials", "need at least one trial")
        if not self.sample_rate > 0:
            raise ValidationError("sample_rate", "must be positive")
        if not 0 <= self.pulse_delay < self.duration:
            raise ValidationError("pulse_delay", "pulse must start inside the record")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed", "seed must fit in an unsigned 64-bit integer")

    @classmethod
    def reference(cls, **overrides) -> "ExperimentConfig":
        """Fitted time constants, sigma = 0.40 mV, 6 pixels, 5 GS/s, 200 ns records."""
        base = cls(shape=PulseShape.linear(max_n=6), noise=NoiseModel(NOISE_SIGMA_MV),
                   readout=ReadoutConfig(num_pixels=6))
        return replace(base, **overrides)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def with_filter(self, spec) -> "ExperimentConfig":
        if isinstance(spec, str):
            spec = FilterSpec.parse(spec)
        return replace(self, filter=spec)

    def to_dict(self):
        return {
            "pulse": {"tau_rise_s": self.shape.tau_rise, "tau_fall_s": self.shape.tau_fall,
                      "amplitudes_mV": {str(k): v for k, v in self.shape.amplitudes.items()},
                      "peak_normalized": self.shape.peak_normalized},
            "noise": {"sigma_mV": self.noise.sigma},
            "readout": asdict(self.readout),
            "filter": self.filter.to_dict(),
            "trials": self.trials,
            "seed": int(self.seed),
            "sample_rate_hz": self.sample_rate,
            "duration_s": self.duration,
            "pulse_delay_s": self.pulse_delay,
            "random_phase": self.random_phase,
        }


# -- execution helpers --------------------------------------------------------


def worker_count(threads=None) -> int:
    if threads is None:
        threads = int(os.environ.get("PNR_THREADS", "1") or 1)
    return max(int(threads), 1)


def block_rng(seed, stream, block) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(stream, block))
    return np.random.Generator(np.random.PCG64(seq))


def _blocks(trials):
    return [(b, min(BLOCK_SIZE, trials - b * BLOCK_SIZE))
            for b in range(math.ceil(trials / BLOCK_SIZE))]


def _run_blocks(fn, trials, threads):
    blocks = _blocks(trials)
    workers = min(worker_count(threads), len(blocks))
    if workers == 1:
        return [fn(b, size) for b, size in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda bs: fn(*bs), blocks))


class Processor:
    """Filter plus the noiseless reference response used to place windows."""

    def __init__(self, config: ExperimentConfig, spec: FilterSpec | None = None, n=None):
        self.config = config
        self.spec = spec = config.filter if spec is None else spec
        fs = config.sample_rate
        self.kernel = None
        if spec.kind == "matched":
            self.kernel = spec.per_n_templates.get(n) or spec.template or \
                build_matched_template(config.shape, fs)
        elif spec.kind == "kernel":
            self.kernel = spec.template
        if self.kernel is not None and not math.isclose(self.kernel.sample_rate, fs):
            raise ValidationError("filter", "template sample rate differs from the config")
        # output sample i sits at input time (i - shift) / fs
        self.shift = 0 if self.kernel is None else len(self.kernel) - 1
        self.unit = config.shape.unit(self.input_times() - config.pulse_delay)
        self.response = self(self.unit[None, :])[0]
        self.peak_index = int(np.argmax(self.response))
        self.window = self._window()

    def input_times(self):
        return np.arange(self.config.num_samples) / self.config.sample_rate

    def __call__(self, x):
        spec = self.spec
        if spec.kind == "none":
            return np.asarray(x, dtype=float)
        if spec.kind == "lowpass":
            return lowpass(x, self.config.sample_rate, spec.cutoff, spec.lowpass_kind)
        return convolve(x, self.kernel.taps)

    def time_of(self, position):
        return (np.asarray(position) - self.shift) / self.config.sample_rate

    def _window(self):
        r, p = self.response, self.peak_index
        level = 0.5 * r[p]
        lo = p
        while lo > 0 and r[lo - 1] >= level:
            lo -= 1
        hi = p
        while hi < r.size - 1 and r[hi + 1] >= level:
            hi += 1
        return max(min(lo, p - 2), 0), min(max(hi, p + 2), r.size - 1) + 1

    def edge_threshold(self):
        """Unit-amplitude threshold at the steepest rising segment, and its search window."""
        r, p = self.response, self.peak_index
        if p < 1:
            raise InsufficientData("reference response has no rising edge")
        k = int(np.argmax(np.diff(r[:p + 1])))
        threshold = 0.5 * (r[k] + r[k + 1])
        lo = k
        while lo > 0 and r[lo] >= 0.05 * r[p]:
            lo -= 1
        return threshold, max(lo - 2, 0), p + 1


def _noisy_block(config, rng_seed_block, amplitudes, unit=None, delays=None):
    b = rng_seed_block
    size = amplitudes.size
    if delays is None:
        signal = amplitudes[:, None] * unit[None, :]
    else:
        t = np.arange(config.num_samples) / config.sample_rate
        signal = amplitudes[:, None] * config.shape.unit(t[None, :] - delays[:, None])
    noise = block_rng(config.seed, _NOISE, b).standard_normal((size, config.num_samples))
    return signal + config.noise.sigma * noise


# -- studies -------------------------------------------------------------------


def snr_samples(config: ExperimentConfig, n: int, spec: FilterSpec | None = None):
    """Filtered value at the noiseless peak position, one per trial."""
    proc = Processor(config, spec, n)
    amp = config.shape.amplitude(n)

    def run(b, size):
        y = proc(_noisy_block(config, b, np.full(size, amp), proc.unit))
        return y[:, proc.peak_index]

    return np.concatenate(_run_blocks(run, config.trials, config.threads))


def monte_carlo_snr(config: ExperimentConfig, n: int, spec: FilterSpec | None = None) -> float:
    """Mean over standard deviation of the filtered n-photon peak value.

    The peak value is read at the position where the noiseless filtered pulse
    peaks, so the unfiltered result converges to ``A_n / sigma``.
    """
    if config.trials < 100:
        raise ValidationError("trials", "monte_carlo_snr needs at least 100 trials")
    if config.noise.sigma == 0:
        raise InfiniteSNR("noise sigma is zero")
    peaks = snr_samples(config, n, spec)
    return float(np.mean(peaks) / np.std(peaks, ddof=1))


def extract_amplitudes(config: ExperimentConfig, photon_numbers, spec=None, stream=_NOISE):
    """Peak amplitude and time error for a trace per requested photon number."""
    proc = Processor(config, spec)
    photon_numbers = np.asarray(photon_numbers, dtype=int)
    amps_table = np.array([0.0] + [config.shape.amplitude(n)
                                   for n in range(1, config.shape.max_n + 1)])
    lo, hi = proc.window

    def run(b, size):
        start = b * BLOCK_SIZE
        amps = amps_table[photon_numbers[start:start + size]]
        y = proc(_noisy_block(config, b, amps, proc.unit))
        pos, height, ok = disc.refine_peaks(y, lo, hi)
        return height, proc.time_of(pos) - config.pulse_delay, ok

    parts = _run_blocks(run, photon_numbers.size, config.threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def fit_amplitudes(amplitudes, k: int):
    """Two-pass mixture fit: coarse histogram, then bins of a quarter of the narrowest std."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    hist = disc.build_histogram(amplitudes)
    # well-separated peaks can fall into one bin each; refine until each spans several
    while np.count_nonzero(hist.counts) < 5 * k and hist.counts.size < 20000:
        hist = disc.build_histogram(amplitudes, min(hist.counts.size * 4, 20000))
    fit = disc.fit_gaussian_mixture(hist, k)
    target = int(math.ceil(np.ptp(amplitudes) / (fit.stds.min() / 4)))
    bins = min(max(target, hist.counts.size), 20000)
    if bins > hist.counts.size:
        hist = disc.build_histogram(amplitudes, bins)
        fit = disc.fit_gaussian_mixture(hist, k, init=fit.components)
    return fit, hist


@dataclass
class DiscriminationReport:
    filter: str
    mu_true: float
    fit: disc.MixtureFit
    histogram: disc.AmplitudeHistogram
    spacings: np.ndarray
    snr_per_n: np.ndarray
    fired_counts: np.ndarray
    true_counts: np.ndarray
    mu_estimate: float
    triggers: int
    dropped: int
    amplitudes: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "filter": self.filter,
            "mu_true": self.mu_true,
            "mu_estimate": self.mu_estimate,
            "fit": self.fit.to_dict(),
            "spacings": [float(s) for s in self.spacings],
            "snr_per_n": [float(s) for s in self.snr_per_n],
            "fired_counts": [int(c) for c in self.fired_counts],
            "true_counts": [int(c) for c in self.true_counts],
            "triggers": self.triggers,
            "dropped_unbracketed": self.dropped,
            "histogram_bins": int(self.histogram.counts.size),
        }


def sample_photon_numbers(config: ExperimentConfig, mu: float):
    """Fired-pixel count for each optical pulse (0 means no detection)."""
    probs = disc.fired_pixel_distribution(mu, config.readout.num_pixels).fired_probabilities
    parts = [block_rng(config.seed, _PHOTONS, b).choice(probs.size, size=size, p=probs)
             for b, size in _blocks(config.trials)]
    return np.concatenate(parts)


def run_discrimination_experiment(config: ExperimentConfig, mu: float,
                                  spec: FilterSpec | None = None) -> DiscriminationReport:
    """Simulate ``config.trials`` optical pulses at mean photon number ``mu``.

    Pulses that fire no pixel produce no trigger; the rest are filtered, their
    peaks fitted with an N-component mixture, classified, and inverted back
    to a mean photon number.
    """
    if not mu > 0:
        raise ValidationError("mu", "mean photon number must be positive")
    N = config.readout.num_pixels
    if config.shape.max_n < N:
        raise ValidationError("amplitudes", f"amplitude table must cover n = 1..{N}")
    spec = config.filter if spec is None else spec
    k = sample_photon_numbers(config, mu)
    triggered = k[k > 0]
    heights, _, ok = extract_amplitudes(config, triggered, spec)
    amps = heights[ok]
    fit, hist = fit_amplitudes(amps, N)
    labels = disc.assign_components(amps, fit)
    counts = disc.fired_counts_from_labels(labels, N, zero_count=int(np.sum(k == 0)))
    mu_hat = disc.estimate_mean_photon_number(counts, N)
    return DiscriminationReport(
        filter=spec.label(), mu_true=mu, fit=fit, histogram=hist,
        spacings=disc.normalized_spacing(fit), snr_per_n=fit.means / fit.stds,
        fired_counts=counts, true_counts=np.bincount(k, minlength=N + 1),
        mu_estimate=mu_hat, triggers=int(triggered.size), dropped=int(np.sum(~ok)),
        amplitudes=amps, labels=labels)


def arrival_errors(config: ExperimentConfig, n: int, spec: FilterSpec | None = None,
                   timing="auto", threshold=None):
    """Measured minus true arrival time for each trial (NaN where timing failed).

    ``timing="threshold"`` uses the last rising crossing before the reference
    peak (default threshold: the steepest point of the noiseless filtered pulse); ``"peak"`` uses the
    refined peak time. ``"auto"`` picks peak timing for matched/kernel filters.
    """
    spec = config.filter if spec is None else spec
    proc = Processor(config, spec, n)
    if timing == "auto":
        timing = "peak" if spec.kind in ("matched", "kernel") else "threshold"
    amp = config.shape.amplitude(n)
    fs = config.sample_rate
    if timing == "threshold":
        unit_thr, lo, hi = proc.edge_threshold()
        level = unit_thr * amp if threshold is None else threshold
    elif timing == "peak":
        lo, hi = proc.window
    else:
        raise ValidationError("timing", f"unknown timing method {timing!r}")

    def run(b, size):
        delays = None
        if config.random_phase:
            delays = config.pulse_delay + block_rng(config.seed, _PHASE, b).uniform(0, 1 / fs, size)
        y = proc(_noisy_block(config, b, np.full(size, amp), proc.unit, delays))
        true = np.full(size, config.pulse_delay) if delays is None else delays
        if timing == "peak":
            pos, _, ok = disc.refine_peaks(y, lo, hi)
            pos = np.where(ok, pos, np.nan)
        else:
            pos = disc.crossing_positions(y, level, lo, hi, last=True)
        return proc.time_of(pos) - true

    return np.concatenate(_run_blocks(run, config.trials, config.threads))


def run_jitter_experiment(config: ExperimentConfig, n: int, method="gaussian_fit",
                          spec: FilterSpec | None = None, timing="auto", threshold=None,
                          min_valid_fraction=0.9) -> float:
    """FWHM timing jitter (seconds) of n-photon pulses under the configured filter."""
    if config.trials < 1000:
        raise ValidationError("trials", "jitter experiments need at least 1000 trials")
    errors = arrival_errors(config, n, spec, timing, threshold)
    valid = errors[np.isfinite(errors)]
    if valid.size < min_valid_fraction * errors.size:
        raise InsufficientData(
            f"only {valid.size} of {errors.size} pulses produced a crossing or bracketed peak")
    return disc.timing_jitter(valid, method)


def labelled_spacing(config: ExperimentConfig, spec: FilterSpec | None = None, pair=(1, 2)):
    """S between two photon numbers from ground-truth-labelled amplitude samples.

    Unbracketed maxima keep their unrefined window-maximum height, since at
    very low cutoffs the filtered pulse is nearly flat across the window.
    """
    a, b = pair
    ns = np.concatenate([np.full(config.trials, a), np.full(config.trials, b)])
    heights, _, _ = extract_amplitudes(config, ns, spec)
    first, second = heights[:config.trials], heights[config.trials:]
    return float(disc.spacing_from_moments([first.mean(), second.mean()],
                                           [first.std(ddof=1), second.std(ddof=1)])[0])


@dataclass
class SweepResult:
    cutoffs: np.ndarray
    s12: np.ndarray
    jitter: np.ndarray
    matched_s12: float
    matched_jitter: float
    lowpass_kind: str = "brickwall_fft"

    def __post_init__(self):
        if np.any(np.diff(self.cutoffs) <= 0):
            raise ValidationError("cutoffs", "cutoffs must increase strictly")
        if np.any(self.s12 < 0) or np.any(self.jitter[np.isfinite(self.jitter)] < 0):
            raise ValidationError("s12", "spacings and jitters must be non-negative")

    @property
    def best_cutoff(self) -> float:
        return float(self.cutoffs[int(np.argmax(self.s12))])

    @property
    def jitter_at_best(self) -> float:
        return float(self.jitter[int(np.argmax(self.s12))])

    def is_unimodal(self) -> bool:
        """S_12 never falls before its maximum, never rises after it, and peaks inside.

        Neighbouring cutoffs that keep the same FFT bins give identical values,
        so ties count as monotone.
        """
        s = self.s12
        i = int(np.argmax(s))
        return (bool(s[i] > s[0] and s[i] > s[-1])
                and bool(np.all(np.diff(s[:i + 1]) >= 0))
                and bool(np.all(np.diff(s[i:]) <= 0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cutoff_hz,s12,jitter_s\n")
        for f, s, j in zip(self.cutoffs, self.s12, self.jitter):
            buf.write(f"{float(f)!r},{float(s)!r},{float(j)!r}\n")
        return buf.getvalue()

    def to_dict(self):
        return {
            "lowpass_kind": self.lowpass_kind,
            "cutoffs_hz": [float(f) for f in self.cutoffs],
            "s12": [float(s) for s in self.s12],
            "jitter_s": [float(j) for j in self.jitter],
            "best_cutoff_hz": self.best_cutoff,
            "best_s12": float(np.max(self.s12)),
            "jitter_at_best_s": self.jitter_at_best,
            "unimodal": self.is_unimodal(),
            "unmeasured_jitter_cutoffs_hz": [float(f) for f, j in zip(self.cutoffs, self.jitter)
                                             if not np.isfinite(j)],
            "matched_s12": self.matched_s12,
            "matched_jitter_s": self.matched_jitter,
        }


def sweep_lowpass(config: ExperimentConfig, cutoffs: Sequence[float], kind="brickwall_fft",
                  jitter_n=1, jitter_method="gaussian_fit") -> SweepResult:
    """S_12 and jitter across low-pass cutoffs, with matched-filter reference values.

    All cutoffs reuse the same seeds, so the curve compares filters on
    identical noise. Jitter is NaN at cutoffs so low that the filtered edge
    wraps around the record and no crossing can be timed.
    """
    cutoffs = np.asarray(sorted(float(c) for c in cutoffs))
    if cutoffs.size < 3:
        raise ValidationError("cutoffs", "a sweep needs at least 3 cutoffs")
    s12, jitter = [], []
    for c in cutoffs:
        spec = FilterSpec("lowpass", c, kind)
        s12.append(labelled_spacing(config, spec))
        try:
            jitter.append(run_jitter_experiment(config, jitter_n, jitter_method, spec))
        except InsufficientData:
            jitter.append(math.nan)
    matched = FilterSpec("matched")
    return SweepResult(cutoffs, np.array(s12), np.array(jitter),
                       labelled_spacing(config, matched),
                       run_jitter_experiment(config, jitter_n, jitter_method, matched), kind)


def estimate_max_array_size(s_min: float, num_pixels: int, z0=50.0, r_s=52.0) -> int:
    """Largest array size whose extrapolated minimum spacing stays >= 1.

    Spacing scales as 1 / (N + Z0/R_S), giving floor(S_min (N + Z0/R_S) - Z0/R_S).
    """
    if not s_min > 0:
        raise ValidationError("s_min", "minimum spacing must be positive")
    ratio = z0 / r_s
    size = s_min * (num_pixels + ratio) - ratio
    if size < 1:
        raise NoValidSize(f"spacing {s_min} at N={num_pixels} supports no array size")
    return int(math.floor(size + 1e-9))
