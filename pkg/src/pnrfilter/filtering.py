"""Matched and low-pass filtering plus spectral analysis of pulse records.

Matched-filter output alignment: ``apply_filter`` returns the full discrete
convolution and shifts its ``start_time`` back by ``(L - 1) / sample_rate``
(``L`` = tap count). With that shift, the matched-filter response to an
isolated pulse peaks exactly at the pulse's arrival time, so peak times read
directly as arrival times. Low-pass outputs keep the input's time base.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import BadFormat, NoCrossing, SampleRateMismatch, ValidationError
from .signal_model import DEFAULT_SAMPLE_RATE, PulseShape, Trace

NORMALIZATIONS = ("unit_energy", "unit_peak", "raw")
LOWPASS_KINDS = ("brickwall_fft", "single_pole")

# Kernels longer than this are convolved through the FFT.
DIRECT_CONVOLUTION_MAX_TAPS = 64

MIN_ENERGY_CAPTURE = 0.99


def _normalize(taps, normalization):
    if normalization == "unit_energy":
        return taps / np.sqrt(np.sum(taps**2))
    if normalization == "unit_peak":
        return taps / np.max(np.abs(taps))
    if normalization == "raw":
        return taps
    raise ValidationError("normalization", f"unknown normalization {normalization!r}")


@dataclass(frozen=True, eq=False)
class FilterKernel:
    """FIR impulse response; ``duration`` equals tap count over sample rate."""

    taps: np.ndarray
    sample_rate: float
    normalization: str = "raw"

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size == 0 or not np.all(np.isfinite(taps)):
            raise ValidationError("taps", "taps must be a non-empty finite 1-D sequence")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError("normalization", f"unknown normalization {self.normalization!r}")
        if not self.sample_rate > 0:
            raise ValidationError("sample_rate", "sample rate must be positive")
        if self.normalization == "unit_energy" and abs(np.sum(taps**2) - 1) > 1e-9:
            raise ValidationError("taps", "unit_energy kernel must have sum(taps**2) == 1")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_taps(cls, taps, sample_rate, normalization="unit_energy"):
        """Build a kernel, normalizing ``taps`` first."""
        taps = np.asarray(taps, dtype=float)
        if taps.size and np.all(taps == 0) and normalization != "raw":
            raise ValidationError("taps", "cannot normalize an all-zero kernel")
        return cls(_normalize(taps, normalization), sample_rate, normalization)

    def __len__(self):
        return self.taps.size

    @property
    def duration(self) -> float:
        return self.taps.size / self.sample_rate

    @property
    def alignment_offset(self) -> float:
        """Time shift applied to filtered output so matched peaks land on arrivals."""
        return (self.taps.size - 1) / self.sample_rate


def energy_capture(shape: PulseShape, sample_rate, duration) -> float:
    """Fraction of the sampled pulse energy inside the first ``duration`` seconds."""
    full = int(math.ceil(40 * shape.tau_fall * sample_rate))
    u = shape.unit(np.arange(max(full, 1)) / sample_rate)
    count = int(round(duration * sample_rate))
    return float(np.sum(u[:count] ** 2) / np.sum(u**2))


def build_matched_template(shape: PulseShape, sample_rate=DEFAULT_SAMPLE_RATE,
                           duration=None, normalization="unit_energy", n=None) -> FilterKernel:
    """Time-reversed sampled pulse, ``h[k] = s(t0 - k/fs)``.

    ``duration`` defaults to five fall times. Passing ``n`` scales the template
    by ``A_n``, which only matters for ``normalization="raw"``.
    """
    if duration is None:
        duration = 5 * shape.tau_fall
    count = int(round(duration * sample_rate))
    if count < 2:
        raise ValidationError("duration", "template needs at least two taps")
    captured = energy_capture(shape, sample_rate, duration)
    if captured < MIN_ENERGY_CAPTURE:
        raise ValidationError(
            "duration", f"template captures {captured:.4f} of the pulse energy (< 0.99)")
    pulse = shape.unit(np.arange(count) / sample_rate)
    if n is not None:
        pulse = pulse * shape.amplitude(n)
    return FilterKernel.from_taps(pulse[::-1], sample_rate, normalization)


def lowpass_kernel(cutoff, sample_rate=DEFAULT_SAMPLE_RATE, num_taps=101) -> FilterKernel:
    """Hamming-windowed sinc FIR low-pass with unity DC gain."""
    nyquist = sample_rate / 2
    if not 0 < cutoff < nyquist:
        raise ValidationError("cutoff", "cutoff must lie strictly between 0 and Nyquist")
    taps = sps.firwin(num_taps, cutoff, fs=sample_rate)
    return FilterKernel(taps, sample_rate, "raw")


def convolve(x, taps, method="auto"):
    """Full convolution along the last axis of ``x`` (1-D or batched 2-D)."""
    x = np.asarray(x, dtype=float)
    taps = np.asarray(taps, dtype=float)
    if method == "auto":
        method = "fft" if taps.size > DIRECT_CONVOLUTION_MAX_TAPS else "direct"
    kernel = taps.reshape((1,) * (x.ndim - 1) + taps.shape)
    if method == "fft":
        return sps.fftconvolve(x, kernel, mode="full", axes=-1)
    if method == "direct":
        if x.ndim == 1:
            return np.convolve(x, taps, mode="full")
        return sps.convolve(x, kernel, mode="full", method="direct")
    raise ValidationError("method", f"unknown convolution method {method!r}")


def apply_filter(trace: Trace, kernel: FilterKernel, method="auto") -> Trace:
    """Convolve ``trace`` with ``kernel``; output start time is aligned (see module doc)."""
    if not math.isclose(trace.sample_rate, kernel.sample_rate, rel_tol=1e-12):
        raise SampleRateMismatch(
            f"trace at {trace.sample_rate} S/s, kernel at {kernel.sample_rate} S/s")
    y = convolve(trace.samples, kernel.taps, method)
    return trace.with_samples(y, trace.start_time - kernel.alignment_offset)


def single_pole_coefficient(cutoff, sample_rate) -> float:
    """Feedback coefficient ``b`` of y[n] = (1-b) x[n] + b y[n-1] with -3 dB at ``cutoff``."""
    c = math.cos(2 * math.pi * cutoff / sample_rate)
    return (2 - c) - math.sqrt((2 - c) ** 2 - 1)


def lowpass(x, sample_rate, cutoff, kind="brickwall_fft"):
    """Array-level low-pass along the last axis; see :func:`apply_lowpass`."""
    x = np.asarray(x, dtype=float)
    nyquist = sample_rate / 2
    if not 0 < cutoff <= nyquist:
        raise ValidationError("cutoff", f"cutoff {cutoff} Hz outside (0, {nyquist}]")
    if kind == "brickwall_fft":
        n = x.shape[-1]
        spectrum = np.fft.rfft(x, axis=-1)
        spectrum[..., np.fft.rfftfreq(n, 1 / sample_rate) > cutoff] = 0
        return np.fft.irfft(spectrum, n=n, axis=-1)
    if kind == "single_pole":
        b = single_pole_coefficient(cutoff, sample_rate)
        num, den = [1 - b], [1.0, -b]
        zi = sps.lfilter_zi(num, den) * x[..., :1]
        y, _ = sps.lfilter(num, den, x, axis=-1, zi=zi)
        return y
    raise ValidationError("kind", f"unknown low-pass kind {kind!r}")


def apply_lowpass(trace: Trace, cutoff, kind="brickwall_fft") -> Trace:
    """Low-pass ``trace``.

    ``brickwall_fft`` zeroes every rFFT bin strictly above ``cutoff``;
    ``single_pole`` is a first-order recursive filter whose -3 dB point is
    exactly ``cutoff``, started in its steady state for the first sample.
    """
    return trace.with_samples(lowpass(trace.samples, trace.sample_rate, cutoff, kind))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Two-sided amplitude spectral density (mV/sqrt(Hz)) on 0..Nyquist."""

    frequencies: np.ndarray
    magnitudes: np.ndarray
    sample_rate: float
    segment_length: int

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        m = np.asarray(self.magnitudes, dtype=float)
        if f.shape != m.shape or f.ndim != 1:
            raise ValidationError("magnitudes", "frequencies and magnitudes differ in shape")
        if np.any(np.diff(f) <= 0):
            raise ValidationError("frequencies", "frequencies must increase strictly")
        if np.any(m < 0):
            raise ValidationError("magnitudes", "magnitudes must be non-negative")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "magnitudes", m)

    @property
    def resolution(self) -> float:
        return self.sample_rate / self.segment_length

    def energy(self) -> float:
        """Sum of squared samples implied by the spectrum (exact for one boxcar segment)."""
        power = self.magnitudes**2
        weights = np.full(power.size, 2.0)
        weights[0] = 1.0
        if self.segment_length % 2 == 0:
            weights[-1] = 1.0
        return float(self.sample_rate * np.sum(weights * power))

    def scaled(self, factor) -> "Spectrum":
        return Spectrum(self.frequencies, self.magnitudes * factor, self.sample_rate,
                        self.segment_length)


def power_spectrum(trace: Trace, averaging_segments=1, window="hann") -> Spectrum:
    """Welch segment-averaged spectrum with 50 % overlap.

    One segment means a single periodogram over the whole record. Use
    ``window="boxcar"`` for an unwindowed estimate.
    """
    size = len(trace)
    if averaging_segments < 1:
        raise ValidationError("averaging_segments", "need at least one segment")
    if size < averaging_segments or size < 2:
        raise ValidationError("averaging_segments", "trace shorter than the segment count")
    if averaging_segments == 1:
        nperseg, noverlap = size, 0
    else:
        nperseg = max(2 * size // (averaging_segments + 1), 2)
        noverlap = nperseg // 2
    freqs, psd = sps.welch(trace.samples, fs=trace.sample_rate, window=window,
                           nperseg=nperseg, noverlap=noverlap, detrend=False,
                           return_onesided=True, scaling="density")
    # welch doubles every bin except DC (and Nyquist for even lengths)
    last = psd.size if nperseg % 2 else psd.size - 1
    psd[1:last] /= 2
    return Spectrum(freqs, np.sqrt(psd), trace.sample_rate, nperseg)


def characteristic_frequency(signal: Spectrum, noise: Spectrum) -> float:
    """Lowest frequency where the signal spectrum falls to the noise spectrum.

    Linear interpolation between the bracketing bins.
    """
    if signal.frequencies.shape != noise.frequencies.shape or not np.allclose(
            signal.frequencies, noise.frequencies, rtol=1e-12, atol=0):
        raise ValidationError("noise", "spectra are on different frequency grids")
    diff = signal.magnitudes - noise.magnitudes
    if diff[0] <= 0:
        raise NoCrossing("signal does not exceed noise at the lowest frequency")
    below = np.flatnonzero(diff <= 0)
    if below.size == 0:
        raise NoCrossing("signal stays above noise over the whole band")
    i = int(below[0])
    f0, f1 = signal.frequencies[i - 1], signal.frequencies[i]
    d0, d1 = diff[i - 1], diff[i]
    return float(f0 + d0 / (d0 - d1) * (f1 - f0))


def kernel_to_csv(kernel: FilterKernel) -> str:
    buf = io.StringIO()
    buf.write(f"# sample_rate_hz={float(kernel.sample_rate)!r}\n")
    buf.write(f"# normalization={kernel.normalization}\n")
    buf.write("tap\n")
    for tap in kernel.taps:
        buf.write(f"{float(tap)!r}\n")
    return buf.getvalue()


def kernel_from_csv(text: str, path="<csv>") -> FilterKernel:
    meta, taps = {}, []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition("=")
            if sep:
                meta[key.strip()] = value.strip()
        elif stripped and stripped != "tap":
            try:
                taps.append(float(stripped))
            except ValueError:
                raise BadFormat(path, offset, f"bad tap value {stripped!r}") from None
        offset += len(line.encode())
    if "sample_rate_hz" not in meta:
        raise BadFormat(path, 0, "missing '# sample_rate_hz=' header")
    normalization = meta.get("normalization", "raw")
    try:
        return FilterKernel(taps, float(meta["sample_rate_hz"]), normalization)
    except ValidationError as exc:
        raise BadFormat(path, 0, str(exc)) from None


def write_kernel(kernel: FilterKernel, path) -> Path:
    path = Path(path)
    path.write_text(kernel_to_csv(kernel))
    return path


def read_kernel(path) -> FilterKernel:
    path = Path(path)
    return kernel_from_csv(path.read_text(), path)
