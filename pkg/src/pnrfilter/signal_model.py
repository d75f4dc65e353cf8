"""Pulse and trace synthesis for series nanowire detector arrays.

A detection of ``n`` fired pixels produces the bi-exponential pulse

    s_n(t) = A_n * (exp(-t/tau_fall) - exp(-t/tau_rise)) / u_peak,   t >= 0

and the recorded trace is ``r_n(t) = s_n(t) + g(t)`` with ``g`` white Gaussian
noise. Sign convention: the fall term comes first so pulses are positive-going.
With ``peak_normalized`` (the default) the raw bi-exponential is divided by its
continuous-time maximum ``u_peak`` so that ``A_n`` is the true pulse height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import UnknownPhotonNumber, ValidationError

# Fitted time constants of the 6-pixel device.
TAU_RISE = 0.21e-9
TAU_FALL = 25e-9
NOISE_SIGMA_MV = 0.40

DEFAULT_SAMPLE_RATE = 5e9
DEFAULT_DURATION = 200e-9

# Single-photon height used by the reference configs: A_1 / (2.355 sigma) = 3.12
# at sigma = 0.40 mV. Histograms of picked peaks space wider than this because
# the window maximum has less spread than one sample.
REFERENCE_A1_MV = 2.94


def peak_time(tau_rise: float, tau_fall: float) -> float:
    """Time of the continuous-time maximum of the raw bi-exponential."""
    return math.log(tau_fall / tau_rise) * tau_rise * tau_fall / (tau_fall - tau_rise)


def raw_peak_value(tau_rise: float, tau_fall: float) -> float:
    t = peak_time(tau_rise, tau_fall)
    return math.exp(-t / tau_fall) - math.exp(-t / tau_rise)


def pulse_waveform(t, tau_rise, tau_fall, amplitude=1.0, peak_normalized=True):
    """Evaluate the bi-exponential pulse at times ``t`` (seconds); zero for t < 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t >= 0
    tp = t[pos]
    out[pos] = np.exp(-tp / tau_fall) - np.exp(-tp / tau_rise)
    scale = amplitude / raw_peak_value(tau_rise, tau_fall) if peak_normalized else amplitude
    return out * scale


@dataclass(frozen=True)
class PulseShape:
    """Rise/fall constants plus the photon-number amplitude table (mV)."""

    tau_rise: float = TAU_RISE
    tau_fall: float = TAU_FALL
    amplitudes: Mapping[int, float] = field(default_factory=dict)
    peak_normalized: bool = True

    def __post_init__(self):
        if not (self.tau_rise > 0 and self.tau_fall > 0):
            raise ValidationError("tau_rise/tau_fall", "time constants must be positive")
        if not self.tau_rise < self.tau_fall:
            raise ValidationError("tau_rise", "tau_rise must be smaller than tau_fall")
        amps = {int(k): float(v) for k, v in dict(self.amplitudes).items()}
        if not amps:
            raise ValidationError("amplitudes", "amplitude table is empty")
        keys = sorted(amps)
        if keys[0] < 1:
            raise ValidationError("amplitudes", "photon numbers start at 1")
        values = [amps[k] for k in keys]
        if any(not math.isfinite(v) or v <= 0 for v in values):
            raise ValidationError("amplitudes", "amplitudes must be positive and finite")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValidationError("amplitudes", "amplitudes must increase strictly with n")
        object.__setattr__(self, "amplitudes", dict(sorted(amps.items())))

    @classmethod
    def linear(cls, a1_mv=REFERENCE_A1_MV, max_n=6, tau_rise=TAU_RISE, tau_fall=TAU_FALL,
               peak_normalized=True):
        """Shape with ``A_n = n * a1_mv`` for n = 1..max_n."""
        return cls(tau_rise, tau_fall, {n: n * a1_mv for n in range(1, max_n + 1)},
                   peak_normalized)

    @classmethod
    def from_readout(cls, config: "ReadoutConfig", gain=1.0, tau_rise=TAU_RISE,
                     tau_fall=TAU_FALL):
        """Amplitudes from the electrical output model times an amplifier voltage gain."""
        amps = {n: gain * electrical_amplitude(config, n)
                for n in range(1, config.num_pixels + 1)}
        return cls(tau_rise, tau_fall, amps, True)

    @property
    def max_n(self) -> int:
        return max(self.amplitudes)

    @property
    def t_peak(self) -> float:
        return peak_time(self.tau_rise, self.tau_fall)

    def amplitude(self, n: int) -> float:
        try:
            return self.amplitudes[n]
        except KeyError:
            raise UnknownPhotonNumber(f"no amplitude for n={n}") from None

    def unit(self, t):
        """Pulse with unit amplitude evaluated at ``t``."""
        return pulse_waveform(t, self.tau_rise, self.tau_fall, 1.0, self.peak_normalized)

    def waveform(self, t, n):
        return self.unit(t) * self.amplitude(n)


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = NOISE_SIGMA_MV
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValidationError("sigma", "noise sigma must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed", "seed must fit in an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int(self.seed)))


@dataclass(frozen=True, eq=False)
class Trace:
    """Uniformly sampled voltage record (mV) starting at ``start_time`` seconds."""

    sample_rate: float
    start_time: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("samples", "trace must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("samples", "trace contains non-finite values")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ValidationError("sample_rate", "sample rate must be positive")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and self.start_time == other.start_time
                and np.array_equal(self.samples, other.samples))

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    @property
    def end_time(self) -> float:
        return self.start_time + (self.samples.size - 1) / self.sample_rate

    def with_samples(self, samples, start_time=None) -> "Trace":
        return Trace(self.sample_rate, self.start_time if start_time is None else start_time,
                     samples)


@dataclass(frozen=True)
class ReadoutConfig:
    num_pixels: int = 6
    bias_current: float = 10e-6
    line_impedance: float = 50.0
    shunt_resistance: float = 52.0

    def __post_init__(self):
        if int(self.num_pixels) != self.num_pixels or self.num_pixels < 1:
            raise ValidationError("num_pixels", "array size must be an integer >= 1")
        for name in ("bias_current", "line_impedance", "shunt_resistance"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be positive")

    @property
    def impedance_ratio(self) -> float:
        return self.line_impedance / self.shunt_resistance


@dataclass(frozen=True)
class EventSchedule:
    """Ordered (arrival_time, photon_number) pairs for multi-pulse traces."""

    events: tuple = ()

    def __post_init__(self):
        events = tuple((float(t), int(n)) for t, n in self.events)
        times = [t for t, _ in events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationError("events", "arrival times must be non-decreasing")
        if any(n < 1 for _, n in events):
            raise ValidationError("events", "photon numbers must be >= 1")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def _num_samples(sample_rate, duration):
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ValidationError("duration", "duration shorter than one sample")
    return n


def synthesize_pulse(shape: PulseShape, n: int, sample_rate=DEFAULT_SAMPLE_RATE,
                     duration=DEFAULT_DURATION) -> Trace:
    """Noiseless n-photon pulse starting at t = 0."""
    return synthesize_trace(shape, EventSchedule(((0.0, n),)), sample_rate, duration)


def synthesize_trace(shape: PulseShape, schedule: EventSchedule | Sequence,
                     sample_rate=DEFAULT_SAMPLE_RATE, duration=DEFAULT_DURATION) -> Trace:
    """Linear superposition of time-shifted pulses, one per scheduled event."""
    if not isinstance(schedule, EventSchedule):
        schedule = EventSchedule(tuple(schedule))
    if duration < 10 * shape.tau_rise:
        raise ValidationError("duration", "duration < 10*tau_rise truncates the rising edge")
    count = _num_samples(sample_rate, duration)
    t = np.arange(count) / sample_rate
    out = np.zeros(count)
    for arrival, n in schedule:
        amp = shape.amplitude(n)
        if not 0 <= arrival < duration:
            raise ValidationError("schedule", f"event at {arrival} s lies outside [0, {duration})")
        out = out + amp * shape.unit(t - arrival)
    return Trace(sample_rate, 0.0, out)


def noise_samples(noise: NoiseModel, size) -> np.ndarray:
    return noise.generator().normal(0.0, 1.0, size) * noise.sigma


def add_noise(trace: Trace, noise: NoiseModel) -> Trace:
    """Add i.i.d. Gaussian noise drawn from the model's seeded stream."""
    if noise.sigma == 0:
        return trace.with_samples(trace.samples.copy())
    return trace.with_samples(trace.samples + noise_samples(noise, len(trace)))


def electrical_amplitude(config: ReadoutConfig, n: int) -> float:
    """Output voltage in mV for ``n`` fired pixels: n*I_B*Z0 / (N + Z0/R_S)."""
    if not 1 <= n <= config.num_pixels:
        raise ValidationError("n", f"photon number {n} outside 1..{config.num_pixels}")
    volts = n * config.bias_current * config.line_impedance / (
        config.num_pixels + config.impedance_ratio)
    return volts * 1e3
