import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnrfilter.errors import UnknownPhotonNumber, ValidationError
from pnrfilter.signal_model import (EventSchedule, NoiseModel, PulseShape, ReadoutConfig, Trace,
                                    add_noise, electrical_amplitude, peak_time, pulse_waveform,
                                    raw_peak_value, synthesize_pulse, synthesize_trace)


def test_peak_time_matches_dense_grid(shape):
    t = np.linspace(0, 5e-9, 2_000_001)
    u = shape.unit(t)
    assert abs(t[np.argmax(u)] - peak_time(shape.tau_rise, shape.tau_fall)) < 3e-15
    assert math.isclose(peak_time(0.21e-9, 25e-9), 1.0122e-9, rel_tol=1e-3)


def test_peak_normalized_maximum_is_amplitude(shape):
    t = np.linspace(0.9e-9, 1.1e-9, 200_001)
    for n in range(1, 7):
        assert math.isclose(shape.waveform(t, n).max(), shape.amplitude(n), rel_tol=1e-9)


def test_raw_peak_value():
    assert math.isclose(raw_peak_value(0.21e-9, 25e-9), 0.95225, rel_tol=1e-4)
    raw = pulse_waveform(np.array([peak_time(0.21e-9, 25e-9)]), 0.21e-9, 25e-9, 1.0, False)
    assert math.isclose(raw[0], raw_peak_value(0.21e-9, 25e-9), rel_tol=1e-12)


def test_pulse_is_positive_and_starts_at_zero(shape):
    tr = synthesize_pulse(shape, 1, 5e9, 200e-9)
    assert tr.samples[0] == 0.0
    assert np.all(tr.samples >= 0)


def test_zero_amplitude_gives_zero_waveform():
    t = np.linspace(0, 100e-9, 501)
    assert np.all(pulse_waveform(t, 0.21e-9, 25e-9, 0.0) == 0)


def test_shape_identical_across_n(shape):
    traces = [synthesize_pulse(shape, n, 5e9, 200e-9) for n in range(1, 7)]
    ref = traces[0].samples / shape.amplitude(1)
    peak = ref.max()
    for n, tr in enumerate(traces, start=1):
        assert np.max(np.abs(tr.samples / shape.amplitude(n) - ref)) < 1e-12 * peak
    peaks = [tr.samples.max() for tr in traces]
    assert peaks == sorted(peaks)


def test_unknown_photon_number(shape):
    with pytest.raises(UnknownPhotonNumber):
        synthesize_pulse(shape, 7)


def test_duration_too_short(shape):
    with pytest.raises(ValidationError):
        synthesize_pulse(shape, 1, 5e9, 1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(tau_rise=25e-9, tau_fall=0.21e-9, amplitudes={1: 1.0}),
    dict(tau_rise=-1e-9, tau_fall=25e-9, amplitudes={1: 1.0}),
    dict(amplitudes={1: 2.0, 2: 1.0}),
    dict(amplitudes={1: -1.0}),
    dict(amplitudes={}),
])
def test_pulse_shape_invariants(kwargs):
    with pytest.raises(ValidationError):
        PulseShape(**kwargs)


def test_empty_schedule_is_zero_trace(shape):
    tr = synthesize_trace(shape, EventSchedule(()), 5e9, 200e-9)
    assert np.all(tr.samples == 0)


def test_single_event_equals_pulse(shape):
    a = synthesize_trace(shape, EventSchedule(((0.0, 1),)), 5e9, 200e-9)
    assert a == synthesize_pulse(shape, 1, 5e9, 200e-9)


def test_two_event_superposition(shape):
    t_star = shape.t_peak
    tr = synthesize_trace(shape, EventSchedule(((0.0, 1), (100e-9, 1))), 5e9, 200e-9)
    # direct summation at an off-grid instant
    t = 100e-9 + t_star
    expected = shape.amplitude(1) + shape.waveform(np.array([t]), 1)[0]
    direct = shape.waveform(np.array([t]), 1)[0] + shape.waveform(np.array([t - 100e-9]), 1)[0]
    assert math.isclose(direct, expected, rel_tol=1e-9)
    singles = [synthesize_trace(shape, EventSchedule(((e, 1),)), 5e9, 200e-9).samples
               for e in (0.0, 100e-9)]
    assert np.array_equal(tr.samples, singles[0] + singles[1])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 190e-9), st.integers(1, 6)), min_size=1, max_size=4))
def test_superposition_property(events):
    shape = PulseShape.linear(2.94, 6)
    events = sorted(events)
    total = synthesize_trace(shape, EventSchedule(tuple(events)), 5e9, 200e-9).samples
    parts = sum(synthesize_trace(shape, EventSchedule((e,)), 5e9, 200e-9).samples
                for e in events)
    np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-12)


def test_event_outside_window(shape):
    with pytest.raises(ValidationError):
        synthesize_trace(shape, EventSchedule(((250e-9, 1),)), 5e9, 200e-9)


def test_schedule_validation():
    with pytest.raises(ValidationError):
        EventSchedule(((2e-9, 1), (1e-9, 1)))
    with pytest.raises(ValidationError):
        EventSchedule(((0.0, 0),))


def test_add_noise_zero_sigma_is_identity(shape):
    tr = synthesize_pulse(shape, 2)
    assert add_noise(tr, NoiseModel(0.0, 1)) == tr


def test_noise_statistics_and_whiteness():
    zero = Trace(5e9, 0.0, np.zeros(1_000_000))
    g = add_noise(zero, NoiseModel(0.40, 7)).samples
    assert 0.399 <= g.std() <= 0.401
    g = g - g.mean()
    var = np.dot(g, g)
    for lag in (1, 2, 5, 17):
        assert abs(np.dot(g[:-lag], g[lag:]) / var) < 5 / math.sqrt(g.size)


def test_noise_determinism():
    zero = Trace(5e9, 0.0, np.zeros(1000))
    a = add_noise(zero, NoiseModel(0.4, 99)).samples
    b = add_noise(zero, NoiseModel(0.4, 99)).samples
    c = add_noise(zero, NoiseModel(0.4, 100)).samples
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_noise_model_invariants():
    with pytest.raises(ValidationError):
        NoiseModel(-0.1)


def test_trace_invariants():
    with pytest.raises(ValidationError):
        Trace(0.0, 0.0, np.zeros(3))
    with pytest.raises(ValidationError):
        Trace(1.0, 0.0, np.zeros(0))
    with pytest.raises(ValidationError):
        Trace(1.0, 0.0, np.array([0.0, np.nan]))


def test_electrical_amplitude_examples():
    cfg = ReadoutConfig(6, 10e-6, 50, 52)
    assert math.isclose(electrical_amplitude(cfg, 1), 10e-6 * 50 / (6 + 50 / 52) * 1e3,
                        rel_tol=1e-12)
    assert math.isclose(electrical_amplitude(cfg, 1), 0.0718, rel_tol=1e-3)
    assert math.isclose(electrical_amplitude(cfg, 3), 3 * electrical_amplitude(cfg, 1),
                        rel_tol=1e-12)
    big = electrical_amplitude(ReadoutConfig(100, 10e-6), 1)
    small = electrical_amplitude(ReadoutConfig(50, 10e-6), 1)
    assert abs(big / small / (50.96 / 100.96) - 1) < 0.02
    with pytest.raises(ValidationError):
        electrical_amplitude(cfg, 7)
    with pytest.raises(ValidationError):
        ReadoutConfig(0, 10e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.floats(1e-6, 1e-4))
def test_electrical_amplitude_monotone(N, ib):
    cfg = ReadoutConfig(N, ib)
    values = [electrical_amplitude(cfg, n) for n in range(1, N + 1)]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert electrical_amplitude(ReadoutConfig(N + 1, ib), 1) < values[0]


def test_from_readout_shape():
    cfg = ReadoutConfig(6, 10e-6)
    shape = PulseShape.from_readout(cfg, gain=40.0)
    assert math.isclose(shape.amplitude(2), 80 * electrical_amplitude(cfg, 1), rel_tol=1e-12)
