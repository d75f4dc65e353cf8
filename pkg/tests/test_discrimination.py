import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pnrfilter.discrimination import (AmplitudeHistogram, DetectionEvent, MixtureFit,
                                      assign_components, build_histogram, classify_events,
                                      detect_peak, events_to_csv, fired_counts_from_labels,
                                      fired_pixel_distribution, estimate_mean_photon_number,
                                      fit_gaussian_mixture, histogram_to_csv,
                                      normalized_spacing, threshold_crossing_time,
                                      timing_jitter)
from pnrfilter.errors import (InsufficientData, InvalidComponentCount, NoCrossing,
                              PeakNotBracketed, Saturated, ValidationError)
from pnrfilter.filtering import apply_filter, build_matched_template
from pnrfilter.signal_model import Trace, synthesize_pulse, synthesize_trace


# -- peaks and crossings


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.49, 0.49), st.floats(0.1, 10), st.floats(-5, 5))
def test_parabola_vertex_exact(offset, curvature, height):
    x = np.arange(21, dtype=float)
    vertex = 10 + offset
    y = height - curvature * (x - vertex) ** 2
    ev = detect_peak(Trace(1.0, 0.0, y))
    assert abs(ev.peak_time - vertex) < 1e-9
    assert abs(ev.peak_amplitude - height) < 1e-9 * max(1, abs(height))


def test_ramp_not_bracketed():
    with pytest.raises(PeakNotBracketed):
        detect_peak(Trace(1.0, 0.0, np.arange(10.0)))


def test_window_too_small():
    with pytest.raises(ValidationError):
        detect_peak(Trace(1.0, 0.0, np.arange(10.0)), (2.0, 3.0))


def test_matched_peak_time_against_oversampled_oracle(shape):
    fs = 5e9
    tr = synthesize_trace(shape, ((50e-9, 1),), fs, 300e-9)
    y = apply_filter(tr, build_matched_template(shape, fs))
    ev = detect_peak(y)
    # brute-force argmax of the correlation with the continuous pulse on a 100x finer lag grid
    lags = np.arange(-100, 101) / (100 * fs)
    taps_t = np.arange(625) / fs
    template = shape.unit(taps_t)
    scores = [np.dot(shape.unit(taps_t + lag), template) for lag in lags]
    oracle = 50e-9 + lags[int(np.argmax(scores))]
    assert abs(ev.peak_time - oracle) < 0.5 / fs
    assert abs(ev.peak_time - 50e-9) < 0.5 / fs


def test_threshold_linear_ramp():
    t = np.linspace(0, 10e-9, 11)
    tr = Trace(1e9, 0.0, t / 10e-9)
    assert threshold_crossing_time(tr, 0.5) == pytest.approx(5e-9, abs=1e-21)
    with pytest.raises(NoCrossing):
        threshold_crossing_time(tr, 2.0)


def test_threshold_on_pulse_against_oversampled_oracle(shape):
    fs = 5e9
    tr = synthesize_pulse(shape, 1, fs, 200e-9)
    a1 = shape.amplitude(1)
    t = threshold_crossing_time(tr, a1 / 2)
    assert 0 <= t <= shape.t_peak
    fine = np.arange(0, 5e-9, 1 / (100 * fs))
    oracle = fine[np.argmax(shape.waveform(fine, 1) >= a1 / 2)]
    assert abs(t - oracle) < 0.5 / fs


def test_threshold_falling_direction():
    tr = Trace(1.0, 0.0, np.array([3.0, 2.0, 1.0, 0.0]))
    assert threshold_crossing_time(tr, 1.5, "falling") == pytest.approx(1.5)


# -- histograms


def test_histogram_examples():
    h = build_histogram([3.0], 7)
    assert h.counts.sum() == 1 and np.count_nonzero(h.counts) == 1
    h = build_histogram([0, 1, 2, 3], 2)
    assert h.counts.tolist() == [2, 2]
    with pytest.raises(InsufficientData):
        build_histogram([])
    with pytest.raises(ValidationError):
        build_histogram([1, 2], 1)


def test_histogram_mean_moment(rng):
    x = rng.normal(5, 0.5, 100_000)
    h = build_histogram(x)
    assert h.total == x.size
    assert h.counts.size >= 50
    assert abs(h.mean() - x.mean()) < 3 * x.std() / math.sqrt(x.size)


def test_histogram_invariants():
    with pytest.raises(ValidationError):
        AmplitudeHistogram(np.array([0.0, 1.0, 1.0]), np.array([1, 1]))
    with pytest.raises(ValidationError):
        AmplitudeHistogram(np.array([0.0, 1.0]), np.array([1, 1]))


# -- mixture fits


def test_single_gaussian_fit(rng):
    x = rng.normal(5.0, 0.5, 100_000)
    fit = fit_gaussian_mixture(build_histogram(x), 1)
    assert abs(fit.means[0] / 5.0 - 1) < 0.01
    assert abs(fit.stds[0] / 0.5 - 1) < 0.03


def test_two_gaussian_fit(rng):
    x = np.concatenate([rng.normal(1, 0.1, 50_000), rng.normal(2, 0.1, 50_000)])
    fit = fit_gaussian_mixture(build_histogram(x), 2)
    np.testing.assert_allclose(fit.means, [1, 2], rtol=0.01)


def test_fit_component_count_errors(rng):
    h = build_histogram(rng.normal(0, 1, 1000))
    with pytest.raises(InvalidComponentCount):
        fit_gaussian_mixture(h, 0)
    with pytest.raises(InvalidComponentCount):
        fit_gaussian_mixture(build_histogram([1.0, 2.0, 3.0], 3), 2)


def test_refit_does_not_increase_residual(rng):
    x = np.concatenate([rng.normal(m, 0.1, 20_000) for m in (1, 2, 3)])
    h = build_histogram(x)
    fit = fit_gaussian_mixture(h, 3)
    again = fit_gaussian_mixture(h, 3, init=fit.components)
    assert again.residual_norm <= fit.residual_norm * (1 + 1e-9)


def test_fit_with_mean_seeds(rng):
    x = np.concatenate([rng.normal(1, 0.1, 20_000), rng.normal(2, 0.1, 20_000)])
    fit = fit_gaussian_mixture(build_histogram(x), 2, init=[1.1, 1.9])
    np.testing.assert_allclose(fit.means, [1, 2], rtol=0.01)


def test_mixture_fit_invariants():
    with pytest.raises(ValidationError):
        MixtureFit(((1, 2.0, 0.1), (1, 1.0, 0.1)))
    with pytest.raises(ValidationError):
        MixtureFit(((1, 1.0, -0.1),))


# -- spacing


def _fit(means, stds):
    return MixtureFit(tuple((1.0, p, s) for p, s in zip(means, stds)))


def test_spacing_formula():
    assert normalized_spacing(_fit([1.0, 2.0], [0.1, 0.1]))[0] == pytest.approx(4.246, abs=1e-3)
    with pytest.raises(InvalidComponentCount):
        normalized_spacing(_fit([1.0], [0.1]))


def test_equal_means_zero_spacing():
    from pnrfilter.discrimination import spacing_from_moments
    assert spacing_from_moments([1.0, 1.0], [0.1, 0.2])[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.lists(st.floats(1e-3, 5), min_size=1, max_size=5),
       st.floats(0.01, 1), st.floats(1e-3, 1e3))
def test_spacing_homogeneity(start, gaps, sd, factor):
    means = list(start + np.cumsum([0.0] + gaps))
    stds = [sd * (1 + i / 10) for i in range(len(means))]
    a = normalized_spacing(_fit(means, stds))
    b = normalized_spacing(_fit([m * factor for m in means], [s * factor for s in stds]))
    np.testing.assert_allclose(a, b, rtol=1e-9)


# -- jitter


def test_jitter_gaussian_delays(rng):
    d = rng.normal(0, 40e-12, 100_000)
    fit = timing_jitter(d, "gaussian_fit")
    direct = timing_jitter(d, "direct_fwhm")
    assert abs(fit / 94.2e-12 - 1) < 0.02
    assert abs(direct / fit - 1) < 0.05


def test_jitter_degenerate_and_translation(rng):
    assert timing_jitter(np.full(500, 3e-9)) == 0.0
    d = rng.normal(0, 40e-12, 20_000)
    a = timing_jitter(d)
    b = timing_jitter(d + 17e-9)
    assert b == pytest.approx(a, rel=1e-3)


def test_jitter_too_few_samples(rng):
    with pytest.raises(InsufficientData):
        timing_jitter(rng.normal(size=99))
    with pytest.raises(InsufficientData):
        timing_jitter(rng.normal(size=999), "direct_fwhm")
    with pytest.raises(ValidationError):
        timing_jitter(rng.normal(size=1000), "bogus")


# -- photon statistics


def test_fired_distribution_examples():
    assert fired_pixel_distribution(0, 6).fired_probabilities.tolist() == [1, 0, 0, 0, 0, 0, 0]
    p = fired_pixel_distribution(2.3, 1).fired_probabilities
    assert p[1] == pytest.approx(1 - math.exp(-2.3), abs=1e-12)
    p = fired_pixel_distribution(6.9, 6).fired_probabilities
    assert p[6] == pytest.approx((1 - math.exp(-1.15)) ** 6, rel=1e-12)
    assert p[6] == pytest.approx(0.102, abs=1e-3)
    with pytest.raises(ValidationError):
        fired_pixel_distribution(-1, 6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.integers(1, 64))
def test_fired_distribution_normalized(mu, N):
    stats_ = fired_pixel_distribution(mu, N)
    p = stats_.fired_probabilities
    assert abs(p.sum() - 1) < 1e-9
    assert np.all((p >= 0) & (p <= 1))
    direct = sum(k * math.comb(N, k) * (1 - math.exp(-mu / N)) ** k
                 * math.exp(-mu / N) ** (N - k) for k in range(N + 1))
    assert abs(stats_.mean_fired() - direct) < 1e-9
    assert abs(stats_.mean_fired() - N * (1 - math.exp(-mu / N))) < 1e-9


@pytest.mark.parametrize("mu", [5.7, 6.9])
def test_mu_round_trip_exact_counts(mu):
    counts = fired_pixel_distribution(mu, 6).fired_probabilities * 1e6
    assert estimate_mean_photon_number(counts, 6) == pytest.approx(mu, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=7, max_size=7))
def test_mu_mle_matches_closed_form(counts):
    counts = np.array(counts)
    if counts[1:].sum() == 0 or counts[:-1].sum() == 0:
        return
    # the binomial MLE is q = mean(k)/N, so mu = -N log(1 - q)
    q = np.sum(np.arange(7) * counts) / (6 * counts.sum())
    expected = -6 * math.log1p(-q)
    assert estimate_mean_photon_number(counts, 6) == pytest.approx(expected, rel=1e-6)


def test_mu_edge_cases():
    assert estimate_mean_photon_number({0: 100}, 6) == 0.0
    with pytest.raises(Saturated):
        estimate_mean_photon_number({6: 10}, 6)
    with pytest.raises(InsufficientData):
        estimate_mean_photon_number([0] * 7, 6)
    with pytest.raises(ValidationError):
        estimate_mean_photon_number({9: 1}, 6)


# -- classification


def test_classification_examples(rng):
    fit = MixtureFit(((1.0, 1.0, 0.1), (1.0, 2.0, 0.1), (1.0, 3.0, 0.1)))
    assert assign_components([1.0, 2.0, 3.0], fit).tolist() == [1, 2, 3]
    assert assign_components([1.5, 2.5], fit).tolist() == [1, 2]
    assert assign_components([1.5], fit, mode="midpoint").tolist() == [1]
    # S = 1/(2.355*0.1) ~ 4.2 between neighbours
    x = rng.normal(3.0, 0.1, 100_000)
    wide = MixtureFit(tuple((1.0, m, 0.1) for m in (1, 2, 3, 4, 5)))
    assert np.mean(assign_components(x, wide) == 3) >= 0.999


def test_unequal_widths_boundary():
    fit = MixtureFit(((1.0, 0.0, 1.0), (1.0, 3.0, 0.5)))
    # equal-likelihood point of the two curves solved analytically
    roots = np.roots([1 / 1 - 1 / 0.25, 2 * 3 / 0.25, -9 / 0.25])
    boundary = float([r for r in roots.real if 0 < r < 3][0])
    assert assign_components([boundary - 1e-6, boundary + 1e-6], fit).tolist() == [1, 2]


def test_classify_events_and_exports():
    fit = MixtureFit(((1.0, 1.0, 0.1), (1.0, 2.0, 0.1)))
    events = classify_events([DetectionEvent(0.9, 1e-9), DetectionEvent(2.1, 2e-9)], fit)
    assert [e.assigned_n for e in events] == [1, 2]
    text = events_to_csv(events)
    assert text.splitlines() == ["peak_mV,time_s,assigned_n", "0.9,1e-09,1", "2.1,2e-09,2"]
    h = build_histogram([0, 1, 2, 3], 2)
    assert histogram_to_csv(h).splitlines()[1:] == ["0.0,1.5,2", "1.5,3.0,2"]
    counts = fired_counts_from_labels([1, 2, 2], 3, zero_count=4)
    assert counts.tolist() == [4, 1, 2, 0]


def test_classified_counts_recover_mu(rng):
    N, mu = 6, 5.7
    p = fired_pixel_distribution(mu, N).fired_probabilities
    k = rng.choice(N + 1, size=100_000, p=p)
    fit = MixtureFit(tuple((1.0, float(n), 0.08) for n in range(1, N + 1)))
    amps = k[k > 0] + rng.normal(0, 0.08, np.sum(k > 0))
    labels = assign_components(amps, fit)
    counts = fired_counts_from_labels(labels, N, zero_count=int(np.sum(k == 0)))
    assert estimate_mean_photon_number(counts, N) == pytest.approx(mu, rel=0.02)
    assert stats.chisquare(counts, p * counts.sum()).pvalue > 1e-4
