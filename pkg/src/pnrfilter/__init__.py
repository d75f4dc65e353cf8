"""Digital matched filtering for photon-number discrimination in series nanowire detector arrays."""

__version__ = "0.1.0"

from .discrimination import (AmplitudeHistogram, DetectionEvent, MixtureFit, PhotonStatistics,
                             build_histogram, classify_events, detect_peak,
                             estimate_mean_photon_number, fired_pixel_distribution,
                             fit_gaussian_mixture, normalized_spacing,
                             threshold_crossing_time, timing_jitter)
from .experiments import (ExperimentConfig, FilterSpec, SweepResult, estimate_max_array_size,
                          monte_carlo_snr, run_discrimination_experiment, run_jitter_experiment,
                          sweep_lowpass)
from .filtering import (FilterKernel, Spectrum, apply_filter, apply_lowpass,
                        build_matched_template, characteristic_frequency, power_spectrum)
from .signal_model import (EventSchedule, NoiseModel, PulseShape, ReadoutConfig, Trace,
                           add_noise, electrical_amplitude, synthesize_pulse, synthesize_trace)
from .traceio import read_trace, write_trace
