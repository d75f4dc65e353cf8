# Matched filtering and the spectrum picture.
#
# The template is the time-reversed unit pulse with unit energy, so filtered
# white noise keeps its standard deviation and the filtered pulse peak equals
# the pulse's l2 norm. The spectra show where the signal sinks into the noise.

import numpy as np

from pnrfilter import (NoiseModel, PulseShape, Trace, add_noise, apply_filter,
                       build_matched_template, characteristic_frequency, detect_peak,
                       power_spectrum, synthesize_trace)

fs = 5e9
shape = PulseShape.linear(2.94, 6)
template = build_matched_template(shape, fs, duration=125e-9)
print("template taps:", len(template), " energy:", np.sum(template.taps ** 2))
print("alignment offset (L-1)/fs = %.1f ns" % (template.alignment_offset * 1e9))

clean = synthesize_trace(shape, ((50e-9, 1),), fs, 300e-9)
y = apply_filter(clean, template)
ev = detect_peak(y)
print("filtered peak %.3f (l2 norm %.3f), reported at %.3f ns"
      % (ev.peak_amplitude, np.sqrt(np.sum(clean.samples ** 2)), ev.peak_time * 1e9))

noise = add_noise(Trace(fs, 0.0, np.zeros(200_000)), NoiseModel(0.40, seed=3))
print("noise std before %.3f, after %.3f mV"
      % (noise.samples.std(), apply_filter(noise, template).samples[624:-624].std()))

# noise spectrum averaged over many records, pulse spectrum from one long record
record = synthesize_trace(shape, ((0.0, 1),), fs, 1000e-9)
stack = add_noise(Trace(fs, 0.0, np.zeros(len(record) * 200)), NoiseModel(0.40, seed=4))
noise_rows = stack.samples.reshape(200, -1)
signal_sp = power_spectrum(record, 1, window="boxcar")
noise_mag = np.sqrt(np.mean([power_spectrum(Trace(fs, 0.0, r), 1, "boxcar").magnitudes ** 2
                             for r in noise_rows], axis=0))
noise_sp = type(signal_sp)(signal_sp.frequencies, noise_mag, fs, signal_sp.segment_length)
fc = characteristic_frequency(signal_sp, noise_sp)
print("signal meets noise at f_c = %.0f MHz (for a 1 us record)" % (fc / 1e6))
