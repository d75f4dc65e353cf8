# Pulse model: what a series nanowire array puts on the readout line.
#
# Each fired pixel adds the same bi-exponential shape; n fired pixels give an
# amplitude A_n. Pulses are positive-going and, by default, scaled so the
# true waveform maximum equals A_n.

import numpy as np

from pnrfilter import (NoiseModel, PulseShape, ReadoutConfig, add_noise, electrical_amplitude,
                       synthesize_pulse, synthesize_trace)
from pnrfilter.signal_model import peak_time, raw_peak_value

shape = PulseShape.linear(a1_mv=2.94, max_n=6)
print("rise / fall:", shape.tau_rise, shape.tau_fall)
print("peak time t* = %.4f ns" % (peak_time(shape.tau_rise, shape.tau_fall) * 1e9))
print("unnormalised peak value u(t*) = %.5f" % raw_peak_value(shape.tau_rise, shape.tau_fall))

# six nested pulses, identical shape
for n in range(1, 7):
    tr = synthesize_pulse(shape, n, sample_rate=5e9, duration=200e-9)
    print("n=%d  max %.3f mV at %.1f ns" % (n, tr.samples.max(), tr.times[tr.samples.argmax()] * 1e9))

# the electrical model sets the scale before amplification
readout = ReadoutConfig(num_pixels=6, bias_current=10e-6)
print("V_1 at the line: %.4f mV" % electrical_amplitude(readout, 1))
for N in (6, 26, 64):
    print("  N=%2d -> V_1 = %.4f mV" % (N, electrical_amplitude(ReadoutConfig(N, 10e-6), 1)))

# a noisy record with two detections 100 ns apart
clean = synthesize_trace(shape, ((20e-9, 2), (120e-9, 5)), 5e9, 200e-9)
noisy = add_noise(clean, NoiseModel(sigma=0.40, seed=1))
print("record: %d samples, residual std %.3f mV" % (len(noisy), np.std(noisy.samples - clean.samples)))
