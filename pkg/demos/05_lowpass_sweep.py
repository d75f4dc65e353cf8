# Low-pass filters as the simple alternative.
#
# Sweep a brick-wall cutoff: S_12 rises while noise is removed, then falls once
# the pulse itself is cut. Timing degrades as the edge slows. The matched
# filter values are the reference line.

import numpy as np

from pnrfilter import ExperimentConfig, sweep_lowpass

cfg = ExperimentConfig.reference(trials=3000, seed=3)
res = sweep_lowpass(cfg, np.geomspace(12e6, 2.5e9, 12))
for f, s, j in zip(res.cutoffs, res.s12, res.jitter):
    print("%8.1f MHz  S12 %6.2f  jitter %7.1f ps" % (f / 1e6, s, j * 1e12))
print("best cutoff %.0f MHz, unimodal: %s" % (res.best_cutoff / 1e6, res.is_unimodal()))
print("matched filter: S12 %.2f, jitter %.1f ps" % (res.matched_s12, res.matched_jitter * 1e12))

with open("sweep.csv", "w") as fh:
    fh.write(res.to_csv())
