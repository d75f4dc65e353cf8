# Trace files, kernel files and the pnr command.
#
# Binary traces start with the 4-byte tag PNRT, a u32 version, the sample rate,
# start time and sample count, then little-endian float64 samples. CSV with a
# time_s,mV header is accepted too. The same steps are available as
#
#   pnr simulate --config run.ini --out sim
#   pnr analyze sim --config run.ini --ref-times sim/truth.csv --out analysis
#   pnr sweep --config run.ini --cutoffs 1e6:1e9:20 --out sweep
#   pnr report --config run.ini --out report
#   pnr report --manifest report/manifest.json --out replay   # byte-identical rerun

import json
import tempfile
from pathlib import Path

from pnrfilter import PulseShape, read_trace, synthesize_pulse, write_trace
from pnrfilter.cli import main
from pnrfilter.filtering import build_matched_template, read_kernel, write_kernel

work = Path(tempfile.mkdtemp())
shape = PulseShape.linear(2.94, 6)

tr = synthesize_pulse(shape, 3)
write_trace(tr, work / "pulse.pnrt")
write_trace(tr, work / "pulse.csv")
print("binary round trip equal:", read_trace(work / "pulse.pnrt") == tr)

write_kernel(build_matched_template(shape), work / "template.csv")
print("kernel taps read back:", len(read_kernel(work / "template.csv")))

ini = work / "run.ini"
ini.write_text("[experiment]\nseed = 5\ntemplate_csv = template.csv\n"
               "[simulate]\ntraces = 200\n")
main(["simulate", "--config", str(ini), "--out", str(work / "sim")])
main(["analyze", str(work / "sim"), "--config", str(ini), "--out", str(work / "analysis")])
report = json.loads((work / "analysis" / "report.json").read_text())
print("spacings:", [round(s, 2) for s in report["spacings"]])
print("fired counts:", report["fired_counts"])
print("outputs in", work)
