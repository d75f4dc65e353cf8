"""Trace file formats.

Binary ``.pnrt`` layout (little-endian)::

    offset  size  field
    0       4     magic b"PNRT"
    4       4     u32 version (= 1)
    8       8     f64 sample_rate [samples/s]
    16      8     f64 start_time [s]
    24      8     u64 count
    32      8*count  f64 samples [mV]

CSV traces carry a header line and two columns, ``time_s`` and ``mV``.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .errors import BadFormat
from .signal_model import Trace

MAGIC = b"PNRT"
VERSION = 1
_HEADER = struct.Struct("<4sIddQ")


def encode_trace(trace: Trace) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, trace.sample_rate, trace.start_time, len(trace))
    return header + np.asarray(trace.samples, dtype="<f8").tobytes()


def decode_trace(data: bytes, path="<bytes>") -> Trace:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadFormat(path, 0, "bad magic bytes (expected b'PNRT')")
    if len(data) < _HEADER.size:
        raise BadFormat(path, len(data), "truncated header")
    _, version, rate, start, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise BadFormat(path, 4, f"unsupported version {version}")
    if not rate > 0:
        raise BadFormat(path, 8, f"invalid sample rate {rate}")
    if count == 0:
        raise BadFormat(path, 24, "empty trace")
    expected = _HEADER.size + 8 * count
    if len(data) != expected:
        raise BadFormat(path, min(len(data), expected),
                        f"payload length {len(data) - _HEADER.size} != {8 * count} bytes")
    samples = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size)
    if not np.all(np.isfinite(samples)):
        bad = int(np.flatnonzero(~np.isfinite(samples))[0])
        raise BadFormat(path, _HEADER.size + 8 * bad, "non-finite sample")
    return Trace(rate, start, samples.astype(float))


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    buf.write("time_s,mV\n")
    for t, v in zip(trace.times, trace.samples):
        buf.write(f"{float(t)!r},{float(v)!r}\n")
    return buf.getvalue()


def trace_from_csv(text: str, path="<csv>") -> Trace:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]][:2] != ["time_s", "mV"]:
        raise BadFormat(path, 0, "CSV header must be 'time_s,mV'")
    offset = len(text.splitlines(keepends=True)[0])
    times, values = [], []
    for line in rows[1:]:
        if not line:
            continue
        try:
            times.append(float(line[0]))
            values.append(float(line[1]))
        except (ValueError, IndexError):
            raise BadFormat(path, offset, f"unparseable row {line!r}") from None
        offset += len(",".join(line)) + 1
    if len(values) < 2:
        raise BadFormat(path, offset, "need at least two samples to infer the sample rate")
    t = np.asarray(times)
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (t.size - 1)
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise BadFormat(path, 0, "time column is not uniformly sampled")
    return Trace(1.0 / dt, t[0], np.asarray(values))


def write_trace(trace: Trace, path) -> Path:
    """Write ``trace``; the format follows the suffix (``.csv`` or binary)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(trace_to_csv(trace))
    else:
        path.write_bytes(encode_trace(trace))
    return path


def read_trace(path) -> Trace:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".csv":
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadFormat(path, exc.start, "not UTF-8 text") from None
        return trace_from_csv(text, path)
    return decode_trace(data, path)
