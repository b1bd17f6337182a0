"""File formats: waveform fixtures, CSV emitters and JSON-line records.

Waveforms are stored as little-endian float32, interleaved I/Q for complex
data, behind a single text header line carrying the rate, length and seed id.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import SampleBuffer

_MAGIC = "cvqkd-wave 1"


def write_waveform(path, buffer: SampleBuffer, seed_id: str = "") -> None:
    path = Path(path)
    kind = "complex" if buffer.is_complex() else "real"
    header = f"{_MAGIC} kind={kind} rate={buffer.rate!r} n={len(buffer)} seed={seed_id}\n"
    if kind == "complex":
        flat = np.empty(2 * len(buffer), dtype="<f4")
        flat[0::2] = buffer.samples.real
        flat[1::2] = buffer.samples.imag
    else:
        flat = buffer.samples.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(flat.tobytes())


def read_waveform(path) -> SampleBuffer:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        raw = fh.read()
    fields = header.split()
    if " ".join(fields[:2]) != _MAGIC:
        raise ValueError(f"not a waveform fixture: {header!r}")
    kv = dict(f.split("=", 1) for f in fields[2:])
    n = int(kv["n"])
    rate = float(kv["rate"])
    flat = np.frombuffer(raw, dtype="<f4")
    if kv["kind"] == "complex":
        if len(flat) != 2 * n:
            raise ValueError("waveform payload length mismatch")
        samples = flat[0::2].astype(np.float64) + 1j * flat[1::2].astype(np.float64)
    else:
        if len(flat) != n:
            raise ValueError("waveform payload length mismatch")
        samples = flat.astype(np.float64)
    return SampleBuffer(samples, rate, meta={"seed": kv.get("seed", "")})


def format_value(x) -> str:
    """Deterministic scalar formatting shared by all CSV emitters."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_records(path, records: list[dict]) -> None:
    """JSON-lines emitter for structured result records."""
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x)}")
