"""Standalone DVEC1 writer. This is the contract surface with the
diarization pipeline; the byte layout below must match its reader.

Layout (little-endian): magic "DVEC1\n"; file_id as u16 length + UTF-8;
dim u32; count u32; rate f64; sample_rate u32; vad_count u32; per VAD
segment 3 x f64 (orig_start, orig_end, concat_start); payload
count x dim x f32 row-major. concat_start is the running left-to-right
float64 sum of prior segment durations, and the reader checks it exactly.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"DVEC1\n"
SAMPLE_RATE = 16000

RATE_MIN = 0.625
RATE_MAX = 100.0


def window_frames_for_rate(rate: float) -> int:
    """Mel frames per window: round(100 / rate); rate bounds [0.625, 100]."""
    if not RATE_MIN <= rate <= RATE_MAX:
        raise ValueError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {rate}")
    return int(round(100.0 / rate))


def expected_window_count(vad: list[tuple[float, float]], rate: float) -> int:
    """The reader-side count formula, from the VAD intervals alone."""
    n_samples = int(sum(round((end - start) * SAMPLE_RATE) for start, end in vad))
    n_frames = 0 if n_samples < 400 else 1 + (n_samples - 400) // 160
    return n_frames // window_frames_for_rate(rate)


def concat_starts(vad: list[tuple[float, float]]) -> list[float]:
    starts = []
    acc = 0.0
    for start, end in vad:
        starts.append(acc)
        acc += end - start
    return starts


def write_dvec(
    path: str | Path,
    file_id: str,
    rate: float,
    vectors: np.ndarray,
    vad: list[tuple[float, float]],
    sample_rate: int = SAMPLE_RATE,
) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    count, dim = vectors.shape
    encoded = file_id.encode("utf-8")
    buf = bytearray(MAGIC)
    buf += struct.pack("<H", len(encoded)) + encoded
    buf += struct.pack("<IIdI", dim, count, rate, sample_rate)
    buf += struct.pack("<I", len(vad))
    for (start, end), concat in zip(vad, concat_starts(vad)):
        buf += struct.pack("<ddd", start, end, concat)
    buf += vectors.tobytes()

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(buf))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
