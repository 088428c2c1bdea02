"""Rate-controlled windowing of mel frames into unit-norm d-vectors, the
pluggable embedder contract, the concat-to-original time mapping, and the
DVEC1 binary file format.

The ``rate`` parameter is the number of non-overlapping windows per second
of concatenated speech; each window spans round(100 / rate) mel frames.
Valid rates lie in [0.625, 100]: 0.625 gives the 1600 ms maximum window,
100 embeds every 10 ms frame individually.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .audio import SAMPLE_RATE, MelSpectrogram, VadMap, mel_frame_count
from .errors import ConstraintError, FormatError
from .util import atomic_write_bytes

RATE_MIN = 0.625
RATE_MAX = 100.0
DEFAULT_DIM = 256
FILE_NORM_TOL = 1e-4

_MAGIC = b"DVEC1\n"


class DvecError(FormatError):
    """Base for DVEC1 load failures."""


class DvecMagicError(DvecError):
    pass


class DvecTruncatedError(DvecError):
    pass


class DvecMismatchError(DvecError):
    """Header fields inconsistent with each other or with the payload."""


class DvecNormError(DvecError):
    """A stored vector is not unit-norm within tolerance."""


def unit(x: np.ndarray) -> np.ndarray:
    """L2-normalize to float32. A vector already unit within 1e-6 is
    returned unscaled so that normalization is idempotent at the bit level."""
    x = np.asarray(x, dtype=np.float64)
    norm = float(np.sqrt(np.sum(x * x)))
    if not np.isfinite(norm):
        raise ConstraintError("cannot normalize a non-finite vector")
    if norm < 1e-12:
        raise ConstraintError("cannot normalize a zero vector")
    if abs(norm - 1.0) > 1e-6:
        x = x / norm
    return x.astype(np.float32)


def vector_norms(vectors: np.ndarray) -> np.ndarray:
    """Per-row L2 norms computed in float64."""
    v = np.asarray(vectors, dtype=np.float64)
    return np.sqrt(np.sum(v * v, axis=-1))


class Embedder(Protocol):
    """Contract for anything that turns one mel window into a d-vector.

    ``embed_window`` must be deterministic in (window, index) and return a
    unit-norm vector of length ``dim``. Implementations must be safe for
    concurrent calls or document themselves as serial.
    """

    dim: int

    def embed_window(self, window: np.ndarray, index: int) -> np.ndarray: ...


def window_frames_for_rate(rate: float) -> int:
    """Mel frames per window: round(100 / rate), round-half-to-even."""
    if not RATE_MIN <= rate <= RATE_MAX:
        raise ConstraintError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {rate}")
    return int(round(100.0 / rate))


def window_plan(n_frames: int, rate: float) -> list[tuple[int, int]]:
    """Consecutive non-overlapping [start, end) frame windows from frame 0.

    The trailing partial window is discarded rather than padded.
    """
    wf = window_frames_for_rate(rate)
    return [(i * wf, (i + 1) * wf) for i in range(n_frames // wf)]


@dataclass(frozen=True)
class EmbeddingSequence:
    """Time-ordered d-vectors for one recording plus the VAD map that
    converts window index back to original-recording time."""

    file_id: str
    rate: float
    dim: int
    vectors: np.ndarray
    vad: VadMap
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not RATE_MIN <= self.rate <= RATE_MAX:
            raise ConstraintError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {self.rate}")
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.size == 0:
            vectors = vectors.reshape(0, self.dim)
        if vectors.ndim != 2:
            raise ConstraintError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] != self.dim:
            raise ConstraintError(f"vector width {vectors.shape[1]} != dim {self.dim}")
        expected = self.expected_count(self.vad, self.rate, self.sample_rate)
        if vectors.shape[0] != expected:
            raise ConstraintError(
                f"{self.file_id}: {vectors.shape[0]} vectors, expected {expected} "
                f"from the VAD map at rate {self.rate}"
            )
        if vectors.size:
            err = np.abs(vector_norms(vectors) - 1.0)
            if not np.all(err <= FILE_NORM_TOL):  # also catches NaN/Inf
                raise ConstraintError(f"non-unit d-vector (norm error {err.max():.2e})")
        object.__setattr__(self, "vectors", vectors)

    @staticmethod
    def expected_count(vad: VadMap, rate: float, sample_rate: int = SAMPLE_RATE) -> int:
        n_frames = mel_frame_count(vad.speech_sample_count(sample_rate))
        return n_frames // window_frames_for_rate(rate)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def embed(
    mel: MelSpectrogram,
    rate: float,
    embedder: Embedder,
    vad: VadMap,
    file_id: str,
) -> EmbeddingSequence:
    """Slice *mel* into rate-controlled windows and embed each one."""
    plan = window_plan(mel.n_frames, rate)
    vectors = np.zeros((len(plan), embedder.dim), dtype=np.float32)
    for i, (start, end) in enumerate(plan):
        try:
            vec = embedder.embed_window(mel.frames[start:end], i)
        except Exception as exc:
            raise ConstraintError(f"embedder failed at window {i}: {exc}") from exc
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (embedder.dim,):
            raise ConstraintError(f"embedder returned shape {vec.shape} at window {i}")
        vectors[i] = vec
    return EmbeddingSequence(file_id, rate, embedder.dim, vectors, vad)


def window_concat_interval(index: int, rate: float) -> tuple[float, float]:
    """A window's [start, end) interval in concatenated-speech seconds."""
    return index / rate, (index + 1) / rate


def time_of(seq: EmbeddingSequence, index: int) -> tuple[float, float]:
    """Original-time interval of window *index*.

    When the window spans a VAD gap the returned interval runs from the
    start of the first covered region to the end of the last one, i.e. it
    may include the dropped gap.
    """
    if not 0 <= index < len(seq):
        raise ConstraintError(f"window index {index} out of range [0, {len(seq)})")
    c0, c1 = window_concat_interval(index, seq.rate)
    return seq.vad.concat_to_orig(c0), seq.vad.concat_to_orig_end(c1)


def write_dvec(seq: EmbeddingSequence, path: str | Path) -> None:
    """Serialize to DVEC1 (little-endian, float32 payload), atomically."""
    fid = seq.file_id.encode("utf-8")
    buf = bytearray(_MAGIC)
    buf += struct.pack("<H", len(fid)) + fid
    buf += struct.pack("<IIdI", seq.dim, len(seq), seq.rate, seq.sample_rate)
    buf += struct.pack("<I", len(seq.vad.segments))
    for orig_start, orig_end, concat_start in seq.vad.segments:
        buf += struct.pack("<ddd", orig_start, orig_end, concat_start)
    buf += np.ascontiguousarray(seq.vectors, dtype="<f4").tobytes()
    atomic_write_bytes(path, bytes(buf))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DvecTruncatedError(f"{self.path}: truncated at byte {self.off}")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_dvec(path: str | Path) -> EmbeddingSequence:
    """Load and validate a DVEC1 file.

    Checks, in order: magic, structural completeness, header consistency
    (rate bounds, VAD map validity, the window-count formula), and that
    every vector is unit-norm within 1e-4.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(_MAGIC)) != _MAGIC:
        raise DvecMagicError(f"{path}: not a DVEC1 file")
    (fid_len,) = reader.unpack("<H")
    file_id = reader.take(fid_len).decode("utf-8")
    dim, count, rate, sample_rate = reader.unpack("<IIdI")
    (vad_count,) = reader.unpack("<I")
    segments = [reader.unpack("<ddd") for _ in range(vad_count)]
    payload = reader.take(4 * dim * count)
    if reader.off != len(reader.data):
        raise DvecMismatchError(f"{path}: {len(reader.data) - reader.off} trailing bytes")
    try:
        vad = VadMap(tuple(segments))
    except ConstraintError as exc:
        raise DvecMismatchError(f"{path}: bad VAD map ({exc})") from None
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    if vectors.size:
        err = np.abs(vector_norms(vectors) - 1.0)
        if not np.all(err <= FILE_NORM_TOL):  # also catches NaN/Inf
            raise DvecNormError(f"{path}: non-unit vector (norm error {err.max():.2e})")
    try:
        return EmbeddingSequence(file_id, rate, dim, vectors, vad, sample_rate)
    except ConstraintError as exc:
        raise DvecMismatchError(f"{path}: {exc}") from None
