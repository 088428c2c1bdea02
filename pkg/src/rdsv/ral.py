"""The Reference Audio Library: per-speaker reference d-vectors, one per
annotated speaking interval, filtered by interval length, an optional
speaker allowlist, and a minimum reference count.

Each reference is the renormalized mean of the d-vectors whose window
intervals fall fully inside the speaking interval; a speaker ends up with
one reference per retained interval.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import (
    FILE_NORM_TOL,
    EmbeddingSequence,
    time_of,
    unit,
    vector_norms,
)
from .errors import ConstraintError, FormatError
from .rttm import Annotation
from .util import atomic_write_bytes

_MAGIC = b"RAL1\n"
_CONTAIN_TOL = 1e-9


class RalError(FormatError):
    """Base for RAL1 load failures."""


class RalMagicError(RalError):
    pass


class RalTruncatedError(RalError):
    pass


class RalDuplicateSpeakerError(RalError):
    pass


class RalBuildError(ConstraintError):
    """No speaker survived the filters (or the file stores none)."""


@dataclass(frozen=True)
class RalConfig:
    """Defaults: intervals of at least 1 s qualify, and a speaker needs at
    least 5 of them to enter the library."""

    min_audio_len: float = 1.0
    min_ref_count: int = 5
    allowlist: frozenset[str] | None = None

    def __post_init__(self):
        if self.min_audio_len <= 0:
            raise ConstraintError(f"min_audio_len must be > 0, got {self.min_audio_len}")
        if self.min_ref_count < 1:
            raise ConstraintError(f"min_ref_count must be >= 1, got {self.min_ref_count}")
        if self.allowlist is not None:
            object.__setattr__(self, "allowlist", frozenset(self.allowlist))


@dataclass(frozen=True)
class ReferenceAudioLibrary:
    """speaker name -> [n_refs x dim] float32 reference matrix."""

    dim: int
    entries: dict[str, np.ndarray]

    def __post_init__(self):
        fixed = {}
        for name, refs in self.entries.items():
            refs = np.ascontiguousarray(refs, dtype=np.float32)
            if refs.ndim != 2 or refs.shape[1] != self.dim:
                raise ConstraintError(f"{name}: reference shape {refs.shape}, dim {self.dim}")
            if refs.shape[0] < 1:
                raise ConstraintError(f"{name}: no references")
            err = np.abs(vector_norms(refs) - 1.0)
            if not np.all(err <= FILE_NORM_TOL):  # also catches NaN/Inf
                raise ConstraintError(f"{name}: non-unit reference (error {err.max():.2e})")
            fixed[name] = refs
        object.__setattr__(self, "entries", fixed)

    @property
    def speakers(self) -> list[str]:
        return sorted(self.entries)

    def reference_count(self, speaker: str) -> int:
        return self.entries[speaker].shape[0]

    def stacked(self) -> tuple[np.ndarray, list[tuple[str, int]]]:
        """All references as one matrix plus (speaker, ordinal) row labels,
        speakers in sorted order."""
        index = [
            (name, ordinal)
            for name in self.speakers
            for ordinal in range(self.entries[name].shape[0])
        ]
        matrix = np.vstack([self.entries[name] for name in self.speakers])
        return matrix, index


def interval_vectors(seq: EmbeddingSequence, onset: float, duration: float) -> np.ndarray:
    """Vectors whose original-time window lies fully inside
    [onset, onset + duration] (1 ns slack for float jitter)."""
    lo, hi = onset - _CONTAIN_TOL, onset + duration + _CONTAIN_TOL
    rows = [
        i
        for i in range(len(seq))
        if (iv := time_of(seq, i))[0] >= lo and iv[1] <= hi
    ]
    return seq.vectors[rows] if rows else np.zeros((0, seq.dim), dtype=np.float32)


def build_ral(
    refs: Sequence[tuple[EmbeddingSequence, Annotation]],
    cfg: RalConfig = RalConfig(),
) -> ReferenceAudioLibrary:
    """Build the library from annotated reference cases.

    For every allowlisted speaker segment of at least min_audio_len whose
    interval contains at least one full window, the renormalized mean of
    those vectors becomes one reference. Speakers with fewer than
    min_ref_count references are dropped. References are ordered by
    (file_id, onset), so the result is independent of input order.
    """
    if not refs:
        raise RalBuildError("no reference cases given")
    dims = {seq.dim for seq, _ in refs}
    if len(dims) != 1:
        raise ConstraintError(f"mixed d-vector dimensions across inputs: {sorted(dims)}")
    dim = dims.pop()

    keyed: dict[str, list[tuple[tuple[str, float], np.ndarray]]] = {}
    for seq, ann in refs:
        if seq.file_id != ann.file_id:
            raise ConstraintError(
                f"sequence {seq.file_id!r} paired with annotation {ann.file_id!r}"
            )
        for seg in ann.segments:
            if cfg.allowlist is not None and seg.speaker not in cfg.allowlist:
                continue
            if seg.duration < cfg.min_audio_len:
                continue
            vectors = interval_vectors(seq, seg.onset, seg.duration)
            if vectors.shape[0] == 0:
                continue
            reference = unit(vectors.astype(np.float64).mean(axis=0))
            keyed.setdefault(seg.speaker, []).append(((seq.file_id, seg.onset), reference))

    entries = {
        speaker: np.vstack([ref for _, ref in sorted(items, key=lambda kv: kv[0])])
        for speaker, items in keyed.items()
        if len(items) >= cfg.min_ref_count
    }
    if not entries:
        raise RalBuildError(
            "no speaker met the reference criteria "
            f"(min_audio_len={cfg.min_audio_len}, min_ref_count={cfg.min_ref_count})"
        )
    return ReferenceAudioLibrary(dim, entries)


def write_ral(lib: ReferenceAudioLibrary, path: str | Path) -> None:
    """Serialize to RAL1 (little-endian, float32 references), atomically."""
    buf = bytearray(_MAGIC)
    buf += struct.pack("<II", lib.dim, len(lib.entries))
    for name in lib.speakers:
        encoded = name.encode("utf-8")
        refs = lib.entries[name]
        buf += struct.pack("<H", len(encoded)) + encoded
        buf += struct.pack("<I", refs.shape[0])
        buf += np.ascontiguousarray(refs, dtype="<f4").tobytes()
    atomic_write_bytes(path, bytes(buf))


def read_ral(path: str | Path) -> ReferenceAudioLibrary:
    """Load and validate a RAL1 file (bit-exact inverse of write_ral)."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise RalTruncatedError(f"{path}: truncated at byte {off}")
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(len(_MAGIC)) != _MAGIC:
        raise RalMagicError(f"{path}: not a RAL1 file")
    dim, speaker_count = struct.unpack("<II", take(8))
    entries: dict[str, np.ndarray] = {}
    for _ in range(speaker_count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in entries:
            raise RalDuplicateSpeakerError(f"{path}: duplicate speaker {name!r}")
        (ref_count,) = struct.unpack("<I", take(4))
        refs = np.frombuffer(take(4 * dim * ref_count), dtype="<f4").reshape(ref_count, dim)
        entries[name] = refs.copy()
    if off != len(data):
        raise RalError(f"{path}: {len(data) - off} trailing bytes")
    if not entries:
        raise RalBuildError(f"{path}: library stores no speakers")
    err = [
        name
        for name, refs in entries.items()
        if not np.all(np.abs(vector_norms(refs) - 1.0) <= FILE_NORM_TOL)
    ]
    if err:
        raise RalError(f"{path}: non-unit references for {err}")
    try:
        return ReferenceAudioLibrary(dim, entries)
    except ConstraintError as exc:
        raise RalError(f"{path}: {exc}") from None


def load_allowlist(path: str | Path) -> frozenset[str]:
    """One speaker per line; '#' starts a comment; blank lines ignored."""
    names = set()
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                names.add(line)
    return frozenset(names)
