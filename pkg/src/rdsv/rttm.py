"""Speaker timelines in the NIST RTTM format, plus the timeline algebra
(normalization, relabeling, duration accounting) the rest of the pipeline
builds on.

A timeline is an ``Annotation``: one recording (``file_id``) and its
speaker-attributed segments. Only SPEAKER records are supported; lines
starting with ";;" are comments.
"""

from __future__ import annotations

import bisect
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConstraintError, FormatError


class RttmParseError(FormatError):
    """Raised for a malformed RTTM line; message carries the line number."""


@dataclass(frozen=True)
class RttmSegment:
    """One speaker-attributed interval: [onset, onset + duration)."""

    file_id: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if self.duration <= 0:
            raise ConstraintError(f"segment duration must be > 0, got {self.duration}")
        if self.onset < 0:
            raise ConstraintError(f"segment onset must be >= 0, got {self.onset}")
        if not self.speaker or any(c.isspace() for c in self.speaker):
            raise ConstraintError(f"bad speaker label {self.speaker!r}")

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class Annotation:
    """A recording's segments, sorted by (onset, speaker).

    Construction sorts; call :meth:`normalize` to additionally merge
    same-speaker segments that touch (or sit within ``merge_gap``).
    Different-speaker overlap is legal and preserved.
    """

    file_id: str
    segments: tuple[RttmSegment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for seg in self.segments:
            if seg.file_id != self.file_id:
                raise ConstraintError(
                    f"segment file_id {seg.file_id!r} != annotation {self.file_id!r}"
                )
        ordered = tuple(sorted(self.segments, key=lambda s: (s.onset, s.speaker)))
        object.__setattr__(self, "segments", ordered)

    def __len__(self) -> int:
        return len(self.segments)

    def normalize(self, merge_gap: float = 0.0) -> "Annotation":
        """Merge adjacent/overlapping same-speaker segments with gap <= merge_gap."""
        by_speaker: dict[str, list[list[float]]] = {}
        for seg in self.segments:
            runs = by_speaker.setdefault(seg.speaker, [])
            if runs and seg.onset - runs[-1][1] <= merge_gap:
                runs[-1][1] = max(runs[-1][1], seg.end)
            else:
                runs.append([seg.onset, seg.end])
        merged = [
            RttmSegment(self.file_id, start, end - start, spk)
            for spk, runs in by_speaker.items()
            for start, end in runs
        ]
        return Annotation(self.file_id, tuple(merged))

    def speakers(self) -> set[str]:
        return {seg.speaker for seg in self.segments}

    def speaker_at(self, t: float) -> str | None:
        """Speaker covering time *t*, or None. On overlap, the earliest-
        starting (then lexicographically smallest) covering segment wins."""
        onsets = [seg.onset for seg in self.segments]
        hi = bisect.bisect_right(onsets, t)
        for seg in self.segments[:hi]:
            if seg.onset <= t < seg.end:
                return seg.speaker
        return None

    def extent(self) -> float:
        """End of the last segment (0 when empty)."""
        return max((seg.end for seg in self.segments), default=0.0)

    def speech_duration(self) -> float:
        """Total duration of the union of all segments (overlap counted once)."""
        total = 0.0
        cur_start = cur_end = None
        for seg in self.segments:
            if cur_end is None or seg.onset > cur_end:
                if cur_end is not None:
                    total += cur_end - cur_start
                cur_start, cur_end = seg.onset, seg.end
            else:
                cur_end = max(cur_end, seg.end)
        if cur_end is not None:
            total += cur_end - cur_start
        return total


def parse_rttm(text: str | Iterable[str]) -> list[Annotation]:
    """Parse RTTM text into one Annotation per file_id (in first-seen order).

    Each non-blank, non-comment line must be a SPEAKER record with at least
    9 whitespace-delimited fields; fields 2, 4, 5 and 8 are the file id,
    onset, duration and speaker. Anything else raises
    :class:`RttmParseError` naming the offending line.
    """
    if isinstance(text, str):
        text = io.StringIO(text)
    grouped: dict[str, list[RttmSegment]] = {}
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) < 9:
            raise RttmParseError(f"line {lineno}: expected >= 9 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise RttmParseError(f"line {lineno}: unsupported record type {fields[0]!r}")
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise RttmParseError(f"line {lineno}: non-numeric onset/duration") from None
        try:
            seg = RttmSegment(fields[1], onset, duration, fields[7])
        except ConstraintError as exc:
            raise RttmParseError(f"line {lineno}: {exc}") from None
        grouped.setdefault(seg.file_id, []).append(seg)
    return [Annotation(fid, tuple(segs)) for fid, segs in grouped.items()]


def parse_rttm_file(path: str | Path) -> list[Annotation]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_rttm(fh)


def serialize_rttm(annotation: Annotation) -> str:
    """Serialize to NIST layout, onset/duration at 3 decimals, channel "1"."""
    lines = [
        f"SPEAKER {seg.file_id} 1 {seg.onset:.3f} {seg.duration:.3f} "
        f"<NA> <NA> {seg.speaker} <NA> <NA>\n"
        for seg in annotation.segments
    ]
    return "".join(lines)


def relabel_unreferenced(
    annotation: Annotation, known: set[str], unk_label: str, merge_gap: float = 0.0
) -> Annotation:
    """Cast every speaker not in *known* to *unk_label*, then normalize."""
    if unk_label in known:
        raise ConstraintError(f"unknown-speaker label {unk_label!r} is in the known set")
    relabeled = tuple(
        seg if seg.speaker in known
        else RttmSegment(seg.file_id, seg.onset, seg.duration, unk_label)
        for seg in annotation.segments
    )
    return Annotation(annotation.file_id, relabeled).normalize(merge_gap)


def annotations_by_file(annotations: Sequence[Annotation]) -> dict[str, Annotation]:
    """Index annotations by file_id, rejecting duplicates."""
    out: dict[str, Annotation] = {}
    for ann in annotations:
        if ann.file_id in out:
            raise ConstraintError(f"duplicate annotation for file_id {ann.file_id!r}")
        out[ann.file_id] = ann
    return out
