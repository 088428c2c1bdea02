"""Diarization Error Rate with a boundary collar.

Labels are compared by identity: the pipeline emits true speaker names
(with one reserved unknown label), so no optimal label mapping is applied.
Scoring excludes collar/2 on each side of every reference segment
boundary; within scored regions,

    missed      = reference speech with no hypothesis label,
    false alarm = hypothesis speech with no reference speech,
    confusion   = time where both exist but the labels differ,
    DER         = (missed + false alarm + confusion) / scored reference.

Overlapping reference speech is scored per reference speaker
independently; DER may exceed 100% when false alarms dominate.

The production path uses exact interval arithmetic; ``frame_oracle_der``
evaluates the same definition by frame counting and exists for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError
from .rttm import Annotation

Interval = tuple[float, float]


class UndefinedDerError(ConstraintError):
    """No scored reference speech remains after collaring."""


@dataclass(frozen=True)
class DerReport:
    total_ref: float
    missed: float
    false_alarm: float
    confusion: float

    def __post_init__(self):
        for name in ("total_ref", "missed", "false_alarm", "confusion"):
            if getattr(self, name) < 0:
                raise ConstraintError(f"{name} must be >= 0")
        if self.total_ref <= 0:
            raise UndefinedDerError("no scored reference speech; DER undefined")

    @property
    def der(self) -> float:
        return (self.missed + self.false_alarm + self.confusion) / self.total_ref

    def to_json(self) -> dict:
        return {
            "total_ref_s": self.total_ref,
            "missed_s": self.missed,
            "false_alarm_s": self.false_alarm,
            "confusion_s": self.confusion,
            "der": self.der,
        }


@dataclass(frozen=True)
class AggregateReport:
    mean_der: float
    std_der: float
    max_der: float
    case_count: int
    mean_audio_minutes: float | None = None
    mean_speech_minutes: float | None = None

    def to_json(self) -> dict:
        out = {
            "mean_der": self.mean_der,
            "std_der": self.std_der,
            "max_der": self.max_der,
            "n": self.case_count,
        }
        if self.mean_audio_minutes is not None:
            out["mean_audio_minutes"] = self.mean_audio_minutes
        if self.mean_speech_minutes is not None:
            out["mean_speech_minutes"] = self.mean_speech_minutes
        return out


def _union(intervals: list[Interval]) -> list[Interval]:
    merged: list[list[float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged if e > s]


def _subtract(start: float, end: float, zones: list[Interval]) -> list[Interval]:
    """[start, end) minus the sorted, disjoint zones."""
    pieces = []
    cur = start
    for zs, ze in zones:
        if ze <= cur:
            continue
        if zs >= end:
            break
        if zs > cur:
            pieces.append((cur, zs))
        cur = max(cur, ze)
        if cur >= end:
            break
    if cur < end:
        pieces.append((cur, end))
    return pieces


def collar_zones(reference: Annotation, collar: float) -> list[Interval]:
    """Excluded regions: collar/2 on each side of every reference boundary."""
    if collar < 0:
        raise ConstraintError(f"collar must be >= 0, got {collar}")
    if collar == 0:
        return []
    half = collar / 2.0
    zones = []
    for seg in reference.segments:
        zones.append((seg.onset - half, seg.onset + half))
        zones.append((seg.end - half, seg.end + half))
    return _union(zones)


def _scored_per_speaker(
    annotation: Annotation, zones: list[Interval]
) -> dict[str, list[Interval]]:
    by_speaker: dict[str, list[Interval]] = {}
    for seg in annotation.segments:
        by_speaker.setdefault(seg.speaker, []).append((seg.onset, seg.end))
    return {
        speaker: [
            piece
            for start, end in _union(intervals)
            for piece in _subtract(start, end, zones)
        ]
        for speaker, intervals in by_speaker.items()
    }


def der(reference: Annotation, hypothesis: Annotation, collar: float = 0.5) -> DerReport:
    """Exact interval-arithmetic DER at the given total collar."""
    if reference.file_id != hypothesis.file_id:
        raise ConstraintError(
            f"file_id mismatch: {reference.file_id!r} vs {hypothesis.file_id!r}"
        )
    zones = collar_zones(reference, collar)
    ref = _scored_per_speaker(reference, zones)
    hyp = _scored_per_speaker(hypothesis, zones)

    events: list[tuple[float, int, int, str]] = []  # (time, side, delta, speaker)
    for side, table in ((0, ref), (1, hyp)):
        for speaker, pieces in table.items():
            for start, end in pieces:
                events.append((start, side, +1, speaker))
                events.append((end, side, -1, speaker))
    if not events:
        raise UndefinedDerError("nothing to score")
    points = sorted({t for t, _, _, _ in events})
    starts = {}
    for t, side, delta, speaker in events:
        starts.setdefault(t, []).append((side, delta, speaker))

    active: tuple[set[str], set[str]] = (set(), set())
    total = missed = false_alarm = confusion = 0.0
    for i, point in enumerate(points):
        for side, delta, speaker in starts[point]:
            if delta > 0:
                active[side].add(speaker)
            else:
                active[side].discard(speaker)
        if i + 1 == len(points):
            break
        dur = points[i + 1] - point
        r, h = active
        if not r and not h:
            continue
        total += len(r) * dur
        if r and not h:
            missed += len(r) * dur
        elif h and not r:
            false_alarm += len(h) * dur
        else:
            confusion += dur * sum(1 for s in r if s not in h)
    if total <= 0:
        raise UndefinedDerError("no scored reference speech after collaring")
    return DerReport(total, missed, false_alarm, confusion)


def frame_oracle_der(
    reference: Annotation, hypothesis: Annotation, collar: float, frame: float
) -> DerReport:
    """Same definition, evaluated by counting fixed-size frames.

    Kept deliberately independent of the sweep-line path; components
    converge to der()'s as frame -> 0. Requires frame <= 0.01 s.
    """
    if reference.file_id != hypothesis.file_id:
        raise ConstraintError("file_id mismatch")
    if not 0 < frame <= 0.01:
        raise ConstraintError(f"frame must be in (0, 0.01] s, got {frame}")
    horizon = max(reference.extent(), hypothesis.extent()) + collar
    n = int(np.ceil(horizon / frame)) + 1
    mids = (np.arange(n) + 0.5) * frame

    scored = np.ones(n, dtype=bool)
    for zs, ze in collar_zones(reference, collar):
        scored &= ~((mids >= zs) & (mids < ze))

    def speaker_masks(annotation: Annotation) -> dict[str, np.ndarray]:
        masks: dict[str, np.ndarray] = {}
        for seg in annotation.segments:
            mask = masks.setdefault(seg.speaker, np.zeros(n, dtype=bool))
            mask |= (mids >= seg.onset) & (mids < seg.end)
        return masks

    ref_masks = speaker_masks(reference)
    hyp_masks = speaker_masks(hypothesis)
    ref_any = np.any([m for m in ref_masks.values()], axis=0) if ref_masks else np.zeros(n, bool)
    hyp_any = np.any([m for m in hyp_masks.values()], axis=0) if hyp_masks else np.zeros(n, bool)

    total = missed = confusion = 0
    for speaker, mask in ref_masks.items():
        mask = mask & scored
        total += int(mask.sum())
        missed += int((mask & ~hyp_any).sum())
        own = hyp_masks.get(speaker, np.zeros(n, bool))
        confusion += int((mask & hyp_any & ~own).sum())
    false_alarm = 0
    for mask in hyp_masks.values():
        false_alarm += int((mask & scored & ~ref_any).sum())
    if total == 0:
        raise UndefinedDerError("no scored reference frames")
    return DerReport(total * frame, missed * frame, false_alarm * frame, confusion * frame)


def aggregate(
    reports: list[DerReport],
    durations: list[tuple[float, float]] | None = None,
) -> AggregateReport:
    """Mean, population standard deviation, and max DER over cases.

    *durations* optionally carries (audio_seconds, speech_seconds) per case
    and is surfaced as per-case means in minutes.
    """
    if not reports:
        raise ConstraintError("cannot aggregate an empty report list")
    ders = np.array([r.der for r in reports])
    mean_audio = mean_speech = None
    if durations is not None:
        if len(durations) != len(reports):
            raise ConstraintError("durations list must match reports")
        mean_audio = float(np.mean([a for a, _ in durations])) / 60.0
        mean_speech = float(np.mean([s for _, s in durations])) / 60.0
    return AggregateReport(
        mean_der=float(ders.mean()),
        std_der=float(ders.std()),
        max_der=float(ders.max()),
        case_count=len(reports),
        mean_audio_minutes=mean_audio,
        mean_speech_minutes=mean_speech,
    )
