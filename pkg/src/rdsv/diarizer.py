"""Score an unseen case against the reference library and assemble a
hypothesis timeline.

Per timestep, the similarity to every reference is the dot product of
unit-norm vectors (cosine). Each speaker keeps the max over their own
references; the winner is the argmax unless the open-set rule labels the
timestep as the unknown speaker.

Two unknown-speaker rules are available. ``paper_literal`` rejects when
the best score is below score_thresh AND the winner's margin over the
runner-up exceeds sim_thresh. ``margin_below`` is the inverse variant:
rejection requires the margin to be *below* sim_thresh (low score and no
clear winner).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingSequence, time_of
from .errors import ConstraintError
from .ral import ReferenceAudioLibrary
from .rttm import Annotation, RttmSegment

UNKNOWN_RULES = ("paper_literal", "margin_below")


@dataclass(frozen=True)
class DiarizerConfig:
    score_thresh: float = 0.85
    sim_thresh: float = 0.1
    unk_label: str = "UNK"
    min_segment_s: float = 0.0
    unknown_rule: str = "paper_literal"

    def __post_init__(self):
        for name in ("score_thresh", "sim_thresh"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConstraintError(f"{name} must be in [0, 1], got {value}")
        if self.min_segment_s < 0:
            raise ConstraintError("min_segment_s must be >= 0")
        if self.unknown_rule not in UNKNOWN_RULES:
            raise ConstraintError(
                f"unknown_rule must be one of {UNKNOWN_RULES}, got {self.unknown_rule!r}"
            )
        if not self.unk_label or any(c.isspace() for c in self.unk_label):
            raise ConstraintError(f"bad unknown label {self.unk_label!r}")


@dataclass(frozen=True)
class AffinityMatrix:
    """scores[r][t] = cosine between reference r and timestep t."""

    scores: np.ndarray
    ref_index: tuple[tuple[str, int], ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != len(self.ref_index):
            raise ConstraintError(f"affinity shape {scores.shape} vs {len(self.ref_index)} refs")
        if scores.size and not np.all(np.abs(scores) <= 1.0 + 1e-6):
            raise ConstraintError("affinity scores outside [-1, 1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "ref_index", tuple(self.ref_index))


@dataclass(frozen=True)
class SpeakerScores:
    """Per-timestep max cosine per speaker; speakers sorted by name."""

    speakers: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != len(self.speakers):
            raise ConstraintError(f"score shape {scores.shape} vs {len(self.speakers)} speakers")
        if tuple(sorted(self.speakers)) != tuple(self.speakers):
            raise ConstraintError("speakers must be sorted")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "speakers", tuple(self.speakers))

    def at(self, t: int) -> dict[str, float]:
        return {name: float(self.scores[i, t]) for i, name in enumerate(self.speakers)}


def affinity(lib: ReferenceAudioLibrary, seq: EmbeddingSequence) -> AffinityMatrix:
    """Dot products between every reference and every timestep (float64)."""
    if lib.dim != seq.dim:
        raise ConstraintError(f"library dim {lib.dim} != sequence dim {seq.dim}")
    matrix, index = lib.stacked()
    scores = matrix.astype(np.float64) @ seq.vectors.astype(np.float64).T
    return AffinityMatrix(scores, tuple(index))


def reduce_per_speaker(aff: AffinityMatrix) -> SpeakerScores:
    """Collapse reference rows to one row per speaker by max."""
    if aff.scores.size == 0:
        raise ConstraintError("empty affinity matrix")
    speakers = sorted({speaker for speaker, _ in aff.ref_index})
    rows = np.empty((len(speakers), aff.scores.shape[1]))
    for i, speaker in enumerate(speakers):
        member = [r for r, (name, _) in enumerate(aff.ref_index) if name == speaker]
        rows[i] = aff.scores[member].max(axis=0)
    return SpeakerScores(tuple(speakers), rows)


def label_timesteps(scores: SpeakerScores, cfg: DiarizerConfig) -> list[str]:
    """Winner-or-unknown label per timestep.

    Ties on the max break toward the lexicographically smallest speaker.
    Requires at least two library speakers so the margin is defined.
    """
    if len(scores.speakers) < 2:
        raise ConstraintError("need >= 2 library speakers to define the margin")
    if cfg.unk_label in scores.speakers:
        raise ConstraintError(f"unknown label {cfg.unk_label!r} collides with the roster")
    order = np.argsort(-scores.scores, axis=0, kind="stable")
    labels = []
    for t in range(scores.scores.shape[1]):
        best_idx = order[0, t]
        best = scores.scores[best_idx, t]
        second = scores.scores[order[1, t], t]
        margin = best - second
        if cfg.unknown_rule == "paper_literal":
            reject = best < cfg.score_thresh and margin > cfg.sim_thresh
        else:
            reject = best < cfg.score_thresh and margin < cfg.sim_thresh
        labels.append(cfg.unk_label if reject else scores.speakers[best_idx])
    return labels


def _merge_runs(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    runs = []
    for i, label in enumerate(labels):
        if runs and runs[-1][2] == label:
            runs[-1][1] = i + 1
        else:
            runs.append([i, i + 1, label])
    return [tuple(r) for r in runs]


def assemble_hypothesis(
    labels: Sequence[str], seq: EmbeddingSequence, cfg: DiarizerConfig
) -> Annotation:
    """Merge equal consecutive labels into runs and map them to original
    time. Runs shorter than min_segment_s (in window time) are absorbed
    into the preceding kept run, or dropped when there is none."""
    if len(labels) != len(seq):
        raise ConstraintError(f"{len(labels)} labels for {len(seq)} windows")
    runs = _merge_runs(labels)
    if cfg.min_segment_s > 0:
        min_windows = cfg.min_segment_s * seq.rate
        kept: list[list] = []
        pending: list | None = None  # leading run, still below the minimum
        for start, end, label in runs:
            short = (end - start) < min_windows
            if pending is not None:
                if short:
                    pending[1] = end  # absorbed under the leading label
                else:
                    if pending[1] - pending[0] >= min_windows:
                        kept.append(pending)
                    pending = None  # dropped: never reached the minimum
                    kept.append([start, end, label])
                if pending is not None and pending[1] - pending[0] >= min_windows:
                    kept.append(pending)
                    pending = None
            elif kept:
                if short or kept[-1][2] == label:
                    kept[-1][1] = end
                else:
                    kept.append([start, end, label])
            elif short:
                pending = [start, end, label]
            else:
                kept.append([start, end, label])
        if pending is not None and pending[1] - pending[0] >= min_windows:
            kept.append(pending)
        runs = [tuple(r) for r in kept]
    segments = []
    for start, end, label in runs:
        t0 = time_of(seq, start)[0]
        t1 = time_of(seq, end - 1)[1]
        segments.append(RttmSegment(seq.file_id, t0, t1 - t0, label))
    return Annotation(seq.file_id, tuple(segments)).normalize()


def diarize(
    lib: ReferenceAudioLibrary, seq: EmbeddingSequence, cfg: DiarizerConfig = DiarizerConfig()
) -> Annotation:
    """affinity -> per-speaker max -> threshold rule -> timeline."""
    if cfg.unk_label in lib.entries:
        raise ConstraintError(f"unknown label {cfg.unk_label!r} collides with the roster")
    if len(seq) == 0:
        return Annotation(seq.file_id, ())
    scores = reduce_per_speaker(affinity(lib, seq))
    labels = label_timesteps(scores, cfg)
    return assemble_hypothesis(labels, seq, cfg)


def segment_dump(annotation: Annotation) -> str:
    """Plain-text dump: onset, end, speaker, tab-separated, one per line."""
    return "".join(
        f"{seg.onset:.3f}\t{seg.end:.3f}\t{seg.speaker}\n" for seg in annotation.segments
    )
