"""Development-set analysis: threshold grid search for the diarizer and
the rate/threshold separability probe (one-vs-rest logistic regression
with probability rejection).

The logistic solver is written out here rather than taken from a library
so that results are reproducible bit-for-bit: L2 regularization 1e-4,
full-batch gradient descent from zero, fixed step 0.5, stopping at
gradient infinity-norm < 1e-6 or 5000 iterations.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .diarizer import DiarizerConfig, diarize
from .embedding import RATE_MAX, RATE_MIN, EmbeddingSequence, window_concat_interval
from .errors import ConstraintError
from .metrics import aggregate, der
from .ral import ReferenceAudioLibrary
from .rttm import Annotation, relabel_unreferenced

logger = logging.getLogger(__name__)

DEFAULT_SCORE_GRID = (0.75, 0.8, 0.85, 0.9)
DEFAULT_SIM_GRID = (0.05, 0.075, 0.1, 0.125)
DEFAULT_PROBE_RATES = (1.0, 3.0, 5.0, 7.0)
DEFAULT_PROBE_THRESHOLDS = (0.85, 0.9, 0.95)
NON_JUDGE_LABEL = "non-judge"

L2_LAMBDA = 1e-4
GD_STEP = 0.5
GD_TOL = 1e-6
GD_MAX_ITER = 5000


@dataclass(frozen=True)
class GridCell:
    score_thresh: float
    sim_thresh: float
    mean_der: float
    std_der: float


@dataclass(frozen=True)
class TuneResult:
    grid: tuple[GridCell, ...]
    best: GridCell


def grid_search(
    dev: Sequence[tuple[EmbeddingSequence, Annotation]],
    lib: ReferenceAudioLibrary,
    score_grid: Sequence[float] = DEFAULT_SCORE_GRID,
    sim_grid: Sequence[float] = DEFAULT_SIM_GRID,
    collar: float = 0.5,
    unknown_rule: str = "paper_literal",
    unk_label: str = "UNK",
    jobs: int = 1,
) -> TuneResult:
    """Evaluate every (score_thresh, sim_thresh) cell on the dev set.

    Ground truth is relabeled against the library roster first. Ties on
    mean DER break toward the smaller score_thresh, then sim_thresh. The
    result is deterministic and independent of dev ordering and of *jobs*.
    """
    if not score_grid or not sim_grid:
        raise ConstraintError("score and sim grids must be nonempty")
    if not dev:
        raise ConstraintError("dev set must be nonempty")
    known = set(lib.speakers)
    cases = sorted(dev, key=lambda pair: pair[0].file_id)
    relabeled = [relabel_unreferenced(ann, known, unk_label) for _, ann in cases]

    def evaluate(cell: tuple[float, float]) -> GridCell:
        score_thresh, sim_thresh = cell
        cfg = DiarizerConfig(
            score_thresh=score_thresh,
            sim_thresh=sim_thresh,
            unk_label=unk_label,
            unknown_rule=unknown_rule,
        )
        reports = [
            der(ref, diarize(lib, seq, cfg), collar)
            for (seq, _), ref in zip(cases, relabeled)
        ]
        agg = aggregate(reports)
        return GridCell(score_thresh, sim_thresh, agg.mean_der, agg.std_der)

    cells = [(s, m) for s in score_grid for m in sim_grid]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            grid = tuple(pool.map(evaluate, cells))
    else:
        grid = tuple(evaluate(cell) for cell in cells)
    best = min(grid, key=lambda c: (c.mean_der, c.score_thresh, c.sim_thresh))
    return TuneResult(grid, best)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _binary_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * L2_LAMBDA * (w @ w))


def _fit_all(X: np.ndarray, Y: np.ndarray, track_loss: bool):
    """Gradient descent on every one-vs-rest problem at once.

    Columns of Y are independent binary targets; a column freezes as soon
    as its own gradient infinity-norm drops below GD_TOL, so batching is
    just a faster schedule for the same per-class iteration.
    """
    n, dim = X.shape
    n_classes = Y.shape[1]
    W = np.zeros((dim, n_classes))
    b = np.zeros(n_classes)
    active = np.ones(n_classes, dtype=bool)
    losses: list[list[float]] = [[] for _ in range(n_classes)]
    for _ in range(GD_MAX_ITER):
        Z = X @ W + b
        if track_loss:
            per_class = np.mean(np.logaddexp(0.0, Z) - Y * Z, axis=0) \
                + 0.5 * L2_LAMBDA * (W * W).sum(axis=0)
            for c in range(n_classes):
                losses[c].append(float(per_class[c]))
        residual = _sigmoid(Z) - Y
        grad_W = X.T @ residual / n + L2_LAMBDA * W
        grad_b = residual.mean(axis=0)
        inf_norm = np.maximum(np.abs(grad_W).max(axis=0), np.abs(grad_b))
        active &= inf_norm >= GD_TOL
        if not active.any():
            break
        W[:, active] -= GD_STEP * grad_W[:, active]
        b[active] -= GD_STEP * grad_b[active]
    return W, b, losses


def binary_gradient(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float):
    """Analytic gradient of the regularized logistic loss (for oracle tests)."""
    residual = _sigmoid(X @ w + b) - y
    return X.T @ residual / len(y) + L2_LAMBDA * w, float(residual.mean())


@dataclass(frozen=True)
class OvrClassifier:
    """One binary logistic regressor per class; probabilities are the
    per-class sigmoids normalized to sum to one."""

    classes: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        scores = _sigmoid(np.asarray(X, dtype=np.float64) @ self.weights.T + self.biases)
        return scores / scores.sum(axis=1, keepdims=True)

    def predict(self, X: np.ndarray, threshold: float = 0.0, reject_label: str = NON_JUDGE_LABEL):
        """Argmax class when its probability exceeds *threshold*, else the
        reject label."""
        probs = self.predict_proba(X)
        winners = probs.argmax(axis=1)
        out = []
        for row, win in zip(probs, winners):
            out.append(self.classes[win] if row[win] > threshold else reject_label)
        return out


def train_ovr_classifier(
    vectors: np.ndarray, labels: Sequence[str], track_loss: bool = False
):
    """Fit the deterministic one-vs-rest classifier.

    Returns the classifier, or (classifier, {class: losses}) when
    *track_loss* is set.
    """
    X = np.asarray(vectors, dtype=np.float64)
    y = list(labels)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ConstraintError(f"bad training data: {X.shape} vs {len(y)} labels")
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise ConstraintError("need at least 2 classes")
    targets = np.array(
        [[1.0 if label == cls else 0.0 for cls in classes] for label in y]
    )
    W, b, losses = _fit_all(X, targets, track_loss)
    clf = OvrClassifier(classes, W.T.copy(), b)
    if track_loss:
        return clf, {cls: losses[i] for i, cls in enumerate(classes)}
    return clf


def labeled_windows(
    seq: EmbeddingSequence,
    annotation: Annotation,
    judges: frozenset[str] | set[str],
    judges_only: bool = False,
    pooled_label: str = NON_JUDGE_LABEL,
) -> tuple[np.ndarray, list[str]]:
    """Label each window by the ground-truth speaker at its midpoint.

    Non-judge (and silent) midpoints pool into *pooled_label*, or are
    skipped entirely when *judges_only* is set (training mode).
    """
    rows, labels = [], []
    for i in range(len(seq)):
        c0, c1 = window_concat_interval(i, seq.rate)
        mid = seq.vad.concat_to_orig((c0 + c1) / 2.0)
        speaker = annotation.speaker_at(mid)
        if speaker in judges:
            rows.append(i)
            labels.append(speaker)
        elif not judges_only:
            rows.append(i)
            labels.append(pooled_label)
    X = seq.vectors[rows] if rows else np.zeros((0, seq.dim), dtype=np.float32)
    return X, labels


@dataclass(frozen=True)
class ProbeCell:
    rate: float
    threshold: float
    accuracy: float
    judge_recall: float


@dataclass(frozen=True)
class ProbeResult:
    cells: tuple[ProbeCell, ...]

    def accuracy(self, rate: float, threshold: float) -> float:
        for cell in self.cells:
            if cell.rate == rate and cell.threshold == threshold:
                return cell.accuracy
        raise KeyError((rate, threshold))


def probe(
    data_by_rate: Mapping[float, tuple[tuple[np.ndarray, Sequence[str]], tuple[np.ndarray, Sequence[str]]]],
    thresholds: Sequence[float] = DEFAULT_PROBE_THRESHOLDS,
    reject_label: str = NON_JUDGE_LABEL,
) -> ProbeResult:
    """Per rate: train on the reference-set judge vectors, predict the dev
    vectors, and score accuracy with below-threshold predictions mapped to
    the pooled non-judge label.

    data_by_rate maps rate -> ((train_X, train_y), (dev_X, dev_y)) where
    dev_y uses true judge names plus *reject_label* for everyone else.
    """
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ConstraintError(f"probability threshold must be in (0, 1), got {t}")
    for rate in data_by_rate:
        if not RATE_MIN <= rate <= RATE_MAX:
            raise ConstraintError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {rate}")
    cells = []
    for rate in sorted(data_by_rate):
        (train_X, train_y), (dev_X, dev_y) = data_by_rate[rate]
        clf = train_ovr_classifier(train_X, train_y)
        dev_y = list(dev_y)
        judge_total = sum(1 for label in dev_y if label != reject_label)
        prev_recall = None
        for threshold in thresholds:
            preds = clf.predict(dev_X, threshold=threshold, reject_label=reject_label)
            correct = sum(1 for p, t_ in zip(preds, dev_y) if p == t_)
            accuracy = correct / len(dev_y) if dev_y else 0.0
            judge_hits = sum(
                1 for p, t_ in zip(preds, dev_y) if t_ != reject_label and p == t_
            )
            recall = judge_hits / judge_total if judge_total else 0.0
            if prev_recall is not None and recall < prev_recall:
                logger.info(
                    "rate %g: judge recall dropped %.4f -> %.4f at threshold %g",
                    rate, prev_recall, recall, threshold,
                )
            prev_recall = recall
            cells.append(ProbeCell(rate, threshold, accuracy, recall))
    return ProbeResult(tuple(cells))
