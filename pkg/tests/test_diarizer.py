"""Affinity scoring, the open-set threshold rule, hypothesis assembly."""

import math

import numpy as np
import pytest

from rdsv.audio import VadMap
from rdsv.diarizer import (
    AffinityMatrix,
    DiarizerConfig,
    SpeakerScores,
    affinity,
    assemble_hypothesis,
    diarize,
    label_timesteps,
    reduce_per_speaker,
    segment_dump,
)
from rdsv.embedding import EmbeddingSequence, unit, window_frames_for_rate
from rdsv.errors import ConstraintError
from rdsv.ral import ReferenceAudioLibrary
from rdsv.rttm import relabel_unreferenced
from rdsv.synthetic import SplitMix

TUNED = DiarizerConfig(score_thresh=0.85, sim_thresh=0.1)


def basis(dim, i):
    v = np.zeros(dim, dtype=np.float32)
    v[i] = 1.0
    return v


def library_from(entries, dim):
    return ReferenceAudioLibrary(dim, entries)


def seq_from_vectors(vectors, rate=5.0, file_id="caseX"):
    """Sequence with exactly these window vectors (speech length chosen so
    the window-count formula yields len(vectors))."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n_frames = vectors.shape[0] * window_frames_for_rate(rate)
    n_samples = 400 + 160 * (n_frames - 1)
    vad = VadMap.from_intervals([(0.0, n_samples / 16000)])
    assert EmbeddingSequence.expected_count(vad, rate) == vectors.shape[0]
    return EmbeddingSequence(file_id, rate, vectors.shape[1], vectors, vad)


class TestAffinity:
    def test_identical_vector_scores_one(self):
        dim = 8
        lib = library_from({"a": basis(dim, 0)[None, :], "b": basis(dim, 1)[None, :]}, dim)
        seq = seq_from_vectors([basis(dim, 0)])
        aff = affinity(lib, seq)
        assert aff.scores[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_scores_zero(self):
        dim = 8
        lib = library_from({"a": basis(dim, 0)[None, :]}, dim)
        seq = seq_from_vectors([basis(dim, 1)])
        assert affinity(lib, seq).scores[0, 0] == 0.0

    def test_matches_bruteforce_dot_products(self):
        # Oracle: elementwise float64 recomputation of every cell.
        rng = SplitMix(77)
        dim = 16
        refs = {name: np.stack([unit(np.abs(rng.gaussians(dim)))]) for name in "abc"}
        lib = library_from(refs, dim)
        vectors = np.stack([unit(np.abs(rng.gaussians(dim))) for _ in range(4)])
        seq = seq_from_vectors(vectors)
        aff = affinity(lib, seq)
        matrix, index = lib.stacked()
        for r, (speaker, ordinal) in enumerate(index):
            for t in range(len(seq)):
                expected = float(
                    np.sum(matrix[r].astype(np.float64) * seq.vectors[t].astype(np.float64))
                )
                assert abs(aff.scores[r, t] - expected) <= 1e-9

    def test_dim_mismatch(self):
        lib = library_from({"a": basis(4, 0)[None, :], "b": basis(4, 1)[None, :]}, 4)
        seq = seq_from_vectors([basis(8, 0)])
        with pytest.raises(ConstraintError):
            affinity(lib, seq)


class TestReduce:
    def test_single_reference_copied(self):
        aff = AffinityMatrix(np.array([[0.5, 0.2]]), (("a", 0),))
        scores = reduce_per_speaker(aff)
        assert np.array_equal(scores.scores, [[0.5, 0.2]])

    def test_max_over_references(self):
        aff = AffinityMatrix(np.array([[0.3], [0.9]]), (("a", 0), ("a", 1)))
        assert reduce_per_speaker(aff).scores[0, 0] == 0.9

    def test_row_permutation_invariant(self):
        scores = np.array([[0.3, 0.1], [0.9, 0.4], [0.5, 0.8]])
        index = (("a", 0), ("a", 1), ("b", 0))
        out1 = reduce_per_speaker(AffinityMatrix(scores, index))
        perm = [1, 2, 0]
        out2 = reduce_per_speaker(
            AffinityMatrix(scores[perm], tuple(index[i] for i in perm))
        )
        assert np.array_equal(out1.scores, out2.scores)
        assert out1.speakers == out2.speakers


def table(rows):
    """rows: dict speaker -> list of per-timestep scores."""
    speakers = tuple(sorted(rows))
    return SpeakerScores(speakers, np.array([rows[s] for s in speakers], dtype=np.float64))


class TestLabelRule:
    def test_tuned_examples_paper_literal(self):
        scores = table({"A": [0.90, 0.80, 0.84], "B": [0.70, 0.60, 0.80]})
        assert label_timesteps(scores, TUNED) == ["A", "UNK", "A"]

    def test_tuned_examples_margin_below(self):
        cfg = DiarizerConfig(score_thresh=0.85, sim_thresh=0.1, unknown_rule="margin_below")
        scores = table({"A": [0.90, 0.80, 0.84], "B": [0.70, 0.60, 0.80]})
        assert label_timesteps(scores, cfg) == ["A", "A", "UNK"]

    def test_tie_breaks_lexicographically(self):
        scores = table({"b": [0.9], "a": [0.9], "c": [0.1]})
        assert label_timesteps(scores, TUNED) == ["a"]

    def test_single_speaker_library_rejected(self):
        scores = SpeakerScores(("a",), np.array([[0.9]]))
        with pytest.raises(ConstraintError):
            label_timesteps(scores, TUNED)

    def test_depends_only_on_best_and_second(self):
        # Permuting scores below the top two never changes the labels.
        base = table({"a": [0.80], "b": [0.62], "c": [0.3], "d": [0.05]})
        swapped = table({"a": [0.80], "b": [0.62], "c": [0.05], "d": [0.3]})
        for cfg in (TUNED, DiarizerConfig(unknown_rule="margin_below")):
            assert label_timesteps(base, cfg) == label_timesteps(swapped, cfg)

    def test_argmax_scale_invariance(self):
        # With rejection disabled, scaling one timestep's scores by a
        # positive constant never changes the winner.
        rng = SplitMix(31)
        cfg = DiarizerConfig(score_thresh=0.0, sim_thresh=0.0)
        rows = {name: [rng.uniform() for _ in range(6)] for name in "abcd"}
        scores = table(rows)
        scaled = table({name: [v * 3.7 for v in vals] for name, vals in rows.items()})
        assert label_timesteps(scores, cfg) == label_timesteps(scaled, cfg)


class TestAssemble:
    def test_run_length_and_time_map(self):
        seq = seq_from_vectors(np.tile(basis(4, 0), (3, 1)), rate=1.0)
        ann = assemble_hypothesis(["A", "A", "B"], seq, DiarizerConfig())
        assert [(s.onset, s.end, s.speaker) for s in ann.segments] == [
            (0.0, 2.0, "A"),
            (2.0, 3.0, "B"),
        ]

    def test_all_unknown_single_segment(self):
        seq = seq_from_vectors(np.tile(basis(4, 0), (5, 1)), rate=1.0)
        ann = assemble_hypothesis(["UNK"] * 5, seq, DiarizerConfig())
        assert len(ann) == 1
        assert ann.segments[0].speaker == "UNK"

    def test_min_segment_smoothing(self):
        seq = seq_from_vectors(np.tile(basis(4, 0), (3, 1)), rate=1.0)
        cfg = DiarizerConfig(min_segment_s=1.5)
        ann = assemble_hypothesis(["A", "B", "A"], seq, cfg)
        assert [s.speaker for s in ann.segments] == ["A"]
        assert ann.segments[0].duration == pytest.approx(3.0)

    def test_hypothesis_tiles_window_span(self):
        rng = SplitMix(5)
        labels = ["AB"[rng.randint(2)] for _ in range(40)]
        seq = seq_from_vectors(np.tile(basis(4, 0), (40, 1)), rate=5.0)
        ann = assemble_hypothesis(labels, seq, DiarizerConfig())
        segs = ann.segments
        assert segs[0].onset == 0.0
        assert segs[-1].end == pytest.approx(40 / 5.0)
        for a, b in zip(segs, segs[1:]):
            assert b.onset == a.end  # no overlap, no gap

    def test_segment_dump_format(self):
        seq = seq_from_vectors(np.tile(basis(4, 0), (2, 1)), rate=1.0)
        ann = assemble_hypothesis(["A", "B"], seq, DiarizerConfig())
        assert segment_dump(ann) == "0.000\t1.000\tA\n1.000\t2.000\tB\n"


class TestDiarize:
    def test_zero_noise_matches_ground_truth(self, zero_noise_corpus, zero_noise_library):
        _, _, pairs = zero_noise_corpus
        seq, ann = pairs[0]
        hyp = diarize(zero_noise_library, seq, TUNED)
        ref = relabel_unreferenced(ann, set(zero_noise_library.speakers), "UNK")
        # agreement up to window quantization: compare at a collar of 2/rate
        from rdsv.metrics import der

        assert der(ref, hyp, collar=2 / seq.rate).der == 0.0

    def test_absent_speakers_all_unknown(self):
        # Library of two orthogonal judges; case speakers lean toward one
        # judge each (distinct margins), so the literal rule rejects them.
        dim = 16
        lib = library_from(
            {"judge00": basis(dim, 0)[None, :], "judge01": basis(dim, 1)[None, :]}, dim
        )
        guest_a = unit(0.3 * basis(dim, 0) + math.sqrt(1 - 0.09) * basis(dim, 2))
        guest_b = unit(0.25 * basis(dim, 1) + math.sqrt(1 - 0.0625) * basis(dim, 3))
        seq = seq_from_vectors(np.stack([guest_a, guest_b, guest_a, guest_a]))
        hyp = diarize(lib, seq, TUNED)
        assert {s.speaker for s in hyp.segments} == {"UNK"}

    def test_empty_sequence(self):
        dim = 8
        lib = library_from({"a": basis(dim, 0)[None, :], "b": basis(dim, 1)[None, :]}, dim)
        seq = EmbeddingSequence("none", 5.0, dim, np.zeros((0, dim), np.float32), VadMap(()))
        assert len(diarize(lib, seq, TUNED)) == 0

    def test_unk_label_roster_collision(self):
        dim = 8
        lib = library_from({"UNK": basis(dim, 0)[None, :], "b": basis(dim, 1)[None, :]}, dim)
        seq = seq_from_vectors([basis(dim, 0)])
        with pytest.raises(ConstraintError, match="collides"):
            diarize(lib, seq, TUNED)

    def test_labels_every_window_once(self, zero_noise_corpus, zero_noise_library):
        _, _, pairs = zero_noise_corpus
        seq, _ = pairs[1]
        hyp = diarize(zero_noise_library, seq, TUNED)
        total = sum(s.duration for s in hyp.segments)
        assert total == pytest.approx(len(seq) / seq.rate, abs=1e-6)
        for a, b in zip(hyp.segments, hyp.segments[1:]):
            assert b.onset >= a.end - 1e-12


class TestConfig:
    def test_threshold_bounds(self):
        with pytest.raises(ConstraintError):
            DiarizerConfig(score_thresh=1.5)
        with pytest.raises(ConstraintError):
            DiarizerConfig(sim_thresh=-0.1)
        with pytest.raises(ConstraintError):
            DiarizerConfig(unknown_rule="nonsense")
