"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with `pytest -v tests/test_acceptance.py -s` to see one line per
criterion. The corpus geometry (orthogonal referenced speakers, leaning
unreferenced speakers) lives in conftest.designed_profiles.
"""

import math
import time

import numpy as np
import pytest

from conftest import designed_profiles, make_corpus
from rdsv.analysis import grid_search, labeled_windows, probe
from rdsv.diarizer import DiarizerConfig, diarize, label_timesteps, SpeakerScores
from rdsv.embedding import (
    read_dvec,
    window_frames_for_rate,
    window_plan,
    write_dvec,
)
from rdsv.errors import ConstraintError
from rdsv.metrics import aggregate, der, frame_oracle_der
from rdsv.ral import RalConfig, build_ral, read_ral, write_ral
from rdsv.rttm import parse_rttm, relabel_unreferenced, serialize_rttm
from rdsv.synthetic import CorpusConfig, SplitMix, SyntheticEmbedder, derive_key, gen_case

TUNED = DiarizerConfig(score_thresh=0.85, sim_thresh=0.1)


def passline(name):
    print(f"[acceptance] PASS {name}")


def corpus_der(seed, kappa):
    _, profiles, pairs = make_corpus(seed=seed, kappa=kappa, cases=5, case_duration_s=240.0)
    judges = frozenset(p.name for p in profiles[:9])
    lib = build_ral(pairs, RalConfig(allowlist=judges))
    reports = []
    for seq, ann in pairs:
        hyp = diarize(lib, seq, TUNED)
        ref = relabel_unreferenced(ann, set(lib.speakers), "UNK")
        reports.append(der(ref, hyp, collar=0.5))
    return aggregate(reports)


def test_zero_noise_end_to_end():
    # 5 cases, 9 referenced + 3 unreferenced, dim 256, kappa -> inf,
    # >= 60 deg profiles, rate 5, thresholds 0.85/0.1: mean DER = 0 at a
    # 0.5 s collar, in under 10 seconds.
    started = time.monotonic()
    agg = corpus_der(seed=1, kappa=math.inf)
    elapsed = time.monotonic() - started
    assert agg.mean_der == 0.0
    assert agg.case_count == 5
    assert elapsed < 10.0
    passline(f"zero-noise end-to-end (mean DER 0, {elapsed:.2f}s)")


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_noisy_end_to_end(seed):
    # Same corpus at kappa = 50 (intra-speaker cosine ~0.9+): mean DER <= 5%.
    agg = corpus_der(seed=seed, kappa=50.0)
    assert agg.mean_der <= 0.05
    passline(f"noisy end-to-end seed {seed} (mean DER {agg.mean_der:.4f})")


def test_der_oracle_equivalence():
    # 50 random timelines (<= 20 segments, <= 60 s): exact DER within
    # 0.5 percentage points of the 5 ms frame oracle, per case.
    from test_metrics import perturbed, random_timeline

    rng = SplitMix(7331)
    worst = 0.0
    for case in range(50):
        reference = random_timeline(rng, f"case{case}", ["A", "B", "C", "D"])
        hypothesis = perturbed(reference, rng)
        exact = der(reference, hypothesis, collar=0.25)
        frame = frame_oracle_der(reference, hypothesis, collar=0.25, frame=0.005)
        worst = max(worst, abs(exact.der - frame.der))
        assert abs(exact.der - frame.der) <= 0.005
    passline(f"DER oracle equivalence (worst gap {worst * 100:.3f} pp)")


def test_windowing_arithmetic():
    rng = SplitMix(40)
    samples = sorted({rng.randint(501) for _ in range(60)})
    for rate in (0.625, 1, 3, 5, 7, 100):
        wf = window_frames_for_rate(rate)
        assert wf == round(100 / rate)
        for n_frames in samples:
            assert len(window_plan(n_frames, rate)) == n_frames // wf
    assert window_frames_for_rate(0.625) == 160  # the 1600 ms maximum window
    for bad in (0.5, 101):
        with pytest.raises(ConstraintError):
            window_plan(100, bad)
    passline("windowing arithmetic (rates 0.625..100; 0.5 and 101 rejected)")


def test_threshold_rule_table():
    scores = SpeakerScores(
        ("A", "B"),
        np.array([[0.90, 0.80, 0.84], [0.70, 0.60, 0.80]]),
    )
    literal = DiarizerConfig(score_thresh=0.85, sim_thresh=0.1, unknown_rule="paper_literal")
    inverse = DiarizerConfig(score_thresh=0.85, sim_thresh=0.1, unknown_rule="margin_below")
    assert label_timesteps(scores, literal) == ["A", "UNK", "A"]
    assert label_timesteps(scores, inverse) == ["A", "A", "UNK"]
    passline("threshold rule table (both unknown_rule variants)")


def test_grid_search_determinism():
    # The published tuning ranges on a fixed synthetic dev set: identical
    # results across repeated runs and across --jobs settings.
    _, profiles, pairs = make_corpus(seed=6, kappa=50.0, cases=3, case_duration_s=120.0)
    lib = build_ral(pairs, RalConfig(allowlist=frozenset(p.name for p in profiles[:9]),
                                     min_ref_count=2))
    score_grid = (0.75, 0.8, 0.85, 0.9)
    sim_grid = (0.05, 0.075, 0.1, 0.125)
    runs = [
        grid_search(pairs, lib, score_grid, sim_grid, collar=0.5, jobs=jobs)
        for jobs in (1, 4, 1, 4)
    ]
    assert all(r == runs[0] for r in runs[1:])
    assert len(runs[0].grid) == 16
    passline(
        f"grid search determinism (best cell {runs[0].best.score_thresh}/"
        f"{runs[0].best.sim_thresh})"
    )


def test_format_round_trips(tmp_path, zero_noise_corpus, zero_noise_library):
    _, _, pairs = zero_noise_corpus
    seq = pairs[0][0]
    # DVEC1: write -> read -> write, byte-identical
    a, b = tmp_path / "a.dvec", tmp_path / "b.dvec"
    write_dvec(seq, a)
    write_dvec(read_dvec(a), b)
    assert a.read_bytes() == b.read_bytes()
    # RAL1: write -> read -> write, byte-identical
    ra, rb = tmp_path / "a.ral", tmp_path / "b.ral"
    write_ral(zero_noise_library, ra)
    write_ral(read_ral(ra), rb)
    assert ra.read_bytes() == rb.read_bytes()
    # RTTM: serialize -> parse -> serialize, byte-identical at 1 ms precision
    ann = pairs[0][1]
    text = serialize_rttm(ann)
    assert serialize_rttm(parse_rttm(text)[0]) == text
    passline("format round-trips (DVEC1, RAL1, RTTM)")


def test_probe_sanity():
    # Zero noise: every (rate, threshold) grid cell reports accuracy 1.0.
    profiles = designed_profiles()
    judges = frozenset(p.name for p in profiles[:9])
    data = {}
    for rate in (1.0, 3.0, 5.0, 7.0):
        cfg = CorpusConfig(n_speakers=12, n_referenced=9, dim=256, rate=rate,
                           cases=4, case_duration_s=120.0, seed=1)
        train_pairs = [gen_case(cfg, profiles, i) for i in range(2)]
        dev_pairs = [gen_case(cfg, profiles, i) for i in range(2, 4)]

        def gather(pair_list, judges_only):
            xs, ys = [], []
            for seq, ann in pair_list:
                X, y = labeled_windows(seq, ann, judges, judges_only=judges_only)
                xs.append(X)
                ys.extend(y)
            return np.vstack(xs), ys

        data[rate] = (gather(train_pairs, True), gather(dev_pairs, False))
    result = probe(data, thresholds=(0.85, 0.9, 0.95))
    assert len(result.cells) == 12
    for cell in result.cells:
        assert cell.accuracy == 1.0, (cell.rate, cell.threshold, cell.accuracy)
    passline("probe sanity (accuracy 1.0 on all 12 rate/threshold cells)")


def test_probe_gradient_oracle():
    # Classifier gradient vs central finite differences, 1e-6 relative.
    from rdsv.analysis import _binary_loss, binary_gradient

    rng = SplitMix(88)
    X = np.stack([rng.gaussians(10) for _ in range(50)])
    y = np.array([1.0 if rng.uniform() < 0.45 else 0.0 for _ in range(50)])
    w = rng.gaussians(10) * 0.2
    b = -0.05
    grad_w, grad_b = binary_gradient(X, y, w, b)
    eps = 1e-6
    for j in range(10):
        delta = np.zeros(10)
        delta[j] = eps
        fd = (_binary_loss(X, y, w + delta, b) - _binary_loss(X, y, w - delta, b)) / (2 * eps)
        assert abs(fd - grad_w[j]) <= 1e-6 * max(1.0, abs(grad_w[j]))
    fd_b = (_binary_loss(X, y, w, b + eps) - _binary_loss(X, y, w, b - eps)) / (2 * eps)
    assert abs(fd_b - grad_b) <= 1e-6 * max(1.0, abs(grad_b))
    passline("classifier gradient matches finite differences at 1e-6")


def test_unit_norm_everywhere(tmp_path, zero_noise_corpus, zero_noise_library):
    # Every d-vector produced by any generator has L2 norm within 1e-6.
    def norms(matrix):
        m = np.asarray(matrix, dtype=np.float64)
        return np.sqrt((m * m).sum(axis=-1))

    checked = 0
    _, profiles, pairs = zero_noise_corpus
    for profile in profiles:
        assert abs(norms(profile.mean_direction) - 1.0) <= 1e-6
        checked += 1
    for seq, _ in pairs:
        err = np.abs(norms(seq.vectors) - 1.0)
        assert err.max() <= 1e-6
        checked += len(seq)
    for name in zero_noise_library.speakers:
        err = np.abs(norms(zero_noise_library.entries[name]) - 1.0)
        assert err.max() <= 1e-6
        checked += zero_noise_library.entries[name].shape[0]
    # noisy embedder draws
    emb = SyntheticEmbedder(profiles, lambda t: "judge00", 5.0, 50.0, derive_key(1, 0), 256)
    for i in range(250):
        assert abs(norms(emb.embed_window(None, i)) - 1.0) <= 1e-6
        checked += 1
    # vectors that pass through the file formats
    seq = pairs[0][0]
    path = tmp_path / "norm.dvec"
    write_dvec(seq, path)
    err = np.abs(norms(read_dvec(path).vectors) - 1.0)
    assert err.max() <= 1e-6
    checked += len(seq)
    assert checked > 5000
    passline(f"unit-norm invariant ({checked} vectors within 1e-6)")
