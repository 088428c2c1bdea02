"""Grid search and the separability probe (classifier included)."""

import math

import numpy as np
import pytest

from conftest import designed_profiles, make_corpus
from rdsv.analysis import (
    DEFAULT_SCORE_GRID,
    DEFAULT_SIM_GRID,
    binary_gradient,
    grid_search,
    labeled_windows,
    probe,
    train_ovr_classifier,
)
from rdsv.errors import ConstraintError
from rdsv.ral import RalConfig, build_ral
from rdsv.synthetic import CorpusConfig, SplitMix, gen_case


def small_dev(kappa=50.0, seed=5):
    cfg, profiles, pairs = make_corpus(seed=seed, kappa=kappa, cases=3,
                                       case_duration_s=120.0)
    judges = frozenset(p.name for p in profiles[:9])
    lib = build_ral(pairs, RalConfig(allowlist=judges, min_ref_count=2))
    return pairs, lib


class TestGridSearch:
    def test_default_grids_match_tuning_ranges(self):
        assert DEFAULT_SCORE_GRID == (0.75, 0.8, 0.85, 0.9)
        assert DEFAULT_SIM_GRID == (0.05, 0.075, 0.1, 0.125)

    def test_single_cell_grid(self):
        dev, lib = small_dev()
        result = grid_search(dev, lib, score_grid=[0.85], sim_grid=[0.1])
        assert len(result.grid) == 1
        assert result.best == result.grid[0]

    def test_strict_threshold_cell_is_worse(self):
        # score_thresh ~1 forces every (noisy) judge window to the unknown
        # label, so that cell must be strictly worse than the tuned cell.
        dev, lib = small_dev()
        result = grid_search(dev, lib, score_grid=[0.85, 0.9999], sim_grid=[0.05])
        tuned = next(c for c in result.grid if c.score_thresh == 0.85)
        strict = next(c for c in result.grid if c.score_thresh == 0.9999)
        assert strict.mean_der > tuned.mean_der

    def test_dev_order_invariance(self):
        dev, lib = small_dev()
        a = grid_search(dev, lib, score_grid=[0.8, 0.85], sim_grid=[0.1])
        b = grid_search(list(reversed(dev)), lib, score_grid=[0.8, 0.85], sim_grid=[0.1])
        assert a == b

    def test_jobs_do_not_change_result(self):
        dev, lib = small_dev()
        a = grid_search(dev, lib, jobs=1)
        b = grid_search(dev, lib, jobs=4)
        assert a == b

    def test_enlarging_grid_never_hurts(self):
        dev, lib = small_dev()
        small = grid_search(dev, lib, score_grid=[0.85], sim_grid=[0.1])
        large = grid_search(dev, lib, score_grid=[0.75, 0.85, 0.9999], sim_grid=[0.05, 0.1])
        assert large.best.mean_der <= small.best.mean_der

    def test_tie_breaks_toward_smaller_thresholds(self):
        # Zero noise: several permissive cells reach DER 0; the best cell
        # must be the smallest (score, sim) among them.
        _, profiles, pairs = make_corpus(seed=2, cases=2, case_duration_s=120.0)
        lib = build_ral(pairs, RalConfig(allowlist=frozenset(p.name for p in profiles[:9]),
                                         min_ref_count=2))
        result = grid_search(pairs, lib, score_grid=[0.9, 0.75, 0.8], sim_grid=[0.125, 0.1])
        zero_cells = [c for c in result.grid if c.mean_der == result.best.mean_der]
        expected = min(zero_cells, key=lambda c: (c.score_thresh, c.sim_thresh))
        assert result.best == expected

    def test_empty_inputs_rejected(self):
        dev, lib = small_dev()
        with pytest.raises(ConstraintError):
            grid_search([], lib)
        with pytest.raises(ConstraintError):
            grid_search(dev, lib, score_grid=[])


class TestClassifier:
    def test_separable_two_classes(self):
        X = np.array([[1.0, 0.0]] * 10 + [[0.0, 1.0]] * 10)
        y = ["a"] * 10 + ["b"] * 10
        clf = train_ovr_classifier(X, y)
        assert clf.predict(X) == y

    def test_conflicting_duplicates_bounded_by_prior(self):
        # 60/40 conflicting labels on one identical vector: accuracy can
        # never beat the majority prior (analytic optimum of the loss).
        X = np.tile(np.array([[0.6, 0.8]]), (10, 1))
        y = ["a"] * 6 + ["b"] * 4
        clf = train_ovr_classifier(X, y)
        preds = clf.predict(X)
        accuracy = np.mean([p == t for p, t in zip(preds, y)])
        assert accuracy <= 0.6 + 1e-12

    def test_gradient_matches_finite_differences(self):
        # Central-difference oracle at 1e-6 relative tolerance.
        from rdsv.analysis import _binary_loss

        rng = SplitMix(3)
        X = np.stack([rng.gaussians(6) for _ in range(40)])
        y = np.array([1.0 if rng.uniform() < 0.5 else 0.0 for _ in range(40)])
        w = rng.gaussians(6) * 0.3
        b = 0.17
        grad_w, grad_b = binary_gradient(X, y, w, b)
        eps = 1e-6
        for j in range(6):
            delta = np.zeros(6)
            delta[j] = eps
            fd = (_binary_loss(X, y, w + delta, b) - _binary_loss(X, y, w - delta, b)) / (2 * eps)
            assert abs(fd - grad_w[j]) <= 1e-6 * max(1.0, abs(grad_w[j]))
        fd_b = (_binary_loss(X, y, w, b + eps) - _binary_loss(X, y, w, b - eps)) / (2 * eps)
        assert abs(fd_b - grad_b) <= 1e-6 * max(1.0, abs(grad_b))

    def test_gradient_at_zero_weights(self):
        # At w=0, b=0 the gradient is mean((0.5 - y) x).
        rng = SplitMix(9)
        X = np.stack([rng.gaussians(4) for _ in range(30)])
        y = np.array([1.0 if rng.uniform() < 0.4 else 0.0 for _ in range(30)])
        grad_w, grad_b = binary_gradient(X, y, np.zeros(4), 0.0)
        expected = ((0.5 - y)[:, None] * X).mean(axis=0)
        assert np.allclose(grad_w, expected, atol=1e-12)
        assert grad_b == pytest.approx(float((0.5 - y).mean()))

    def test_loss_non_increasing(self):
        rng = SplitMix(21)
        X = np.stack([rng.gaussians(8) for _ in range(60)])
        y = ["a" if rng.uniform() < 0.5 else "b" for _ in range(60)]
        _, history = train_ovr_classifier(X, y, track_loss=True)
        for losses in history.values():
            assert all(l1 >= l2 - 1e-12 for l1, l2 in zip(losses, losses[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ConstraintError):
            train_ovr_classifier(np.ones((3, 2)), ["a", "a", "a"])

    def test_deterministic(self):
        rng = SplitMix(13)
        X = np.stack([rng.gaussians(5) for _ in range(30)])
        y = ["ab"[i % 2] for i in range(30)]
        c1 = train_ovr_classifier(X, y)
        c2 = train_ovr_classifier(X, y)
        assert np.array_equal(c1.weights, c2.weights)
        assert np.array_equal(c1.biases, c2.biases)


def probe_data(rates, kappa=math.inf, seed=1, cases=2, duration=120.0):
    profiles = designed_profiles(kappa=kappa)
    judges = frozenset(p.name for p in profiles[:9])
    data = {}
    for rate in rates:
        cfg = CorpusConfig(n_speakers=12, n_referenced=9, dim=256, rate=rate,
                           cases=2 * cases, case_duration_s=duration, seed=seed,
                           kappa=kappa)
        train_pairs = [gen_case(cfg, profiles, i) for i in range(cases)]
        dev_pairs = [gen_case(cfg, profiles, i) for i in range(cases, 2 * cases)]

        def gather(pairs, judges_only):
            xs, ys = [], []
            for seq, ann in pairs:
                X, y = labeled_windows(seq, ann, judges, judges_only=judges_only)
                xs.append(X)
                ys.extend(y)
            return np.vstack(xs), ys

        data[rate] = (gather(train_pairs, True), gather(dev_pairs, False))
    return data


class TestProbe:
    def test_zero_noise_perfect_at_single_rate(self):
        data = probe_data([5.0])
        result = probe(data, thresholds=[0.85, 0.9, 0.95])
        for cell in result.cells:
            assert cell.accuracy == 1.0
            assert cell.judge_recall == 1.0

    def test_threshold_near_one_rejects_everything(self):
        data = probe_data([5.0])
        result = probe(data, thresholds=[1.0 - 1e-9])
        (_, (_, dev_y)) = data[5.0]
        prior = sum(1 for label in dev_y if label == "non-judge") / len(dev_y)
        assert result.cells[0].accuracy == pytest.approx(prior)
        assert result.cells[0].judge_recall == 0.0

    def test_judge_recall_non_increasing_in_threshold(self):
        data = probe_data([5.0], kappa=40.0, seed=3)
        result = probe(data, thresholds=[0.5, 0.7, 0.85, 0.95, 0.99])
        recalls = [c.judge_recall for c in result.cells]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))

    def test_bad_threshold_rejected(self):
        with pytest.raises(ConstraintError):
            probe({}, thresholds=[1.0])


class TestLabeledWindows:
    def test_pools_non_judges(self):
        _, profiles, pairs = make_corpus(seed=4, cases=1, case_duration_s=60.0)
        judges = frozenset(p.name for p in profiles[:9])
        seq, ann = pairs[0]
        X, y = labeled_windows(seq, ann, judges)
        assert X.shape[0] == len(seq) == len(y)
        assert set(y) <= judges | {"non-judge"}
        X2, y2 = labeled_windows(seq, ann, judges, judges_only=True)
        assert set(y2) <= judges
        assert X2.shape[0] == sum(1 for label in y if label != "non-judge")
