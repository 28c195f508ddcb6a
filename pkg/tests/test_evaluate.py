import math

import numpy as np
import pytest

from ocuseg.evaluate import (FilterResult, GazeSample, fuse_gaze,
                             pupil_centroid, rank_and_filter, spearman,
                             threshold_decision)
from ocuseg.metrics import confusion_matrix


def _conf(correct: int, wrong: int) -> np.ndarray:
    """Confusion with `correct` true-positive background pixels and `wrong`
    background pixels predicted as class 1."""
    c = np.zeros((4, 4), dtype=np.int64)
    c[0, 0] = correct
    c[0, 1] = wrong
    c[1, 1] = 1  # keep class 1 present so its IoU contributes
    return c


class TestRankAndFilter:
    def test_pct_zero_equals_unfiltered(self):
        ids = [f"s{i}" for i in range(10)]
        scores = [float(i) for i in range(10)]
        confs = [_conf(90, 10) for _ in range(10)]
        res = rank_and_filter(ids, scores, confs, [0.0])
        assert res[0].retained_count == 10

    def test_anticorrelated_scores_give_monotone_curve(self):
        # higher score = worse image; dropping by score must not hurt MIoU
        n = 100
        ids = [f"s{i:03d}" for i in range(n)]
        scores = [float(i) for i in range(n)]
        confs = [_conf(100 - i, i) for i in range(n)]
        res = rank_and_filter(ids, scores, confs, [1, 2, 3, 4, 5])
        mious = [r.retained_miou for r in res]
        assert all(b >= a for a, b in zip(mious, mious[1:]))
        assert [r.retained_count for r in res] == [math.ceil((1 - p / 100) * n)
                                                   for p in (1, 2, 3, 4, 5)]

    def test_equal_scores_tie_break_by_id(self):
        ids = ["b", "a", "c"]
        scores = [1.0, 1.0, 1.0]
        confs = [_conf(10, 0), _conf(0, 10), _conf(10, 0)]
        res = rank_and_filter(ids, scores, confs, [34.0])
        # drops one image: the lowest id ("a"), the all-wrong one
        assert res[0].retained_count == 2
        assert res[0].retained_miou == pytest.approx(
            rank_and_filter(["b", "c"], [1.0, 1.0],
                            [_conf(10, 0), _conf(10, 0)], [0.0])[0].retained_miou)

    def test_empty_after_filter_rejected(self):
        with pytest.raises(ValueError, match="retains no images"):
            rank_and_filter(["a"], [1.0], [_conf(5, 5)], [100.0])


class TestThresholdDecision:
    def test_boundary_inclusive(self):
        assert threshold_decision(5.0, 5.0) == "accept"
        assert threshold_decision(5.0001, 5.0) == "reject"

    def test_infinite_tau_always_accepts(self):
        assert threshold_decision(1e300, math.inf) == "accept"

    def test_percentile_tau_rejects_expected_fraction(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=2000)
        tau = float(np.percentile(scores, 95))
        rej = np.mean([threshold_decision(s, tau) == "reject" for s in scores])
        assert abs(rej - 0.05) <= 0.01


class TestPupilCentroid:
    def test_single_pixel(self):
        y = np.zeros((10, 20), dtype=np.int64)
        y[3, 7] = 3
        assert pupil_centroid(y) == ((7 + 0.5) / 20, (3 + 0.5) / 10)

    def test_disc_center(self):
        y = np.zeros((64, 64), dtype=np.int64)
        rr, cc = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5, indexing="ij")
        y[(rr - 30) ** 2 + (cc - 40) ** 2 <= 100] = 3
        u, v = pupil_centroid(y)
        assert abs(u * 64 - 40) <= 0.5
        assert abs(v * 64 - 30) <= 0.5

    def test_no_pupil(self):
        assert pupil_centroid(np.zeros((4, 4), dtype=np.int64)) is None


class TestFuseGaze:
    def test_equal_scores_give_mean(self):
        samples = [GazeSample((0.2, 0.2), 1.0, (0.0, 0.0)),
                   GazeSample((0.4, 0.6), 1.0, (0.0, 0.0))]
        fused = fuse_gaze(samples, temperature=2.0)
        assert fused == pytest.approx((0.3, 0.4))

    def test_low_temperature_picks_most_confident(self):
        samples = [GazeSample((0.1, 0.1), 5.0, (0.0, 0.0)),
                   GazeSample((0.9, 0.9), 1.0, (0.0, 0.0))]
        fused = fuse_gaze(samples, temperature=1e-6)
        assert fused == pytest.approx((0.9, 0.9), abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            fuse_gaze([], 1.0)

    def test_bad_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            fuse_gaze([GazeSample((0.5, 0.5), 0.0, (0.5, 0.5))], 0.0)


class TestSpearman:
    def test_perfect_monotone(self):
        x = np.arange(50, dtype=float)
        assert spearman(x, x ** 3) == pytest.approx(1.0)
        assert spearman(x, -x) == pytest.approx(-1.0)

    def test_ties_averaged(self):
        assert spearman([1, 1, 2, 2], [1, 1, 2, 2]) == pytest.approx(1.0)

    def test_independent_near_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=3000)
        y = rng.normal(size=3000)
        assert abs(spearman(x, y)) < 0.05
