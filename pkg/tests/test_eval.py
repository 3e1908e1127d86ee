"""Test cases for point matching error, robustness curves and model evaluation."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from mini_homo.config import CorpusConfig, EvalConfig
from mini_homo.estimator import Estimator
from mini_homo.eval import (
    evaluate_model,
    identity_pme,
    mean_pme,
    pme,
    pme_detail,
    robustness_curve,
    write_eval_outputs,
)
from mini_homo.exceptions import EmptyDatasetError, PointAtInfinityError
from mini_homo.homography import from_matrix, identity, invert, translation
from mini_homo.pipeline.corpus import synth_test_set
from mini_homo.schema import CorrespondenceSet, Homography


class OracleEstimator:
    """Returns the ground-truth H_st for each known source image."""

    name = "oracle"

    def __init__(self, pairs):
        self.lookup = {id(p.i_s): invert(p.h_ts) for p in pairs}

    def estimate_st(self, i_s, i_t) -> Homography:
        return self.lookup[id(i_s)]


@pytest.fixture(scope="module")
def held_out():
    return synth_test_set(CorpusConfig(test_count=10))


class TestPME:
    """Tests for the point matching error."""

    def test_three_four_five(self):
        corr = CorrespondenceSet.from_rows([[0, 0, 3, 4]])
        assert pme(identity(), corr) == 5.0

    def test_exact_homography(self, held_out):
        for pair in held_out:
            if pair.points is not None:
                assert pme(invert(pair.h_ts), pair.points) < 1e-6

    def test_identity_is_mean_displacement(self, held_out):
        for pair in held_out:
            if pair.points is not None:
                assert pme(identity(), pair.points) == pytest.approx(identity_pme(pair.points), abs=1e-12)

    def test_scale_invariance(self):
        corr = CorrespondenceSet.from_rows([[1, 2, 4, 6], [10, 20, 12, 19], [30, 5, 31, 9]])
        h = Homography(m=[[1.01, 0.02, 3.0], [-0.01, 0.99, 4.0], [1e-4, 2e-5, 1.0]])
        scaled = from_matrix(-2.5 * h.m)
        assert pme(scaled, corr) == pytest.approx(pme(h, corr), abs=1e-12)

    def test_point_at_infinity_excluded(self):
        h = Homography(m=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.1, 0.0, 1.0]])
        corr = CorrespondenceSet.from_rows([[10, 5, 0, 0], [0, 0, 3, 4]])
        value, excluded = pme_detail(h, corr)
        assert excluded == 1
        assert value == pytest.approx(5.0)

    def test_all_points_at_infinity(self):
        h = Homography(m=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.1, 0.0, 1.0]])
        corr = CorrespondenceSet.from_rows([[10, 5, 0, 0], [10, 7, 1, 1]])
        with pytest.raises(PointAtInfinityError):
            pme(h, corr)


class TestRobustnessCurve:
    """Tests for inlier-proportion curves."""

    def test_counting(self):
        curve = robustness_curve([0.05, 0.5, 2.0], [0.1, 1.0, 3.0])
        assert np.allclose(curve.inlier_fraction, [1 / 3, 2 / 3, 1.0])

    def test_all_zero_errors(self):
        curve = robustness_curve([0.0] * 5)
        assert np.all(curve.inlier_fraction == 1.0)

    def test_all_large_errors(self):
        curve = robustness_curve([10.0] * 5, [0.1, 1.0, 3.0])
        assert np.all(curve.inlier_fraction == 0.0)

    def test_default_grid(self):
        thresholds = EvalConfig().thresholds()
        assert len(thresholds) == 30
        assert thresholds[0] == pytest.approx(0.1)
        assert thresholds[-1] == pytest.approx(3.0)

    def test_monotone_and_reaches_one(self):
        errors = np.random.default_rng(0).uniform(0.0, 2.5, size=50)
        curve = robustness_curve(errors)
        assert np.all(np.diff(curve.inlier_fraction) >= 0)
        assert curve.inlier_fraction[-1] == 1.0

    def test_non_finite_never_inlier(self):
        curve = robustness_curve([0.0, float("inf")], [1.0])
        assert curve.inlier_fraction[0] == 0.5

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            robustness_curve([])


class TestEvaluateModel:
    """Tests for per-category evaluation."""

    def test_identity_matches_baseline(self, held_out):
        print("\n=== Testing identity evaluation ===")
        result = evaluate_model(Estimator("identity"), held_out)
        labeled = [p for p in held_out if p.points is not None]
        expected = np.mean([identity_pme(p.points) for p in labeled])
        avg = result.rows[-1]
        print(f"AVG PME {avg.pme:.4f} over {avg.count} pairs")
        assert avg.category == "AVG"
        assert avg.count == len(labeled)
        assert avg.pme == pytest.approx(expected, abs=1e-12)
        assert avg.change_pct == pytest.approx(0.0, abs=1e-9)
        assert result.excluded_points == 0
        print("✅ Identity evaluation passed")

    def test_category_rows(self, held_out):
        result = evaluate_model(Estimator("identity"), held_out)
        names = [row.category for row in result.rows]
        assert names[-1] == "AVG"
        assert set(names[:-1]) == {p.category for p in held_out if p.points is not None}
        assert names[:-1] == sorted(names[:-1])

    def test_oracle_beats_identity(self, held_out):
        result = evaluate_model(OracleEstimator(held_out), held_out)
        avg = result.rows[-1]
        assert avg.pme < 1e-6
        assert avg.change_pct == pytest.approx(-100.0, abs=1e-3)
        assert result.curve.inlier_fraction[0] == 1.0

    def test_mean_pme_matches_table(self, held_out):
        est = Estimator("identity")
        assert mean_pme(est, held_out) == pytest.approx(evaluate_model(est, held_out).rows[-1].pme)

    def test_threads_do_not_change_result(self, held_out):
        est = Estimator("lk")
        serial = evaluate_model(est, held_out[:4], threads=1)
        parallel = evaluate_model(est, held_out[:4], threads=3)
        assert serial.per_pair == parallel.per_pair

    def test_no_labeled_pairs(self, held_out):
        unlabeled = [p.model_copy(update={"points": None}) for p in held_out]
        with pytest.raises(EmptyDatasetError):
            evaluate_model(Estimator("identity"), unlabeled)

    def test_translation_on_known_shift(self):
        corr = CorrespondenceSet.from_rows([[10, 10, 14, 12], [50, 60, 54, 62]])
        assert pme(translation(4, 2), corr) == pytest.approx(0.0, abs=1e-12)

    def test_outputs(self, held_out):
        result = evaluate_model(Estimator("identity"), held_out)
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = write_eval_outputs(result, Path(tmpdir))
            for path in paths.values():
                assert path.exists()
            table = paths["table"].read_text(encoding="utf-8").splitlines()
            assert table[0] == "category,count,pme,identity_pme,change_pct"
            assert table[-1].startswith("AVG,")
            assert "<svg" in paths["plot"].read_text(encoding="utf-8")
