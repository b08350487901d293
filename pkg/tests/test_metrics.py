import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerp.exceptions import DataError, DimensionError, UndefinedMetricError
from lerp.metrics import METRIC_KEYS, PredictionSet, confusion_counts, precision_recall, report, roc_auc

from oracles import auc_pairwise, confusion_loop, precision_recall_loop


def random_instance(rng, rows, labels, grid=None):
    scores = rng.uniform(size=(rows, labels))
    if grid:
        # coarse grid forces ties
        scores = np.round(scores * grid) / grid
    targets = rng.integers(0, 2, size=(rows, labels))
    return scores, targets


class TestPrecisionRecall:
    def test_perfect(self):
        t = np.array([[1, 0, 1], [0, 1, 0]])
        assert precision_recall(PredictionSet(t.astype(float), t)) == (1.0, 1.0, 1.0, 1.0)

    def test_all_negative_predictions(self):
        t = np.array([[1, 0], [0, 1], [1, 1]])
        micro_p, macro_p, micro_r, macro_r = precision_recall(PredictionSet(np.zeros((3, 2)), t))
        assert micro_r == 0.0 and macro_r == 0.0
        assert micro_p == 0.0 and macro_p == 0.0

    def test_six_by_three_hand_count(self):
        scores = np.array(
            [
                [0.9, 0.2, 0.6],
                [0.4, 0.7, 0.1],
                [0.5, 0.5, 0.3],
                [0.1, 0.8, 0.9],
                [0.7, 0.3, 0.2],
                [0.2, 0.1, 0.55],
            ]
        )
        targets = np.array([[1, 0, 1], [1, 1, 0], [0, 1, 0], [0, 1, 1], [1, 0, 0], [0, 0, 0]])
        # label 0: tp 2 (r0, r4), fp 1 (r2), fn 1 (r1)
        # label 1: tp 3 (r1, r2, r3), fp 0, fn 0
        # label 2: tp 2 (r0, r3), fp 1 (r5), fn 0
        counts = [(c.tp, c.fp, c.fn) for c in confusion_counts(PredictionSet(scores, targets))]
        assert counts == [(2, 1, 1), (3, 0, 0), (2, 1, 0)]
        micro_p, macro_p, micro_r, macro_r = precision_recall(PredictionSet(scores, targets))
        assert micro_p == 7 / 9
        assert micro_r == 7 / 8
        assert macro_p == pytest.approx((2 / 3 + 1 + 2 / 3) / 3, abs=1e-15)
        assert macro_r == pytest.approx((2 / 3 + 1 + 1) / 3, abs=1e-15)

    def test_threshold_is_inclusive(self):
        counts = confusion_counts(PredictionSet(np.array([[0.5]]), np.array([[1]])))
        assert counts[0].tp == 1

    def test_label_without_predictions_counts_zero_in_macro(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2]])
        targets = np.array([[1, 1], [1, 0]])
        _, macro_p, _, _ = precision_recall(PredictionSet(scores, targets))
        assert macro_p == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        scores, targets = random_instance(rng, 12, 4, grid=10)
        ours = precision_recall(PredictionSet(scores, targets))
        assert ours == pytest.approx(precision_recall_loop(scores, targets), abs=1e-15)

    def test_micro_p_equals_micro_r_when_totals_match(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.7], [0.2, 0.6]])
        targets = np.array([[1, 1], [0, 1], [1, 0]])
        micro_p, _, micro_r, _ = precision_recall(PredictionSet(scores, targets))
        assert micro_p == micro_r

    def test_zero_records(self):
        with pytest.raises(DataError):
            precision_recall(PredictionSet(np.zeros((0, 2)), np.zeros((0, 2))))

    @pytest.mark.parametrize(
        "scores, targets, threshold",
        [
            ([[1.2]], [[1]], 0.5),
            ([[0.3]], [[2]], 0.5),
            ([[0.3]], [[1]], 1.0),
        ],
    )
    def test_invalid_inputs(self, scores, targets, threshold):
        with pytest.raises(DataError):
            PredictionSet(np.array(scores), np.array(targets), threshold)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            PredictionSet(np.zeros((2, 2)), np.zeros((2, 3)))


class TestRocAuc:
    def test_two_points(self):
        assert roc_auc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties(self):
        assert roc_auc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.9], [1, 1])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pairwise(self, seed):
        rng = np.random.default_rng(seed)
        s = np.round(rng.uniform(size=10), 1)
        t = rng.integers(0, 2, size=10)
        t[:2] = [0, 1]
        assert roc_auc(s, t) == auc_pairwise(s, t)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 20), st.integers(0, 1)),
            min_size=2,
            max_size=40,
        ).filter(lambda xs: len({t for _, t in xs}) == 2)
    )
    def test_complement_and_monotone_identities(self, pairs):
        s = np.array([p[0] / 20 for p in pairs])
        t = np.array([p[1] for p in pairs])
        a = roc_auc(s, t)
        assert a + roc_auc(s, 1 - t) == 1.0
        assert roc_auc(np.exp(3 * s) - 7, t) == a
        assert a == auc_pairwise(s, t)


class TestReport:
    def test_identity(self):
        t = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]])
        rep = report(PredictionSet(t.astype(float), t))
        assert all(v == 1.0 for v in rep.to_dict().values())

    def test_inverted(self):
        t = np.array([[1, 0], [0, 1], [1, 0]])
        assert report(PredictionSet(1.0 - t, t)).micro_roc_auc == 0.0

    def test_flat_json_keys(self):
        rng = np.random.default_rng(0)
        d = report(PredictionSet(*random_instance(rng, 8, 3))).to_dict()
        assert tuple(d) == METRIC_KEYS

    def test_single_class_label_skipped_in_macro_auc(self):
        scores = np.array([[0.9, 0.2], [0.1, 0.6], [0.8, 0.4]])
        targets = np.array([[1, 0], [0, 0], [1, 0]])
        rep = report(PredictionSet(scores, targets))
        assert rep.per_label_auc == [1.0, None]
        assert rep.macro_roc_auc == 1.0

    def test_no_class_variation_at_all(self):
        rep = report(PredictionSet(np.full((2, 2), 0.3), np.zeros((2, 2))))
        assert rep.micro_roc_auc is None and rep.macro_roc_auc is None

    def test_fifty_by_five_against_oracles(self):
        rng = np.random.default_rng(1234)
        scores, targets = random_instance(rng, 50, 5, grid=20)
        rep = report(PredictionSet(scores, targets))
        micro_p, macro_p, micro_r, macro_r = precision_recall_loop(scores, targets)
        assert (rep.micro_precision, rep.micro_recall) == (micro_p, micro_r)
        assert rep.macro_precision == pytest.approx(macro_p, abs=1e-15)
        assert rep.macro_recall == pytest.approx(macro_r, abs=1e-15)
        assert rep.micro_roc_auc == auc_pairwise(scores.ravel(), targets.ravel())
        per = [auc_pairwise(scores[:, j], targets[:, j]) for j in range(5)]
        assert rep.macro_roc_auc == pytest.approx(np.mean(per), abs=1e-15)
        assert [(c.tp, c.fp, c.fn) for c in rep.per_label] == confusion_loop(scores, targets, 0.5)

    def test_label_order_does_not_change_macro(self):
        rng = np.random.default_rng(7)
        scores, targets = random_instance(rng, 30, 4)
        perm = [2, 0, 3, 1]
        a = report(PredictionSet(scores, targets))
        b = report(PredictionSet(scores[:, perm], targets[:, perm]))
        for key in ("macro_precision", "macro_recall", "macro_roc_auc"):
            assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-15)

    def test_all_metrics_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            rep = report(PredictionSet(*random_instance(rng, 15, 3)))
            assert all(0.0 <= v <= 1.0 for v in rep.to_dict().values() if v is not None)
