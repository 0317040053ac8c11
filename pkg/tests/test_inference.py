import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polypwsi.classifier import ConstantClassifier, PatchPrediction
from polypwsi.core import LABELS
from polypwsi.errors import RangeError
from polypwsi.inference import DecisionThresholds, aggregate, classify_slide
from polypwsi.tiler import PatchSpec

HP, SSP, TSA, TA, TVV, NORMAL = LABELS


def peaked(label, conf):
    """Probability vector with ``conf`` on ``label`` and the rest spread evenly."""
    p = np.full(6, (1 - conf) / 5)
    p[int(label)] = conf
    return p


def preds(*groups):
    out = []
    for label, confs in groups:
        out += [PatchPrediction(str(len(out)), peaked(label, c)) for c in confs]
    return out


class TestAggregate:
    def test_plurality(self):
        d = aggregate(preds((SSP, [0.7, 0.8, 0.75, 0.75, 0.7, 0.8]), (HP, [0.9] * 4)))
        assert d.predicted == SSP
        assert d.tallies[SSP] == 6 and d.tallies[HP] == 4
        assert d.mean_confidence[SSP] == pytest.approx(0.75)

    def test_too_few(self):
        assert aggregate(preds((TA, [0.99] * 4))).predicted == NORMAL

    def test_empty_and_all_normal(self):
        d = aggregate([])
        assert d.predicted == NORMAL and d.total_patches == 0
        d = aggregate(preds((NORMAL, [0.9] * 12)))
        assert d.predicted == NORMAL and d.tallies[NORMAL] == 12 and d.total_patches == 12

    def test_low_confidence(self):
        assert aggregate(preds((TVV, [0.6, 0.7, 0.65, 0.65, 0.6, 0.7]))).predicted == NORMAL

    def test_tie_break_by_confidence(self):
        assert aggregate(preds((HP, [0.8] * 5), (SSP, [0.9] * 5))).predicted == SSP

    def test_tie_break_canonical(self):
        assert aggregate(preds((TA, [0.8] * 5), (SSP, [0.8] * 5))).predicted == SSP

    def test_normal_patches_do_not_vote(self):
        d = aggregate(preds((NORMAL, [0.99] * 20), (TA, [0.9] * 5)))
        assert d.predicted == TA and d.total_patches == 25

    def test_gates_winner_only(self):
        # The plurality class fails the confidence gate; the runner-up is not promoted.
        assert aggregate(preds((TA, [0.5] * 8), (HP, [0.95] * 6))).predicted == NORMAL

    def test_thresholds_validated(self):
        with pytest.raises(RangeError):
            DecisionThresholds(min_patches=0)
        with pytest.raises(RangeError):
            DecisionThresholds(min_mean_confidence=0)

    def test_to_dict(self):
        doc = aggregate(preds((TA, [0.9] * 5))).to_dict("s1")
        assert doc["slide_id"] == "s1" and doc["predicted"] == "TA"
        assert doc["tallies"]["TA"] == 5 and doc["mean_confidence"]["HP"] == 0.0


prediction_lists = st.lists(
    st.tuples(st.sampled_from(LABELS), st.floats(0.2, 1.0)), max_size=30
).map(lambda items: [PatchPrediction(str(i), peaked(c, conf)) for i, (c, conf) in enumerate(items)])


class TestAggregateProperties:
    @settings(max_examples=200)
    @given(prediction_lists, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, items, rnd):
        shuffled = list(items)
        rnd.shuffle(shuffled)
        a, b = aggregate(items), aggregate(shuffled)
        assert a.predicted == b.predicted and a.tallies == b.tallies
        for c in LABELS:
            assert a.mean_confidence[c] == pytest.approx(b.mean_confidence[c], abs=1e-12)

    @settings(max_examples=200)
    @given(prediction_lists, st.integers(1, 10), st.floats(0.05, 1.0), st.integers(0, 5), st.floats(0, 0.3))
    def test_raising_thresholds_moves_toward_normal(self, items, n, conf, dn, dc):
        lo = aggregate(items, DecisionThresholds(n, conf))
        hi = aggregate(items, DecisionThresholds(n + dn, min(1.0, conf + dc)))
        assert hi.predicted in (lo.predicted, NORMAL)

    @settings(max_examples=200)
    @given(prediction_lists)
    def test_adding_supporting_patch_keeps_winner(self, items):
        d = aggregate(items)
        if d.predicted == NORMAL:
            return
        extra = PatchPrediction("extra", peaked(d.predicted, max(d.mean_confidence[d.predicted], 0.2)))
        assert aggregate(items + [extra]).predicted == d.predicted

    @settings(max_examples=200)
    @given(prediction_lists)
    def test_loose_thresholds_give_plurality(self, items):
        items = [p for p in items if np.argmax(p.probabilities) != NORMAL]
        d = aggregate(items, DecisionThresholds(1, 1e-9))
        if items:
            assert d.tallies[d.predicted] == max(d.tallies[c] for c in LABELS if c != NORMAL)
        else:
            assert d.predicted == NORMAL


class TestClassifySlide:
    def test_single_patch_slide(self):
        d = classify_slide(np.zeros((60, 60, 3), np.uint8), ConstantClassifier.one_hot(TA), PatchSpec(60, 60))
        assert d.total_patches == 1 and d.predicted == NORMAL

    def test_grid(self):
        d, pr = classify_slide(np.zeros((200, 200, 3), np.uint8), ConstantClassifier.one_hot(TA),
                               PatchSpec(60, 60), return_predictions=True)
        # Axis origins 0, 40, 80, 120 plus the border-aligned 140.
        assert d.total_patches == 25 and d.predicted == TA and d.mean_confidence[TA] == 1.0
        assert pr[0].patch_id == "0_0" and pr[-1].patch_id == "140_140"

    def test_normal_handle(self, rng):
        img = rng.integers(0, 256, (90, 130, 3), dtype=np.uint8)
        assert classify_slide(img, ConstantClassifier.one_hot(NORMAL), PatchSpec(30, 30)).predicted == NORMAL

    def test_jobs_do_not_change_result(self, rng):
        img = rng.integers(0, 256, (100, 100, 3), dtype=np.uint8)
        h = ConstantClassifier(peaked(HP, 0.8))
        a = classify_slide(img, h, PatchSpec(30, 30), jobs=1)
        b = classify_slide(img, h, PatchSpec(30, 30), jobs=4)
        assert a == b
