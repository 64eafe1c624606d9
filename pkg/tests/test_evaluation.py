"""mAP evaluator: matching rules, PR staircase vs brute-force oracle, grouping."""

import itertools
import json

import numpy as np
import pytest

from hoiground.evaluation import (
    GTEntry,
    ap_from_flags,
    average_precision,
    evaluate,
    evaluate_records,
    match_pair,
    read_ground_truth,
    write_ground_truth,
)
from hoiground.geometry import box_iou


def ap_oracle(tp_flags, n_gt):
    """Independent staircase area: one recall step of height 1/n_gt per ground
    truth, each weighted by the best precision among prefixes reaching it."""
    if n_gt == 0:
        return 0.0
    prefixes = []
    tp = 0
    for j, flag in enumerate(tp_flags, start=1):
        tp += bool(flag)
        prefixes.append((tp, tp / j))
    total = 0.0
    for k in range(1, n_gt + 1):
        candidates = [prec for reached, prec in prefixes if reached >= k]
        total += max(candidates, default=0.0)
    return total / n_gt


def pred(image_id, hb, ob, oc, act, score):
    return {
        "image_id": image_id, "human_box": list(hb), "object_box": list(ob),
        "object_class": oc, "action": act, "score": score,
    }


BOX_A = (0.0, 0.0, 0.5, 0.5)
BOX_B = (0.5, 0.5, 1.0, 1.0)
BOX_C = (0.0, 0.5, 0.5, 1.0)
BOX_D = (0.5, 0.0, 1.0, 0.5)


class TestMatchPair:
    def test_identical(self):
        gt = GTEntry("i", BOX_A, BOX_B, 2, 1)
        assert match_pair(pred("i", BOX_A, BOX_B, 2, 1, 0.9), gt)

    def test_disjoint_human_boxes(self):
        gt = GTEntry("i", BOX_A, BOX_B, 2, 1)
        assert not match_pair(pred("i", BOX_C, BOX_B, 2, 1, 0.9), gt)

    def test_wrong_class_or_action(self):
        gt = GTEntry("i", BOX_A, BOX_B, 2, 1)
        assert not match_pair(pred("i", BOX_A, BOX_B, 1, 1, 0.9), gt)
        assert not match_pair(pred("i", BOX_A, BOX_B, 2, 0, 0.9), gt)

    def test_iou_exactly_half_is_inclusive(self):
        half = (0.0, 0.0, 0.5, 0.25)  # IoU vs BOX_A = 0.125/0.25 = 0.5 exactly
        assert box_iou(half, BOX_A) == 0.5
        gt = GTEntry("i", BOX_A, BOX_B, 2, 1)
        assert match_pair(pred("i", half, BOX_B, 2, 1, 0.9), gt)


class TestApFromFlags:
    def test_single_matching_top_prediction(self):
        assert ap_from_flags([True], 1) == 1.0

    def test_false_then_true(self):
        assert ap_from_flags([False, True], 1) == pytest.approx(0.5)

    def test_exhaustive_small_instances(self):
        checked = 0
        for n in range(0, 7):
            for flags in itertools.product([False, True], repeat=n):
                tp = sum(flags)
                for n_gt in range(max(tp, 1), tp + 3):
                    assert ap_from_flags(list(flags), n_gt) == pytest.approx(
                        ap_oracle(flags, n_gt), abs=1e-12
                    )
                    checked += 1
        assert checked > 300

    def test_zero_gt(self):
        assert ap_from_flags([True, False], 0) == 0.0


class TestAveragePrecision:
    def test_greedy_claims_each_gt_once(self):
        gt = [GTEntry("i", BOX_A, BOX_B, 0, 0)]
        preds = [
            pred("i", BOX_A, BOX_B, 0, 0, 0.9),
            pred("i", BOX_A, BOX_B, 0, 0, 0.8),  # duplicate, becomes FP
        ]
        assert average_precision(preds, gt) == 1.0
        flipped = average_precision(list(reversed(preds)), gt)
        assert flipped == 1.0  # sorting by score restores the same order

    def test_ties_broken_by_highest_iou_sum(self):
        gt = [
            GTEntry("i", BOX_A, (0.5, 0.5, 1.0, 1.0), 0, 0),
            GTEntry("i", BOX_A, (0.5, 0.45, 1.0, 1.0), 0, 0),
        ]
        p = pred("i", BOX_A, (0.5, 0.5, 1.0, 1.0), 0, 0, 0.9)
        average_precision([p], gt)
        assert gt[0].matched and not gt[1].matched

    def test_score_rank_only_dependence(self):
        rng = np.random.default_rng(0)
        gt = [GTEntry("i", BOX_A, BOX_B, 0, 0), GTEntry("i", BOX_C, BOX_D, 0, 0)]
        preds = [
            pred("i", BOX_A, BOX_B, 0, 0, 0.9),
            pred("i", BOX_C, BOX_B, 0, 0, 0.5),
            pred("i", BOX_C, BOX_D, 0, 0, 0.3),
        ]
        base = average_precision([dict(p) for p in preds], gt)
        squashed = [dict(p, score=p["score"] ** 3 / 2) for p in preds]  # monotone map
        assert average_precision(squashed, gt) == pytest.approx(base, abs=1e-14)

    def test_random_instances_match_oracle_end_to_end(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            n_gt = int(rng.integers(1, 4))
            gts = [GTEntry("i", BOX_A, BOX_B, 0, 0) for _ in range(n_gt)]
            n_preds = int(rng.integers(0, 7))
            preds = []
            for _ in range(n_preds):
                good = bool(rng.random() < 0.5)
                preds.append(
                    pred("i", BOX_A, BOX_B if good else BOX_C, 0, 0, float(rng.random()))
                )
            ap = average_precision([dict(p) for p in preds], gts)
            order = sorted(preds, key=lambda p: -p["score"])
            for g in gts:
                g.matched = False
            flags = []
            for p in order:
                hit = next(
                    (g for g in gts if not g.matched and match_pair(p, g)), None
                )
                if hit:
                    hit.matched = True
                flags.append(hit is not None)
            assert ap == pytest.approx(ap_oracle(flags, n_gt), abs=1e-12)


class TestEvaluate:
    def hand_example(self):
        """Three classes with hand-computed APs 1.0, 1.0, and 0.5."""
        h1, h2 = BOX_A, (0.1, 0.1, 0.6, 0.6)
        o1, o2, o3 = BOX_B, (0.6, 0.1, 1.0, 0.6), BOX_C
        gts = [
            GTEntry("img1", h1, o1, 0, 0),
            GTEntry("img1", h1, o3, 1, 0),
            GTEntry("img2", h2, o2, 0, 0),
            GTEntry("img2", h2, o2, 0, 1),
        ]
        preds = [
            pred("img1", h1, o1, 0, 0, 0.9),          # A tp
            pred("img2", h2, o2, 0, 0, 0.8),          # A tp
            pred("img1", (0.5, 0.0, 1.0, 0.4), o1, 0, 0, 0.7),  # A fp (human off)
            pred("img2", h2, o2, 0, 1, 0.6),          # B tp
            pred("img2", h2, o2, 0, 1, 0.5),          # B duplicate fp
            pred("img1", h1, (0.4, 0.5, 0.9, 1.0), 1, 0, 0.9),  # C fp (object off)
            pred("img1", h1, o3, 1, 0, 0.4),          # C tp after the fp
        ]
        return preds, gts

    def test_hand_computed_three_class_map(self):
        preds, gts = self.hand_example()
        report = evaluate_records(preds, gts)
        assert report.per_class_ap[(0, 0)] == pytest.approx(1.0)
        assert report.per_class_ap[(1, 0)] == pytest.approx(1.0)
        assert report.per_class_ap[(0, 1)] == pytest.approx(0.5)
        assert report.map_full == pytest.approx((1.0 + 1.0 + 0.5) / 3)

    def test_rare_grouping(self):
        preds, gts = self.hand_example()
        # class (0,0) has 2 ground truths, the others 1 each
        report = evaluate_records(preds, gts, rare_threshold=2)
        assert report.rare_classes == [(0, 1), (1, 0)]
        assert report.nonrare_classes == [(0, 0)]
        assert report.map_rare == pytest.approx(0.75)
        assert report.map_nonrare == pytest.approx(1.0)
        default = evaluate_records(preds, gts)  # threshold 10: everything rare
        assert default.map_rare == pytest.approx(default.map_full)
        assert default.map_nonrare == 0.0

    def test_perfect_predictions(self):
        _, gts = self.hand_example()
        preds = [
            pred(g.image_id, g.human_box, g.object_box, g.object_class, g.action, 1.0)
            for g in gts
        ]
        report = evaluate_records(preds, gts)
        assert all(ap == 1.0 for ap in report.per_class_ap.values())
        assert report.map_full == 1.0

    def test_empty_predictions(self):
        _, gts = self.hand_example()
        report = evaluate_records([], gts)
        assert all(ap == 0.0 for ap in report.per_class_ap.values())
        assert report.map_full == 0.0

    def test_unknown_prediction_class_warns(self):
        preds, gts = self.hand_example()
        preds.append(pred("img1", BOX_A, BOX_B, 7, 2, 0.99))
        with pytest.warns(UserWarning, match="false positives"):
            report = evaluate_records(preds, gts)
        assert (2, 7) not in report.per_class_ap

    def test_class_subset_filter(self):
        preds, gts = self.hand_example()
        report = evaluate_records(preds, gts, class_subset={(0, 0)})
        assert list(report.per_class_ap) == [(0, 0)]
        assert report.map_full == pytest.approx(1.0)

    def test_threads_do_not_change_result(self):
        preds, gts = self.hand_example()
        a = evaluate_records(preds, gts, threads=1)
        b = evaluate_records(preds, gts, threads=4)
        assert a.per_class_ap == b.per_class_ap

    def test_file_level_evaluate(self, tmp_path):
        preds, gts = self.hand_example()
        pred_path = tmp_path / "preds.jsonl"
        with open(pred_path, "w") as fh:
            for p in preds:
                fh.write(json.dumps(dict(p, factors={})) + "\n")
        per_image = {}
        for g in gts:
            per_image.setdefault(g.image_id, []).append(
                {"human_box": list(g.human_box), "object_box": list(g.object_box),
                 "object_class": g.object_class, "action": g.action}
            )
        gt_path = tmp_path / "gt.json"
        write_ground_truth(gt_path, per_image)
        report = evaluate(pred_path, gt_path)
        assert report.map_full == pytest.approx((1.0 + 1.0 + 0.5) / 3)

    def test_ground_truth_roundtrip(self, tmp_path):
        _, gts = self.hand_example()
        per_image = {}
        for g in gts:
            per_image.setdefault(g.image_id, []).append(
                {"human_box": list(g.human_box), "object_box": list(g.object_box),
                 "object_class": g.object_class, "action": g.action}
            )
        path = tmp_path / "gt.json"
        write_ground_truth(path, per_image)
        loaded = read_ground_truth(path)
        assert len(loaded) == len(gts)
        assert {(g.image_id, g.object_class, g.action) for g in loaded} == \
            {(g.image_id, g.object_class, g.action) for g in gts}

    def test_report_json_shape(self):
        preds, gts = self.hand_example()
        doc = evaluate_records(preds, gts).to_json()
        assert set(doc) == {"rare_threshold", "map", "classes"}
        assert len(doc["classes"]) == 3
