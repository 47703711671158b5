import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldpose.core import Pose, Scene, SceneError
from fieldpose.decoder import DecodedPose
from fieldpose.metrics import (METRIC_KEYS, OKS_THRESHOLDS, MetricError, evaluate, oks, pck, recall_at,
                               write_metrics)
from fieldpose.synth import SceneParams, generate_scene


def make_gt(area=10000.0, origin=(100.0, 100.0), seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, math.sqrt(area), (17, 2)) + origin
    return Pose.from_array(np.column_stack((xy, np.full(17, 2.0))), area)


def pred_from(gt, offsets=None, score=0.9, present=None):
    g = gt.to_array()
    joints = np.column_stack((g[:, :2] if offsets is None else g[:, :2] + offsets, np.full(17, score)))
    return DecodedPose.build(joints, np.ones(17, bool) if present is None else present)


def image(*poses, size=(640, 480)):
    return Scene(size[0], size[1], tuple(poses))


class TestOks:
    def test_exact(self, skeleton):
        gt = make_gt()
        assert oks(pred_from(gt), gt, skeleton) == pytest.approx(1.0)

    def test_one_kappa_sqrt_area(self, skeleton):
        gt = make_gt(area=2500.0)
        d = np.asarray(skeleton.kappa) * 50.0
        assert oks(pred_from(gt, np.column_stack((d, np.zeros(17)))), gt, skeleton) == pytest.approx(math.exp(-0.5))

    def test_far(self, skeleton):
        gt = make_gt()
        assert oks(pred_from(gt, np.full((17, 2), 1000.0)), gt, skeleton) < 1e-12

    def test_absent_joints_score_zero(self, skeleton):
        gt = make_gt()
        present = np.ones(17, bool)
        present[:5] = False
        assert oks(pred_from(gt, present=present), gt, skeleton) == pytest.approx(12 / 17)

    def test_unlabeled_gt_ignored(self, skeleton):
        gt = make_gt()
        arr = gt.to_array()
        arr[:10, 2] = 0
        arr[:10, :2] = 0
        gt10 = Pose.from_array(arr, gt.bbox_area)
        off = np.zeros((17, 2))
        off[:10] = 500.0
        assert oks(pred_from(gt, off), gt10, skeleton) == pytest.approx(1.0)

    def test_no_labeled_rejected(self):
        with pytest.raises(SceneError):
            Pose.from_array(np.zeros((17, 3)), 100.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.2, 5.0), st.integers(0, 1000))
    def test_scale_equivariant(self, skeleton, s, seed):
        rng = np.random.default_rng(seed)
        gt = make_gt(seed=seed)
        off = rng.normal(0, 5, (17, 2))
        base = oks(pred_from(gt, off), gt, skeleton)
        g = gt.to_array()
        g[:, :2] *= s
        scaled_gt = Pose.from_array(g, gt.bbox_area * s * s)
        assert oks(pred_from(scaled_gt, off * s), scaled_gt, skeleton) == pytest.approx(base, abs=1e-12)


class TestPck:
    def test_boundary_inclusive(self):
        gt = make_gt(area=400.0)
        off = np.zeros((17, 2))
        off[:, 0] = 2.0  # exactly 0.1 * sqrt(400)
        assert pck(pred_from(gt, off), gt, 0.1) == 1.0
        off[:, 0] = 2.0 + 1e-9
        assert pck(pred_from(gt, off), gt, 0.1) == 0.0

    def test_half(self):
        gt = make_gt(area=400.0)
        off = np.zeros((18, 2))
        off[::2, 0] = 50.0
        off = off[:17]
        # joints 0, 2, ..., 16 displaced: 9 misses of 17
        assert pck(pred_from(gt, off), gt, 0.1) == pytest.approx(8 / 17)

    def test_alpha_positive(self):
        gt = make_gt()
        with pytest.raises(MetricError):
            pck(pred_from(gt), gt, 0.0)


class TestEvaluate:
    def test_perfect(self, skeleton):
        scenes = [generate_scene(1, i, SceneParams(poses_per_scene=(1, 4), height_range=(40, 200)), skeleton)
                  for i in range(10)]
        preds = [[pred_from(p) for p in s.poses] for s in scenes]
        m = evaluate(preds, scenes, skeleton)
        assert tuple(m) == METRIC_KEYS
        for k in ("AP", "AP50", "AP75", "AR", "AR50", "AR75"):
            assert m[k] == pytest.approx(1.0)

    def test_empty_predictions(self, skeleton):
        gts = [image(make_gt())]
        m = evaluate([[]], gts, skeleton)
        assert m["AP"] == 0.0 and m["AR"] == 0.0

    def test_hand_computed_pr(self, skeleton):
        gt = make_gt()
        good = pred_from(gt, score=0.9)
        bad = pred_from(gt, np.full((17, 2), 300.0), score=0.5)
        # TP first: precision 1 at recall 1
        assert evaluate([[good, bad]], [image(gt)], skeleton)["AP"] == pytest.approx(1.0)
        # FP first: precision 1/2 at recall 1, so AP = 0.5 on every threshold
        good2 = pred_from(gt, score=0.4)
        assert evaluate([[good2, bad]], [image(gt)], skeleton)["AP"] == pytest.approx(0.5)

    def test_two_images_pooled(self, skeleton):
        # image 1: perfect at 0.9; image 2: FP at 0.8 then TP at 0.7
        g1, g2 = make_gt(seed=1), make_gt(seed=2)
        preds = [[pred_from(g1, score=0.9)],
                 [pred_from(g2, np.full((17, 2), 300.0), score=0.8), pred_from(g2, score=0.7)]]
        # ranked: TP, FP, TP -> recall .5 at p=1, recall 1 at p=2/3
        expected = (51 * 1.0 + 50 * 2 / 3) / 101
        assert evaluate(preds, [image(g1), image(g2)], skeleton)["AP"] == pytest.approx(expected)

    def test_threshold_dependence(self, skeleton):
        gt = make_gt(area=2500.0)
        # displacement giving OKS 0.72: matched at 0.5 to 0.7, not at 0.75
        kappa = np.asarray(skeleton.kappa)
        d = kappa * 50.0 * math.sqrt(-2 * math.log(0.72))
        p = pred_from(gt, np.column_stack((d, np.zeros(17))))
        m = evaluate([[p]], [image(gt)], skeleton)
        assert m["AP50"] == pytest.approx(1.0) and m["AP75"] == 0.0
        assert recall_at([[p]], [image(gt)], skeleton, 0.7) == 1.0
        assert recall_at([[p]], [image(gt)], skeleton, 0.75) == 0.0

    def test_ap_non_increasing_in_threshold(self, skeleton):
        rng = np.random.default_rng(3)
        scenes = [generate_scene(2, i, SceneParams(poses_per_scene=(1, 3)), skeleton) for i in range(20)]
        preds = [[pred_from(p, rng.normal(0, 4, (17, 2)), score=rng.random()) for p in s.poses] for s in scenes]
        per_threshold = [recall_at(preds, scenes, skeleton, float(t)) for t in OKS_THRESHOLDS]
        assert all(a >= b for a, b in zip(per_threshold, per_threshold[1:]))
        m = evaluate(preds, scenes, skeleton)
        assert m["AP50"] >= m["AP"] >= 0 and m["AP50"] >= m["AP75"]

    def test_duplicates_never_raise_ap(self, skeleton):
        gts = [image(make_gt(seed=s)) for s in range(5)]
        preds = [[pred_from(g.poses[0], np.full((17, 2), 1.0), score=0.9)] for g in gts]
        base = evaluate(preds, gts, skeleton)["AP"]
        dup = [p + [pred_from(g.poses[0], np.full((17, 2), 1.5), score=0.8)] for p, g in zip(preds, gts)]
        assert evaluate(dup, gts, skeleton)["AP"] <= base

    def test_max_detections(self, skeleton):
        gt = make_gt()
        junk = [pred_from(gt, np.full((17, 2), 300.0 + i), score=0.9) for i in range(20)]
        m = evaluate([junk + [pred_from(gt, score=0.1)]], [image(gt)], skeleton)
        assert m["AR"] == 0.0

    def test_area_ranges(self, skeleton):
        medium = make_gt(area=50.0 ** 2)
        m = evaluate([[pred_from(medium)]], [image(medium)], skeleton)
        assert m["APM"] == pytest.approx(1.0)
        assert m["APL"] == -1.0  # no large ground truth

    def test_length_mismatch(self, skeleton):
        with pytest.raises(MetricError):
            evaluate([[], []], [image(make_gt())], skeleton)

    def test_bad_recall_threshold(self, skeleton):
        with pytest.raises(MetricError):
            recall_at([[]], [image(make_gt())], skeleton, 0.52)

    def test_write(self, tmp_path):
        write_metrics(tmp_path / "m.json", {"AP": 1 / 3})
        assert (tmp_path / "m.json").read_text().strip().endswith("}")
