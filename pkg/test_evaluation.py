"""
Tests for matching, average precision and the pooled report.
"""

import numpy as np
import pytest

from config import EvalConfig
from errors import StructuralError
from evaluation import average_precision, evaluate, map_report, match_and_score, pool
from models import POOLED_COLUMNS, JointPR, JointType, PersonPose, PoseJoint, PredictedPose, Region

EVERY_REGION = EvalConfig(min_region_area=0)


def ground_truth_pose(scene, person, confidence=1.0, joints=None, shift=0.0):
    entries = {}
    for joint in (joints or JointType):
        gt = scene.persons[person].joints[joint]
        if gt.visible:
            entries[joint] = PoseJoint(u=gt.u + shift, v=gt.v, confidence=confidence)
    return PersonPose.from_mapping(entries)


def perfect_predictions(scenes):
    return [PredictedPose(scene.scene_id, r, ground_truth_pose(scene, region.person))
            for scene in scenes for r, region in enumerate(scene.regions)]


def test_perfect_predictions_score_one(test_scenes):
    report = evaluate(perfect_predictions(test_scenes), test_scenes, EVERY_REGION)
    for name, _ in POOLED_COLUMNS:
        if report.columns[name] is not None:
            assert report.columns[name] == pytest.approx(1.0)
    assert report.total == pytest.approx(1.0)


def test_no_predictions_score_zero(test_scenes):
    report = evaluate([], test_scenes, EVERY_REGION)
    assert report.total == 0.0
    assert all(value in (0.0, None) for value in report.columns.values())


def test_ap_ignores_monotone_rescaling(test_scenes):
    rng = np.random.default_rng(3)
    predictions = []
    for scene in test_scenes:
        for r, region in enumerate(scene.regions):
            shift = 0.0 if rng.random() < 0.6 else 40.0
            pose = ground_truth_pose(scene, region.person, shift=shift)
            pose = PersonPose(joints=tuple(
                None if entry is None else entry._replace(confidence=float(rng.uniform(0.05, 1.0)))
                for entry in pose.joints))
            predictions.append(PredictedPose(scene.scene_id, r, pose))
    baseline = evaluate(predictions, test_scenes, EVERY_REGION)

    for _ in range(100):
        scale, power, offset = rng.uniform(0.1, 5.0), rng.uniform(0.5, 3.0), rng.uniform(-3.0, 3.0)
        rescaled = [p._replace(pose=PersonPose(joints=tuple(
            None if entry is None else entry._replace(confidence=scale * entry.confidence ** power + offset)
            for entry in p.pose.joints))) for p in predictions]
        report = evaluate(rescaled, test_scenes, EVERY_REGION)
        assert report.columns == baseline.columns


def test_precision_recall_example():
    pr = JointPR(confidences=np.array([0.9, 0.8]), true_positive=np.array([True, False]), n_gt=2)
    assert pr.curve() == [(1.0, 0.5), (0.5, 0.5)]
    assert average_precision(pr) == pytest.approx(0.5)


def test_envelope_uses_later_precision():
    pr = JointPR(confidences=np.array([0.9, 0.8, 0.7]), true_positive=np.array([False, True, True]), n_gt=2)
    # precision 2/3 at full recall lifts the first half as well
    assert average_precision(pr) == pytest.approx(2.0 / 3.0)


def test_lowest_ranked_false_positive_never_raises_ap():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        confidences = rng.uniform(0.0, 1.0, n)
        true_positive = rng.random(n) < 0.5
        n_gt = int(true_positive.sum()) + int(rng.integers(0, 5))
        if n_gt == 0:
            continue
        order = np.argsort(-confidences)
        confidences, true_positive = confidences[order], true_positive[order]
        pr = JointPR(confidences=confidences, true_positive=true_positive, n_gt=n_gt)
        extended = JointPR(confidences=np.append(confidences, confidences.min() - 0.1),
                           true_positive=np.append(true_positive, False), n_gt=n_gt)
        assert average_precision(extended) <= average_precision(pr) + 1e-12


def test_undefined_without_ground_truth():
    empty = JointPR(confidences=np.zeros(0), true_positive=np.zeros(0, dtype=bool), n_gt=0)
    assert average_precision(empty) is None
    unmatched = JointPR(confidences=np.array([0.4]), true_positive=np.array([False]), n_gt=0)
    assert average_precision(unmatched) is None

    prs = {joint: JointPR(confidences=np.array([0.5]), true_positive=np.array([True]), n_gt=1)
           for joint in JointType}
    prs[JointType.HEAD] = prs[JointType.NECK] = empty
    report = map_report(prs)
    assert report.columns['head'] is None
    assert report.total == pytest.approx(1.0)


def test_pool_merges_rankings():
    a = JointPR(confidences=np.array([0.9, 0.2]), true_positive=np.array([True, False]), n_gt=1)
    b = JointPR(confidences=np.array([0.5]), true_positive=np.array([True]), n_gt=2)
    pooled = pool([a, b])
    np.testing.assert_array_equal(pooled.confidences, [0.9, 0.5, 0.2])
    np.testing.assert_array_equal(pooled.true_positive, [True, True, False])
    assert pooled.n_gt == 3


def test_head_only_predictions(test_scenes):
    predictions = [PredictedPose(p.scene_id, p.region_id,
                                 PersonPose.from_mapping({j: p.pose.get(j) for j in (JointType.HEAD,)
                                                          if p.pose.get(j) is not None}))
                   for p in perfect_predictions(test_scenes)]
    report = evaluate(predictions, test_scenes, EVERY_REGION)
    assert report.columns['head'] > 0.0
    assert report.per_joint[JointType.HEAD] == pytest.approx(1.0)
    assert report.columns['ankle'] == 0.0


def test_duplicate_prediction_is_false_positive(scene_factory, person_factory):
    scene = scene_factory([person_factory(160, 120)])
    pose = ground_truth_pose(scene, 0, joints=[JointType.HEAD])
    duplicate = ground_truth_pose(scene, 0, joints=[JointType.HEAD], confidence=0.5, shift=1.0)
    prs = match_and_score([PredictedPose(scene.scene_id, 0, pose), PredictedPose(scene.scene_id, 0, duplicate)],
                          [scene], EVERY_REGION)
    np.testing.assert_array_equal(prs[JointType.HEAD].true_positive, [True, False])


def test_far_prediction_does_not_match(scene_factory, person_factory):
    scene = scene_factory([person_factory(160, 120)])
    head_size = scene.persons[0].head_size
    near = ground_truth_pose(scene, 0, joints=[JointType.HEAD], shift=0.49 * head_size)
    far = ground_truth_pose(scene, 0, joints=[JointType.HEAD], shift=0.51 * head_size)
    for pose, expected in ((near, True), (far, False)):
        prs = match_and_score([PredictedPose(scene.scene_id, 0, pose)], [scene], EVERY_REGION)
        assert bool(prs[JointType.HEAD].true_positive[0]) is expected


def test_small_regions_are_excluded(scene_factory, person_factory):
    persons = [person_factory(80, 120), person_factory(240, 120)]
    regions = [Region(x0=40, y0=40, x1=100, y1=100, person=0), Region(x0=160, y0=20, x1=320, y1=240, person=1)]
    scene = scene_factory(persons, regions=regions)
    predictions = [PredictedPose(scene.scene_id, r, ground_truth_pose(scene, r)) for r in range(2)]
    prs = match_and_score(predictions, [scene], EvalConfig())
    assert prs[JointType.HEAD].n_gt == 1
    assert len(prs[JointType.HEAD].confidences) == 1
    assert map_report(prs).total == pytest.approx(1.0)


def test_unknown_scene_or_region(test_scenes):
    pose = PersonPose.empty()
    with pytest.raises(StructuralError):
        match_and_score([PredictedPose('scene_9999', 0, pose)], test_scenes)
    with pytest.raises(StructuralError):
        match_and_score([PredictedPose(test_scenes[0].scene_id, 99, pose)], test_scenes)
