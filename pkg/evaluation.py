"""
Evaluation Module

Scores predicted poses against ground truth with per-joint average
precision:

- predictions of a joint type are ranked by confidence across all scenes,
- each is greedily matched to the nearest unmatched visible ground-truth
  joint of that type in its scene, within a radius proportional to that
  person's head segment,
- AP is the area under the precision envelope (all-points interpolation).

Left and right joints (and head with neck) are pooled into seven report
columns before AP is taken.
"""

import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from config import EvalConfig
from errors import StructuralError
from logger import create_jpa_logger
from models import POOLED_COLUMNS, JointPR, JointType, PredictedPose, Scene

logger = create_jpa_logger('evaluation')


class MapReport(NamedTuple):
    """Pooled AP columns (None when undefined), their mean and per-joint APs."""
    columns: Dict[str, Optional[float]]
    total: Optional[float]
    per_joint: Dict[JointType, Optional[float]]


def _kept_persons(scene: Scene, cfg: EvalConfig) -> Set[int]:
    """Persons whose region passes the minimum area rule."""
    small = {region.person for region in scene.regions if region.area < cfg.min_region_area}
    return {p for p in range(len(scene.persons)) if p not in small}


def match_and_score(predictions: Sequence[PredictedPose], scenes: Sequence[Scene],
                    cfg: Optional[EvalConfig] = None) -> Dict[JointType, JointPR]:
    """
    Greedy matching of predicted joints to ground truth.

    Args:
        predictions: Poses with per-joint confidences, image coordinates
        scenes: Ground-truth scenes the predictions refer to
        cfg: Match radius fraction and minimum region area

    Returns:
        Ranked true/false positive flags per joint type

    Raises:
        StructuralError: a prediction names an unknown scene or region
    """
    cfg = cfg or EvalConfig()
    by_id = {scene.scene_id: scene for scene in scenes}
    kept = {scene.scene_id: _kept_persons(scene, cfg) for scene in scenes}

    # (confidence, scene id, u, v) per joint, in prediction order
    ranked: Dict[JointType, List[Tuple[float, str, float, float]]] = {joint: [] for joint in JointType}
    dropped = 0
    for prediction in predictions:
        scene = by_id.get(prediction.scene_id)
        if scene is None:
            raise StructuralError(f"Prediction refers to unknown scene {prediction.scene_id}",
                                  {'scene_id': prediction.scene_id})
        if not 0 <= prediction.region_id < len(scene.regions):
            raise StructuralError(f"Prediction refers to unknown region {prediction.region_id} of "
                                  f"{prediction.scene_id}", {'scene_id': prediction.scene_id})
        if scene.regions[prediction.region_id].area < cfg.min_region_area:
            dropped += 1
            continue
        for joint in prediction.pose.visible_joints():
            entry = prediction.pose.get(joint)
            ranked[joint].append((entry.confidence, prediction.scene_id, entry.u, entry.v))
    if dropped:
        logger.debug(f"{dropped} predictions of small regions excluded")

    results: Dict[JointType, JointPR] = {}
    for joint in JointType:
        entries = ranked[joint]
        confidences = np.array([entry[0] for entry in entries], dtype=float)
        order = np.argsort(-confidences, kind='stable')
        matched: Set[Tuple[str, int]] = set()
        true_positive = np.zeros(len(entries), dtype=bool)

        for rank, index in enumerate(order):
            _, scene_id, u, v = entries[index]
            scene = by_id[scene_id]
            best: Optional[Tuple[float, int]] = None
            for p in sorted(kept[scene_id]):
                gt = scene.persons[p].joints[joint]
                if not gt.visible or (scene_id, p) in matched:
                    continue
                distance = math.hypot(gt.u - u, gt.v - v)
                if distance <= cfg.match_fraction * scene.persons[p].head_size:
                    if best is None or distance < best[0]:
                        best = (distance, p)
            if best is not None:
                matched.add((scene_id, best[1]))
                true_positive[rank] = True

        n_gt = sum(1 for scene in scenes for p in kept[scene.scene_id]
                   if scene.persons[p].joints[joint].visible)
        results[joint] = JointPR(confidences=confidences[order], true_positive=true_positive, n_gt=n_gt)
    return results


def average_precision(pr: JointPR) -> Optional[float]:
    """
    Area under the precision envelope over recall.

    Returns:
        AP in [0, 1], or None when there is no ground truth
    """
    if pr.n_gt == 0:
        return None
    if len(pr.true_positive) == 0:
        return 0.0
    tp = np.cumsum(pr.true_positive.astype(float))
    recall = tp / pr.n_gt
    precision = tp / np.arange(1, len(tp) + 1)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def pool(prs: Sequence[JointPR]) -> JointPR:
    """Merge ranked predictions of several joint types into one ranking."""
    confidences = np.concatenate([pr.confidences for pr in prs]) if prs else np.zeros(0)
    flags = np.concatenate([pr.true_positive for pr in prs]) if prs else np.zeros(0, dtype=bool)
    order = np.argsort(-confidences, kind='stable')
    return JointPR(confidences=confidences[order], true_positive=flags[order],
                   n_gt=sum(pr.n_gt for pr in prs))


def map_report(prs: Dict[JointType, JointPR]) -> MapReport:
    """
    Seven pooled AP columns plus their mean.

    Columns without ground truth are undefined and left out of the mean
    with a warning.

    Raises:
        StructuralError: a joint type has no PR data
    """
    missing = [joint.joint_name for joint in JointType if joint not in prs]
    if missing:
        raise StructuralError(f"PR data missing for joints: {missing}")

    columns: Dict[str, Optional[float]] = {}
    for name, joints in POOLED_COLUMNS:
        columns[name] = average_precision(pool([prs[joint] for joint in joints]))
    defined = [value for value in columns.values() if value is not None]
    undefined = [name for name, value in columns.items() if value is None]
    if undefined:
        logger.warning(f"AP undefined (no ground truth) for {undefined}; excluded from Total")
    total = float(np.mean(defined)) if defined else None
    per_joint = {joint: average_precision(prs[joint]) for joint in JointType}
    return MapReport(columns=columns, total=total, per_joint=per_joint)


def evaluate(predictions: Sequence[PredictedPose], scenes: Sequence[Scene],
             cfg: Optional[EvalConfig] = None) -> MapReport:
    """Match, score and pool in one call."""
    return map_report(match_and_score(predictions, scenes, cfg))
