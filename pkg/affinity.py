"""
Affinity Module

Turns detections into association costs:

- unary costs from detection confidences (after the tau threshold),
- pairwise costs from a trained per-joint-pair classifier whose margins are
  calibrated to probabilities with Platt scaling.

Both costs are log-odds ``log((1 - p) / p)``: negative when the detection
(or the pair) is likely correct.
"""

import itertools
import math
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from classifiers import (
    ClassifierParams, PlattParams, Standardizer, decision_function, fit_classifier,
    platt_fit, platt_probability, stratified_split,
)
from config import TrainingConfig
from errors import DegenerateClassError, ModelIncompleteError, OutOfBoundsError
from logger import JpaLogger, create_jpa_logger
from models import (
    JOINT_COUNT, MAP_CHANNELS, AssociationInstance, Detection,
    JointType, Region, Scene, clamp_probability,
)
from scene_synth import sample_region_candidates, with_score_maps
from utils import sha256_hex

logger = create_jpa_logger('affinity')

SAME_FEATURE_NAMES = ('du', 'dv', 'exp_du', 'exp_dv', 'du_sq', 'dv_sq')
DIFF_FEATURE_NAMES = (('du', 'dv', 'distance', 'angle')
                      + tuple(f'score_a_{c}' for c in range(MAP_CHANNELS))
                      + tuple(f'score_b_{c}' for c in range(MAP_CHANNELS)))

FEATURE_SCHEMA = {
    'same': list(SAME_FEATURE_NAMES),
    'diff': list(DIFF_FEATURE_NAMES),
    'offsets': 'pixels, second minus first in canonical order',
    'exp_normalisation': 'offset divided by region diagonal',
    'angle': 'atan2(dv, du)',
}
FEATURE_SCHEMA_HASH = sha256_hex(FEATURE_SCHEMA)


class PairFeatures(NamedTuple):
    """Feature vector of a detection pair; ``kind`` is 'same' or 'diff'."""
    kind: str
    values: np.ndarray


class PairModel(NamedTuple):
    """Classifier, calibration and standardisation of one joint-type pair."""
    joints: Tuple[int, int]
    classifier: ClassifierParams
    platt: PlattParams
    scaler: Standardizer
    heldout_accuracy: float
    n_positive: int
    n_negative: int


class PairwiseModel(NamedTuple):
    """One PairModel per unordered joint-type pair (same-type pairs included)."""
    pairs: Dict[Tuple[int, int], PairModel]
    feature_schema_hash: str
    classifier: str

    def get(self, joint_a: int, joint_b: int) -> PairModel:
        key = pair_key(joint_a, joint_b)
        if key not in self.pairs:
            raise ModelIncompleteError(f"No pairwise model for {pair_name(key)}",
                                       {'pair': list(pair_name(key).split('-'))})
        return self.pairs[key]

    @property
    def is_complete(self) -> bool:
        return all(key in self.pairs for key in pair_keys())


def pair_key(joint_a: int, joint_b: int) -> Tuple[int, int]:
    a, b = int(joint_a), int(joint_b)
    return (a, b) if a <= b else (b, a)


def pair_keys() -> List[Tuple[int, int]]:
    """All J*(J-1)/2 + J unordered joint-type pairs."""
    return [(a, b) for a in range(JOINT_COUNT) for b in range(a, JOINT_COUNT)]


def pair_name(key: Tuple[int, int]) -> str:
    return f"{JointType(key[0]).joint_name}-{JointType(key[1]).joint_name}"


def threshold_confidence(s: float, tau: float) -> float:
    """Keep confidences at or above ``tau``; zero otherwise."""
    return float(s) if s >= tau else 0.0


def unary_cost(p: float) -> float:
    """Log-odds cost ``log((1 - p) / p)`` of a clamped probability."""
    p = clamp_probability(p)
    return math.log((1.0 - p) / p)


def log_odds_costs(probabilities: np.ndarray) -> np.ndarray:
    """Vectorized :func:`unary_cost`."""
    p = clamp_probability(np.asarray(probabilities, dtype=float))
    return np.log((1.0 - p) / p)


def apply_threshold(detections: Sequence[Detection], tau: float) -> List[Detection]:
    """Apply the tau threshold, drop suppressed detections and re-number ids densely."""
    kept = []
    for detection in detections:
        confidence = threshold_confidence(detection.confidence, tau)
        if confidence > 0.0:
            kept.append(detection._replace(id=len(kept), confidence=confidence))
    return kept


def canonical_pair(d: Detection, d2: Detection) -> Tuple[Detection, Detection]:
    """Order a pair by joint index, then detection id."""
    if (int(d.joint), d.id) <= (int(d2.joint), d2.id):
        return d, d2
    return d2, d


def _score_vector(stack: np.ndarray, detection: Detection) -> np.ndarray:
    _, h, w = stack.shape
    col, row = int(round(detection.u)), int(round(detection.v))
    if not (0 <= col < w and 0 <= row < h):
        raise OutOfBoundsError(
            f"Detection {detection.id} at ({detection.u}, {detection.v}) lies outside the {w}x{h} map",
            {'detection': detection.id})
    return stack[:, row, col]


def extract_features(d: Detection, d2: Detection, stack: np.ndarray) -> PairFeatures:
    """
    Pair features read from the region's (J+1, h, w) map stack.

    Same-type pairs get the offset, the exponential of the offset in units of
    the region diagonal and the squared offset. Different-type pairs get the
    offset, its length and angle, and the score vectors at both locations.

    Raises:
        OutOfBoundsError: a detection lies outside the maps
    """
    first, second = canonical_pair(d, d2)
    score_a = _score_vector(stack, first)
    score_b = _score_vector(stack, second)
    du = second.u - first.u
    dv = second.v - first.v
    if first.joint == second.joint:
        diagonal = math.hypot(stack.shape[2], stack.shape[1])
        values = np.array([du, dv, math.exp(du / diagonal), math.exp(dv / diagonal), du * du, dv * dv])
        return PairFeatures(kind='same', values=values)
    values = np.concatenate([[du, dv, math.hypot(du, dv), math.atan2(dv, du)], score_a, score_b])
    return PairFeatures(kind='diff', values=values)


def _pair_probabilities(pair_model: PairModel, features: np.ndarray) -> np.ndarray:
    standardized = pair_model.scaler.transform(np.atleast_2d(features))
    margins = decision_function(pair_model.classifier, standardized)
    return clamp_probability(platt_probability(pair_model.platt, margins))


def pairwise_probability(model: PairwiseModel, d: Detection, d2: Detection, stack: np.ndarray) -> float:
    """
    Calibrated probability that two detections belong to the same person.

    Raises:
        ModelIncompleteError: no model for the pair's joint types
    """
    pair_model = model.get(d.joint, d2.joint)
    features = extract_features(d, d2, stack)
    return float(_pair_probabilities(pair_model, features.values)[0])


def pairwise_probability_matrix(model: PairwiseModel, detections: Sequence[Detection],
                                stack: np.ndarray) -> np.ndarray:
    """Symmetric (n, n) matrix of pair probabilities, batched per joint pair."""
    n = len(detections)
    probabilities = np.full((n, n), 0.5)
    grouped: Dict[Tuple[int, int], List[Tuple[int, int, np.ndarray]]] = {}
    for a in range(n):
        for b in range(a + 1, n):
            key = pair_key(detections[a].joint, detections[b].joint)
            features = extract_features(detections[a], detections[b], stack).values
            grouped.setdefault(key, []).append((a, b, features))
    for key, entries in grouped.items():
        pair_model = model.get(*key)
        values = _pair_probabilities(pair_model, np.stack([f for _, _, f in entries]))
        for (a, b, _), p in zip(entries, values):
            probabilities[a, b] = probabilities[b, a] = p
    return probabilities


def build_instance(detections: Sequence[Detection], model: PairwiseModel,
                   stack: np.ndarray) -> AssociationInstance:
    """
    Assemble a region's local association instance.

    Detections are expected to be thresholded already; any zero-confidence
    detection left is dropped. Ids are re-numbered densely.
    """
    kept = [d for d in detections if d.confidence > 0.0]
    kept = [d._replace(id=i) for i, d in enumerate(kept)]
    if not kept:
        return AssociationInstance(detections=(), alpha=np.zeros(0), beta=np.zeros((0, 0)))
    alpha = log_odds_costs([d.confidence for d in kept])
    beta = log_odds_costs(pairwise_probability_matrix(model, kept, stack))
    np.fill_diagonal(beta, 0.0)
    return AssociationInstance(detections=tuple(kept), alpha=alpha, beta=beta)


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

class _PairSamples:
    """Feature rows and labels gathered per joint-type pair."""

    def __init__(self):
        self.features: Dict[Tuple[int, int], List[np.ndarray]] = {key: [] for key in pair_keys()}
        self.labels: Dict[Tuple[int, int], List[int]] = {key: [] for key in pair_keys()}

    def add(self, d: Detection, d2: Detection, stack: np.ndarray, positive: bool) -> None:
        key = pair_key(d.joint, d2.joint)
        self.features[key].append(extract_features(d, d2, stack).values)
        self.labels[key].append(1 if positive else -1)

    def arrays(self, key: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        rows = self.features[key]
        if not rows:
            dim = len(SAME_FEATURE_NAMES) if key[0] == key[1] else len(DIFF_FEATURE_NAMES)
            return np.zeros((0, dim)), np.zeros(0, dtype=int)
        return np.stack(rows), np.asarray(self.labels[key], dtype=int)


def _matching_persons(detection: Detection, scene: Scene, region: Region,
                      match_fraction: float) -> FrozenSet[int]:
    """Persons whose visible joint of the detection's type lies within the match radius."""
    u = detection.u + region.x0
    v = detection.v + region.y0
    matches = set()
    for p, person in enumerate(scene.persons):
        gt = person.joints[detection.joint]
        if gt.visible and math.hypot(gt.u - u, gt.v - v) <= match_fraction * person.head_size:
            matches.add(p)
    return frozenset(matches)


def _annotation_point(gt_u: float, gt_v: float, offset: np.ndarray, region: Region) -> Optional[Tuple[int, int]]:
    col = int(round(gt_u - region.x0 + offset[0]))
    row = int(round(gt_v - region.y0 + offset[1]))
    if 0 <= col < region.width and 0 <= row < region.height:
        return col, row
    return None


def _annotation_detections(scene: Scene, region_index: int, stack: np.ndarray, cfg: TrainingConfig,
                           rng: np.random.Generator) -> List[Tuple[Detection, Detection]]:
    """Jittered pairs built from the annotated joints of the persons in a region."""
    region = scene.regions[region_index]
    points: List[Tuple[int, int, Detection]] = []   # (person, joint, detection)
    pairs: List[Tuple[Detection, Detection]] = []
    ids = itertools.count()

    def make(joint: int, col: int, row: int) -> Detection:
        return Detection(id=next(ids), joint=JointType(joint), u=float(col), v=float(row),
                         confidence=float(stack[joint, row, col]))

    for p, person in enumerate(scene.persons):
        radius = cfg.match_fraction * person.head_size
        for joint in JointType:
            gt = person.joints[joint]
            if not gt.visible:
                continue
            near = _annotation_point(gt.u, gt.v, rng.normal(0.0, cfg.annotation_jitter * radius, 2), region)
            if near is None:
                continue
            d = make(joint, *near)
            points.append((p, int(joint), d))

            # same-joint pair: a second near copy and a far one
            second = _annotation_point(gt.u, gt.v, rng.normal(0.0, cfg.annotation_jitter * radius, 2), region)
            angle = rng.uniform(-math.pi, math.pi)
            far_distance = rng.uniform(1.5, 4.0) * max(radius, 1.0)
            far = _annotation_point(gt.u, gt.v, far_distance * np.array([math.cos(angle), math.sin(angle)]),
                                    region)
            for other in (second, far):
                if other is not None:
                    pairs.append((d, make(joint, *other)))

    for i in range(len(points)):
        for k in range(i + 1, len(points)):
            pairs.append((points[i][2], points[k][2]))
    return pairs


def collect_training_pairs(scenes: Sequence[Scene], cfg: TrainingConfig) -> _PairSamples:
    """Gather labelled pair features from candidates and annotations of every region."""
    samples = _PairSamples()
    for scene_index, scene in enumerate(scenes):
        scene = with_score_maps(scene)
        for region_index, region in enumerate(scene.regions):
            stack = scene.score_maps[region_index]
            candidates = sample_region_candidates(stack, cfg.n_candidates, cfg.nms_radius)
            annotated = _annotation_detections(
                scene, region_index, stack, cfg, np.random.default_rng([cfg.seed, scene_index, region_index]))

            pairs = [(candidates[a], candidates[b])
                     for a in range(len(candidates)) for b in range(a + 1, len(candidates))]
            pairs.extend(annotated)
            match_cache: Dict[Tuple[int, int, int], FrozenSet[int]] = {}
            for d, d2 in pairs:
                matches = []
                for det in (d, d2):
                    cache_key = (int(det.joint), int(det.u), int(det.v))
                    if cache_key not in match_cache:
                        match_cache[cache_key] = _matching_persons(det, scene, region, cfg.match_fraction)
                    matches.append(match_cache[cache_key])
                samples.add(d, d2, stack, positive=bool(matches[0] & matches[1]))
    return samples


def _balance(labels: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of a class-balanced subsample, at most ``cap`` per class."""
    positives = np.flatnonzero(labels > 0)
    negatives = np.flatnonzero(labels < 0)
    k = min(positives.size, negatives.size, cap)
    chosen = np.concatenate([rng.choice(positives, size=k, replace=False),
                             rng.choice(negatives, size=k, replace=False)])
    return np.sort(chosen)


def fit_pair_model(key: Tuple[int, int], features: np.ndarray, labels: np.ndarray,
                   cfg: TrainingConfig) -> PairModel:
    """
    Fit classifier and calibration of one joint-type pair.

    The classifier is fitted on the training split; Platt parameters and the
    reported accuracy come from the held-out split.

    Raises:
        DegenerateClassError: one class missing (names the pair)
    """
    name = pair_name(key)
    n_positive = int(np.sum(labels > 0))
    n_negative = int(np.sum(labels < 0))
    if n_positive == 0 or n_negative == 0:
        raise DegenerateClassError(
            f"Joint pair {name} has {n_positive} positive and {n_negative} negative samples",
            pair=tuple(name.split('-')))

    rng = np.random.default_rng([cfg.seed, key[0], key[1]])
    chosen = _balance(labels, cfg.max_samples_per_class, rng)
    features, labels = features[chosen], labels[chosen]
    try:
        train, holdout = stratified_split(labels, cfg.holdout_fraction, rng)
    except DegenerateClassError as e:
        raise DegenerateClassError(f"Joint pair {name}: {e.message}", pair=tuple(name.split('-'))) from e

    scaler = Standardizer.fit(features[train])
    classifier = fit_classifier(cfg.classifier, scaler.transform(features[train]), labels[train],
                                l2=cfg.l2, c=cfg.svm_c, gamma=cfg.rbf_gamma, rng=rng)
    margins = decision_function(classifier, scaler.transform(features[holdout]))
    platt = platt_fit(margins, labels[holdout])
    if platt.direction < 0:
        logger.warning(f"Pair {name}: calibrated probability falls with the margin (direction -1 in accuracy table)")

    probabilities = platt_probability(platt, margins)
    accuracy = float(np.mean((probabilities >= 0.5) == (labels[holdout] > 0)))
    return PairModel(joints=key, classifier=classifier, platt=platt, scaler=scaler,
                     heldout_accuracy=accuracy, n_positive=n_positive, n_negative=n_negative)


def train_pairwise(scenes: Sequence[Scene], cfg: TrainingConfig) -> PairwiseModel:
    """
    Train the pairwise model on annotated scenes.

    Raises:
        DegenerateClassError: some joint pair lacks positives or negatives
    """
    if not scenes or not any(scene.persons for scene in scenes):
        raise DegenerateClassError("Training needs at least one scene with one person")

    op_logger = JpaLogger('affinity.training')
    op_logger.start_operation("pairwise training", f"{len(scenes)} scenes, classifier={cfg.classifier}")
    samples = collect_training_pairs(scenes, cfg)

    pairs: Dict[Tuple[int, int], PairModel] = {}
    keys = pair_keys()
    for index, key in enumerate(keys, start=1):
        features, labels = samples.arrays(key)
        pairs[key] = fit_pair_model(key, features, labels, cfg)
        if index % 35 == 0:
            op_logger.progress(index, len(keys), "pair models")

    model = PairwiseModel(pairs=pairs, feature_schema_hash=FEATURE_SCHEMA_HASH, classifier=cfg.classifier)
    mean_accuracy = float(np.mean([m.heldout_accuracy for m in pairs.values()]))
    op_logger.end_operation("pairwise training", True, f"mean held-out accuracy {mean_accuracy:.3f}")
    return model


def accuracy_rows(model: PairwiseModel) -> List[Tuple[str, int, int, float, int]]:
    """
    (pair name, positives, negatives, held-out accuracy, Platt direction) in
    canonical pair order. A direction of -1 marks a pair whose calibrated
    probability falls as the classifier margin rises.
    """
    return [(pair_name(key), model.pairs[key].n_positive, model.pairs[key].n_negative,
             model.pairs[key].heldout_accuracy, model.pairs[key].platt.direction)
            for key in pair_keys() if key in model.pairs]

