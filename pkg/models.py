"""
Data Models Module

Defines the domain types shared by every module: joints, detections, score
maps, poses, scenes, and the local and global association problems together
with their solutions.
"""

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import StructuralError

PROBABILITY_EPSILON = 1e-6


class JointType(IntEnum):
    """The 14 body joints; the integer value is the joint index."""
    HEAD = 0
    NECK = 1
    R_SHOULDER = 2
    L_SHOULDER = 3
    R_ELBOW = 4
    L_ELBOW = 5
    R_WRIST = 6
    L_WRIST = 7
    R_HIP = 8
    L_HIP = 9
    R_KNEE = 10
    L_KNEE = 11
    R_ANKLE = 12
    L_ANKLE = 13

    @property
    def joint_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> 'JointType':
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown joint name: {name}") from None


JOINT_COUNT = len(JointType)
BACKGROUND_CHANNEL = JOINT_COUNT
MAP_CHANNELS = JOINT_COUNT + 1

# Left/right (and head/neck) pooling of the report columns
POOLED_COLUMNS: Tuple[Tuple[str, Tuple[JointType, ...]], ...] = (
    ('head', (JointType.HEAD, JointType.NECK)),
    ('shoulder', (JointType.R_SHOULDER, JointType.L_SHOULDER)),
    ('elbow', (JointType.R_ELBOW, JointType.L_ELBOW)),
    ('wrist', (JointType.R_WRIST, JointType.L_WRIST)),
    ('hip', (JointType.R_HIP, JointType.L_HIP)),
    ('knee', (JointType.R_KNEE, JointType.L_KNEE)),
    ('ankle', (JointType.R_ANKLE, JointType.L_ANKLE)),
)


def clamp_probability(p, epsilon: float = PROBABILITY_EPSILON):
    """Clamp probabilities to [epsilon, 1 - epsilon]; accepts scalars and arrays."""
    if isinstance(p, np.ndarray):
        return np.clip(p, epsilon, 1.0 - epsilon)
    return min(max(float(p), epsilon), 1.0 - epsilon)


def _read_only(array, dtype=None) -> np.ndarray:
    result = np.array(array, dtype=dtype, copy=True)
    result.setflags(write=False)
    return result


class Detection(NamedTuple):
    """A joint candidate with known joint type, in region coordinates."""
    id: int
    joint: JointType
    u: float
    v: float
    confidence: float

    @property
    def location(self) -> Tuple[float, float]:
        return (self.u, self.v)


class ScoreMap(NamedTuple):
    """Confidence grid of one channel (a joint or the background).

    ``values`` is indexed ``[v, u]`` (row-major, rows are image rows).
    """
    channel: int
    values: np.ndarray

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_background(self) -> bool:
        return self.channel == BACKGROUND_CHANNEL


def score_maps_from_stack(stack: np.ndarray) -> Tuple[ScoreMap, ...]:
    """Split a (J+1, h, w) stack into per-channel ScoreMaps."""
    if stack.ndim != 3 or stack.shape[0] != MAP_CHANNELS:
        raise StructuralError(f"Expected ({MAP_CHANNELS}, h, w) map stack, got {stack.shape}")
    return tuple(ScoreMap(channel=c, values=stack[c]) for c in range(MAP_CHANNELS))


class PoseJoint(NamedTuple):
    """One estimated joint."""
    u: float
    v: float
    confidence: float


class PersonPose(NamedTuple):
    """Partial pose: one optional entry per joint type, ``None`` when invisible."""
    joints: Tuple[Optional[PoseJoint], ...]

    @classmethod
    def empty(cls) -> 'PersonPose':
        return cls(joints=(None,) * JOINT_COUNT)

    @classmethod
    def from_mapping(cls, mapping: Dict[int, PoseJoint]) -> 'PersonPose':
        joints: List[Optional[PoseJoint]] = [None] * JOINT_COUNT
        for joint, entry in mapping.items():
            joints[int(joint)] = entry
        return cls(joints=tuple(joints))

    def get(self, joint: int) -> Optional[PoseJoint]:
        return self.joints[int(joint)]

    def visible_joints(self) -> List[JointType]:
        return [JointType(j) for j, entry in enumerate(self.joints) if entry is not None]

    def translated(self, du: float, dv: float) -> 'PersonPose':
        """Shift every joint, e.g. from region frame to image frame."""
        return PersonPose(joints=tuple(
            None if entry is None else PoseJoint(entry.u + du, entry.v + dv, entry.confidence)
            for entry in self.joints
        ))


class GroundTruthJoint(NamedTuple):
    u: float
    v: float
    visible: bool


class GroundTruthPerson(NamedTuple):
    """Annotated person: all 14 joints with visibility flags, image coordinates."""
    joints: Tuple[GroundTruthJoint, ...]

    @property
    def head_size(self) -> float:
        """Head segment length (head to neck), the matching scale."""
        head = self.joints[JointType.HEAD]
        neck = self.joints[JointType.NECK]
        return math.hypot(head.u - neck.u, head.v - neck.v)


class Region(NamedTuple):
    """Axis-aligned person box in image pixels; ``x1``/``y1`` are exclusive."""
    x0: int
    y0: int
    x1: int
    y1: int
    person: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


class RenderParams(NamedTuple):
    """Everything needed to re-render a scene's score maps deterministically."""
    sigma: float
    attenuation: float
    noise_amplitude: float
    strengths: Tuple[Tuple[float, ...], ...]   # per person, per joint
    noise_seeds: Tuple[int, ...]               # per region


class Scene(NamedTuple):
    """Ground truth, regions and (optionally materialized) score maps."""
    scene_id: str
    width: int
    height: int
    persons: Tuple[GroundTruthPerson, ...]
    regions: Tuple[Region, ...]
    render: RenderParams
    score_maps: Optional[Tuple[np.ndarray, ...]] = None   # per region, (J+1, h, w)


class PredictedPose(NamedTuple):
    """A pose estimate with its provenance, in image coordinates."""
    scene_id: str
    region_id: int
    pose: PersonPose


class Violation(NamedTuple):
    """One violated constraint and the variable indices involved."""
    constraint: str
    indices: Tuple[int, ...]
    message: str


class ValidationResult(NamedTuple):
    """Result of a validation operation."""
    success: bool
    errors: List[str]
    warnings: List[str]
    violations: List[Violation]


def upper_pairs(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Canonical pair ordering (lower index first), row-major."""
    return np.triu_indices(n, k=1)


@dataclass(frozen=True, eq=False)
class AssociationInstance:
    """One region's local association problem.

    ``beta`` is stored as a symmetric matrix with a zero diagonal; only the
    upper triangle enters the objective.
    """
    detections: Tuple[Detection, ...]
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        n = len(self.detections)
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float)
        if alpha.shape != (n,):
            raise StructuralError(f"alpha has {alpha.shape[0]} entries for {n} detections")
        if beta.shape != (n, n):
            raise StructuralError(f"beta has shape {beta.shape} for {n} detections")
        if not np.all(np.isfinite(alpha)) or not np.all(np.isfinite(beta)):
            raise StructuralError("alpha and beta must be finite")
        if not np.array_equal(beta, beta.T):
            raise StructuralError("beta must be symmetric")
        for index, detection in enumerate(self.detections):
            if detection.id != index:
                raise StructuralError(f"Detection ids must be dense: position {index} has id {detection.id}")
        beta = beta.copy()
        np.fill_diagonal(beta, 0.0)
        object.__setattr__(self, 'detections', tuple(self.detections))
        object.__setattr__(self, 'alpha', _read_only(alpha))
        object.__setattr__(self, 'beta', _read_only(beta))

    @classmethod
    def from_upper(cls, detections: Sequence[Detection], alpha, beta_upper) -> 'AssociationInstance':
        """Build from pair costs listed in canonical (upper triangle) order."""
        n = len(detections)
        beta = np.zeros((n, n))
        rows, cols = upper_pairs(n)
        beta[rows, cols] = np.asarray(beta_upper, dtype=float)
        beta[cols, rows] = beta[rows, cols]
        return cls(detections=tuple(detections), alpha=alpha, beta=beta)

    @property
    def size(self) -> int:
        return len(self.detections)

    @property
    def variable_count(self) -> int:
        """Selection variables plus pair variables."""
        n = self.size
        return n + n * (n - 1) // 2


def association_objective(inst: AssociationInstance, selected, pair=None) -> float:
    """Canonical objective <alpha, x> + <beta, y> over the upper triangle.

    Every solver reports objectives through this function so equal
    selections always carry bit-identical objectives.
    """
    x = np.asarray(selected, dtype=float)
    if pair is None:
        y = np.outer(x, x)
    else:
        y = np.asarray(pair, dtype=float)
    rows, cols = upper_pairs(inst.size)
    return float(np.dot(inst.alpha, x)) + float(np.dot(inst.beta[rows, cols], y[rows, cols]))


@dataclass(frozen=True, eq=False)
class AssociationSolution:
    """Selection ``x``, symmetric pair matrix ``y`` and objective."""
    selected: np.ndarray
    pair: np.ndarray
    objective: float

    def __post_init__(self):
        object.__setattr__(self, 'selected', _read_only(self.selected, dtype=np.int8))
        object.__setattr__(self, 'pair', _read_only(self.pair, dtype=np.int8))

    @classmethod
    def from_selection(cls, inst: AssociationInstance, selected) -> 'AssociationSolution':
        """Solution whose pair variables are x AND x."""
        x = np.asarray(selected, dtype=np.int8).reshape(-1)
        if x.shape != (inst.size,):
            raise StructuralError(f"Selection has {x.shape[0]} entries for {inst.size} detections")
        y = np.outer(x, x).astype(np.int8)
        np.fill_diagonal(y, 0)
        return cls(selected=x, pair=y, objective=association_objective(inst, x, y))

    @property
    def selected_ids(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.selected)]


@dataclass(frozen=True, eq=False)
class GlobalInstance:
    """Joint labelling / partitioning problem over untyped proposals.

    ``p_pair[d, e, j, k]`` is the probability that proposals d and e belong
    to the same person given labels j and k; the array is stored
    symmetrically so ``p_pair[d, e, j, k] == p_pair[e, d, k, j]``.
    """
    proposals: np.ndarray
    p_dj: np.ndarray
    p_pair: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    single_person: bool = False

    def __post_init__(self):
        proposals = np.asarray(self.proposals, dtype=float).reshape(-1, 2)
        d = proposals.shape[0]
        p_dj = np.asarray(self.p_dj, dtype=float)
        if p_dj.ndim != 2 or p_dj.shape[0] != d:
            raise StructuralError(f"p_dj has shape {p_dj.shape} for {d} proposals")
        j = p_dj.shape[1]
        for name in ('p_pair', 'beta'):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (d, d, j, j):
                raise StructuralError(f"{name} has shape {value.shape}, expected {(d, d, j, j)}")
        if np.asarray(self.alpha).shape != (d, j):
            raise StructuralError(f"alpha has shape {np.asarray(self.alpha).shape}, expected {(d, j)}")
        if np.any(p_dj <= 0.0) or np.any(p_dj >= 1.0):
            raise StructuralError("p_dj must lie strictly inside (0, 1)")
        object.__setattr__(self, 'proposals', _read_only(proposals))
        object.__setattr__(self, 'p_dj', _read_only(p_dj))
        object.__setattr__(self, 'p_pair', _read_only(self.p_pair, dtype=float))
        object.__setattr__(self, 'alpha', _read_only(self.alpha, dtype=float))
        object.__setattr__(self, 'beta', _read_only(self.beta, dtype=float))
        object.__setattr__(self, 'single_person', bool(self.single_person))

    @property
    def size(self) -> int:
        return int(self.proposals.shape[0])

    @property
    def joint_count(self) -> int:
        return int(self.p_dj.shape[1])

    @property
    def variable_count(self) -> int:
        d, j = self.size, self.joint_count
        pairs = d * (d - 1) // 2
        return d * j + pairs + pairs * j * j


def global_objective(inst: GlobalInstance, labels: Sequence[int], pair) -> float:
    """Canonical objective <alpha, x> + <beta, z> with z = x x y."""
    labels = [int(label) for label in labels]
    y = np.asarray(pair)
    unary = 0.0
    for d, label in enumerate(labels):
        if label >= 0:
            unary += float(inst.alpha[d, label])
    binary = 0.0
    for d in range(inst.size):
        if labels[d] < 0:
            continue
        for e in range(d + 1, inst.size):
            if labels[e] >= 0 and y[d, e]:
                binary += float(inst.beta[d, e, labels[d], labels[e]])
    return unary + binary


@dataclass(frozen=True, eq=False)
class GlobalSolution:
    """Labels (``-1`` = suppressed), x, y, z, objective and clusters."""
    labels: Tuple[int, ...]
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    clusters: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, 'labels', tuple(int(label) for label in self.labels))
        object.__setattr__(self, 'x', _read_only(self.x, dtype=np.int8))
        object.__setattr__(self, 'y', _read_only(self.y, dtype=np.int8))
        object.__setattr__(self, 'z', _read_only(self.z, dtype=np.int8))
        object.__setattr__(self, 'clusters', tuple(tuple(int(m) for m in c) for c in self.clusters))

    @classmethod
    def from_assignment(cls, inst: GlobalInstance, labels: Sequence[int],
                        assignment: Sequence[int]) -> 'GlobalSolution':
        """Build every variable block from labels and cluster ids (``-1`` = none)."""
        d_count, j_count = inst.size, inst.joint_count
        labels = [int(label) for label in labels]
        assignment = [int(a) for a in assignment]
        if len(labels) != d_count or len(assignment) != d_count:
            raise StructuralError("labels and assignment must have one entry per proposal")
        x = np.zeros((d_count, j_count), dtype=np.int8)
        for d, label in enumerate(labels):
            if label >= 0:
                x[d, label] = 1
        y = np.zeros((d_count, d_count), dtype=np.int8)
        for d in range(d_count):
            for e in range(d + 1, d_count):
                if labels[d] >= 0 and labels[e] >= 0 and assignment[d] == assignment[e] >= 0:
                    y[d, e] = y[e, d] = 1
        z = np.zeros((d_count, d_count, j_count, j_count), dtype=np.int8)
        for d in range(d_count):
            for e in range(d_count):
                if d != e and y[d, e]:
                    z[d, e, labels[d], labels[e]] = 1
        groups: Dict[int, List[int]] = {}
        for d, a in enumerate(assignment):
            if labels[d] >= 0 and a >= 0:
                groups.setdefault(a, []).append(d)
        clusters = tuple(sorted(tuple(members) for members in groups.values()))
        return cls(labels=tuple(labels), x=x, y=y, z=z,
                   objective=global_objective(inst, labels, y), clusters=clusters)


class JointPR(NamedTuple):
    """Ranked predictions of one joint (or pooled column) for AP."""
    confidences: np.ndarray   # descending
    true_positive: np.ndarray  # bool, aligned with confidences
    n_gt: int

    def curve(self) -> List[Tuple[float, float]]:
        """(precision, recall) after each ranked prediction."""
        if self.n_gt == 0:
            return []
        tp = np.cumsum(self.true_positive.astype(int))
        ranks = np.arange(1, len(self.true_positive) + 1)
        return [(float(t / r), float(t / self.n_gt)) for t, r in zip(tp, ranks)]
