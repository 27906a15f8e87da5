"""
Global Solver Module

Exact solver for the joint labelling and partitioning problem over untyped
proposals, at toy scale only:

    min  <alpha, x> + <beta, z>
    s.t. every proposal carries at most one label,
         grouped proposals are labelled,
         grouping is transitive,
         z = x * x * y,
         optionally: all labelled proposals form one person.

Proposals are visited in index order; each is suppressed or labelled and put
into an existing or a new cluster (restricted growth, so every partition is
generated once). An admissible bound prunes the search. An exhaustive
constrained enumerator, the pre-typed cross-check builder and the local
versus global runtime benchmark live here too.
"""

import itertools
import math
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from affinity import build_instance, pairwise_probability
from config import BenchConfig, TrainingConfig
from errors import InstanceTooLargeError, StructuralError
from ljpa_solver import solve_exact
from logger import JpaLogger, OperationTimer, create_jpa_logger
from models import (
    PROBABILITY_EPSILON, AssociationInstance, Detection, GlobalInstance, GlobalSolution,
    JointType, PersonPose, PoseJoint, Region, Scene, clamp_probability, global_objective,
)
from scene_synth import sample_region_candidates, with_score_maps
from utils import median_or_none

logger = create_jpa_logger('global_solver')

MAX_PROPOSALS = 10
MAX_LABELS = 4
BRUTEFORCE_MAX_PROPOSALS = 6

SolutionKey = Tuple[float, Tuple[int, ...], Tuple[int, ...]]


def _log_odds(p: np.ndarray) -> np.ndarray:
    p = clamp_probability(np.asarray(p, dtype=float))
    return np.log((1.0 - p) / p)


def build_global_instance(proposals, p_dj, p_pair, single_person: bool = False) -> GlobalInstance:
    """
    Global instance from label and pair probabilities.

    Probabilities are clamped before taking log-odds. ``p_pair`` is read on
    ``d < e`` and mirrored so that ``p_pair[d, e, j, k] == p_pair[e, d, k, j]``;
    entries with ``d == e`` are ignored.

    Raises:
        StructuralError: inconsistent shapes
    """
    proposals = np.asarray(proposals, dtype=float).reshape(-1, 2)
    d_count = proposals.shape[0]
    p_dj = clamp_probability(np.asarray(p_dj, dtype=float))
    if p_dj.ndim != 2 or p_dj.shape[0] != d_count:
        raise StructuralError(f"p_dj has shape {p_dj.shape} for {d_count} proposals")
    j_count = p_dj.shape[1]
    p_pair = np.asarray(p_pair, dtype=float)
    if p_pair.shape != (d_count, d_count, j_count, j_count):
        raise StructuralError(f"p_pair has shape {p_pair.shape}, expected {(d_count, d_count, j_count, j_count)}")

    mirrored = np.full_like(p_pair, 0.5)
    for d in range(d_count):
        for e in range(d + 1, d_count):
            mirrored[d, e] = p_pair[d, e]
            mirrored[e, d] = p_pair[d, e].T
    mirrored = clamp_probability(mirrored)
    beta = _log_odds(mirrored)
    idx = np.arange(d_count)
    beta[idx, idx] = 0.0
    return GlobalInstance(proposals=proposals, p_dj=p_dj, p_pair=mirrored, alpha=_log_odds(p_dj),
                          beta=beta, single_person=single_person)


def _check_caps(inst: GlobalInstance, max_proposals: int, max_labels: int) -> None:
    if inst.size > max_proposals:
        raise InstanceTooLargeError(f"Global instance has {inst.size} proposals ({inst.variable_count} variables), "
                                    f"cap is {max_proposals}",
                                    size=inst.size, cap=max_proposals)
    if inst.joint_count > max_labels:
        raise InstanceTooLargeError(f"Global instance has {inst.joint_count} labels, cap is {max_labels}",
                                    size=inst.joint_count, cap=max_labels)


def _solution_key(inst: GlobalInstance, labels: Sequence[int], assignment: Sequence[int]) -> Tuple[SolutionKey, GlobalSolution]:
    solution = GlobalSolution.from_assignment(inst, labels, assignment)
    rows, cols = np.triu_indices(inst.size, k=1)
    key = (solution.objective, tuple(int(v) for v in solution.x.ravel()),
           tuple(int(v) for v in solution.y[rows, cols]))
    return key, solution


def _slack(incumbent: float) -> float:
    return 1e-9 * (1.0 + abs(incumbent))


class _GlobalSearch:
    """Depth-first label-and-cluster search with an admissible bound."""

    def __init__(self, inst: GlobalInstance):
        self.inst = inst
        d_count = inst.size
        self.negative_beta = np.minimum(inst.beta, 0.0)
        # best pair cost a remaining proposal can get from another remaining one, per own label
        negmin = self.negative_beta.min(axis=3)
        idx = np.arange(d_count)
        negmin[idx, idx] = 0.0
        self.remaining_half = []
        for depth in range(d_count + 1):
            block = negmin[:, depth:, :].sum(axis=1)
            self.remaining_half.append(0.5 * block)
        self.nodes = 0

        empty = [-1] * d_count
        self.best_key, self.best = _solution_key(inst, empty, empty)

    def run(self) -> None:
        d_count = self.inst.size
        self._visit(0, [-1] * d_count, [-1] * d_count, 0, 0.0, np.array(self.inst.alpha, dtype=float))

    def _bound(self, depth: int, cost: float, reach: np.ndarray) -> float:
        if depth == self.inst.size:
            return cost
        best = (reach[depth:] + self.remaining_half[depth][depth:]).min(axis=1)
        return cost + float(np.minimum(best, 0.0).sum())

    def _visit(self, depth: int, labels: List[int], assignment: List[int], clusters: int,
               cost: float, reach: np.ndarray) -> None:
        self.nodes += 1
        incumbent = self.best_key[0]
        if self._bound(depth, cost, reach) > incumbent + _slack(incumbent):
            return
        if depth == self.inst.size:
            key, solution = _solution_key(self.inst, labels, assignment)
            if key < self.best_key:
                self.best_key, self.best = key, solution
            return

        r = depth
        options = [(0.0, -1, -1)]
        cluster_limit = 1 if self.inst.single_person else clusters + 1
        for j in range(self.inst.joint_count):
            for c in range(min(cluster_limit, clusters + 1)):
                delta = float(self.inst.alpha[r, j])
                for e in range(r):
                    if assignment[e] == c and labels[e] >= 0:
                        delta += float(self.inst.beta[e, r, labels[e], j])
                options.append((delta, j, c))
        options.sort(key=lambda option: option[0])

        for delta, j, c in options:
            labels[r], assignment[r] = j, c
            if j < 0:
                self._visit(depth + 1, labels, assignment, clusters, cost, reach)
            else:
                # placed proposals can only lower later costs by their negative pairs
                next_reach = reach + self.negative_beta[r, :, j, :]
                self._visit(depth + 1, labels, assignment, max(clusters, c + 1), cost + delta, next_reach)
        labels[r], assignment[r] = -1, -1


def solve_global_exact(inst: GlobalInstance, max_proposals: int = MAX_PROPOSALS,
                       max_labels: int = MAX_LABELS) -> GlobalSolution:
    """
    Exact minimizer of the global problem.

    Ties in the objective go to the lexicographically smallest (x, y).

    Raises:
        InstanceTooLargeError: more than ``max_proposals`` proposals or
            ``max_labels`` labels
    """
    _check_caps(inst, max_proposals, max_labels)
    search = _GlobalSearch(inst)
    search.run()
    logger.debug(f"Global solve D={inst.size}, J={inst.joint_count}: {search.nodes} nodes, "
                 f"objective {search.best.objective:.6f}")
    return search.best


@lru_cache(maxsize=None)
def _partition_rows(k: int) -> np.ndarray:
    """Every transitive grouping vector over the pairs of ``k`` items, one per row."""
    pairs = list(itertools.combinations(range(k), 2))
    m = len(pairs)
    if m == 0:
        return np.zeros((1, 0), dtype=np.int8)
    codes = np.arange(1 << m, dtype=np.int64)
    rows = ((codes[:, None] >> np.arange(m, dtype=np.int64)[None, :]) & 1).astype(bool)
    index = {pair: i for i, pair in enumerate(pairs)}
    valid = np.ones(rows.shape[0], dtype=bool)
    for a, b, c in itertools.combinations(range(k), 3):
        ab, bc, ac = rows[:, index[(a, b)]], rows[:, index[(b, c)]], rows[:, index[(a, c)]]
        # any two of the three pairs imply the third
        valid &= ~(ab & bc & ~ac) & ~(ab & ac & ~bc) & ~(ac & bc & ~ab)
    return rows[valid].astype(np.int8)


def _assignment_from_pairs(active: Sequence[int], row: np.ndarray, d_count: int) -> List[int]:
    assignment = [-1] * d_count
    pairs = list(itertools.combinations(range(len(active)), 2))
    next_cluster = 0
    for i, d in enumerate(active):
        for (a, b), grouped in zip(pairs, row):
            if b == i and grouped and assignment[active[a]] >= 0:
                assignment[d] = assignment[active[a]]
                break
        if assignment[d] < 0:
            assignment[d] = next_cluster
            next_cluster += 1
    return assignment


def solve_global_bruteforce(inst: GlobalInstance) -> GlobalSolution:
    """
    Exhaustive constrained enumeration; test oracle.

    Every label-or-suppress vector is combined with every grouping vector of
    its labelled proposals; groupings that break transitivity (or the
    single-person rule) are filtered out.

    Raises:
        InstanceTooLargeError: more than 6 proposals
    """
    _check_caps(inst, BRUTEFORCE_MAX_PROPOSALS, MAX_LABELS)
    d_count, j_count = inst.size, inst.joint_count
    best_key: Optional[SolutionKey] = None
    best: Optional[GlobalSolution] = None
    best_value = math.inf
    shortlist: List[Tuple[List[int], List[int]]] = []

    for labels in itertools.product(range(-1, j_count), repeat=d_count):
        active = [d for d in range(d_count) if labels[d] >= 0]
        rows = _partition_rows(len(active))
        if inst.single_person:
            rows = rows[rows.all(axis=1)] if rows.shape[1] else rows
        pair_costs = np.array([inst.beta[a, b, labels[a], labels[b]]
                               for a, b in itertools.combinations(active, 2)], dtype=float)
        unary = float(sum(inst.alpha[d, labels[d]] for d in active))
        values = unary + (rows @ pair_costs if pair_costs.size else np.zeros(rows.shape[0]))
        best_value = min(best_value, float(values.min()))
        for index in np.flatnonzero(values <= best_value + _slack(best_value)):
            shortlist.append((list(labels), _assignment_from_pairs(active, rows[index], d_count)))

    for labels, assignment in shortlist:
        if global_objective(inst, labels, _pair_matrix(assignment, labels)) > best_value + _slack(best_value):
            continue
        key, solution = _solution_key(inst, labels, assignment)
        if best_key is None or key < best_key:
            best_key, best = key, solution
    return best


def _pair_matrix(assignment: Sequence[int], labels: Sequence[int]) -> np.ndarray:
    n = len(assignment)
    y = np.zeros((n, n), dtype=np.int8)
    for d in range(n):
        for e in range(d + 1, n):
            if labels[d] >= 0 and labels[e] >= 0 and assignment[d] == assignment[e] >= 0:
                y[d, e] = y[e, d] = 1
    return y


def pretyped_instance(inst: AssociationInstance, epsilon: float = PROBABILITY_EPSILON) -> GlobalInstance:
    """
    Single-person global instance equivalent to a local one.

    Each proposal admits exactly the label of its detection's joint type;
    every other label has probability ``epsilon``, and pairs under any other
    label combination are neutral (probability 0.5, cost 0).
    """
    types = sorted({int(d.joint) for d in inst.detections})
    label_of = {joint: index for index, joint in enumerate(types)}
    d_count, j_count = inst.size, max(len(types), 1)
    wrong = math.log((1.0 - epsilon) / epsilon)

    alpha = np.full((d_count, j_count), wrong)
    p_dj = np.full((d_count, j_count), epsilon)
    beta = np.zeros((d_count, d_count, j_count, j_count))
    p_pair = np.full((d_count, d_count, j_count, j_count), 0.5)
    for d, detection in enumerate(inst.detections):
        j = label_of[int(detection.joint)]
        alpha[d, j] = inst.alpha[d]
        p_dj[d, j] = 1.0 / (1.0 + math.exp(inst.alpha[d]))
    for d in range(d_count):
        for e in range(d_count):
            if d == e:
                continue
            j = label_of[int(inst.detections[d].joint)]
            k = label_of[int(inst.detections[e].joint)]
            beta[d, e, j, k] = inst.beta[d, e]
            p_pair[d, e, j, k] = 1.0 / (1.0 + math.exp(inst.beta[d, e]))
    proposals = [detection.location for detection in inst.detections]
    return GlobalInstance(proposals=np.asarray(proposals, dtype=float).reshape(-1, 2),
                          p_dj=clamp_probability(p_dj), p_pair=p_pair, alpha=alpha, beta=beta,
                          single_person=True)


def region_global_instance(detections: Sequence[Detection], joints: Sequence[JointType], model,
                           stack: np.ndarray) -> GlobalInstance:
    """
    Global instance over a region's candidates with their types dropped.

    ``p_dj`` is the score of joint ``joints[j]`` at the proposal; pair
    probabilities come from the pairwise model under every label pair.
    """
    d_count, j_count = len(detections), len(joints)
    p_dj = np.zeros((d_count, j_count))
    for d, detection in enumerate(detections):
        for j, joint in enumerate(joints):
            p_dj[d, j] = stack[int(joint), int(round(detection.v)), int(round(detection.u))]
    p_pair = np.full((d_count, d_count, j_count, j_count), 0.5)
    for d in range(d_count):
        for e in range(d + 1, d_count):
            for j, joint_j in enumerate(joints):
                for k, joint_k in enumerate(joints):
                    a = detections[d]._replace(joint=joint_j)
                    b = detections[e]._replace(joint=joint_k)
                    p_pair[d, e, j, k] = pairwise_probability(model, a, b, stack)
    proposals = [detection.location for detection in detections]
    return build_global_instance(proposals, p_dj, p_pair, single_person=False)


def global_pose(inst: GlobalInstance, sol: GlobalSolution, joints: Sequence[JointType],
                region: Region) -> PersonPose:
    """
    Pose of the cluster whose centroid is nearest the region centre.

    Within the cluster each label keeps its most probable proposal
    (smallest index on ties). Coordinates move to the image frame.
    """
    if not sol.clusters:
        return PersonPose.empty()
    cu, cv = region.center
    centroids = [inst.proposals[list(cluster)].mean(axis=0) for cluster in sol.clusters]
    distances = [math.hypot(c[0] - cu, c[1] - cv) for c in centroids]
    primary = sol.clusters[int(np.argmin(distances))]

    chosen: Dict[int, int] = {}
    for d in primary:
        j = sol.labels[d]
        if j not in chosen or inst.p_dj[d, j] > inst.p_dj[chosen[j], j]:
            chosen[j] = d
    pose = PersonPose.from_mapping({
        joints[j]: PoseJoint(u=float(inst.proposals[d, 0]), v=float(inst.proposals[d, 1]),
                             confidence=float(inst.p_dj[d, j]))
        for j, d in chosen.items()
    })
    return pose.translated(region.x0, region.y0)


class BenchmarkRow(NamedTuple):
    size: int
    solver: str
    median_ms: Optional[float]
    trials: int


def _bench_detections(stack: np.ndarray, size: int, joints: Sequence[JointType],
                      training: TrainingConfig) -> List[Detection]:
    """The ``size`` most confident candidates of the bench joints, ids re-numbered."""
    per_joint = max(1, math.ceil(size / len(joints)))
    candidates = sample_region_candidates(stack, per_joint, training.nms_radius, joints)
    ranked = sorted(candidates, key=lambda d: (-d.confidence, d.id))[:size]
    ranked = sorted(ranked, key=lambda d: d.id)
    return [d._replace(id=i) for i, d in enumerate(ranked)]


def benchmark_local_vs_global(scenes: Sequence[Scene], model, cfg: BenchConfig,
                              training: TrainingConfig) -> List[BenchmarkRow]:
    """
    Median wall-clock of the local and the global solver on the same detections.

    For every size, each of the first ``cfg.scenes`` scenes contributes its
    first region; every instance is solved ``cfg.trials`` times by both
    solvers. Regions with fewer than ``size`` candidates are left out, so a
    row counts only instances of exactly that size (``trials`` may be 0).

    Returns:
        One row per (size, solver), sizes ascending, solvers by name
    """
    joints = tuple(JointType.from_name(name) for name in cfg.joints)
    op_logger = JpaLogger('global_solver.benchmark')
    op_logger.start_operation("local vs global benchmark",
                              f"sizes={list(cfg.sizes)}, joints={list(cfg.joints)}, trials={cfg.trials}")
    rows: List[BenchmarkRow] = []
    for size in sorted(cfg.sizes):
        local_ms: List[float] = []
        global_ms: List[float] = []
        for scene in list(scenes)[:cfg.scenes]:
            scene = with_score_maps(scene)
            if not scene.regions:
                continue
            stack = scene.score_maps[0]
            detections = _bench_detections(stack, size, joints, training)
            if len(detections) < size:
                op_logger.logger.debug(f"{scene.scene_id}: {len(detections)} candidates, below D={size}")
                continue
            local_inst = build_instance(detections, model, stack)
            global_inst = region_global_instance(detections, joints, model, stack)
            for _ in range(cfg.trials):
                with OperationTimer(f"local solve D={size}", quiet=True) as timer:
                    solve_exact(local_inst)
                local_ms.append(timer.elapsed_ms)
                with OperationTimer(f"global solve D={size}", quiet=True) as timer:
                    solve_global_exact(global_inst)
                global_ms.append(timer.elapsed_ms)
        rows.append(BenchmarkRow(size=size, solver='global', median_ms=median_or_none(global_ms),
                                 trials=len(global_ms)))
        rows.append(BenchmarkRow(size=size, solver='local', median_ms=median_or_none(local_ms),
                                 trials=len(local_ms)))
        op_logger.logger.info(f"D={size}: local {rows[-1].median_ms} ms, global {rows[-2].median_ms} ms")
    op_logger.end_operation("local vs global benchmark", True, f"{len(rows)} rows")
    return rows
