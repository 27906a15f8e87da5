"""
Local Association Solver Module

Exact solver for one region's joint-to-person association problem:

    min  <alpha, x> + <beta, y>
    s.t. y[d, d'] <= x[d], y[d, d'] <= x[d']      (pairs need both detections)
         x[d] + x[d'] - 1 <= y[d, d']            (selected detections share the person)
         transitivity of y

The last two constraint families force ``y = x AND x``, so the problem is
a quadratic unconstrained binary program over ``x`` alone. It is solved by
depth-first branch-and-bound after exact persistency fixing; an exhaustive
enumerator serves as the test oracle.
"""

import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from errors import InstanceTooLargeError
from logger import create_jpa_logger
from models import (
    AssociationInstance, AssociationSolution, Detection, JointType, PersonPose, PoseJoint, Region,
    association_objective, upper_pairs,
)

logger = create_jpa_logger('ljpa_solver')

DEFAULT_MAX_DETECTIONS = 200
BRUTEFORCE_MAX_DETECTIONS = 20
_CHUNK_BITS = 16

FREE = -1


class QuadraticForm(NamedTuple):
    """``sum_d a_d x_d + sum_{d<d'} b_dd' x_d x_d'`` with symmetric ``b``."""
    linear: np.ndarray
    quadratic: np.ndarray

    @property
    def size(self) -> int:
        return int(self.linear.shape[0])

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.linear @ x + 0.5 * x @ self.quadratic @ x)

    def values(self, xs: np.ndarray) -> np.ndarray:
        """Values of many selections, one per row."""
        xs = np.asarray(xs, dtype=float)
        return xs @ self.linear + 0.5 * np.einsum('ij,jk,ik->i', xs, self.quadratic, xs)


class SolveStats(NamedTuple):
    """Search statistics of one exact solve."""
    nodes: int
    pruned: int
    fixed_zero: int
    fixed_one: int


def reduce_to_qubo(inst: AssociationInstance) -> QuadraticForm:
    """
    Eliminate the pair variables.

    With ``y = x AND x`` the objective is ``sum a_d x_d + sum_{d<d'} b x_d x_d'``
    with ``a = alpha`` and ``b = beta``; transitivity then holds trivially.
    """
    quadratic = np.array(inst.beta, dtype=float)
    np.fill_diagonal(quadratic, 0.0)
    return QuadraticForm(linear=np.array(inst.alpha, dtype=float), quadratic=quadratic)


def _check_cap(inst: AssociationInstance, cap: int) -> None:
    if inst.size > cap:
        raise InstanceTooLargeError(
            f"Instance has {inst.size} detections ({inst.variable_count} variables), "
            f"exact solver cap is {cap}; lower the candidate count or raise tau", size=inst.size, cap=cap)


def persistency_fixing(form: QuadraticForm) -> np.ndarray:
    """
    Variables whose optimal value is known before branching.

    ``x_d = 0`` when even the most favourable pairs cannot make it pay off,
    ``x_d = 1`` when even the least favourable pairs cannot. Both rules keep
    the lexicographically smallest optimum. Iterated to a fixpoint.

    Returns:
        int8 array with 0 / 1 for fixed and -1 for free variables
    """
    n = form.size
    assignment = np.full(n, FREE, dtype=np.int8)
    changed = True
    while changed:
        changed = False
        free = assignment == FREE
        if not free.any():
            break
        lin = form.linear + form.quadratic[:, assignment == 1].sum(axis=1)
        sub = form.quadratic[:, free]
        negative = np.minimum(sub, 0.0).sum(axis=1)
        positive = np.maximum(sub, 0.0).sum(axis=1)
        for d in np.flatnonzero(free):
            if lin[d] + negative[d] >= 0.0:
                assignment[d] = 0
                changed = True
            elif lin[d] + positive[d] < 0.0:
                assignment[d] = 1
                changed = True
            if changed:
                # later rules must see this fixing
                break
    return assignment


def _bound(lin: np.ndarray, fixed_cost: float, free: np.ndarray, negative_b: np.ndarray,
           split: bool) -> float:
    if free.size == 0:
        return fixed_cost
    block = negative_b[np.ix_(free, free)]
    if split:
        return fixed_cost + float(np.minimum(0.0, lin[free] + 0.5 * block.sum(axis=1)).sum())
    return fixed_cost + float(np.minimum(0.0, lin[free]).sum()) + 0.5 * float(block.sum())


def node_lower_bound(form: QuadraticForm, assignment, split: bool = True) -> float:
    """
    Admissible lower bound over all completions of a partial assignment.

    The simple bound adds, to the cost of the fixed variables, every free
    variable's negative linear part (given the variables fixed to 1) and
    every negative free pair. The split bound moves half of each negative
    free pair into each endpoint before taking ``min(0, .)``; it is never
    weaker.

    Args:
        form: Quadratic form
        assignment: 0 / 1 per fixed variable, -1 per free one
        split: Use the split bound
    """
    assignment = np.asarray(assignment)
    ones = np.flatnonzero(assignment == 1)
    free = np.flatnonzero(assignment == FREE)
    lin = form.linear + form.quadratic[:, ones].sum(axis=1)
    fixed_cost = float(form.linear[ones].sum()) + 0.5 * float(form.quadratic[np.ix_(ones, ones)].sum())
    return _bound(lin, fixed_cost, free, np.minimum(form.quadratic, 0.0), split)


def _pruning_slack(incumbent: float) -> float:
    return 1e-9 * (1.0 + abs(incumbent))


class _BranchAndBound:
    """Depth-first search over the free variables of one instance."""

    def __init__(self, inst: AssociationInstance, form: QuadraticForm, fixed: np.ndarray, split: bool):
        self.inst = inst
        self.form = form
        self.split = split
        self.negative_b = np.minimum(form.quadratic, 0.0)
        free = np.flatnonzero(fixed == FREE)
        # strongest unaries first, index order on ties
        self.order = free[np.argsort(-np.abs(form.linear[free]), kind='stable')]
        self.nodes = 0
        self.pruned = 0

        start = np.where(fixed == 1, 1, 0).astype(np.int8)
        self.best_x = start
        self.best_key = self._key(start)

    def _key(self, x: np.ndarray) -> Tuple[float, Tuple[int, ...]]:
        return (association_objective(self.inst, x), tuple(int(v) for v in x))

    def run(self, fixed: np.ndarray) -> None:
        x = np.where(fixed == 1, 1, 0).astype(np.int8)
        ones = np.flatnonzero(fixed == 1)
        lin = self.form.linear + self.form.quadratic[:, ones].sum(axis=1)
        fixed_cost = float(self.form.linear[ones].sum()) + 0.5 * float(
            self.form.quadratic[np.ix_(ones, ones)].sum())
        self._visit(0, x, lin, fixed_cost)

    def _visit(self, depth: int, x: np.ndarray, lin: np.ndarray, fixed_cost: float) -> None:
        self.nodes += 1
        free = self.order[depth:]
        bound = _bound(lin, fixed_cost, free, self.negative_b, self.split)
        incumbent = self.best_key[0]
        if bound > incumbent + _pruning_slack(incumbent):
            self.pruned += 1
            return
        if depth == len(self.order):
            key = self._key(x)
            if key < self.best_key:
                self.best_key = key
                self.best_x = x.copy()
            return

        d = self.order[depth]
        values = (1, 0) if lin[d] < 0.0 else (0, 1)
        for value in values:
            if value == 1:
                x[d] = 1
                self._visit(depth + 1, x, lin + self.form.quadratic[d], fixed_cost + float(lin[d]))
                x[d] = 0
            else:
                self._visit(depth + 1, x, lin, fixed_cost)


def solve_exact_with_stats(inst: AssociationInstance, max_detections: int = DEFAULT_MAX_DETECTIONS,
                           split_bound: bool = True) -> Tuple[AssociationSolution, SolveStats]:
    """
    Exact minimizer together with search statistics.

    Raises:
        InstanceTooLargeError: more detections than ``max_detections``
    """
    _check_cap(inst, max_detections)
    form = reduce_to_qubo(inst)
    fixed = persistency_fixing(form)
    search = _BranchAndBound(inst, form, fixed, split_bound)
    search.run(fixed)

    solution = AssociationSolution.from_selection(inst, search.best_x)
    stats = SolveStats(nodes=search.nodes, pruned=search.pruned,
                       fixed_zero=int(np.sum(fixed == 0)), fixed_one=int(np.sum(fixed == 1)))
    logger.debug(f"Exact solve of {inst.size} detections: {stats.nodes} nodes, {stats.pruned} pruned, "
                 f"{stats.fixed_zero + stats.fixed_one} fixed by persistency")
    return solution, stats


def solve_exact(inst: AssociationInstance, max_detections: int = DEFAULT_MAX_DETECTIONS) -> AssociationSolution:
    """
    Global minimizer of the local association problem.

    Ties in the objective go to the lexicographically smallest selection;
    ``y`` is rebuilt as ``x AND x``.

    Raises:
        InstanceTooLargeError: more detections than ``max_detections``
    """
    solution, _ = solve_exact_with_stats(inst, max_detections)
    return solution


def _selections(n: int, start: int, stop: int) -> np.ndarray:
    """Rows of selections for the integers ``start..stop-1``; x_0 is the most significant bit."""
    codes = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def solve_bruteforce(inst: AssociationInstance) -> AssociationSolution:
    """
    Exhaustive enumeration of all selections; test oracle.

    Uses the same tie-break as :func:`solve_exact`.

    Raises:
        InstanceTooLargeError: more than 20 detections
    """
    _check_cap(inst, BRUTEFORCE_MAX_DETECTIONS)
    n = inst.size
    if n == 0:
        return AssociationSolution.from_selection(inst, np.zeros(0, dtype=np.int8))

    form = reduce_to_qubo(inst)
    total = 1 << n
    chunk = 1 << min(n, _CHUNK_BITS)
    candidates: List[np.ndarray] = []
    best_value = math.inf
    for start in range(0, total, chunk):
        xs = _selections(n, start, min(start + chunk, total))
        values = form.values(xs)
        chunk_min = float(values.min())
        if chunk_min > best_value + _pruning_slack(best_value):
            continue
        best_value = min(best_value, chunk_min)
        near = values <= best_value + _pruning_slack(best_value)
        candidates.extend(xs[near])

    best_key: Optional[Tuple[float, Tuple[int, ...]]] = None
    best_x = None
    for x in candidates:
        key = (association_objective(inst, x), tuple(int(v) for v in x))
        if best_key is None or key < best_key:
            best_key, best_x = key, x
    return AssociationSolution.from_selection(inst, best_x)


def extract_pose(inst: AssociationInstance, sol: AssociationSolution, region: Region) -> PersonPose:
    """
    Primary person's pose from the selected detections.

    Several selected detections of one joint type resolve to the most
    confident one (smallest id on ties); joint types without a selected
    detection stay invisible. Coordinates move from the region frame to the
    image frame.
    """
    chosen = {}
    for d in sol.selected_ids:
        detection = inst.detections[d]
        current = chosen.get(detection.joint)
        if current is None or detection.confidence > current.confidence:
            chosen[detection.joint] = detection
    pose = PersonPose.from_mapping({
        joint: PoseJoint(u=det.u, v=det.v, confidence=det.confidence) for joint, det in chosen.items()
    })
    return pose.translated(region.x0, region.y0)


def random_instance(n: int, rng: np.random.Generator, scale: float = 1.0) -> AssociationInstance:
    """Instance with alpha, beta ~ Uniform(-scale, scale) on dummy detections."""
    detections = [Detection(id=d, joint=JointType(d % len(JointType)), u=float(d), v=0.0, confidence=0.5)
                  for d in range(n)]
    alpha = rng.uniform(-scale, scale, size=n)
    rows, _ = upper_pairs(n)
    beta_upper = rng.uniform(-scale, scale, size=rows.size)
    return AssociationInstance.from_upper(detections, alpha, beta_upper)
