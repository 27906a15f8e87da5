"""
Validation Module

Checks association solutions against the constraints of their problem.
Constraint violations are reported, never raised; only mismatched
dimensions raise StructuralError.
"""

from typing import List, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import StructuralError
from logger import create_jpa_logger
from models import (
    AssociationInstance, AssociationSolution, GlobalInstance, GlobalSolution,
    ValidationResult, Violation, association_objective, global_objective,
)

logger = create_jpa_logger('validation')

OBJECTIVE_TOLERANCE = 1e-9


def _transitivity_violations(y: np.ndarray, members: np.ndarray) -> List[Tuple[int, int, int]]:
    """Triples (a, b, c) with y[a, b] = y[b, c] = 1 but y[a, c] = 0, a < c, among ``members``."""
    sub = y[np.ix_(members, members)].astype(bool)
    np.fill_diagonal(sub, False)
    paths = (sub.astype(np.int32) @ sub.astype(np.int32)) > 0
    missing = paths & ~sub
    np.fill_diagonal(missing, False)
    triples = []
    for a, c in zip(*np.nonzero(np.triu(missing, k=1))):
        b = int(np.flatnonzero(sub[a] & sub[:, c])[0])
        triples.append((int(members[a]), int(members[b]), int(members[c])))
    return triples


class SolutionValidator:
    """Constraint checks for local and global solutions."""

    def __init__(self):
        self.logger = create_jpa_logger('validation.validator')

    def _result(self, violations: List[Violation], warnings: List[str] = None) -> ValidationResult:
        errors = [f"{v.constraint} {list(v.indices)}: {v.message}" for v in violations]
        for error in errors:
            self.logger.debug(error)
        return ValidationResult(success=not violations, errors=errors,
                                warnings=warnings or [], violations=violations)

    def validate_association(self, inst: AssociationInstance, sol: AssociationSolution) -> ValidationResult:
        """
        Check pair/selection linkage, transitivity and the objective.

        Raises:
            StructuralError: solution dimensions differ from the instance
        """
        n = inst.size
        x = np.asarray(sol.selected)
        y = np.asarray(sol.pair)
        if x.shape != (n,) or y.shape != (n, n):
            raise StructuralError(
                f"Solution shapes {x.shape} / {y.shape} do not match an instance of {n} detections")

        violations: List[Violation] = []
        warnings: List[str] = []
        rows, cols = np.triu_indices(n, k=1)
        if not np.array_equal(y[rows, cols], y[cols, rows]):
            warnings.append("Pair matrix is not symmetric; the upper triangle is used")
        upper = y[rows, cols].astype(bool)
        chosen = x.astype(bool)

        for a, b in zip(rows[upper], cols[upper]):
            for d in (a, b):
                if not chosen[d]:
                    violations.append(Violation('pair_requires_selection', (int(a), int(b)),
                                                f"pair selected but detection {int(d)} is not"))
        for a, b in zip(rows[~upper], cols[~upper]):
            if chosen[a] and chosen[b]:
                violations.append(Violation('selected_pairs_grouped', (int(a), int(b)),
                                            "both detections selected but the pair is not"))

        full = np.zeros((n, n), dtype=bool)
        full[rows, cols] = upper
        full = full | full.T
        for triple in _transitivity_violations(full, np.arange(n)):
            violations.append(Violation('transitivity', triple, "same-person relation is not transitive"))

        pair = np.zeros((n, n))
        pair[rows, cols] = upper
        recomputed = association_objective(inst, x, pair)
        if abs(recomputed - sol.objective) > OBJECTIVE_TOLERANCE * (1.0 + abs(recomputed)):
            violations.append(Violation('objective', (),
                                        f"stored objective {sol.objective} != recomputed {recomputed}"))
        return self._result(violations, warnings)

    def validate_global(self, inst: GlobalInstance, sol: GlobalSolution) -> ValidationResult:
        """
        Check labelling, transitivity, z linkage, single-person grouping,
        cluster consistency and the objective.

        Raises:
            StructuralError: solution dimensions differ from the instance
        """
        d_count, j_count = inst.size, inst.joint_count
        x = np.asarray(sol.x)
        y = np.asarray(sol.y)
        z = np.asarray(sol.z)
        if x.shape != (d_count, j_count) or y.shape != (d_count, d_count) \
                or z.shape != (d_count, d_count, j_count, j_count) or len(sol.labels) != d_count:
            raise StructuralError(f"Solution dimensions do not match an instance with D={d_count}, J={j_count}")

        violations: List[Violation] = []
        label_sums = x.sum(axis=1)
        for d in np.flatnonzero(label_sums > 1):
            violations.append(Violation('single_label', (int(d),),
                                        f"proposal carries {int(label_sums[d])} labels"))
        for d in range(d_count):
            expected = -1 if label_sums[d] == 0 else int(np.argmax(x[d]))
            if label_sums[d] <= 1 and sol.labels[d] != expected:
                violations.append(Violation('labels', (d,), f"label {sol.labels[d]} disagrees with x"))

        active = label_sums > 0
        rows, cols = np.triu_indices(d_count, k=1)
        for a, b in zip(rows, cols):
            if y[a, b] != y[b, a]:
                violations.append(Violation('pair_symmetry', (int(a), int(b)), "y is not symmetric"))
            if y[a, b] and not (active[a] and active[b]):
                violations.append(Violation('pair_requires_label', (int(a), int(b)),
                                            "grouped proposals must both be labelled"))

        members = np.flatnonzero(active)
        for triple in _transitivity_violations(y, members):
            violations.append(Violation('transitivity', triple, "same-person relation is not transitive"))

        # z must equal x * x * y; upper and lower linkage are reported apart
        expected_z = np.einsum('dj,ek,de->dejk', x, x, y)
        idx = np.arange(d_count)
        expected_z[idx, idx] = 0
        for d, e, j, k in zip(*np.nonzero(z > expected_z)):
            violations.append(Violation('joint_link_upper', (int(d), int(e), int(j), int(k)),
                                        "z exceeds x[d, j] * x[e, k] * y[d, e]"))
        for d, e, j, k in zip(*np.nonzero(z < expected_z)):
            violations.append(Violation('joint_link_lower', (int(d), int(e), int(j), int(k)),
                                        "z below x[d, j] + x[e, k] + y[d, e] - 2"))

        if inst.single_person:
            for a, b in zip(rows, cols):
                if active[a] and active[b] and not y[a, b]:
                    violations.append(Violation('single_person_grouping', (int(a), int(b)),
                                                "labelled proposals must belong to the single person"))

        expected_clusters = cluster_components(y, active)
        if tuple(sol.clusters) != expected_clusters:
            violations.append(Violation('clusters', (), f"clusters {sol.clusters} differ from the "
                                                        f"components of y {expected_clusters}"))

        recomputed = global_objective(inst, sol.labels, y)
        if abs(recomputed - sol.objective) > OBJECTIVE_TOLERANCE * (1.0 + abs(recomputed)):
            violations.append(Violation('objective', (),
                                        f"stored objective {sol.objective} != recomputed {recomputed}"))
        return self._result(violations)


def cluster_components(y: np.ndarray, active: np.ndarray) -> Tuple[Tuple[int, ...], ...]:
    """Connected components of the grouping graph over the active proposals, sorted."""
    members = np.flatnonzero(active)
    if members.size == 0:
        return ()
    graph = csr_matrix(np.asarray(y)[np.ix_(members, members)].astype(np.int8))
    _, component = connected_components(graph, directed=False)
    groups = {}
    for index, label in enumerate(component):
        groups.setdefault(int(label), []).append(int(members[index]))
    return tuple(sorted(tuple(group) for group in groups.values()))


_validator = SolutionValidator()


def validate_association_solution(inst: AssociationInstance, sol: AssociationSolution) -> ValidationResult:
    """Constraint check of a local solution; see SolutionValidator.validate_association."""
    return _validator.validate_association(inst, sol)


def validate_global_solution(inst: GlobalInstance, sol: GlobalSolution) -> ValidationResult:
    """Constraint check of a global solution; see SolutionValidator.validate_global."""
    return _validator.validate_global(inst, sol)
