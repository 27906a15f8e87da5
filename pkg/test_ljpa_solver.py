"""
Tests for the local association solver: examples, the exhaustive oracle,
the pair-variable elimination, bounds and persistency fixing.
"""

import itertools

import numpy as np
import pytest

from errors import InstanceTooLargeError
from ljpa_solver import (
    FREE, extract_pose, node_lower_bound, persistency_fixing, random_instance, reduce_to_qubo,
    solve_bruteforce, solve_exact, solve_exact_with_stats,
)
from models import AssociationInstance, AssociationSolution, JointType, Region, association_objective
from validation import validate_association_solution


def test_single_negative_unary(instance_factory):
    sol = solve_exact(instance_factory([-1.0]))
    assert list(sol.selected) == [1]
    assert sol.objective == pytest.approx(-1.0)


def test_strong_pair_outweighs_unaries(instance_factory):
    sol = solve_exact(instance_factory([1.0, 1.0], [-10.0]))
    assert list(sol.selected) == [1, 1]
    assert sol.pair[0, 1] == 1
    assert sol.objective == pytest.approx(-8.0)


def test_empty_instance(instance_factory):
    inst = instance_factory([])
    for solver in (solve_exact, solve_bruteforce):
        sol = solver(inst)
        assert sol.selected.shape == (0,)
        assert sol.objective == 0.0


def test_qubo_form_matches_objective(instance_factory):
    inst = instance_factory([0.3, -0.7], [1.5])
    form = reduce_to_qubo(inst)
    assert form.value([1, 1]) == pytest.approx(0.3 - 0.7 + 1.5)
    assert form.value([0, 0]) == 0.0


def test_bruteforce_never_positive(rng):
    for n in range(1, 9):
        inst = random_instance(n, rng, scale=5.0)
        assert solve_bruteforce(inst).objective <= 0.0


def test_solver_caps(rng):
    inst = random_instance(21, rng)
    with pytest.raises(InstanceTooLargeError):
        solve_bruteforce(inst)
    with pytest.raises(InstanceTooLargeError) as excinfo:
        solve_exact(inst, max_detections=20)
    assert excinfo.value.size == 21
    assert excinfo.value.cap == 20
    assert '(231 variables)' in str(excinfo.value)


def test_variable_count_is_selections_plus_pairs(instance_factory):
    for n in (0, 1, 2, 7):
        assert instance_factory([0.0] * n, [0.0] * (n * (n - 1) // 2)).variable_count == n + n * (n - 1) // 2


def test_exact_matches_bruteforce_oracle():
    """More than 200 random instances of 2 to 15 detections at three cost scales."""
    rng = np.random.default_rng(2024)
    checked = 0
    for scale in (0.1, 1.0, 10.0):
        for n in range(2, 16):
            for _ in range(5):
                inst = random_instance(n, rng, scale=scale)
                exact = solve_exact(inst)
                oracle = solve_bruteforce(inst)
                assert abs(exact.objective - oracle.objective) <= 1e-9 * (1.0 + abs(oracle.objective))
                np.testing.assert_array_equal(exact.selected, oracle.selected)
                assert validate_association_solution(inst, exact).success
                checked += 1
    assert checked >= 200


def test_simple_bound_reaches_same_optimum():
    rng = np.random.default_rng(7)
    for n in range(2, 12):
        inst = random_instance(n, rng)
        split, _ = solve_exact_with_stats(inst, split_bound=True)
        simple, _ = solve_exact_with_stats(inst, split_bound=False)
        np.testing.assert_array_equal(split.selected, simple.selected)


def test_pair_variables_are_forced_by_linkage():
    """Enumerate every (x, y) up to six detections: linkage admits only y = x AND x."""
    rng = np.random.default_rng(99)
    for n in range(1, 7):
        inst = random_instance(n, rng)
        form = reduce_to_qubo(inst)
        rows, cols = np.triu_indices(n, k=1)
        xs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8)
        ys = np.array(list(itertools.product((0, 1), repeat=rows.size)), dtype=np.int8).reshape(-1, rows.size)

        xa = xs[:, rows][:, None, :]
        xb = xs[:, cols][:, None, :]
        y = ys[None, :, :]
        feasible = ((y <= xa) & (y <= xb) & (y >= xa + xb - 1)).all(axis=2)

        assert np.all(feasible.sum(axis=1) == 1)
        chosen = ys[feasible.argmax(axis=1)]
        np.testing.assert_array_equal(chosen, xs[:, rows] * xs[:, cols])
        objective = xs @ inst.alpha + chosen @ inst.beta[rows, cols]
        np.testing.assert_allclose(objective, form.values(xs), atol=1e-9)


def test_lower_bounds_are_admissible():
    rng = np.random.default_rng(5)
    for _ in range(40):
        n = int(rng.integers(2, 9))
        form = reduce_to_qubo(random_instance(n, rng))
        assignment = rng.integers(-1, 2, size=n)
        free = np.flatnonzero(assignment == FREE)
        completions = []
        for values in itertools.product((0, 1), repeat=free.size):
            x = np.where(assignment == FREE, 0, assignment)
            x[free] = values
            completions.append(form.value(x))
        best = min(completions)
        split = node_lower_bound(form, assignment, split=True)
        simple = node_lower_bound(form, assignment, split=False)
        assert split <= best + 1e-9
        assert simple <= split + 1e-9


def test_persistency_fixing_agrees_with_optimum():
    rng = np.random.default_rng(31)
    fixed_total = 0
    for _ in range(60):
        n = int(rng.integers(2, 11))
        inst = random_instance(n, rng, scale=float(rng.choice([0.1, 1.0, 10.0])))
        fixed = persistency_fixing(reduce_to_qubo(inst))
        optimum = solve_bruteforce(inst).selected
        known = fixed != FREE
        np.testing.assert_array_equal(fixed[known], optimum[known])
        fixed_total += int(known.sum())
    assert fixed_total > 0


def test_scaling_costs_keeps_selection():
    rng = np.random.default_rng(17)
    for n in range(2, 12):
        inst = random_instance(n, rng)
        scaled = AssociationInstance(detections=inst.detections, alpha=4.0 * inst.alpha, beta=4.0 * inst.beta)
        np.testing.assert_array_equal(solve_exact(inst).selected, solve_exact(scaled).selected)


def test_objective_is_canonical(rng):
    inst = random_instance(9, rng)
    sol = solve_exact(inst)
    assert sol.objective == association_objective(inst, sol.selected)


def test_extract_pose_keeps_most_confident(instance_factory):
    joints = [JointType.HEAD, JointType.HEAD, JointType.NECK]
    inst = instance_factory([-1.0, -1.0, -1.0], [0.0, 0.0, 0.0], joints=joints, confidences=[0.7, 0.9, 0.6])
    sol = AssociationSolution.from_selection(inst, [1, 1, 1])
    pose = extract_pose(inst, sol, Region(x0=100, y0=50, x1=200, y1=150, person=0))
    head = pose.get(JointType.HEAD)
    assert head.confidence == 0.9
    assert (head.u, head.v) == (110.0, 55.0)
    assert pose.get(JointType.R_WRIST) is None
    assert pose.visible_joints() == [JointType.HEAD, JointType.NECK]


def test_extract_pose_full_body(instance_factory):
    inst = instance_factory([-1.0] * 14, [0.0] * 91)
    sol = solve_exact(inst)
    pose = extract_pose(inst, sol, Region(x0=0, y0=0, x1=10, y1=10, person=0))
    assert len(pose.visible_joints()) == 14
