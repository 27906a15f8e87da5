"""
Tests for the global labelling and clustering solver.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from config import BenchConfig, TrainingConfig
from errors import InstanceTooLargeError
from global_solver import (
    benchmark_local_vs_global, build_global_instance, global_pose, pretyped_instance,
    solve_global_bruteforce, solve_global_exact,
)
from ljpa_solver import random_instance, solve_exact
from models import AssociationInstance, GlobalSolution, JointType, Region
from validation import validate_global_solution


def random_global_instance(rng, d_count, j_count, single_person=False):
    proposals = rng.uniform(0, 50, size=(d_count, 2))
    p_dj = rng.uniform(0.05, 0.95, size=(d_count, j_count))
    p_pair = rng.uniform(0.05, 0.95, size=(d_count, d_count, j_count, j_count))
    return build_global_instance(proposals, p_dj, p_pair, single_person=single_person)


def test_two_proposals_join_one_person():
    p = expit(1.0)
    inst = build_global_instance(np.zeros((2, 2)), np.full((2, 1), p), np.full((2, 2, 1, 1), p))
    sol = solve_global_exact(inst)
    assert sol.labels == (0, 0)
    assert sol.clusters == ((0, 1),)
    assert sol.objective == pytest.approx(-3.0)


def test_unlikely_proposals_are_suppressed():
    inst = build_global_instance(np.zeros((3, 2)), np.full((3, 2), 0.2), np.full((3, 3, 2, 2), 0.2))
    sol = solve_global_exact(inst)
    assert sol.labels == (-1, -1, -1)
    assert sol.clusters == ()
    assert sol.objective == 0.0


def test_even_probability_costs_nothing():
    inst = build_global_instance(np.zeros((2, 2)), np.full((2, 2), 0.5), np.full((2, 2, 2, 2), 0.5))
    assert np.all(inst.alpha == 0.0)
    assert np.all(inst.beta == 0.0)


def test_single_confident_proposal():
    inst = build_global_instance(np.zeros((1, 2)), np.array([[0.9]]), np.full((1, 1, 1, 1), 0.5))
    assert inst.alpha[0, 0] == pytest.approx(math.log(0.1 / 0.9))
    sol = solve_global_exact(inst)
    assert sol.labels == (0,)
    assert sol.objective == pytest.approx(-2.1972, abs=1e-4)


def test_pair_probabilities_are_mirrored():
    p_pair = np.full((2, 2, 2, 2), 0.5)
    p_pair[0, 1, 0, 1] = 0.9
    inst = build_global_instance(np.zeros((2, 2)), np.full((2, 2), 0.6), p_pair)
    assert inst.p_pair[1, 0, 1, 0] == pytest.approx(0.9)
    assert inst.beta[0, 1, 0, 1] == inst.beta[1, 0, 1, 0]


def test_caps(rng):
    with pytest.raises(InstanceTooLargeError):
        solve_global_exact(random_global_instance(rng, 11, 1))
    with pytest.raises(InstanceTooLargeError):
        solve_global_exact(random_global_instance(rng, 2, 5))
    with pytest.raises(InstanceTooLargeError):
        solve_global_bruteforce(random_global_instance(rng, 7, 1))


def test_global_variable_count(rng):
    # labels per proposal, pair links, and label pairs per link
    assert random_global_instance(rng, 4, 3).variable_count == 4 * 3 + 6 + 6 * 9


def test_exact_matches_constrained_enumeration():
    rng = np.random.default_rng(404)
    for trial in range(60):
        d_count = int(rng.integers(1, 6))
        j_count = int(rng.integers(1, 3))
        inst = random_global_instance(rng, d_count, j_count, single_person=bool(trial % 4 == 3))
        exact = solve_global_exact(inst)
        oracle = solve_global_bruteforce(inst)
        assert abs(exact.objective - oracle.objective) <= 1e-9 * (1.0 + abs(oracle.objective))
        np.testing.assert_array_equal(exact.x, oracle.x)
        np.testing.assert_array_equal(exact.y, oracle.y)
        assert validate_global_solution(inst, exact).success


def test_pretyped_instance_reproduces_local_optimum():
    rng = np.random.default_rng(77)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        base = random_instance(n, rng)
        types = rng.integers(0, 4, size=n)
        detections = [d._replace(joint=JointType(int(t))) for d, t in zip(base.detections, types)]
        inst = AssociationInstance(detections=tuple(detections), alpha=base.alpha, beta=base.beta)

        local = solve_exact(inst)
        global_inst = pretyped_instance(inst)
        assert global_inst.single_person
        sol = solve_global_exact(global_inst)
        assert abs(sol.objective - local.objective) <= 1e-9 * (1.0 + abs(local.objective))
        selected = np.array([label >= 0 for label in sol.labels], dtype=np.int8)
        np.testing.assert_array_equal(selected, local.selected)


def test_pretyped_wrong_labels_are_expensive(instance_factory):
    inst = instance_factory([-1.0, -0.5], [0.2], joints=[JointType.HEAD, JointType.NECK])
    global_inst = pretyped_instance(inst, epsilon=1e-6)
    assert global_inst.alpha[0, 0] == -1.0
    assert global_inst.alpha[0, 1] == pytest.approx(math.log((1 - 1e-6) / 1e-6))
    assert global_inst.beta[0, 1, 0, 1] == pytest.approx(0.2)
    assert global_inst.beta[0, 1, 1, 0] == 0.0


def test_global_pose_takes_cluster_nearest_centre():
    proposals = np.array([[10.0, 10.0], [12.0, 14.0], [90.0, 90.0]])
    p_dj = np.array([[0.9, 0.2], [0.3, 0.8], [0.7, 0.4]])
    inst = build_global_instance(proposals, p_dj, np.full((3, 3, 2, 2), 0.5))
    sol = GlobalSolution.from_assignment(inst, [0, 1, 0], [0, 0, 1])
    pose = global_pose(inst, sol, (JointType.HEAD, JointType.NECK), Region(x0=5, y0=5, x1=45, y1=45, person=0))

    head = pose.get(JointType.HEAD)
    assert (head.u, head.v) == (15.0, 15.0)
    assert head.confidence == pytest.approx(0.9)
    assert pose.get(JointType.NECK).u == 17.0
    assert pose.visible_joints() == [JointType.HEAD, JointType.NECK]


def test_global_pose_without_clusters_is_empty():
    inst = build_global_instance(np.zeros((1, 2)), np.array([[0.1]]), np.full((1, 1, 1, 1), 0.5))
    pose = global_pose(inst, solve_global_exact(inst), (JointType.HEAD,), Region(0, 0, 10, 10, 0))
    assert pose.visible_joints() == []


def test_benchmark_rows(test_scenes, trained_model):
    cfg = BenchConfig(sizes=(3, 2), trials=1, scenes=1)
    rows = benchmark_local_vs_global(test_scenes, trained_model, cfg, TrainingConfig())
    assert [(row.size, row.solver) for row in rows] == [(2, 'global'), (2, 'local'), (3, 'global'), (3, 'local')]
    assert all(row.trials == 1 for row in rows)
    assert all(row.median_ms is not None and row.median_ms >= 0.0 for row in rows)


def test_benchmark_skips_regions_below_size(scene_factory, person_factory, trained_model):
    # one clean person gives one candidate per bench joint
    scene = scene_factory([person_factory(160, 120)])
    cfg = BenchConfig(sizes=(4, 6), trials=2, scenes=1)
    rows = benchmark_local_vs_global([scene], trained_model, cfg, TrainingConfig())
    by_size = {(row.size, row.solver): row for row in rows}
    assert by_size[(4, 'local')].trials == 2
    assert by_size[(4, 'global')].median_ms is not None
    assert by_size[(6, 'local')].trials == 0
    assert by_size[(6, 'global')].median_ms is None
