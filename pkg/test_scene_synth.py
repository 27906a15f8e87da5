"""
Tests for scene generation, score map rendering and candidate sampling.
"""

import math

import numpy as np
import pytest

from config import SynthConfig, preset_config
from errors import ConfigError, StructuralError
from models import BACKGROUND_CHANNEL, JOINT_COUNT, MAP_CHANNELS, JointType, ScoreMap, score_maps_from_stack
from scene_synth import (
    argmax_baseline, generate_scene, generate_scenes, local_maxima, region_count, render_score_maps,
    sample_candidates, with_score_maps,
)


def joint_map(shape, peaks, channel=0):
    values = np.zeros(shape)
    for (row, col), value in peaks.items():
        values[row, col] = value
    return ScoreMap(channel=channel, values=values)


def test_generation_is_deterministic():
    cfg = preset_config('occluded', seed=5)
    first = generate_scene(cfg, 3)
    second = generate_scene(cfg, 3)
    assert first.persons == second.persons
    assert first.regions == second.regions
    for a, b in zip(first.score_maps, second.score_maps):
        np.testing.assert_array_equal(a, b)


def test_seed_and_index_change_the_scene():
    cfg = preset_config('occluded', seed=5)
    assert generate_scene(cfg, 0).persons != generate_scene(cfg, 1).persons
    assert generate_scene(cfg, 0).persons != generate_scene(preset_config('occluded', seed=6), 0).persons


def test_deferred_rendering_matches_materialized():
    cfg = preset_config('crowded', seed=2)
    lazy = generate_scene(cfg, 0, materialize_maps=False)
    assert lazy.score_maps is None
    eager = generate_scene(cfg, 0)
    for a, b in zip(with_score_maps(lazy).score_maps, eager.score_maps):
        np.testing.assert_array_equal(a, b)


def test_clean_argmax_lands_on_ground_truth():
    for scene in generate_scenes(preset_config('clean', seed=4), 5):
        assert len(scene.persons) == 1
        region = scene.regions[0]
        pose = argmax_baseline(score_maps_from_stack(scene.score_maps[0]))
        for joint in JointType:
            gt = scene.persons[0].joints[joint]
            if not gt.visible:
                continue
            estimate = pose.get(joint)
            assert math.hypot(estimate.u - (gt.u - region.x0), estimate.v - (gt.v - region.y0)) <= 1.0


def test_maps_are_bounded_with_background(test_scenes):
    stack = test_scenes[0].score_maps[0]
    region = test_scenes[0].regions[0]
    assert stack.shape == (MAP_CHANNELS, region.height, region.width)
    assert stack.min() >= 0.0 and stack.max() <= 1.0
    np.testing.assert_allclose(stack[BACKGROUND_CHANNEL], 1.0 - stack[:JOINT_COUNT].max(axis=0))


def test_equal_persons_give_two_head_maxima(scene_factory, person_factory):
    scene = scene_factory([person_factory(100, 120), person_factory(220, 120)], regions=None, attenuation=1.0)
    stack = render_score_maps(scene, 0)
    assert int(local_maxima(stack[JointType.HEAD]).sum()) == 2
    candidates = sample_candidates(ScoreMap(JointType.HEAD, stack[JointType.HEAD]), 5, 5.0)
    assert [d.u for d in candidates] == [100.0, 220.0]
    assert candidates[0].confidence == candidates[1].confidence


def test_distractor_peaks_are_attenuated(scene_factory, person_factory):
    scene = scene_factory([person_factory(100, 120), person_factory(220, 120)], attenuation=0.5)
    stack = render_score_maps(scene, 0)
    primary = stack[JointType.NECK, :, 95:105].max()
    distractor = stack[JointType.NECK, :, 215:225].max()
    assert distractor == pytest.approx(0.5 * primary)


def test_hidden_joint_has_empty_map(scene_factory, person_factory):
    scene = scene_factory([person_factory(160, 120, hidden=[JointType.L_WRIST])])
    stack = render_score_maps(scene, 0)
    assert stack[JointType.L_WRIST].max() == 0.0
    assert sample_candidates(ScoreMap(JointType.L_WRIST, stack[JointType.L_WRIST]), 3, 5.0) == []


def test_sample_candidates_order_and_suppression():
    score_map = joint_map((7, 7), {(1, 1): 0.9, (1, 3): 0.8, (5, 5): 0.5}, channel=JointType.R_KNEE)
    kept = sample_candidates(score_map, 3, nms_radius=2.5, start_id=4)
    assert [(d.id, d.u, d.v, d.confidence) for d in kept] == [(4, 1.0, 1.0, 0.9), (5, 5.0, 5.0, 0.5)]
    assert all(d.joint == JointType.R_KNEE for d in kept)

    unsuppressed = sample_candidates(score_map, 2, nms_radius=0.0)
    assert [d.confidence for d in unsuppressed] == [0.9, 0.8]


def test_flat_maps_and_plateaus():
    assert sample_candidates(ScoreMap(JointType.HEAD, np.full((20, 20), 0.4)), 5, 3.0) == []
    assert sample_candidates(joint_map((6, 6), {}), 5, 0.0) == []

    plateau = joint_map((6, 8), {(2, 3): 0.7, (2, 4): 0.7, (4, 7): 0.3})
    kept = sample_candidates(plateau, 5, nms_radius=0.0)
    assert [(d.u, d.v, d.confidence) for d in kept] == [(3.0, 2.0, 0.7), (7.0, 4.0, 0.3)]

    # a shoulder next to a higher pixel is not a maximum
    shoulder = joint_map((5, 5), {(2, 1): 0.5, (2, 2): 0.5, (2, 3): 0.8})
    assert [(d.u, d.v) for d in sample_candidates(shoulder, 5, 0.0)] == [(3.0, 2.0)]


def test_sample_candidates_rejects_bad_input():
    with pytest.raises(ConfigError):
        sample_candidates(joint_map((3, 3), {}), 0, 5.0)
    with pytest.raises(StructuralError):
        sample_candidates(joint_map((3, 3), {(1, 1): 0.5}, channel=BACKGROUND_CHANNEL), 1, 5.0)


def test_argmax_prefers_stronger_peak():
    maps = [joint_map((8, 8), {(2, 2): 0.6, (5, 6): 0.9}, channel=j) for j in range(MAP_CHANNELS)]
    pose = argmax_baseline(maps)
    head = pose.get(JointType.HEAD)
    assert (head.u, head.v, head.confidence) == (6.0, 5.0, 0.9)
    assert len(pose.visible_joints()) == JOINT_COUNT


def test_argmax_on_zero_maps():
    maps = [joint_map((4, 4), {}, channel=j) for j in range(MAP_CHANNELS)]
    head = argmax_baseline(maps).get(JointType.HEAD)
    assert (head.u, head.v, head.confidence) == (0.0, 0.0, 0.0)


def test_argmax_requires_every_joint_map():
    maps = [joint_map((4, 4), {}, channel=j) for j in range(JOINT_COUNT - 1)]
    with pytest.raises(StructuralError):
        argmax_baseline(maps)


def test_crowded_preset():
    scenes = generate_scenes(preset_config('crowded', seed=1), 4)
    assert all(3 <= len(scene.persons) <= 4 for scene in scenes)
    assert region_count(scenes) == sum(len(scene.persons) for scene in scenes)
    for scene in scenes:
        assert [region.person for region in scene.regions] == list(range(len(scene.persons)))


def test_zero_sigma_is_rejected():
    with pytest.raises(ConfigError):
        SynthConfig(sigma=0.0)
    with pytest.raises(ConfigError):
        preset_config('stadium')
