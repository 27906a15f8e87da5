"""
Shared pytest fixtures: seeded generators, small scene sets, a trained and
a neutral pairwise model, and builders for hand-made scenes and instances.
"""

import numpy as np
import pytest

from affinity import FEATURE_SCHEMA_HASH, PairModel, PairwiseModel, pair_keys, train_pairwise
from classifiers import ClassifierParams, PlattParams, Standardizer
from config import TrainingConfig, preset_config
from models import (
    JOINT_COUNT, AssociationInstance, Detection, GroundTruthJoint, GroundTruthPerson,
    JointType, Region, RenderParams, Scene,
)
from scene_synth import SKELETON_TEMPLATE, generate_scenes
from storage import write_model, write_scene_set


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment runs (minutes)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def train_scenes():
    return generate_scenes(preset_config('occluded', seed=11), 8)


@pytest.fixture(scope='session')
def test_scenes():
    return generate_scenes(preset_config('occluded', seed=22), 4)


@pytest.fixture(scope='session')
def trained_model(train_scenes):
    return train_pairwise(train_scenes, TrainingConfig())


@pytest.fixture(scope='session')
def neutral_model():
    """Every pair probability is exactly 0.5."""
    pairs = {}
    for key in pair_keys():
        dim = 6 if key[0] == key[1] else 4 + 2 * (JOINT_COUNT + 1)
        classifier = ClassifierParams(kind='logistic', weights=np.zeros(dim), bias=0.0,
                                      support_vectors=np.zeros((0, dim)), dual_coef=np.zeros(0), gamma=0.0)
        pairs[key] = PairModel(joints=key, classifier=classifier, platt=PlattParams(a=0.0, b=0.0),
                               scaler=Standardizer(mean=np.zeros(dim), std=np.ones(dim)),
                               heldout_accuracy=0.5, n_positive=1, n_negative=1)
    return PairwiseModel(pairs=pairs, feature_schema_hash=FEATURE_SCHEMA_HASH, classifier='logistic')


@pytest.fixture(scope='session')
def scene_dir(tmp_path_factory, test_scenes):
    directory = tmp_path_factory.mktemp('scenes')
    write_scene_set(str(directory), test_scenes, seed=22, preset='occluded', config_hash='test')
    return str(directory)


@pytest.fixture(scope='session')
def model_path(tmp_path_factory, trained_model):
    path = tmp_path_factory.mktemp('model') / 'model.json'
    write_model(str(path), trained_model)
    return str(path)


def skeleton(center_u: float, center_v: float, height: float = 120.0, hidden=()) -> GroundTruthPerson:
    """Template pose without jitter; ``hidden`` joints are invisible."""
    joints = []
    for joint in JointType:
        du, dv = SKELETON_TEMPLATE[joint]
        joints.append(GroundTruthJoint(u=center_u + height * du, v=center_v + height * dv,
                                       visible=joint not in hidden))
    return GroundTruthPerson(joints=tuple(joints))


@pytest.fixture
def scene_factory():
    """Build a scene from persons; each region is the whole image unless given."""
    def make(persons, regions=None, width=320, height=240, scene_id='scene_0000',
             attenuation=0.7, sigma=3.0, strength=1.0):
        if regions is None:
            regions = [Region(x0=0, y0=0, x1=width, y1=height, person=p) for p in range(len(persons))]
        render = RenderParams(sigma=sigma, attenuation=attenuation, noise_amplitude=0.0,
                              strengths=tuple((strength,) * JOINT_COUNT for _ in persons),
                              noise_seeds=tuple(range(len(regions))))
        return Scene(scene_id=scene_id, width=width, height=height, persons=tuple(persons),
                     regions=tuple(regions), render=render)
    return make


@pytest.fixture
def instance_factory():
    """Local instance from alpha and the upper triangle of beta, joint types cycling."""
    def make(alpha, beta_upper=(), joints=None, confidences=None):
        n = len(alpha)
        joints = joints if joints is not None else [JointType(d % JOINT_COUNT) for d in range(n)]
        confidences = confidences if confidences is not None else [0.5] * n
        detections = [Detection(id=d, joint=JointType(joints[d]), u=float(10 * d), v=5.0,
                                confidence=float(confidences[d])) for d in range(n)]
        return AssociationInstance.from_upper(detections, np.asarray(alpha, dtype=float),
                                              np.asarray(beta_upper, dtype=float))
    return make


@pytest.fixture
def person_factory():
    return skeleton
