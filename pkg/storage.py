"""
Storage Module

Reads and writes every versioned JSON file of the tool: scenes and their
manifest, the pairwise model, local and global instances, and predictions.
Readers check the format tag through the schema manager before touching a
document.
"""

import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from affinity import FEATURE_SCHEMA_HASH, PairModel, PairwiseModel
from classifiers import ClassifierParams, PlattParams, Standardizer
from errors import FormatVersionError, StructuralError
from global_solver import build_global_instance
from logger import create_jpa_logger
from models import (
    AssociationInstance, AssociationSolution, Detection, GlobalInstance, GlobalSolution,
    GroundTruthJoint, GroundTruthPerson, JointType, PersonPose, PoseJoint, PredictedPose,
    Region, RenderParams, Scene, upper_pairs,
)
from schema_manager import default_schema_manager
from utils import read_json, sha256_hex, write_json

logger = create_jpa_logger('storage')

MANIFEST_NAME = 'manifest.json'


def _read_checked(path: str, expected: str) -> Dict[str, Any]:
    document = read_json(path)
    default_schema_manager().check_document(document, expected, source=path)
    return document


def _tag(name: str) -> str:
    return default_schema_manager().format_tag(name)


# ----------------------------------------------------------------------------
# Scenes
# ----------------------------------------------------------------------------

def scene_to_dict(scene: Scene, embed_maps: bool = False) -> Dict[str, Any]:
    """JSON form of a scene; score maps only when ``embed_maps``."""
    document = {
        'format': _tag('jpa-scene'),
        'scene_id': scene.scene_id,
        'width': scene.width,
        'height': scene.height,
        'persons': [[[float(j.u), float(j.v), bool(j.visible)] for j in person.joints]
                    for person in scene.persons],
        'regions': [[r.x0, r.y0, r.x1, r.y1, r.person] for r in scene.regions],
        'render': {
            'sigma': scene.render.sigma,
            'attenuation': scene.render.attenuation,
            'noise_amplitude': scene.render.noise_amplitude,
            'strengths': [list(row) for row in scene.render.strengths],
            'noise_seeds': list(scene.render.noise_seeds),
        },
    }
    if embed_maps and scene.score_maps is not None:
        document['score_maps'] = [stack.tolist() for stack in scene.score_maps]
    return document


def scene_from_dict(document: Dict[str, Any], source: str = '') -> Scene:
    """
    Scene from its JSON form.

    Raises:
        StructuralError: malformed persons, regions or maps
    """
    try:
        persons = tuple(
            GroundTruthPerson(joints=tuple(GroundTruthJoint(u=float(u), v=float(v), visible=bool(vis))
                                           for u, v, vis in person))
            for person in document['persons'])
        regions = tuple(Region(*(int(value) for value in region)) for region in document['regions'])
        render_doc = document['render']
        render = RenderParams(
            sigma=float(render_doc['sigma']),
            attenuation=float(render_doc['attenuation']),
            noise_amplitude=float(render_doc['noise_amplitude']),
            strengths=tuple(tuple(float(s) for s in row) for row in render_doc['strengths']),
            noise_seeds=tuple(int(s) for s in render_doc['noise_seeds']),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise StructuralError(f"Malformed scene document {source}: {e}", {'path': source}) from e

    if any(len(person.joints) != len(JointType) for person in persons):
        raise StructuralError(f"Every person needs {len(JointType)} joints in {source}", {'path': source})
    if len(regions) != len(persons):
        raise StructuralError(f"Scene {source} has {len(regions)} regions for {len(persons)} persons",
                              {'path': source})
    width, height = int(document['width']), int(document['height'])
    for region in regions:
        if region.x0 < 0 or region.y0 < 0 or region.x1 > width or region.y1 > height \
                or region.width <= 0 or region.height <= 0:
            raise StructuralError(f"Region {tuple(region)} lies outside the {width}x{height} image",
                                  {'path': source})

    score_maps = None
    if 'score_maps' in document:
        score_maps = []
        for region, stack in zip(regions, document['score_maps']):
            array = np.asarray(stack, dtype=float)
            if array.shape != (len(JointType) + 1, region.height, region.width):
                raise StructuralError(f"Embedded maps of shape {array.shape} do not match region "
                                      f"{tuple(region)}", {'path': source})
            array.setflags(write=False)
            score_maps.append(array)
        score_maps = tuple(score_maps)

    return Scene(scene_id=str(document['scene_id']), width=width, height=height, persons=persons,
                 regions=regions, render=render, score_maps=score_maps)


def scene_file_name(scene: Scene) -> str:
    return f"{scene.scene_id}.json"


def scenes_hash(documents: Sequence[Dict[str, Any]]) -> str:
    """Hash of a scene set, independent of embedded maps."""
    stripped = [{key: value for key, value in doc.items() if key != 'score_maps'} for doc in documents]
    return sha256_hex(stripped)


def write_scene_set(directory: str, scenes: Sequence[Scene], seed: int, preset: str,
                    config_hash: str, embed_maps: bool = False) -> Dict[str, Any]:
    """
    Write scene files plus their manifest.

    Returns:
        The manifest document
    """
    documents = []
    files = []
    for scene in scenes:
        document = scene_to_dict(scene, embed_maps=embed_maps)
        name = scene_file_name(scene)
        write_json(os.path.join(directory, name), document)
        documents.append(document)
        files.append(name)
    manifest = {
        'format': _tag('jpa-manifest'),
        'count': len(scenes),
        'seed': int(seed),
        'preset': preset,
        'config_hash': config_hash,
        'files': files,
        'scenes_hash': scenes_hash(documents),
    }
    write_json(os.path.join(directory, MANIFEST_NAME), manifest)
    logger.debug(f"Wrote {len(scenes)} scenes to {directory}")
    return manifest


def read_scene_set(directory: str) -> Tuple[Dict[str, Any], List[Scene]]:
    """
    Read a scene directory written by :func:`write_scene_set`.

    Raises:
        StructuralError: files missing or scenes differ from the manifest hash
    """
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    manifest = _read_checked(manifest_path, 'jpa-manifest')
    documents = []
    scenes = []
    for name in manifest['files']:
        path = os.path.join(directory, name)
        document = _read_checked(path, 'jpa-scene')
        documents.append(document)
        scenes.append(scene_from_dict(document, source=path))
    if scenes_hash(documents) != manifest['scenes_hash']:
        raise StructuralError(f"Scene files in {directory} do not match their manifest",
                              {'path': directory})
    return manifest, scenes


# ----------------------------------------------------------------------------
# Pairwise model
# ----------------------------------------------------------------------------

def _array(values) -> List:
    return np.asarray(values, dtype=float).tolist()


def model_to_dict(model: PairwiseModel) -> Dict[str, Any]:
    pairs = []
    for key in sorted(model.pairs):
        pair = model.pairs[key]
        c = pair.classifier
        pairs.append({
            'joints': [JointType(key[0]).joint_name, JointType(key[1]).joint_name],
            'classifier': {
                'kind': c.kind,
                'weights': _array(c.weights),
                'bias': float(c.bias),
                'support_vectors': _array(c.support_vectors),
                'dual_coef': _array(c.dual_coef),
                'gamma': float(c.gamma),
            },
            'platt': {'a': pair.platt.a, 'b': pair.platt.b},
            'scaler': {'mean': _array(pair.scaler.mean), 'std': _array(pair.scaler.std)},
            'heldout_accuracy': pair.heldout_accuracy,
            'n_positive': pair.n_positive,
            'n_negative': pair.n_negative,
        })
    return {
        'format': _tag('jpa-model'),
        'feature_schema_hash': model.feature_schema_hash,
        'classifier': model.classifier,
        'pairs': pairs,
    }


def model_from_dict(document: Dict[str, Any], source: str = '') -> PairwiseModel:
    """
    Raises:
        FormatVersionError: the model was trained on other features
    """
    if document['feature_schema_hash'] != FEATURE_SCHEMA_HASH:
        raise FormatVersionError(f"Model {source} was trained with another feature schema",
                                 {'path': source})
    pairs: Dict[Tuple[int, int], PairModel] = {}
    try:
        for entry in document['pairs']:
            key = tuple(sorted(int(JointType.from_name(name)) for name in entry['joints']))
            c = entry['classifier']
            dim = len(entry['scaler']['mean'])
            support = np.asarray(c['support_vectors'], dtype=float).reshape(-1, dim)
            pairs[key] = PairModel(
                joints=key,
                classifier=ClassifierParams(kind=c['kind'], weights=np.asarray(c['weights'], dtype=float),
                                            bias=float(c['bias']), support_vectors=support,
                                            dual_coef=np.asarray(c['dual_coef'], dtype=float),
                                            gamma=float(c['gamma'])),
                platt=PlattParams(a=float(entry['platt']['a']), b=float(entry['platt']['b'])),
                scaler=Standardizer(mean=np.asarray(entry['scaler']['mean'], dtype=float),
                                    std=np.asarray(entry['scaler']['std'], dtype=float)),
                heldout_accuracy=float(entry['heldout_accuracy']),
                n_positive=int(entry['n_positive']),
                n_negative=int(entry['n_negative']),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise StructuralError(f"Malformed model document {source}: {e}", {'path': source}) from e
    model = PairwiseModel(pairs=pairs, feature_schema_hash=document['feature_schema_hash'],
                          classifier=document['classifier'])
    if not model.is_complete:
        logger.warning(f"Model {source} covers {len(pairs)} joint pairs; solving will fail on the others")
    return model


def write_model(path: str, model: PairwiseModel) -> None:
    write_json(path, model_to_dict(model))


def read_model(path: str) -> PairwiseModel:
    return model_from_dict(_read_checked(path, 'jpa-model'), source=path)


# ----------------------------------------------------------------------------
# Instances
# ----------------------------------------------------------------------------

def instance_to_dict(inst: AssociationInstance, solution: Optional[AssociationSolution] = None) -> Dict[str, Any]:
    rows, cols = upper_pairs(inst.size)
    document = {
        'format': _tag('jpa-instance'),
        'detections': [[d.id, d.joint.joint_name, float(d.u), float(d.v), float(d.confidence)]
                       for d in inst.detections],
        'alpha': _array(inst.alpha),
        'beta_upper': _array(inst.beta[rows, cols]),
    }
    if solution is not None:
        document['solution'] = {'selected': [int(v) for v in solution.selected],
                                'objective': solution.objective}
    return document


def instance_from_dict(document: Dict[str, Any], source: str = '') -> Tuple[AssociationInstance, Optional[AssociationSolution]]:
    try:
        detections = [Detection(id=int(i), joint=JointType.from_name(name), u=float(u), v=float(v),
                                confidence=float(conf))
                      for i, name, u, v, conf in document['detections']]
    except (TypeError, ValueError) as e:
        raise StructuralError(f"Malformed detections in {source}: {e}", {'path': source}) from e
    n = len(detections)
    if len(document['beta_upper']) != n * (n - 1) // 2:
        raise StructuralError(f"beta_upper of {source} needs {n * (n - 1) // 2} entries", {'path': source})
    inst = AssociationInstance.from_upper(detections, document['alpha'], document['beta_upper'])
    solution = None
    if 'solution' in document:
        solution = AssociationSolution.from_selection(inst, document['solution']['selected'])
    return inst, solution


def write_instance(path: str, inst: AssociationInstance, solution: Optional[AssociationSolution] = None) -> None:
    write_json(path, instance_to_dict(inst, solution))


def read_instance(path: str) -> Tuple[AssociationInstance, Optional[AssociationSolution]]:
    return instance_from_dict(_read_checked(path, 'jpa-instance'), source=path)


def global_instance_to_dict(inst: GlobalInstance, solution: Optional[GlobalSolution] = None) -> Dict[str, Any]:
    document = {
        'format': _tag('jpa-global-instance'),
        'proposals': _array(inst.proposals),
        'p_dj': _array(inst.p_dj),
        'p_pair': _array(inst.p_pair),
        'single_person': inst.single_person,
    }
    if solution is not None:
        document['solution'] = {'labels': list(solution.labels),
                                'clusters': [list(c) for c in solution.clusters],
                                'objective': solution.objective}
    return document


def global_instance_from_dict(document: Dict[str, Any], source: str = '') -> Tuple[GlobalInstance, Optional[GlobalSolution]]:
    inst = build_global_instance(document['proposals'], document['p_dj'], document['p_pair'],
                                 single_person=bool(document['single_person']))
    solution = None
    if 'solution' in document:
        labels = document['solution']['labels']
        assignment = [-1] * inst.size
        for c, cluster in enumerate(document['solution']['clusters']):
            for d in cluster:
                assignment[int(d)] = c
        solution = GlobalSolution.from_assignment(inst, labels, assignment)
    return inst, solution


def write_global_instance(path: str, inst: GlobalInstance, solution: Optional[GlobalSolution] = None) -> None:
    write_json(path, global_instance_to_dict(inst, solution))


def read_global_instance(path: str) -> Tuple[GlobalInstance, Optional[GlobalSolution]]:
    return global_instance_from_dict(_read_checked(path, 'jpa-global-instance'), source=path)


# ----------------------------------------------------------------------------
# Predictions
# ----------------------------------------------------------------------------

def _pose_to_list(pose: PersonPose) -> List[List[Any]]:
    return [[joint.joint_name, float(entry.u), float(entry.v), float(entry.confidence)]
            for joint in pose.visible_joints() for entry in [pose.get(joint)]]


def write_predictions(path: str, predictions: Sequence[PredictedPose], scenes_hash_value: str,
                      settings: Dict[str, Any], skipped: int = 0) -> None:
    document = {
        'format': _tag('jpa-pred'),
        'scenes_hash': scenes_hash_value,
        'settings': settings,
        'skipped_regions': int(skipped),
        'predictions': [{'scene_id': p.scene_id, 'region_id': p.region_id, 'joints': _pose_to_list(p.pose)}
                        for p in predictions],
    }
    write_json(path, document)


def read_predictions(path: str) -> Tuple[Dict[str, Any], List[PredictedPose]]:
    """
    Returns:
        (document header without the predictions, predictions)
    """
    document = _read_checked(path, 'jpa-pred')
    predictions = []
    try:
        for entry in document['predictions']:
            mapping = {JointType.from_name(name): PoseJoint(u=float(u), v=float(v), confidence=float(conf))
                       for name, u, v, conf in entry['joints']}
            predictions.append(PredictedPose(scene_id=str(entry['scene_id']), region_id=int(entry['region_id']),
                                             pose=PersonPose.from_mapping(mapping)))
    except (KeyError, TypeError, ValueError) as e:
        raise StructuralError(f"Malformed predictions in {path}: {e}", {'path': path}) from e
    header = {key: value for key, value in document.items() if key != 'predictions'}
    return header, predictions


def timing_path(predictions_path: str) -> str:
    """Sibling ``<name>.timing.json`` of a predictions file."""
    root, _ = os.path.splitext(predictions_path)
    return f"{root}.timing.json"
