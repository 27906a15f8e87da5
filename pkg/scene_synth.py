"""
Synthetic Scene Module

Generates multi-person scenes with ground-truth poses and per-region score
maps standing in for the output of a multi-stage pose CNN, and extracts
joint candidates from those maps.

Every region is centred on its primary person. A joint channel holds a
Gaussian peak for every visible joint of that type inside the region; peaks
of the primary person keep their full strength, peaks of other persons are
scaled by the distractor attenuation.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_dilation, find_objects, label, maximum_filter

from config import SynthConfig
from errors import ConfigError, StructuralError
from logger import create_jpa_logger
from models import (
    BACKGROUND_CHANNEL, JOINT_COUNT, MAP_CHANNELS, Detection, GroundTruthJoint,
    GroundTruthPerson, JointType, PersonPose, PoseJoint, Region, RenderParams,
    Scene, ScoreMap,
)

logger = create_jpa_logger('scene_synth')

# Upright frontal skeleton in units of person height, origin between the hips
SKELETON_TEMPLATE = {
    JointType.HEAD: (0.0, -0.47),
    JointType.NECK: (0.0, -0.35),
    JointType.R_SHOULDER: (-0.11, -0.32),
    JointType.L_SHOULDER: (0.11, -0.32),
    JointType.R_ELBOW: (-0.15, -0.18),
    JointType.L_ELBOW: (0.15, -0.18),
    JointType.R_WRIST: (-0.17, -0.05),
    JointType.L_WRIST: (0.17, -0.05),
    JointType.R_HIP: (-0.07, 0.0),
    JointType.L_HIP: (0.07, 0.0),
    JointType.R_KNEE: (-0.08, 0.24),
    JointType.L_KNEE: (0.08, 0.24),
    JointType.R_ANKLE: (-0.08, 0.47),
    JointType.L_ANKLE: (0.08, 0.47),
}

# Limbs move more than the torso
JITTER_WEIGHT = {
    JointType.HEAD: 0.5, JointType.NECK: 0.5,
    JointType.R_SHOULDER: 0.5, JointType.L_SHOULDER: 0.5,
    JointType.R_ELBOW: 1.5, JointType.L_ELBOW: 1.5,
    JointType.R_WRIST: 2.5, JointType.L_WRIST: 2.5,
    JointType.R_HIP: 0.5, JointType.L_HIP: 0.5,
    JointType.R_KNEE: 1.0, JointType.L_KNEE: 1.0,
    JointType.R_ANKLE: 1.5, JointType.L_ANKLE: 1.5,
}

DEFAULT_MIN_CONFIDENCE = 1e-6

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_NEIGHBOUR_RING = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool)


def _scene_rng(cfg: SynthConfig, scene_index: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed), int(scene_index)])


def _place_people(cfg: SynthConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Pelvis centres and heights of the persons, left to right."""
    image_w, image_h = cfg.image_size
    count = int(rng.integers(cfg.persons[0], cfg.persons[1] + 1))
    heights = rng.uniform(cfg.person_height[0], cfg.person_height[1], size=count)

    spacing = 0.45 * float(np.mean(heights)) * (1.5 - min(cfg.overlap, 1.25))
    steps = spacing * rng.uniform(0.8, 1.2, size=count)
    steps[0] = 0.0
    xs = np.cumsum(steps)
    span = xs[-1] - xs[0]
    slack = max(image_w - span, 0.0)
    xs = xs - xs[0] + (image_w - span) / 2.0 + rng.uniform(-0.25, 0.25) * slack
    ys = image_h / 2.0 + rng.uniform(-0.08, 0.08, size=count) * image_h
    return np.stack([xs, ys], axis=1), heights


def _pose_person(center: np.ndarray, height: float, cfg: SynthConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Joint locations (J, 2) of one person in image coordinates."""
    locations = np.zeros((JOINT_COUNT, 2))
    noise = rng.normal(0.0, 1.0, size=(JOINT_COUNT, 2))
    for joint in JointType:
        du, dv = SKELETON_TEMPLATE[joint]
        scale = cfg.pose_jitter * height * JITTER_WEIGHT[joint]
        locations[joint] = center + height * np.array([du, dv]) + scale * noise[joint]
    return locations


def _region_for(locations: np.ndarray, person: int, cfg: SynthConfig,
                rng: np.random.Generator) -> Region:
    """GT-derived box around a person, scaled by the margin and centre-jittered."""
    image_w, image_h = cfg.image_size
    lo = locations.min(axis=0)
    hi = locations.max(axis=0)
    box_w, box_h = hi - lo
    center = (lo + hi) / 2.0 + rng.normal(0.0, cfg.region_jitter, size=2) * np.array([box_w, box_h])
    width = max(box_w, 0.5 * box_h) * cfg.region_margin
    height = box_h * cfg.region_margin

    x0 = int(np.clip(round(center[0] - width / 2.0), 0, image_w - 1))
    y0 = int(np.clip(round(center[1] - height / 2.0), 0, image_h - 1))
    x1 = int(np.clip(round(center[0] + width / 2.0), x0 + 1, image_w))
    y1 = int(np.clip(round(center[1] + height / 2.0), y0 + 1, image_h))
    return Region(x0=x0, y0=y0, x1=x1, y1=y1, person=person)


def generate_scene(cfg: SynthConfig, scene_index: int = 0, materialize_maps: bool = True) -> Scene:
    """
    Generate one synthetic scene.

    Args:
        cfg: Generation settings
        scene_index: Position of the scene in its set; together with
            ``cfg.seed`` it fully determines the result
        materialize_maps: Render every region's score maps into the scene

    Returns:
        Scene with one region per person

    Raises:
        ConfigError: degenerate configuration
    """
    if min(cfg.image_size) <= 0 or cfg.sigma <= 0:
        raise ConfigError("Degenerate synthesis config: image size and sigma must be positive")

    rng = _scene_rng(cfg, scene_index)
    image_w, image_h = cfg.image_size
    centers, heights = _place_people(cfg, rng)

    persons: List[GroundTruthPerson] = []
    all_locations = []
    for center, height in zip(centers, heights):
        locations = _pose_person(center, float(height), cfg, rng)
        dropped = rng.random(JOINT_COUNT) < cfg.dropout
        joints = []
        for joint in JointType:
            u, v = locations[joint]
            inside = 0.0 <= u <= image_w - 1 and 0.0 <= v <= image_h - 1
            joints.append(GroundTruthJoint(u=float(u), v=float(v),
                                           visible=bool(inside and not dropped[joint])))
        persons.append(GroundTruthPerson(joints=tuple(joints)))
        all_locations.append(locations)

    strengths = rng.uniform(cfg.peak_strength[0], cfg.peak_strength[1],
                            size=(len(persons), JOINT_COUNT))
    regions = tuple(_region_for(locations, p, cfg, rng) for p, locations in enumerate(all_locations))
    noise_seeds = tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=len(regions)))

    render = RenderParams(
        sigma=float(cfg.sigma),
        attenuation=float(cfg.attenuation),
        noise_amplitude=float(cfg.noise_amplitude),
        strengths=tuple(tuple(float(s) for s in row) for row in strengths),
        noise_seeds=noise_seeds,
    )
    scene = Scene(
        scene_id=f"scene_{scene_index:04d}",
        width=image_w,
        height=image_h,
        persons=tuple(persons),
        regions=regions,
        render=render,
    )
    if materialize_maps:
        scene = with_score_maps(scene)
    logger.debug(f"Generated {scene.scene_id}: {len(persons)} persons")
    return scene


def render_score_maps(scene: Scene, region_index: int) -> np.ndarray:
    """
    Render the J+1 score maps of one region.

    Returns:
        Array of shape (J+1, h, w) in the region frame, values in [0, 1]
    """
    region = scene.regions[region_index]
    render = scene.render
    h, w = region.height, region.width
    grid_u = np.arange(w, dtype=float)
    grid_v = np.arange(h, dtype=float)
    two_sigma_sq = 2.0 * render.sigma ** 2

    maps = np.zeros((MAP_CHANNELS, h, w))
    for p, person in enumerate(scene.persons):
        scale_p = 1.0 if p == region.person else render.attenuation
        for joint in JointType:
            gt = person.joints[joint]
            if not gt.visible:
                continue
            peak = scale_p * render.strengths[p][joint]
            gu = np.exp(-(grid_u - (gt.u - region.x0)) ** 2 / two_sigma_sq)
            gv = np.exp(-(grid_v - (gt.v - region.y0)) ** 2 / two_sigma_sq)
            np.maximum(maps[joint], peak * np.outer(gv, gu), out=maps[joint])

    if render.noise_amplitude > 0:
        noise_rng = np.random.default_rng(render.noise_seeds[region_index])
        maps[:JOINT_COUNT] += noise_rng.uniform(0.0, render.noise_amplitude, size=(JOINT_COUNT, h, w))
    np.clip(maps, 0.0, 1.0, out=maps)
    maps[BACKGROUND_CHANNEL] = np.clip(1.0 - maps[:JOINT_COUNT].max(axis=0), 0.0, 1.0)
    return maps


def with_score_maps(scene: Scene) -> Scene:
    """Scene with every region's maps rendered, unless already present."""
    if scene.score_maps is not None:
        return scene
    stacks = []
    for index in range(len(scene.regions)):
        stack = render_score_maps(scene, index)
        stack.setflags(write=False)
        stacks.append(stack)
    return scene._replace(score_maps=tuple(stacks))


def local_maxima(values: np.ndarray, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> np.ndarray:
    """
    Boolean mask of 8-neighbourhood maxima above ``min_confidence``.

    A pixel counts when it is strictly above all of its neighbours. A flat
    plateau counts once, at its first pixel in row-major order, when every
    pixel around it is strictly lower; a map that is one plateau has none.
    """
    neighbours = maximum_filter(values, footprint=_NEIGHBOUR_RING, mode='constant', cval=-np.inf)
    above = values > min_confidence
    mask = (values > neighbours) & above
    flat_top = (values == neighbours) & above

    labels, _ = label(flat_top, structure=_EIGHT_CONNECTED)
    for index, window in enumerate(find_objects(labels), start=1):
        rows = slice(max(window[0].start - 1, 0), window[0].stop + 1)
        cols = slice(max(window[1].start - 1, 0), window[1].stop + 1)
        member = labels[rows, cols] == index
        ring = binary_dilation(member, structure=_EIGHT_CONNECTED) & ~member
        level = values[rows, cols][member][0]
        if ring.any() and values[rows, cols][ring].max() < level:
            r, c = divmod(int(np.argmax(member)), member.shape[1])
            mask[rows.start + r, cols.start + c] = True
    return mask


def sample_candidates(score_map: ScoreMap, n: int, nms_radius: float,
                      min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                      start_id: int = 0) -> List[Detection]:
    """
    Take up to ``n`` candidates from a joint score map.

    Local maxima are visited by descending score (row-major order on ties);
    a maximum closer than ``nms_radius`` to an already taken one is
    suppressed.

    Args:
        score_map: Joint channel map
        n: Maximum number of candidates
        nms_radius: Suppression radius in pixels
        min_confidence: Maxima at or below this value are ignored
        start_id: Id of the first returned detection

    Returns:
        Detections sorted by descending confidence
    """
    if n < 1:
        raise ConfigError(f"Number of candidates must be >= 1, got {n}")
    if score_map.is_background:
        raise StructuralError("Candidates are sampled from joint channels only")

    values = score_map.values
    mask = local_maxima(values, min_confidence)
    flat = np.flatnonzero(mask.ravel())
    if flat.size == 0:
        return []
    scores = values.ravel()[flat]
    order = np.lexsort((flat, -scores))

    taken: List[Tuple[float, float]] = []
    detections: List[Detection] = []
    width = values.shape[1]
    radius_sq = nms_radius ** 2
    for k in order:
        row, col = divmod(int(flat[k]), width)
        if any((col - tu) ** 2 + (row - tv) ** 2 < radius_sq for tu, tv in taken):
            continue
        taken.append((col, row))
        detections.append(Detection(
            id=start_id + len(detections),
            joint=JointType(score_map.channel),
            u=float(col),
            v=float(row),
            confidence=float(scores[k]),
        ))
        if len(detections) == n:
            break
    return detections


def sample_region_candidates(stack: np.ndarray, n: int, nms_radius: float,
                             joints: Optional[Sequence[JointType]] = None) -> List[Detection]:
    """Candidates of every requested joint channel with dense ids."""
    joints = tuple(JointType) if joints is None else tuple(joints)
    detections: List[Detection] = []
    for joint in joints:
        detections.extend(sample_candidates(ScoreMap(channel=int(joint), values=stack[joint]),
                                            n, nms_radius, start_id=len(detections)))
    return detections


def argmax_baseline(maps: Sequence[ScoreMap]) -> PersonPose:
    """
    Pose from the global maximum of every joint map.

    Ties go to the smallest row-major index, so an all-zero map yields the
    top-left pixel with confidence 0.

    Raises:
        StructuralError: a joint map is missing
    """
    by_channel = {m.channel: m for m in maps if not m.is_background}
    missing = [JointType(j).joint_name for j in range(JOINT_COUNT) if j not in by_channel]
    if missing:
        raise StructuralError(f"Missing score maps for joints: {missing}")

    joints = {}
    for joint in JointType:
        values = by_channel[int(joint)].values
        index = int(np.argmax(values))
        row, col = divmod(index, values.shape[1])
        joints[joint] = PoseJoint(u=float(col), v=float(row), confidence=float(values[row, col]))
    return PersonPose.from_mapping(joints)


def generate_scenes(cfg: SynthConfig, count: int) -> List[Scene]:
    """Scenes ``0 .. count-1`` of a seeded set, maps rendered."""
    return [generate_scene(cfg, index) for index in range(count)]


def region_count(scenes: Sequence[Scene]) -> int:
    return sum(len(scene.regions) for scene in scenes)
