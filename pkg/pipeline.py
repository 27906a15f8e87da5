"""
Pipeline Engine - Orchestrates the experiment phases

synth -> train -> solve -> eval, plus the parameter sweep and the local
versus global benchmark. Per-scene work runs in a process pool when more
than one worker is configured; results always come back in canonical
(scene, region) order.
"""

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

from affinity import PairwiseModel, accuracy_rows, apply_threshold, build_instance, train_pairwise
from config import PipelineConfig, SolveConfig, config_hash
from errors import ConfigError, InstanceTooLargeError, StructuralError
from evaluation import MapReport, evaluate
from global_solver import (
    MAX_LABELS, MAX_PROPOSALS, BenchmarkRow, benchmark_local_vs_global, global_pose,
    region_global_instance, solve_global_exact,
)
from ljpa_solver import extract_pose, solve_exact
from logger import JpaLogger, OperationTimer, create_jpa_logger, log_phase_banner
from models import PersonPose, PredictedPose, Scene, score_maps_from_stack
from reporting import ReportGenerator, ResultRow, SweepRow
from scene_synth import argmax_baseline, generate_scene, region_count, sample_region_candidates, with_score_maps
from storage import (
    read_model, read_predictions, read_scene_set, timing_path, write_model, write_predictions,
    write_scene_set,
)
from utils import ensure_writable_dir, median_or_none, read_json, require_dir, write_json

logger = create_jpa_logger('engine')

SWEEP_PARAMETERS = {'tau': float, 'n_candidates': int}


class RegionOutcome(NamedTuple):
    """Result of solving one region; ``pose`` is None when the region was skipped."""
    scene_id: str
    region_id: int
    pose: Optional[PersonPose]
    solve_ms: float


def solve_region(scene: Scene, region_index: int, model: Optional[PairwiseModel],
                 cfg: SolveConfig) -> RegionOutcome:
    """
    Estimate the primary person's pose in one region.

    Raises:
        InstanceTooLargeError: a local instance beyond the exact solver's cap
    """
    scene = with_score_maps(scene)
    region = scene.regions[region_index]
    stack = scene.score_maps[region_index]

    if cfg.mode == 'argmax':
        with OperationTimer(f"argmax {scene.scene_id}/{region_index}", quiet=True) as timer:
            pose = argmax_baseline(score_maps_from_stack(stack)).translated(region.x0, region.y0)
        return RegionOutcome(scene.scene_id, region_index, pose, timer.elapsed_ms)

    joints = cfg.joint_subset()
    candidates = sample_region_candidates(stack, cfg.n_candidates, cfg.nms_radius, joints)
    detections = apply_threshold(candidates, cfg.tau)

    if cfg.mode == 'ljpa':
        if len(detections) > cfg.max_detections:
            raise InstanceTooLargeError(
                f"Region {scene.scene_id}/{region_index} has {len(detections)} detections, cap is "
                f"{cfg.max_detections}; lower --n-candidates or raise --tau",
                size=len(detections), cap=cfg.max_detections)
        inst = build_instance(detections, model, stack)
        with OperationTimer(f"ljpa {scene.scene_id}/{region_index}", quiet=True) as timer:
            solution = solve_exact(inst, cfg.max_detections)
        return RegionOutcome(scene.scene_id, region_index, extract_pose(inst, solution, region), timer.elapsed_ms)

    if len(joints) > MAX_LABELS or len(detections) > MAX_PROPOSALS:
        logger.debug(f"Region {scene.scene_id}/{region_index} skipped: D={len(detections)}, J={len(joints)}")
        return RegionOutcome(scene.scene_id, region_index, None, 0.0)
    inst = region_global_instance(detections, joints, model, stack)
    with OperationTimer(f"global {scene.scene_id}/{region_index}", quiet=True) as timer:
        solution = solve_global_exact(inst)
    return RegionOutcome(scene.scene_id, region_index, global_pose(inst, solution, joints, region),
                         timer.elapsed_ms)


_worker_state: Dict[str, Any] = {}


def _init_worker(model: Optional[PairwiseModel], cfg: SolveConfig) -> None:
    _worker_state['model'] = model
    _worker_state['cfg'] = cfg


def _solve_scene(scene: Scene) -> List[RegionOutcome]:
    model, cfg = _worker_state['model'], _worker_state['cfg']
    return [solve_region(scene, index, model, cfg) for index in range(len(scene.regions))]


def solve_scenes(scenes: Sequence[Scene], model: Optional[PairwiseModel], cfg: SolveConfig) -> List[RegionOutcome]:
    """Solve every region of every scene, in (scene, region) order."""
    if cfg.workers > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker,
                                 initargs=(model, cfg)) as executor:
            per_scene = list(executor.map(_solve_scene, scenes))
    else:
        _init_worker(model, cfg)
        per_scene = [_solve_scene(scene) for scene in scenes]
    return [outcome for outcomes in per_scene for outcome in outcomes]


def solve_settings(cfg: SolveConfig) -> Dict[str, Any]:
    """Settings recorded in a predictions file."""
    return {
        'mode': cfg.mode,
        'tau': cfg.tau,
        'n_candidates': cfg.n_candidates,
        'nms_radius': cfg.nms_radius,
        'joints': [joint.joint_name for joint in cfg.joint_subset()],
    }


def setting_label(settings: Dict[str, Any]) -> str:
    if settings.get('mode') == 'argmax':
        return 'argmax'
    return f"{settings['mode']} N={settings['n_candidates']} tau={settings['tau']:g}"


class PipelineEngine:
    """Main experiment orchestrator."""

    def __init__(self, config: PipelineConfig):
        """
        Initialize pipeline engine.

        Args:
            config: Pipeline configuration
        """
        self.config = config
        self.logger = create_jpa_logger('engine.pipeline')
        self.stats: Dict[str, Any] = {'phases': []}

    def _phase(self, name: str, duration_ms: float, **details: Any) -> None:
        self.stats['phases'].append({'name': name, 'duration_ms': duration_ms, **details})

    def synth(self, output_dir: str, count: int, embed_maps: bool = False) -> Dict[str, Any]:
        """
        Generate and write ``count`` scenes.

        Returns:
            The manifest

        Raises:
            ConfigError: bad count or unwritable directory
        """
        if count < 1:
            raise ConfigError(f"Scene count must be >= 1, got {count}")
        output_dir = ensure_writable_dir(output_dir)
        log_phase_banner(self.logger, "SYNTHESIS PHASE")
        cfg = self.config.synth
        with OperationTimer("scene synthesis") as timer:
            scenes = [generate_scene(cfg, index, materialize_maps=embed_maps) for index in range(count)]
            manifest = write_scene_set(output_dir, scenes, seed=cfg.seed, preset=self.config.preset,
                                       config_hash=config_hash(self.config), embed_maps=embed_maps)
        self._phase('synth', timer.elapsed_ms, scenes=count)
        return manifest

    def train(self, scenes_dir: str, model_out: str) -> Tuple[PairwiseModel, List[Tuple[str, int, int, float, int]]]:
        """Train the pairwise model on a scene directory and write it."""
        _, scenes = read_scene_set(require_dir(scenes_dir))
        log_phase_banner(self.logger, "TRAINING PHASE")
        with OperationTimer("pairwise training") as timer:
            model = train_pairwise(scenes, self.config.training)
        write_model(model_out, model)
        self._phase('train', timer.elapsed_ms, pairs=len(model.pairs))
        return model, accuracy_rows(model)

    def _load_model(self, model_path: Optional[str], required: bool) -> Optional[PairwiseModel]:
        if model_path is None:
            if required:
                raise ConfigError(f"Mode {self.config.solve.mode} needs --model")
            return None
        return read_model(model_path)

    def solve(self, scenes_dir: str, model_path: Optional[str],
              predictions_out: str) -> Tuple[List[PredictedPose], Dict[str, Any]]:
        """
        Solve every region and write predictions plus the timing sidecar.

        Returns:
            (predictions, timing document)
        """
        cfg = self.config.solve
        manifest, scenes = read_scene_set(require_dir(scenes_dir))
        model = self._load_model(model_path, required=cfg.mode != 'argmax')

        log_phase_banner(self.logger, f"SOLVE PHASE ({cfg.mode})")
        op_logger = JpaLogger('engine.solve')
        op_logger.start_operation("solving", f"{region_count(scenes)} regions in {len(scenes)} scenes, workers={cfg.workers}")
        outcomes = solve_scenes(scenes, model, cfg)
        predictions, timing = self._collect(outcomes, cfg)

        write_predictions(predictions_out, predictions, manifest['scenes_hash'], solve_settings(cfg),
                          skipped=timing['skipped_regions'])
        write_json(timing_path(predictions_out), timing)
        op_logger.end_operation("solving", True, f"{len(predictions)} poses, "
                                                 f"median {timing['median_ms']} ms per region")
        self._phase('solve', sum(timing['per_region_ms']), regions=len(outcomes))
        return predictions, timing

    def _collect(self, outcomes: Sequence[RegionOutcome], cfg: SolveConfig) -> Tuple[List[PredictedPose], Dict[str, Any]]:
        predictions = [PredictedPose(o.scene_id, o.region_id, o.pose) for o in outcomes if o.pose is not None]
        skipped = sum(1 for o in outcomes if o.pose is None)
        if skipped:
            JpaLogger('engine.solve').warning_with_suggestion(
                f"{skipped} of {len(outcomes)} regions exceeded the global solver's caps and were skipped",
                "use a joint subset of at most 4 joints and fewer candidates")
        solved_ms = [o.solve_ms for o in outcomes if o.pose is not None]
        timing = {
            'mode': cfg.mode,
            'per_region_ms': solved_ms,
            'median_ms': median_or_none(solved_ms),
            'skipped_regions': skipped,
        }
        return predictions, timing

    def evaluate(self, predictions_path: str, scenes_dir: str) -> ResultRow:
        """
        Score a predictions file against its scene directory.

        Raises:
            StructuralError: the predictions were made on other scenes
        """
        header, predictions = read_predictions(predictions_path)
        manifest, scenes = read_scene_set(require_dir(scenes_dir))
        if header['scenes_hash'] != manifest['scenes_hash']:
            raise StructuralError(f"Predictions {predictions_path} were made on other scenes than {scenes_dir}",
                                  {'predictions': predictions_path, 'scenes': scenes_dir})
        log_phase_banner(self.logger, "EVALUATION PHASE")
        report = evaluate(predictions, scenes, self.config.eval)

        median_ms = None
        timing_file = timing_path(predictions_path)
        if os.path.exists(timing_file):
            median_ms = read_json(timing_file).get('median_ms')
        self.logger.info(f"Total AP: {report.total}")
        return ResultRow(setting=setting_label(header['settings']), report=report, median_solve_ms=median_ms)

    def sweep(self, scenes_dir: str, model_path: Optional[str], parameter: str,
              grid: Sequence[Any]) -> List[SweepRow]:
        """
        Solve and evaluate once per grid value of ``tau`` or ``n_candidates``.

        Raises:
            ConfigError: unknown parameter or empty grid
        """
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"Invalid sweep parameter: {parameter}. Valid: {sorted(SWEEP_PARAMETERS)}")
        if not grid:
            raise ConfigError("Empty parameter grid")
        _, scenes = read_scene_set(require_dir(scenes_dir))
        model = self._load_model(model_path, required=self.config.solve.mode != 'argmax')

        log_phase_banner(self.logger, f"SWEEP PHASE ({parameter})")
        op_logger = JpaLogger('engine.sweep')
        rows: List[SweepRow] = []
        for index, value in enumerate(grid, start=1):
            cfg = dataclasses.replace(self.config.solve, **{parameter: SWEEP_PARAMETERS[parameter](value)})
            outcomes = solve_scenes(scenes, model, cfg)
            predictions, timing = self._collect(outcomes, cfg)
            report: MapReport = evaluate(predictions, scenes, self.config.eval)
            rows.append(SweepRow(parameter=parameter, value=float(value), map=report.total,
                                 median_ms=timing['median_ms']))
            op_logger.progress(index, len(grid), f"{parameter}={value}: mAP {report.total}")
        return rows

    def bench(self, scenes_dir: str, model_path: str) -> List[BenchmarkRow]:
        """Local versus global solve times on the same detections."""
        _, scenes = read_scene_set(require_dir(scenes_dir))
        model = read_model(model_path)
        log_phase_banner(self.logger, "BENCHMARK PHASE")
        return benchmark_local_vs_global(scenes, model, self.config.bench, self.config.training)

    def reports(self, report_dir: str) -> ReportGenerator:
        return ReportGenerator(ensure_writable_dir(report_dir))
