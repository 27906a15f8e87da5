"""
Configuration Management Module

Handles configuration settings and validation for the joint association
pipeline: synthetic scenes, pairwise training, solving, evaluation and
benchmarking. A JSON config file provides the base; CLI flags override it.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from errors import ConfigError
from models import JointType
from utils import read_json, sha256_hex

logger = logging.getLogger('jpa.config')

SOLVE_MODES = ('argmax', 'ljpa', 'global')
CLASSIFIER_KINDS = ('logistic', 'rbf_svm')


def _check_range(name: str, value: float, low: float = None, high: float = None,
                 low_open: bool = False) -> None:
    if low is not None and (value < low or (low_open and value == low)):
        bound = '>' if low_open else '>='
        raise ConfigError(f"{name} must be {bound} {low}, got {value}", {'field': name})
    if high is not None and value > high:
        raise ConfigError(f"{name} must be <= {high}, got {value}", {'field': name})


def _check_pair(name: str, pair: Tuple, low_open: bool = False, low: float = 0.0) -> None:
    if len(pair) != 2 or pair[0] > pair[1]:
        raise ConfigError(f"{name} must be an ordered (min, max) pair, got {pair}", {'field': name})
    _check_range(f"{name}[0]", pair[0], low=low, low_open=low_open)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scene generation settings."""
    persons: Tuple[int, int] = (2, 3)
    overlap: float = 0.8
    sigma: float = 3.0
    attenuation: float = 0.7
    noise_amplitude: float = 0.15
    dropout: float = 0.25
    region_margin: float = 1.25
    region_jitter: float = 0.05
    seed: int = 0
    image_size: Tuple[int, int] = (384, 288)
    person_height: Tuple[float, float] = (100.0, 150.0)
    pose_jitter: float = 0.03
    peak_strength: Tuple[float, float] = (0.45, 1.0)

    def __post_init__(self):
        object.__setattr__(self, 'persons', tuple(int(p) for p in self.persons))
        object.__setattr__(self, 'image_size', tuple(int(s) for s in self.image_size))
        object.__setattr__(self, 'person_height', tuple(float(h) for h in self.person_height))
        object.__setattr__(self, 'peak_strength', tuple(float(s) for s in self.peak_strength))
        _check_pair('persons', self.persons, low=1)
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigError(f"image_size must be two positive integers, got {self.image_size}",
                              {'field': 'image_size'})
        _check_pair('person_height', self.person_height, low_open=True)
        _check_pair('peak_strength', self.peak_strength, low_open=True)
        _check_range('peak_strength[1]', self.peak_strength[1], high=1.0)
        _check_range('overlap', self.overlap, low=0.0)
        _check_range('sigma', self.sigma, low=0.0, low_open=True)
        _check_range('attenuation', self.attenuation, low=0.0, high=1.0)
        _check_range('noise_amplitude', self.noise_amplitude, low=0.0)
        _check_range('dropout', self.dropout, low=0.0, high=1.0)
        _check_range('region_margin', self.region_margin, low=1.0, low_open=True)
        _check_range('region_jitter', self.region_jitter, low=0.0)
        _check_range('pose_jitter', self.pose_jitter, low=0.0)


PRESETS: Dict[str, SynthConfig] = {
    'clean': SynthConfig(persons=(1, 1), overlap=0.0, noise_amplitude=0.0, dropout=0.0,
                         peak_strength=(0.7, 1.0), region_jitter=0.0),
    'occluded': SynthConfig(),
    'crowded': SynthConfig(persons=(3, 4), overlap=1.0, noise_amplitude=0.1, dropout=0.1),
}


def preset_config(name: str, seed: Optional[int] = None) -> SynthConfig:
    """
    Look up a preset by name.

    Raises:
        ConfigError: unknown preset
    """
    if name not in PRESETS:
        raise ConfigError(f"Invalid preset: {name}. Valid presets: {sorted(PRESETS)}",
                          {'preset': name})
    cfg = PRESETS[name]
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    return cfg


@dataclass(frozen=True)
class TrainingConfig:
    """Pairwise model training settings."""
    n_candidates: int = 5
    nms_radius: float = 5.0
    match_fraction: float = 0.5
    classifier: str = 'logistic'
    l2: float = 1.0
    svm_c: float = 1.0
    rbf_gamma: Optional[float] = None
    holdout_fraction: float = 0.2
    max_samples_per_class: int = 400
    annotation_jitter: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.classifier not in CLASSIFIER_KINDS:
            raise ConfigError(f"Invalid classifier: {self.classifier}. Valid: {list(CLASSIFIER_KINDS)}",
                              {'field': 'classifier'})
        _check_range('n_candidates', self.n_candidates, low=1)
        _check_range('nms_radius', self.nms_radius, low=0.0)
        _check_range('match_fraction', self.match_fraction, low=0.0, low_open=True)
        _check_range('l2', self.l2, low=0.0)
        _check_range('svm_c', self.svm_c, low=0.0, low_open=True)
        if self.rbf_gamma is not None:
            _check_range('rbf_gamma', self.rbf_gamma, low=0.0, low_open=True)
        _check_range('holdout_fraction', self.holdout_fraction, low=0.0, high=0.9, low_open=True)
        _check_range('max_samples_per_class', self.max_samples_per_class, low=2)
        _check_range('annotation_jitter', self.annotation_jitter, low=0.0)


@dataclass(frozen=True)
class SolveConfig:
    """Inference settings; defaults are the flagship operating point."""
    mode: str = 'ljpa'
    n_candidates: int = 5
    tau: float = 0.2
    nms_radius: float = 5.0
    max_detections: int = 200
    joints: Optional[Tuple[str, ...]] = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in SOLVE_MODES:
            raise ConfigError(f"Invalid mode: {self.mode}. Valid modes: {list(SOLVE_MODES)}",
                              {'field': 'mode'})
        _check_range('n_candidates', self.n_candidates, low=1)
        _check_range('tau', self.tau, low=0.0, high=1.0)
        _check_range('nms_radius', self.nms_radius, low=0.0)
        _check_range('max_detections', self.max_detections, low=1)
        _check_range('workers', self.workers, low=1)
        if self.joints is not None:
            names = tuple(self.joints)
            try:
                [JointType.from_name(name) for name in names]
            except ValueError as e:
                raise ConfigError(str(e), {'field': 'joints'}) from e
            object.__setattr__(self, 'joints', names)

    def joint_subset(self) -> Tuple[JointType, ...]:
        """Joints to solve for, in index order."""
        if self.joints is None:
            return tuple(JointType)
        return tuple(sorted({JointType.from_name(name) for name in self.joints}))


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol settings."""
    match_fraction: float = 0.5
    min_region_area: int = 80 * 80

    def __post_init__(self):
        _check_range('match_fraction', self.match_fraction, low=0.0, low_open=True)
        _check_range('min_region_area', self.min_region_area, low=0)


@dataclass(frozen=True)
class BenchConfig:
    """Local versus global runtime benchmark settings."""
    sizes: Tuple[int, ...] = (4, 6, 8, 10)
    trials: int = 3
    joints: Tuple[str, ...] = ('head', 'neck', 'r_shoulder', 'l_shoulder')
    scenes: int = 3

    def __post_init__(self):
        object.__setattr__(self, 'sizes', tuple(int(s) for s in self.sizes))
        object.__setattr__(self, 'joints', tuple(self.joints))
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError(f"sizes must be positive, got {self.sizes}", {'field': 'sizes'})
        _check_range('trials', self.trials, low=1)
        _check_range('scenes', self.scenes, low=1)
        try:
            [JointType.from_name(name) for name in self.joints]
        except ValueError as e:
            raise ConfigError(str(e), {'field': 'joints'}) from e


_SECTIONS = {
    'synth': SynthConfig,
    'training': TrainingConfig,
    'solve': SolveConfig,
    'eval': EvalConfig,
    'bench': BenchConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    """All settings of one pipeline run."""
    seed: int = 0
    preset: str = 'occluded'
    synth: SynthConfig = field(default_factory=SynthConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    # synth keys set explicitly in the config file; they win over a --preset flag
    synth_overrides: Tuple[Tuple[str, Any], ...] = ()

    def with_overrides(self, **flags: Any) -> 'PipelineConfig':
        """
        Apply command-line flags; ``None`` means the flag was not given.

        Recognized flags: seed, preset, tau, n_candidates, mode, workers, joints.
        A preset replaces the synth section, then the config file's own synth
        keys are applied on top of it; a seed flag wins over both.
        """
        cfg = self
        if flags.get('preset') is not None:
            base = dataclasses.asdict(preset_config(flags['preset'], seed=cfg.seed))
            synth = _section(SynthConfig, {**base, **dict(cfg.synth_overrides)}, 'synth')
            cfg = dataclasses.replace(cfg, preset=flags['preset'], synth=synth)
        if flags.get('seed') is not None:
            seed = int(flags['seed'])
            cfg = dataclasses.replace(
                cfg, seed=seed,
                synth=dataclasses.replace(cfg.synth, seed=seed),
                training=dataclasses.replace(cfg.training, seed=seed),
            )
        solve_updates = {key: flags[key] for key in ('tau', 'n_candidates', 'mode', 'workers', 'joints')
                         if flags.get(key) is not None}
        if solve_updates:
            cfg = dataclasses.replace(cfg, solve=dataclasses.replace(cfg.solve, **solve_updates))
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def config_hash(cfg) -> str:
    """SHA-256 of a config dataclass in canonical JSON form."""
    return sha256_hex(dataclasses.asdict(cfg))


def _section(cls, data: Dict[str, Any], name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"Config section '{name}' must be an object", {'section': name})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in config section '{name}': {unknown}", {'section': name})
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"Invalid config section '{name}': {e}", {'section': name}) from e


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Load a pipeline configuration file.

    Args:
        path: JSON file with optional keys ``seed``, ``preset`` and the
            sections ``synth``, ``training``, ``solve``, ``eval``, ``bench``.
            ``None`` returns the defaults.

    Returns:
        PipelineConfig

    Raises:
        ConfigError: missing file, unknown keys or invalid values
    """
    if path is None:
        return PipelineConfig()
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}", {'path': path})

    data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must hold a JSON object: {path}", {'path': path})
    unknown = sorted(set(data) - set(_SECTIONS) - {'seed', 'preset'})
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}", {'path': path})

    seed = int(data.get('seed', 0))
    preset = data.get('preset', 'occluded')
    base_synth = preset_config(preset, seed=seed)
    synth_data = dict(data.get('synth', {}))
    explicit_synth = tuple(sorted(synth_data.items()))
    synth_data.setdefault('seed', seed)
    synth = _section(SynthConfig, {**dataclasses.asdict(base_synth), **synth_data}, 'synth')

    training_data = dict(data.get('training', {}))
    training_data.setdefault('seed', seed)

    cfg = PipelineConfig(
        seed=seed,
        preset=preset,
        synth=synth,
        training=_section(TrainingConfig, training_data, 'training'),
        solve=_section(SolveConfig, data.get('solve', {}), 'solve'),
        eval=_section(EvalConfig, data.get('eval', {}), 'eval'),
        bench=_section(BenchConfig, data.get('bench', {}), 'bench'),
        synth_overrides=explicit_synth,
    )
    logger.debug(f"Configuration loaded from {path}: preset={preset}, seed={seed}")
    return cfg
