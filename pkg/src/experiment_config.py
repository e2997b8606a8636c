"""
Experiment Configuration
TOML/JSON experiment files, flag overrides, environment defaults and sweep plans
"""

import copy
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from dotenv import load_dotenv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from geometry import ManifoldModel, manifold_from_config
from landmarking import ConfigError, LandmarkConfig, TuningConstants, resolve_config
from sampling import DEFAULT_MAX_DRAWS, derive_seed
from sweep_records import METRIC_COLUMNS

logger = logging.getLogger(__name__)

load_dotenv()

DEFAULT_DATA_DIR = 'data'
MODES = ('two_round', 'multi_round')

DEFAULT_EXPERIMENT: Dict[str, Any] = {
    'manifold': {'kind': 'sphere', 'd': 2, 'D': 128, 'radii': [1.0]},
    'sigma': 0.5 / math.sqrt(128),
    'seed': 0,
    'max_draws': DEFAULT_MAX_DRAWS,
    'constants': {'C2': 1.0, 'C3': 1.0, 'C6': 1.0, 'C7': 1.0},
    'perturbation': True,
    'R1_sq': None,
    'R2_sq': None,
    'n_mb1': None,
    'n_mb2': None,
    'rounds': 2,
    'radius_sq_schedule': None,
    'batch_schedule': None,
}

# grid axes and where they land in an experiment dict
GRID_AXES = {
    'kind': ('manifold', 'kind'),
    'd': ('manifold', 'd'),
    'D': ('manifold', 'D'),
    'radius': ('manifold', 'radii'),
    'sigma': ('sigma',),
    'sigma_sqrt_d_over_tau': None,
    'C2': ('constants', 'C2'),
    'C3': ('constants', 'C3'),
    'C6': ('constants', 'C6'),
    'C7': ('constants', 'C7'),
    'rounds': ('rounds',),
}


class InvalidPlanError(Exception):
    """Error used when a sweep plan contains a tuple that does not resolve to a valid configuration."""
    pass


def default_workers() -> int:
    value = os.getenv('LANDMARK_WORKERS')
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"Ignoring LANDMARK_WORKERS={value!r}; expected an integer")
    return max(1, os.cpu_count() or 1)


def default_data_dir() -> Path:
    return Path(os.getenv('LANDMARK_DATA_DIR', DEFAULT_DATA_DIR))


def load_config_file(path: Union[str, Path]) -> Dict:
    """Read a TOML or JSON experiment file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    if path.suffix.lower() == '.toml':
        with open(path, 'rb') as f:
            return tomllib.load(f)
    if path.suffix.lower() == '.json':
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    raise ConfigError(f"unsupported config format {path.suffix!r}; use .toml or .json")


def _deep_merge(base: Dict, update: Dict) -> Dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(cfg: Dict, overrides: Dict[str, Any]) -> Dict:
    """
    Merge flag overrides into a config. Keys may be dotted
    ('manifold.D'); None values mean "flag not given" and are skipped.
    """
    out = copy.deepcopy(cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = key.split('.')
        node = out
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return out


def parse_assignments(assignments: Optional[Sequence[str]]) -> Dict[str, Any]:
    """
    'manifold.D=256' style flags. Values are read as JSON where possible
    ('0.05', '[1, 2]', 'true') and kept as strings otherwise.
    """
    overrides: Dict[str, Any] = {}
    for item in assignments or []:
        key, sep, raw = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def load_experiment(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict:
    """Defaults, then the config file, then flag overrides (flags win)."""
    cfg = copy.deepcopy(DEFAULT_EXPERIMENT)
    if path is not None:
        cfg = _deep_merge(cfg, load_config_file(path))
    return apply_overrides(cfg, overrides or {})


def manifold_for(cfg: Dict) -> ManifoldModel:
    try:
        return manifold_from_config(cfg['manifold'])
    except ValueError as e:
        raise ConfigError(str(e))


def landmark_config_for(cfg: Dict, manifold: Optional[ManifoldModel] = None) -> LandmarkConfig:
    manifold = manifold or manifold_for(cfg)
    constants = TuningConstants(**{k: float(v) for k, v in (cfg.get('constants') or {}).items()})
    return resolve_config(
        manifold,
        float(cfg['sigma']),
        R1_sq=cfg.get('R1_sq'),
        R2_sq=cfg.get('R2_sq'),
        n_mb1=cfg.get('n_mb1'),
        n_mb2=cfg.get('n_mb2'),
        constants=constants,
        perturbation=bool(cfg.get('perturbation', True)),
        max_draws=int(cfg.get('max_draws') or DEFAULT_MAX_DRAWS),
        rounds=int(cfg.get('rounds', 2)),
        radius_sq_schedule=cfg.get('radius_sq_schedule'),
        batch_schedule=cfg.get('batch_schedule'),
    )


def tuple_parameters(cfg: Dict, config: LandmarkConfig) -> Dict:
    """Flat parameter columns describing one resolved tuple."""
    manifold = cfg['manifold']
    return {
        'kind': str(manifold['kind']).lower(),
        'intrinsic_dim': config.d,
        'ambient_dim': config.D,
        'sigma': config.sigma,
        'radius': float(max(manifold.get('radii') or [1.0])),
        'kappa': config.kappa,
        'diam': config.diam,
        'C2': config.constants.C2,
        'C3': config.constants.C3,
        'C6': config.constants.C6,
        'C7': config.constants.C7,
        'R1_sq': config.R1_sq,
        'R2_sq': config.R2_sq,
        'n_mb1': config.n_mb1,
        'n_mb2': config.n_mb2,
        'rounds': config.rounds,
    }


def _set_axis(cfg: Dict, axis: str, value: Any) -> None:
    if axis == 'sigma_sqrt_d_over_tau':
        return
    path = GRID_AXES[axis]
    node = cfg
    for part in path[:-1]:
        node = node.setdefault(part, {})
    if axis == 'radius':
        value = list(value) if isinstance(value, (list, tuple)) else [value]
    node[path[-1]] = value


def expand_grid(base: Dict, grid: Dict[str, Sequence]) -> List[Dict]:
    """
    Cartesian product of the grid axes in sorted axis order. The
    'sigma_sqrt_d_over_tau' axis sets sigma = value * tau / sqrt(D) after
    the manifold axes are applied.
    """
    unknown = sorted(set(grid) - set(GRID_AXES))
    if unknown:
        raise InvalidPlanError(f"unknown grid axes: {', '.join(unknown)}")
    if 'sigma' in grid and 'sigma_sqrt_d_over_tau' in grid:
        raise InvalidPlanError("grid sets both sigma and sigma_sqrt_d_over_tau")
    axes = sorted(grid)
    tuples = []
    for values in itertools.product(*(list(grid[a]) for a in axes)):
        cfg = copy.deepcopy(base)
        cfg.pop('grid', None)
        chosen = dict(zip(axes, values))
        for axis, value in chosen.items():
            _set_axis(cfg, axis, value)
        if 'sigma_sqrt_d_over_tau' in chosen:
            try:
                tau = manifold_for(cfg).constants.reach
            except ConfigError as e:
                raise InvalidPlanError(f"grid tuple {chosen}: {e}")
            cfg['sigma'] = chosen['sigma_sqrt_d_over_tau'] * tau / math.sqrt(int(cfg['manifold']['D']))
        tuples.append(cfg)
    return tuples


@dataclass(frozen=True)
class SweepPlan:
    """A validated sweep: resolved tuples times replications, all seeded from one base seed."""
    name: str
    tuples: Tuple[Dict, ...]
    parameters: Tuple[Dict, ...]
    replications: int
    base_seed: int
    output_dir: Path
    mode: str = 'two_round'
    metrics: Tuple[str, ...] = tuple(METRIC_COLUMNS)
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidPlanError(f"replications must be at least 1, got {self.replications}")
        if self.mode not in MODES:
            raise InvalidPlanError(f"mode must be one of {MODES}, got {self.mode!r}")
        unknown = sorted(set(self.metrics) - set(METRIC_COLUMNS))
        if unknown:
            raise InvalidPlanError(f"unknown metrics: {', '.join(unknown)}")

    @property
    def records_path(self) -> Path:
        return self.output_dir / 'records.jsonl'

    @property
    def timings_path(self) -> Path:
        return self.output_dir / 'timings.jsonl'

    @property
    def metadata_path(self) -> Path:
        return self.output_dir / 'plan.json'

    def seed_for(self, tuple_index: int, replication: int) -> int:
        return derive_seed(self.base_seed, tuple_index, replication)

    def jobs(self) -> List[Tuple[int, int]]:
        return [(t, r) for t in range(len(self.tuples)) for r in range(self.replications)]

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'replications': self.replications,
            'base_seed': self.base_seed,
            'mode': self.mode,
            'metrics': list(self.metrics),
            'tuples': list(self.parameters),
        }


def build_plan(
    cfg: Dict,
    output_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> SweepPlan:
    """
    Expand `cfg['grid']` and validate every tuple up front.

    Raises:
        InvalidPlanError: naming the first tuple that does not resolve
    """
    sweep = cfg.get('sweep') or {}
    name = str(sweep.get('name', 'sweep'))
    grid = cfg.get('grid') or {}
    tuples = expand_grid(cfg, grid) if grid else [copy.deepcopy(cfg)]

    parameters = []
    for index, tuple_cfg in enumerate(tuples):
        try:
            config = landmark_config_for(tuple_cfg)
        except (ConfigError, ValueError, TypeError) as e:
            raise InvalidPlanError(f"tuple {index} is invalid: {e}")
        parameters.append(tuple_parameters(tuple_cfg, config))

    out = Path(output_dir) if output_dir is not None else default_data_dir() / 'sweeps' / name
    plan = SweepPlan(
        name=name,
        tuples=tuple(tuples),
        parameters=tuple(parameters),
        replications=int(sweep.get('replications', 1)),
        base_seed=int(cfg.get('seed', 0)),
        output_dir=out,
        mode=str(sweep.get('mode', 'two_round')),
        metrics=tuple(sweep.get('metrics') or METRIC_COLUMNS),
        workers=int(workers or sweep.get('workers') or default_workers()),
    )
    logger.info(f"Plan '{name}': {len(tuples)} tuples x {plan.replications} replications -> {out}")
    return plan
