import json
import math
from pathlib import Path

import pytest

from experiment_config import (
    DEFAULT_EXPERIMENT,
    InvalidPlanError,
    apply_overrides,
    build_plan,
    default_data_dir,
    default_workers,
    expand_grid,
    landmark_config_for,
    load_config_file,
    load_experiment,
    parse_assignments,
)
from landmarking import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / 'configs'


def test_defaults_without_file():
    cfg = load_experiment()
    assert cfg == DEFAULT_EXPERIMENT
    assert cfg is not DEFAULT_EXPERIMENT


def test_flags_win_over_file(tmp_path):
    path = tmp_path / 'exp.json'
    path.write_text(json.dumps({'sigma': 0.1, 'manifold': {'D': 64}}))
    cfg = load_experiment(path, {'sigma': 0.2, 'manifold.d': 3, 'seed': None})
    assert cfg['sigma'] == 0.2
    assert cfg['manifold'] == {'kind': 'sphere', 'd': 3, 'D': 64, 'radii': [1.0]}
    assert cfg['seed'] == DEFAULT_EXPERIMENT['seed']


def test_apply_overrides_creates_sections():
    assert apply_overrides({}, {'sweep.replications': 3}) == {'sweep': {'replications': 3}}


def test_parse_assignments():
    overrides = parse_assignments(['manifold.D=256', 'sigma=0.05', 'sweep.name=trial', 'perturbation=false', 'grid.D=[64, 128]'])
    assert overrides == {
        'manifold.D': 256,
        'sigma': 0.05,
        'sweep.name': 'trial',
        'perturbation': False,
        'grid.D': [64, 128],
    }
    assert parse_assignments(None) == {}
    with pytest.raises(ConfigError):
        parse_assignments(['sigma'])


def test_load_config_file_formats(tmp_path):
    toml_path = tmp_path / 'exp.toml'
    toml_path.write_text('sigma = 0.1\n[manifold]\nD = 32\n')
    assert load_config_file(toml_path) == {'sigma': 0.1, 'manifold': {'D': 32}}
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / 'missing.toml')
    yaml_path = tmp_path / 'exp.yaml'
    yaml_path.write_text('sigma: 0.1\n')
    with pytest.raises(ConfigError):
        load_config_file(yaml_path)


@pytest.mark.parametrize("name", ['reference_sphere.toml', 'scaling_in_D.toml', 'noise_levels.json'])
def test_shipped_configs_resolve(name, tmp_path):
    plan = build_plan(load_experiment(CONFIG_DIR / name), tmp_path, workers=1)
    assert len(plan.tuples) >= 1
    assert plan.records_path == tmp_path / 'records.jsonl'


def test_reference_config_matches_formulas():
    config = landmark_config_for(load_experiment(CONFIG_DIR / 'reference_sphere.toml'))
    assert config.sigma == pytest.approx(0.5 / math.sqrt(128))
    assert set(config.auto_fields) == {'R1_sq', 'R2_sq', 'n_mb1', 'n_mb2'}


def test_expand_grid_product():
    tuples = expand_grid(DEFAULT_EXPERIMENT, {'D': [64, 128], 'sigma': [0.01, 0.02, 0.03]})
    assert len(tuples) == 6
    # sorted axis order: D outer, sigma inner
    assert [(t['manifold']['D'], t['sigma']) for t in tuples[:3]] == [(64, 0.01), (64, 0.02), (64, 0.03)]


def test_expand_grid_scaled_sigma():
    base = dict(DEFAULT_EXPERIMENT, manifold={'kind': 'sphere', 'd': 2, 'D': 128, 'radii': [2.0]})
    (cfg,) = expand_grid(base, {'D': [256], 'sigma_sqrt_d_over_tau': [0.5]})
    assert cfg['sigma'] == pytest.approx(0.5 * 2.0 / 16.0)


@pytest.mark.parametrize("grid", [{'bogus': [1]}, {'sigma': [0.1], 'sigma_sqrt_d_over_tau': [0.5]}])
def test_expand_grid_rejects(grid):
    with pytest.raises(InvalidPlanError):
        expand_grid(DEFAULT_EXPERIMENT, grid)


def test_empty_grid_axis_gives_no_tuples():
    assert expand_grid(DEFAULT_EXPERIMENT, {'D': []}) == []


def test_plan_seeds_are_distinct(tmp_path):
    cfg = dict(DEFAULT_EXPERIMENT, grid={'D': [64, 128]}, sweep={'replications': 3})
    plan = build_plan(cfg, tmp_path, workers=1)
    seeds = {plan.seed_for(t, r) for t, r in plan.jobs()}
    assert len(plan.jobs()) == 6
    assert len(seeds) == 6


def test_plan_rejects_invalid_tuple(tmp_path):
    cfg = dict(DEFAULT_EXPERIMENT, grid={'D': [64, 2]})
    with pytest.raises(InvalidPlanError, match='tuple 1'):
        build_plan(cfg, tmp_path, workers=1)


@pytest.mark.parametrize("sweep", [{'replications': 0}, {'mode': 'three_round'}, {'metrics': ['dist_q9']}])
def test_plan_rejects_bad_sweep_settings(tmp_path, sweep):
    with pytest.raises(InvalidPlanError):
        build_plan(dict(DEFAULT_EXPERIMENT, sweep=sweep), tmp_path, workers=1)


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv('LANDMARK_WORKERS', '3')
    monkeypatch.setenv('LANDMARK_DATA_DIR', '/tmp/landmark-data')
    assert default_workers() == 3
    assert default_data_dir() == Path('/tmp/landmark-data')
    monkeypatch.setenv('LANDMARK_WORKERS', 'many')
    assert default_workers() >= 1


def test_squared_radius_schedule_from_config():
    cfg = dict(DEFAULT_EXPERIMENT, rounds=2, radius_sq_schedule=[0.6, 0.4], batch_schedule=[30, 20])
    assert landmark_config_for(cfg).schedule() == [(0.6, 30), (0.4, 20)]
    with pytest.raises(ConfigError):
        landmark_config_for(dict(cfg, rounds=3))
