import json

import numpy as np

from experiment_config import DEFAULT_EXPERIMENT
from run_landmark import main, pairwise_summary, run_net, run_pairwise, run_profile, run_signal_estimates, run_single

SPHERE_EXPERIMENT = dict(DEFAULT_EXPERIMENT, n_mb1=40, n_mb2=40, seed=2)
CIRCLE_EXPERIMENT = dict(
    DEFAULT_EXPERIMENT,
    manifold={'kind': 'circle', 'd': 1, 'D': 8, 'radii': [1.0]},
    sigma=0.05,
    n_mb1=50,
    n_mb2=100,
    perturbation=False,
    seed=3,
)


def test_run_single_two_round():
    out = run_single(SPHERE_EXPERIMENT)
    assert set(out['distances']) == {'q0', 'q1', 'q2'}
    assert out['draws'] == sum(out['draws_per_stage'].values())
    assert out['provenance']['generator']['bit_generator'] == 'PCG64'
    assert out['provenance']['config']['n_mb1'] == 40
    json.dumps(out)


def test_run_single_is_reproducible():
    assert run_single(SPHERE_EXPERIMENT)['q2'] == run_single(SPHERE_EXPERIMENT)['q2']


def test_run_single_multi_round():
    out = run_single(dict(SPHERE_EXPERIMENT, rounds=3), mode='multi_round')
    assert [r['round'] for r in out['rounds']] == [1, 2, 3]
    assert len(out['landmark']) == 128


def test_signal_estimates():
    df = run_signal_estimates(SPHERE_EXPERIMENT, 5)
    assert list(df['seed_index']) == list(range(5))
    assert df['error'].isna().all()
    assert (df['estimate_error'] < df['raw_error']).mean() >= 0.6


def test_pairwise_table():
    df = run_pairwise(SPHERE_EXPERIMENT, 4)
    assert len(df) == 4
    assert (df['true_distance'] >= 0).all()
    summary = pairwise_summary(df, DEFAULT_EXPERIMENT['sigma'], 2, 128)
    assert summary['pairs'] == 4
    assert summary['completed'] == 4


def test_net():
    out = run_net(CIRCLE_EXPERIMENT, 0.5, 200_000)
    assert out['size'] == len(out['landmarks']) == len(out['landmark_errors'])
    assert out['min_separation'] >= 0.5
    assert np.all(np.array(out['landmark_errors']) < 0.15)


def test_profile_files(tmp_path):
    paths = run_profile(3.84, 0.1, 128, tmp_path, points=50)
    assert paths['csv'].read_text().startswith('# kind: h-profile')
    assert paths['html'].exists()


def test_main_run_writes_json(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / 'run.json'
    code = main(['run', '--seed', '4', '--set', 'n_mb1=30', '--set', 'n_mb2=30', '--out', str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload['provenance']['experiment']['seed'] == 4
    assert payload['provenance']['config']['n_mb2'] == 30


def test_main_profile(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(['profile', '--D', '64', '--sigma', '0.1', '--R-sq', '1.0', '--out', str(tmp_path), '--points', '20']) == 0
    assert (tmp_path / 'h_profile_D64_sigma0.1.csv').exists()


def test_main_profile_rejects_small_radius(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(['profile', '--D', '128', '--sigma', '0.1', '--R-sq', '0.5', '--out', str(tmp_path)]) == 2
