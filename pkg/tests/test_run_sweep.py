import json

import pytest

from experiment_config import DEFAULT_EXPERIMENT, build_plan
from results_db import LandmarkDB
from run_sweep import execute_run, main, run_sweep
from sweep_records import read_records

SMALL_EXPERIMENT = dict(
    DEFAULT_EXPERIMENT,
    manifold={'kind': 'circle', 'd': 1, 'D': 8, 'radii': [1.0]},
    sigma=0.05,
    n_mb1=20,
    n_mb2=20,
    seed=5,
    sweep={'name': 'small', 'replications': 3},
    grid={'sigma': [0.03, 0.05]},
)


def small_plan(out, **changes):
    return build_plan(dict(SMALL_EXPERIMENT, **changes), out, workers=1)


def test_two_tuples_three_replications(tmp_path):
    plan = small_plan(tmp_path)
    outcome = run_sweep(plan)
    df = read_records(plan.records_path)
    assert outcome.ok
    assert outcome.rows == outcome.executed == 6
    assert df['seed'].nunique() == 6
    assert sorted(zip(df['tuple_index'], df['replication'])) == [(t, r) for t in range(2) for r in range(3)]
    assert len(plan.timings_path.read_text().splitlines()) == 6
    meta = json.loads(plan.metadata_path.read_text())
    assert meta['generator']['bit_generator'] == 'PCG64'
    assert len(meta['tuples']) == 2


def test_resume_runs_only_the_missing_row(tmp_path):
    plan = small_plan(tmp_path)
    run_sweep(plan)
    complete = plan.records_path.read_bytes()
    lines = complete.decode().splitlines(keepends=True)
    plan.records_path.write_text(''.join(lines[:-1]))

    outcome = run_sweep(plan)
    assert outcome.executed == 1
    assert outcome.rows == 6
    assert plan.records_path.read_bytes() == complete


def test_identical_plans_give_identical_bytes(tmp_path):
    first = small_plan(tmp_path / 'a')
    second = small_plan(tmp_path / 'b')
    run_sweep(first)
    run_sweep(second)
    assert first.records_path.read_bytes() == second.records_path.read_bytes()


def test_worker_count_does_not_change_output(tmp_path):
    serial = small_plan(tmp_path / 'serial')
    parallel = build_plan(SMALL_EXPERIMENT, tmp_path / 'parallel', workers=2)
    run_sweep(serial)
    run_sweep(parallel)
    assert serial.records_path.read_bytes() == parallel.records_path.read_bytes()


def test_empty_grid(tmp_path):
    plan = small_plan(tmp_path, grid={'sigma': []})
    outcome = run_sweep(plan)
    assert outcome.ok
    assert outcome.rows == 0
    assert plan.records_path.read_text() == ''


def test_failed_runs_are_recorded(tmp_path):
    plan = small_plan(tmp_path, R1_sq=1e-6, max_draws=200, sweep={'name': 'failing', 'replications': 2})
    outcome = run_sweep(plan)
    df = read_records(plan.records_path)
    assert not outcome.ok
    assert outcome.errors == 4
    assert df['error'].str.startswith('AcceptanceTooLow').all()
    assert df['dist_q2'].isna().all()


def test_multi_round_mode(tmp_path):
    plan = small_plan(tmp_path, sweep={'name': 'multi', 'replications': 1, 'mode': 'multi_round'}, rounds=3)
    record, runtime = execute_run(plan, 0, 0)
    assert record['error'] is None
    assert record['mode'] == 'multi_round'
    assert record['perturbation_norm'] == 0.0
    assert record['draws'] > 1 + 20 + 20 + 20 - 1
    assert runtime >= 0.0


def test_records_mirror_into_duckdb(tmp_path):
    plan = small_plan(tmp_path)
    db_path = str(tmp_path / 'landmarks.duckdb')
    run_sweep(plan, db_path)
    db = LandmarkDB(db_path)
    try:
        assert len(db.get_records('small')) == 6
        assert len(db.summary('small')) == 2
    finally:
        db.close()


def test_main_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = tmp_path / 'exp.json'
    config.write_text(json.dumps({k: v for k, v in SMALL_EXPERIMENT.items()}))
    code = main([str(config), '--out', str(tmp_path / 'out'), '--workers', '1', '--replications', '1', '--seed', '9'])
    assert code == 0
    df = read_records(tmp_path / 'out' / 'records.jsonl')
    assert len(df) == 2
    assert (tmp_path / 'logs' / 'sweep.log').exists()


@pytest.mark.slow
def test_stage_errors_shrink_at_reference_parameters(tmp_path):
    plan = build_plan(
        dict(DEFAULT_EXPERIMENT, sweep={'name': 'reference', 'replications': 10}), tmp_path, workers=2
    )
    run_sweep(plan)
    df = read_records(plan.records_path)
    medians = df[['dist_q0', 'dist_q1', 'dist_q2']].median()
    assert medians['dist_q0'] > medians['dist_q1'] > medians['dist_q2']
