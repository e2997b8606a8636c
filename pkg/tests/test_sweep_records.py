import json
import math

import pandas as pd
import pytest

from sweep_records import (
    RECORD_COLUMNS,
    append_record,
    base_record,
    bound_ratio,
    completed_keys,
    finish_record,
    read_records,
    records_frame,
    theoretical_scale,
    write_canonical,
)

PARAMS = {
    'mode': 'two_round', 'kind': 'sphere', 'intrinsic_dim': 2, 'ambient_dim': 128, 'sigma': 0.05,
    'radius': 1.0, 'kappa': 1.0, 'diam': math.pi, 'C2': 1.0, 'C3': 1.0, 'C6': 1.0, 'C7': 1.0,
    'R1_sq': 0.8, 'R2_sq': 0.4, 'n_mb1': 100, 'n_mb2': 200, 'rounds': 2,
}


def make_record(tuple_index, replication, dist_q2=0.02, error=None):
    record = base_record(tuple_index, replication, 1000 + 10 * tuple_index + replication, PARAMS)
    if error is None:
        record.update(dist_q0=0.5, dist_q1=0.3, dist_q2=dist_q2, draws=12345)
    else:
        record['error'] = error
    return finish_record(record)


def test_theoretical_scale_and_ratio():
    scale = theoretical_scale(0.05, 2, 1.0, math.pi, 128)
    assert scale == pytest.approx(0.05 * math.sqrt(2 * (1 + math.pi / math.log(128))))
    record = make_record(0, 0, dist_q2=0.02)
    assert record['ratio'] == pytest.approx(0.02 / record['theory_scale'])
    assert bound_ratio(None, scale) is None
    assert bound_ratio(0.1, 0.0) is None


def test_base_record_has_every_column():
    record = base_record(3, 4, 99, PARAMS)
    assert list(record) == RECORD_COLUMNS
    assert record['seed'] == 99
    assert record['dist_q2'] is None


def test_unrequested_metrics_are_blank():
    record = base_record(0, 0, 1, PARAMS)
    record.update(dist_q0=0.5, dist_q2=0.02, draws=10)
    finish_record(record, metrics=['dist_q2'])
    assert record['dist_q2'] == 0.02
    assert record['dist_q0'] is None
    assert record['draws'] is None


def test_append_and_resume_keys(tmp_path):
    path = tmp_path / 'records.jsonl'
    for t, r in [(0, 0), (0, 1), (1, 0)]:
        append_record(path, make_record(t, r))
    assert completed_keys(path) == {(0, 0), (0, 1), (1, 0)}
    assert len(path.read_text().splitlines()) == 3


def test_errored_runs_still_count_as_completed(tmp_path):
    path = tmp_path / 'records.jsonl'
    append_record(path, make_record(0, 0, error='AcceptanceTooLow: stage1'))
    df = read_records(path)
    assert df['error'].iloc[0] == 'AcceptanceTooLow: stage1'
    assert completed_keys(path) == {(0, 0)}


def test_partial_last_line_is_skipped(tmp_path):
    path = tmp_path / 'records.jsonl'
    append_record(path, make_record(0, 0))
    with open(path, 'a', encoding='utf-8') as f:
        f.write('{"tuple_index": 0, "replic')
    assert completed_keys(path) == {(0, 0)}


def test_missing_file_reads_empty(tmp_path):
    df = read_records(tmp_path / 'nothing.jsonl')
    assert df.empty
    assert list(df.columns) == RECORD_COLUMNS


def test_canonical_rewrite_is_order_independent(tmp_path):
    rows = [make_record(t, r, dist_q2=0.01 * (t + r + 1)) for t in range(2) for r in range(3)]
    forward, backward = tmp_path / 'a.jsonl', tmp_path / 'b.jsonl'
    for record in rows:
        append_record(forward, record)
    for record in reversed(rows):
        append_record(backward, record)
    write_canonical(forward, read_records(forward))
    write_canonical(backward, read_records(backward))
    assert forward.read_bytes() == backward.read_bytes()

    lines = [json.loads(line) for line in forward.read_text().splitlines()]
    assert [(row['tuple_index'], row['replication']) for row in lines] == [(t, r) for t in range(2) for r in range(3)]
    assert isinstance(lines[0]['ambient_dim'], int)
    assert lines[0]['error'] is None


def test_canonical_rewrite_of_empty_frame(tmp_path):
    path = write_canonical(tmp_path / 'empty.jsonl', pd.DataFrame(columns=RECORD_COLUMNS))
    assert path.read_text() == ''


def test_records_frame_sorts_by_key():
    df = records_frame([make_record(1, 0), make_record(0, 2), make_record(0, 1)])
    assert list(zip(df['tuple_index'], df['replication'])) == [(0, 1), (0, 2), (1, 0)]
