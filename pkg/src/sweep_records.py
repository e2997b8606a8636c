"""
Sweep Records
One row per landmarking run, plus JSONL reading and canonical writing
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

KEY_COLUMNS = ['tuple_index', 'replication']

PARAMETER_COLUMNS = [
    'seed', 'mode', 'kind', 'intrinsic_dim', 'ambient_dim', 'sigma', 'radius', 'kappa', 'diam',
    'C2', 'C3', 'C6', 'C7', 'R1_sq', 'R2_sq', 'n_mb1', 'n_mb2', 'rounds',
]

METRIC_COLUMNS = [
    'dist_q0', 'dist_q1', 'dist_q2', 'signal_dist_q2', 'noise_norm_q1', 'noise_norm_q2',
    'perturbation_norm', 'draws', 'theory_scale', 'ratio',
]

RECORD_COLUMNS = KEY_COLUMNS + PARAMETER_COLUMNS + METRIC_COLUMNS + ['error']

INTEGER_COLUMNS = ['tuple_index', 'replication', 'seed', 'intrinsic_dim', 'ambient_dim', 'n_mb1', 'n_mb2', 'rounds', 'draws']

# Precision of floats in the canonical record file
JSON_PRECISION = 15


def theoretical_scale(sigma: float, d: int, kappa: float, diam: float, D: int) -> float:
    """sigma sqrt(d (1 + kappa diam / log D)), the stage-2 error scale."""
    return sigma * math.sqrt(d * (1.0 + kappa * diam / math.log(D)))


def bound_ratio(dist_q2: Optional[float], scale: Optional[float]) -> Optional[float]:
    if dist_q2 is None or scale is None or not scale > 0:
        return None
    return dist_q2 / scale


def base_record(tuple_index: int, replication: int, seed: int, params: Dict) -> Dict:
    """Key and parameter columns of a record; metrics start empty."""
    record = {column: None for column in RECORD_COLUMNS}
    record.update(tuple_index=int(tuple_index), replication=int(replication), seed=int(seed))
    for column in PARAMETER_COLUMNS:
        if column in params and column != 'seed':
            record[column] = params[column]
    return record


def fill_two_round_metrics(record: Dict, result) -> Dict:
    """Copy distances and signal/noise split norms of a LandmarkResult into a record."""
    stage1, stage2 = result.stages
    record.update(
        dist_q0=float(result.q0_dist),
        dist_q1=float(stage1.dist_to_manifold),
        dist_q2=float(stage2.dist_to_manifold),
        signal_dist_q2=float(stage2.signal_dist_to_manifold),
        noise_norm_q1=stage1.noise_norm,
        noise_norm_q2=stage2.noise_norm,
        perturbation_norm=float(np.linalg.norm(result.perturbation)),
        draws=int(result.total_draws),
    )
    return record


def fill_multi_round_metrics(record: Dict, result, dist_q0: float) -> Dict:
    """First and last round of a running-average run stand in for q1 and q2."""
    first, last = result.rounds[0], result.rounds[-1]
    record.update(
        dist_q0=float(dist_q0),
        dist_q1=float(first.dist_to_manifold),
        dist_q2=float(last.dist_to_manifold),
        noise_norm_q1=float(np.linalg.norm(result.batches[0].noise_average())),
        noise_norm_q2=float(np.linalg.norm(result.batches[-1].noise_average())),
        perturbation_norm=0.0,
        draws=1 + sum(r.draws for r in result.rounds),
    )
    return record


def finish_record(record: Dict, metrics: Optional[Sequence[str]] = None) -> Dict:
    """Attach the theory scale and ratio, then blank metrics that were not requested."""
    if None not in (record['sigma'], record['intrinsic_dim'], record['kappa'], record['diam'], record['ambient_dim']):
        record['theory_scale'] = theoretical_scale(
            record['sigma'], record['intrinsic_dim'], record['kappa'], record['diam'], record['ambient_dim']
        )
    record['ratio'] = bound_ratio(record['dist_q2'], record['theory_scale'])
    if metrics is not None:
        keep = set(metrics)
        for column in METRIC_COLUMNS:
            if column not in keep:
                record[column] = None
    return record


def records_frame(records: Iterable[Dict]) -> pd.DataFrame:
    """Records in canonical column order, sorted by (tuple_index, replication)."""
    df = pd.DataFrame(list(records), columns=RECORD_COLUMNS)
    if df.empty:
        return df
    return df.sort_values(KEY_COLUMNS, kind='mergesort').reset_index(drop=True)


def read_records(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return pd.DataFrame(columns=RECORD_COLUMNS)
    rows = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                # a run interrupted mid-write leaves a partial last line
                logger.warning(f"Skipping unreadable line {number} of {path}")
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def completed_keys(path: Union[str, Path]) -> Set[Tuple[int, int]]:
    """(tuple_index, replication) pairs already present in a record file."""
    df = read_records(path)
    return {(int(t), int(r)) for t, r in zip(df['tuple_index'], df['replication'])}


def append_record(path: Union[str, Path], record: Dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([record], columns=RECORD_COLUMNS)
    frame.to_json(path, orient='records', lines=True, mode='a', double_precision=JSON_PRECISION)


def write_canonical(path: Union[str, Path], df: pd.DataFrame) -> Path:
    """Rewrite a record file sorted by key so identical sweeps give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = records_frame(df.to_dict(orient='records'))
    if df.empty:
        path.write_text('')
        return path
    df = df.astype(object).where(df.notna(), None)
    for column in INTEGER_COLUMNS:
        df[column] = pd.Series([None if v is None else int(v) for v in df[column]], index=df.index, dtype=object)
    df.to_json(path, orient='records', lines=True, double_precision=JSON_PRECISION)
    logger.info(f"Wrote {len(df)} records to {path}")
    return path


def errored(df: pd.DataFrame) -> pd.DataFrame:
    return df[df['error'].notna()]


def record_rows(df: pd.DataFrame) -> List[Dict]:
    return df.to_dict(orient='records')
