#!/usr/bin/env python3
"""
Parameter Sweep Pipeline
Runs every (tuple, replication) of a sweep plan, writes records incrementally
and resumes from whatever is already on disk
"""

import json
import logging
import sys
import time
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

# Add src directory to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from experiment_config import SweepPlan, landmark_config_for, manifold_for
from landmarking import multi_round_landmark, two_round_landmark
from results_db import LandmarkDB
from sampling import SampleStream, derive_seed, generator_metadata
from sweep_records import (
    append_record,
    base_record,
    completed_keys,
    fill_multi_round_metrics,
    fill_two_round_metrics,
    finish_record,
    read_records,
    write_canonical,
)

logger = logging.getLogger(__name__)

# spawn key separating the perturbation generator from the sample stream
PERTURBATION_KEY = 1


@dataclass(frozen=True)
class SweepOutcome:
    records_path: Path
    rows: int
    executed: int
    errors: int

    @property
    def ok(self) -> bool:
        return self.errors == 0


def execute_run(plan: SweepPlan, tuple_index: int, replication: int) -> Tuple[Dict, float]:
    """One seeded landmarking run; failures become an `error` entry in the record."""
    started = time.perf_counter()
    seed = plan.seed_for(tuple_index, replication)
    params = dict(plan.parameters[tuple_index], mode=plan.mode) if plan.parameters else {'mode': plan.mode}
    record = base_record(tuple_index, replication, seed, params)
    try:
        cfg = plan.tuples[tuple_index]
        manifold = manifold_for(cfg)
        config = landmark_config_for(cfg, manifold)
        stream = SampleStream(manifold, config.sigma, seed)
        if plan.mode == 'multi_round':
            result = multi_round_landmark(stream, config)
            fill_multi_round_metrics(record, result, manifold.extrinsic_distance(result.q0))
        else:
            rng = np.random.Generator(np.random.PCG64(derive_seed(seed, PERTURBATION_KEY)))
            fill_two_round_metrics(record, two_round_landmark(stream, config, rng))
    except Exception as e:
        logger.error(f"Run ({tuple_index}, {replication}) failed: {e}")
        record['error'] = f"{type(e).__name__}: {e}"
    finish_record(record, plan.metrics)
    return record, time.perf_counter() - started


def _run_job(job: Tuple[SweepPlan, int, int]) -> Tuple[Dict, float]:
    return execute_run(*job)


def _write_metadata(plan: SweepPlan) -> None:
    meta = dict(plan.to_dict(), generator=generator_metadata())
    plan.metadata_path.parent.mkdir(parents=True, exist_ok=True)
    plan.metadata_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + '\n')


def _append_timing(plan: SweepPlan, tuple_index: int, replication: int, runtime: float) -> None:
    with open(plan.timings_path, 'a', encoding='utf-8') as f:
        f.write(json.dumps({'tuple_index': tuple_index, 'replication': replication, 'runtime': runtime}) + '\n')


def run_sweep(plan: SweepPlan, db_path: Optional[str] = None) -> SweepOutcome:
    """
    Execute all runs of `plan` not already present in its record file.
    Workers only compute; this process is the single writer and appends
    each record as it arrives, then rewrites the file in canonical order.
    """
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    _write_metadata(plan)
    done = completed_keys(plan.records_path)
    pending = [(t, r) for t, r in plan.jobs() if (t, r) not in done]
    logger.info(f"Sweep '{plan.name}': {len(plan.jobs())} runs, {len(done)} already done, {len(pending)} to run")

    jobs = [(plan, t, r) for t, r in pending]
    executed = 0
    if plan.workers > 1 and len(jobs) > 1:
        with Pool(min(plan.workers, len(jobs))) as pool:
            for record, runtime in pool.imap_unordered(_run_job, jobs):
                append_record(plan.records_path, record)
                _append_timing(plan, record['tuple_index'], record['replication'], runtime)
                executed += 1
    else:
        for job in jobs:
            record, runtime = _run_job(job)
            append_record(plan.records_path, record)
            _append_timing(plan, record['tuple_index'], record['replication'], runtime)
            executed += 1

    df = read_records(plan.records_path)
    write_canonical(plan.records_path, df)
    df = read_records(plan.records_path)
    errors = int(df['error'].notna().sum()) if not df.empty else 0

    if db_path is not None:
        db = LandmarkDB(db_path)
        try:
            db.insert_records(plan.name, df)
        finally:
            db.close()

    logger.info(f"Sweep '{plan.name}' finished: {len(df)} rows, {executed} executed, {errors} errored")
    return SweepOutcome(plan.records_path, len(df), executed, errors)


def main(argv: Optional[List[str]] = None) -> int:
    import argparse
    from experiment_config import build_plan, load_experiment, parse_assignments

    parser = argparse.ArgumentParser(description="Run a landmarking parameter sweep")
    parser.add_argument('config', help="TOML or JSON experiment file with a [grid] section")
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--workers', type=int)
    parser.add_argument('--db', default=None, help="DuckDB file to mirror records into")
    parser.add_argument('--seed', type=int, default=None, help="base seed")
    parser.add_argument('--replications', type=int, default=None)
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help="override a config entry, e.g. manifold.D=256")
    args = parser.parse_args(argv)

    Path('logs').mkdir(exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.FileHandler('logs/sweep.log'), logging.StreamHandler()],
    )
    overrides = dict(parse_assignments(args.set), seed=args.seed)
    overrides['sweep.replications'] = args.replications
    plan = build_plan(load_experiment(args.config, overrides), args.out, args.workers)
    outcome = run_sweep(plan, args.db)
    return 0 if outcome.ok else 1


if __name__ == "__main__":
    sys.exit(main())
