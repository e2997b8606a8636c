#!/usr/bin/env python3
"""
Verification Pipeline
Runs the registered numerical checks, prints a table, writes a JSON report
and stores the reports in DuckDB
"""

import json
import logging
import sys
from multiprocessing import Pool
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd

# Add src directory to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from results_db import LandmarkDB
from verify_checks import CHECKS, TRIALS_UNIT, CheckReport, Outcome, run_check

logger = logging.getLogger(__name__)


def resolve_names(selection: Sequence[str]) -> List[str]:
    """Expand 'all' and reject unknown check names before anything runs."""
    names: List[str] = []
    for name in selection:
        if name == 'all':
            names.extend(sorted(CHECKS))
        elif name in CHECKS:
            names.append(name)
        else:
            raise KeyError(f"unknown check '{name}'; choose from all, {', '.join(sorted(CHECKS))}")
    return list(dict.fromkeys(names))


def _run_job(job: Tuple[str, int, Optional[int]]) -> CheckReport:
    return run_check(*job)


def run_checks(names: Sequence[str], seed: int = 0, trials: Optional[int] = None, workers: int = 1) -> List[CheckReport]:
    """Each check owns its seeded stream, so the order of completion does not matter."""
    jobs = [(name, seed, trials) for name in names]
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            reports = list(pool.imap_unordered(_run_job, jobs))
    else:
        reports = [_run_job(job) for job in jobs]
    reports.sort(key=lambda r: names.index(r.check_name) if r.check_name in names else len(names))
    for report in reports:
        logger.info(f"{report.check_name}: {report.outcome.value} ({report.runtime:.2f}s) {report.message}")
    return reports


def reports_table(reports: Sequence[CheckReport]) -> pd.DataFrame:
    return pd.DataFrame([{
        'check': r.check_name,
        'outcome': r.outcome.value,
        'samples': r.samples,
        'runtime_s': round(r.runtime, 3),
        'message': r.message,
    } for r in reports])


def write_reports(reports: Sequence[CheckReport], path: Path) -> Path:
    """JSON report without runtimes, so identical seeds give identical files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [r.to_dict(include_runtime=False) for r in reports]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + '\n')
    logger.info(f"Wrote {len(payload)} reports to {path}")
    return path


def any_failed(reports: Sequence[CheckReport]) -> bool:
    return any(r.outcome == Outcome.FAIL for r in reports)


def main(argv: Optional[List[str]] = None) -> int:
    import argparse
    from experiment_config import default_data_dir, default_workers

    parser = argparse.ArgumentParser(description="Run numerical verification checks")
    parser.add_argument('--check', nargs='+', default=['all'], help="check names or 'all'")
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument(
        '--trials', type=int, default=None,
        help="override the per-check size; what it counts differs per check, see --list",
    )
    parser.add_argument('--workers', type=int, default=None)
    parser.add_argument('--out', default=None, help="JSON report path")
    parser.add_argument('--db', default=None, help="DuckDB file to store reports in")
    parser.add_argument('--list', action='store_true', help="list the registered checks and exit")
    args = parser.parse_args(argv)

    if args.list:
        for name in sorted(CHECKS):
            unit = TRIALS_UNIT.get(name)
            print(f"{name:<28} --trials: {unit or 'ignored'}")
        return 0

    Path('logs').mkdir(exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.FileHandler('logs/verify.log'), logging.StreamHandler()],
    )

    try:
        names = resolve_names(args.check)
    except KeyError as e:
        logger.error(str(e))
        return 2

    reports = run_checks(names, args.seed, args.trials, args.workers or default_workers())
    print(reports_table(reports).to_string(index=False))

    out = Path(args.out) if args.out else default_data_dir() / 'verify' / f'reports_seed{args.seed}.json'
    write_reports(reports, out)

    if args.db:
        db = LandmarkDB(args.db)
        try:
            db.insert_reports([r.to_dict() for r in reports], seed=args.seed)
        finally:
            db.close()

    return 1 if any_failed(reports) else 0


if __name__ == "__main__":
    sys.exit(main())
