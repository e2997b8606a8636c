"""
Local Results Database
Uses DuckDB to store sweep records and verification reports and to summarize them
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Optional

import duckdb
import pandas as pd

from sweep_records import INTEGER_COLUMNS, RECORD_COLUMNS

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ['dist_q0', 'dist_q1', 'dist_q2', 'signal_dist_q2', 'noise_norm_q2', 'draws', 'ratio']

TEXT_COLUMNS = ['mode', 'kind', 'error']

GROUP_COLUMNS = ['tuple_index', 'kind', 'intrinsic_dim', 'ambient_dim', 'sigma', 'C2', 'C3', 'C6', 'C7']


def summary_columns() -> list:
    metrics = [f"{m}_{stat}" for m in SUMMARY_METRICS for stat in ('median', 'iqr')]
    return GROUP_COLUMNS + ['runs', 'errors'] + metrics


def _summary_sql(source: str) -> str:
    """Summary query over `source`, a table or subquery that has a boolean has_error column."""
    aggregates = []
    for metric in SUMMARY_METRICS:
        valid = f"FILTER (WHERE NOT isnan(CAST({metric} AS DOUBLE)))"
        aggregates.append(f"median({metric}) {valid} AS {metric}_median")
        aggregates.append(
            f"quantile_cont({metric}, 0.75) {valid} - quantile_cont({metric}, 0.25) {valid} AS {metric}_iqr"
        )
    return f"""
        SELECT
            {', '.join(GROUP_COLUMNS)},
            count(*) AS runs,
            count(*) FILTER (WHERE has_error) AS errors,
            {', '.join(aggregates)}
        FROM {source}
        GROUP BY {', '.join(GROUP_COLUMNS)}
        ORDER BY tuple_index
    """


def typed_records(records: pd.DataFrame) -> pd.DataFrame:
    """Records with nullable integer columns and float metric columns."""
    frame = records.reindex(columns=RECORD_COLUMNS).copy()
    for column in RECORD_COLUMNS:
        if column in INTEGER_COLUMNS:
            frame[column] = pd.to_numeric(frame[column], errors='coerce').astype('Int64')
        elif column not in TEXT_COLUMNS:
            frame[column] = pd.to_numeric(frame[column], errors='coerce').astype(float)
    return frame


def summarize_frame(records: pd.DataFrame) -> pd.DataFrame:
    """Per-tuple median and IQR of every metric, computed in an in-memory DuckDB."""
    if records.empty:
        return pd.DataFrame(columns=summary_columns())
    frame = typed_records(records)
    frame['has_error'] = frame['error'].notna()
    frame['error'] = frame['error'].astype(str)
    conn = duckdb.connect()
    try:
        conn.register('records', frame)
        return conn.execute(_summary_sql('records')).df()
    finally:
        conn.close()


class LandmarkDB:
    def __init__(self, db_path: str = "data/landmarks.duckdb"):
        """Initialize database connection."""
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.conn = duckdb.connect(str(self.db_path))
        self._init_tables()

    def _init_tables(self):
        logger.info("Initializing database tables...")

        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS sweep_records (
                sweep_name VARCHAR,
                tuple_index INTEGER,
                replication INTEGER,
                seed BIGINT,
                mode VARCHAR,
                kind VARCHAR,
                intrinsic_dim INTEGER,
                ambient_dim INTEGER,
                sigma DOUBLE,
                radius DOUBLE,
                kappa DOUBLE,
                diam DOUBLE,
                C2 DOUBLE,
                C3 DOUBLE,
                C6 DOUBLE,
                C7 DOUBLE,
                R1_sq DOUBLE,
                R2_sq DOUBLE,
                n_mb1 INTEGER,
                n_mb2 INTEGER,
                rounds INTEGER,
                dist_q0 DOUBLE,
                dist_q1 DOUBLE,
                dist_q2 DOUBLE,
                signal_dist_q2 DOUBLE,
                noise_norm_q1 DOUBLE,
                noise_norm_q2 DOUBLE,
                perturbation_norm DOUBLE,
                draws BIGINT,
                theory_scale DOUBLE,
                ratio DOUBLE,
                error VARCHAR,
                PRIMARY KEY (sweep_name, tuple_index, replication)
            )
        """)

        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS check_reports (
                check_name VARCHAR,
                seed BIGINT,
                outcome VARCHAR,
                samples BIGINT,
                runtime DOUBLE,
                message VARCHAR,
                parameters VARCHAR,
                measured VARCHAR,
                bounds VARCHAR,
                recorded_at_utc TIMESTAMP
            )
        """)

        logger.info("Database tables initialized")

    def drop_and_recreate_tables(self):
        self.conn.execute("DROP TABLE IF EXISTS sweep_records")
        self.conn.execute("DROP TABLE IF EXISTS check_reports")
        self._init_tables()
        logger.info("Tables dropped and recreated")

    def insert_records(self, sweep_name: str, df: pd.DataFrame):
        """Insert or replace the records of one sweep."""
        if df.empty:
            logger.warning("No records to insert")
            return

        df_copy = typed_records(df)
        df_copy.insert(0, 'sweep_name', sweep_name)
        columns = ', '.join(df_copy.columns)
        self.conn.execute(f"INSERT OR REPLACE INTO sweep_records ({columns}) SELECT {columns} FROM df_copy")
        logger.info(f"Inserted {len(df_copy)} records for sweep '{sweep_name}'")

    def insert_reports(self, reports: Iterable[Dict], seed: Optional[int] = None):
        """Insert verification reports (CheckReport.to_dict() rows)."""
        now = datetime.now(timezone.utc).replace(tzinfo=None)
        rows = [{
            'check_name': r['check_name'],
            'seed': seed,
            'outcome': r['outcome'],
            'samples': int(r.get('samples', 0)),
            'runtime': float(r.get('runtime', 0.0)),
            'message': r.get('message', ''),
            'parameters': json.dumps(r.get('parameters', {}), sort_keys=True),
            'measured': json.dumps(r.get('measured', {}), sort_keys=True),
            'bounds': json.dumps(r.get('bounds', {}), sort_keys=True),
            'recorded_at_utc': now,
        } for r in reports]
        if not rows:
            logger.warning("No reports to insert")
            return
        df_reports = pd.DataFrame(rows)
        columns = ', '.join(df_reports.columns)
        self.conn.execute(f"INSERT INTO check_reports ({columns}) SELECT {columns} FROM df_reports")
        logger.info(f"Inserted {len(rows)} check reports")

    def sweep_names(self) -> list:
        return [row[0] for row in self.conn.execute(
            "SELECT DISTINCT sweep_name FROM sweep_records ORDER BY sweep_name"
        ).fetchall()]

    def get_records(self, sweep_name: Optional[str] = None) -> pd.DataFrame:
        if sweep_name is None:
            return self.conn.execute("SELECT * FROM sweep_records ORDER BY sweep_name, tuple_index, replication").df()
        return self.conn.execute(
            "SELECT * FROM sweep_records WHERE sweep_name = ? ORDER BY tuple_index, replication", [sweep_name]
        ).df()

    def get_reports(self) -> pd.DataFrame:
        return self.conn.execute("SELECT * FROM check_reports ORDER BY recorded_at_utc, check_name").df()

    def latest_reports(self) -> pd.DataFrame:
        """Most recent report per check."""
        return self.conn.execute("""
            SELECT * EXCLUDE (rn) FROM (
                SELECT *, row_number() OVER (PARTITION BY check_name ORDER BY recorded_at_utc DESC) AS rn
                FROM check_reports
            ) WHERE rn = 1
            ORDER BY check_name
        """).df()

    def summary(self, sweep_name: str) -> pd.DataFrame:
        """Per-tuple median/IQR for one sweep."""
        sql = _summary_sql(
            "(SELECT *, error IS NOT NULL AS has_error FROM sweep_records WHERE sweep_name = $name)"
        )
        return self.conn.execute(sql, {'name': sweep_name}).df()

    def close(self):
        """Close database connection."""
        self.conn.close()
        logger.info("Database connection closed")
