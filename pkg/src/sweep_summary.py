"""
Sweep Summary
Per-tuple medians and IQRs, monotonicity flags and plot-data emission
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from grouping import GroupingProfile, phase_crossing
from results_db import summarize_frame

logger = logging.getLogger(__name__)

PLOT_KINDS = ('h-profile', 'error-vs-stage', 'error-vs-D', 'error-vs-sigma')

CONSTANT_COLUMNS = ['C2', 'C3', 'C6', 'C7']

PLOT_COLUMNS = {
    'h-profile': ['s', 'h', 'neg_h_dot'],
    'error-vs-stage': ['tuple_index', 'dist_q0_median', 'dist_q1_median', 'dist_q2_median'],
    'error-vs-D': ['tuple_index', 'kind', 'intrinsic_dim', 'ambient_dim', 'sigma', 'dist_q2_median', 'ratio_median'],
    'error-vs-sigma': ['tuple_index', 'kind', 'intrinsic_dim', 'ambient_dim', 'sigma', 'dist_q2_median', 'ratio_median'],
}

COLUMN_NOTES = {
    's': 'offset of the landmark from the clean point along one axis',
    'h': 'grouping probability h(s)',
    'neg_h_dot': '-dh/ds',
    'tuple_index': 'sweep tuple',
    'kind': 'manifold kind',
    'intrinsic_dim': 'd',
    'ambient_dim': 'D',
    'sigma': 'noise level',
    'dist_q0_median': 'median d(q0, M)',
    'dist_q1_median': 'median d(q1, M)',
    'dist_q2_median': 'median d(q2, M)',
    'ratio_median': 'median d(q2, M) / (sigma sqrt(d (1 + kappa diam / log D)))',
}


def _monotone(values: np.ndarray, increasing: bool) -> bool:
    values = values[~np.isnan(values)]
    steps = np.diff(values)
    return bool(np.all(steps >= 0)) if increasing else bool(np.all(steps <= 0))


def summarize(records: pd.DataFrame) -> pd.DataFrame:
    """
    Per-tuple median/IQR of every metric plus flags:
    dist_q2 nondecreasing in sigma at fixed (kind, d, D, constants),
    dist_q2 nonincreasing in D at fixed (kind, d, constants), and the
    max/min spread of the median ratio across D.
    """
    summary = summarize_frame(records)
    if summary.empty:
        for column in ('monotone_in_sigma', 'monotone_in_D', 'ratio_spread_across_D'):
            summary[column] = pd.Series(dtype=object)
        return summary

    summary['monotone_in_sigma'] = True
    for _, group in summary.groupby(['kind', 'intrinsic_dim', 'ambient_dim'] + CONSTANT_COLUMNS, dropna=False):
        ordered = group.sort_values('sigma')
        summary.loc[group.index, 'monotone_in_sigma'] = _monotone(ordered['dist_q2_median'].to_numpy(float), True)

    summary['monotone_in_D'] = True
    summary['ratio_spread_across_D'] = 1.0
    for _, group in summary.groupby(['kind', 'intrinsic_dim'] + CONSTANT_COLUMNS, dropna=False):
        ordered = group.sort_values('ambient_dim')
        summary.loc[group.index, 'monotone_in_D'] = _monotone(ordered['dist_q2_median'].to_numpy(float), False)
        ratios = ordered['ratio_median'].to_numpy(float)
        ratios = ratios[~np.isnan(ratios)]
        spread = float(ratios.max() / ratios.min()) if ratios.size and ratios.min() > 0 else np.nan
        summary.loc[group.index, 'ratio_spread_across_D'] = spread
    return summary


def h_profile_frame(profile: GroupingProfile, points: int = 400) -> pd.DataFrame:
    s = np.linspace(0.0, profile.R, points)
    return pd.DataFrame({'s': s, 'h': profile.h(s), 'neg_h_dot': profile.neg_h_dot(s)})


def _header(kind: str, columns: List[str], extra: Optional[List[str]] = None) -> str:
    lines = [f"# kind: {kind}"]
    lines += [f"# {c}: {COLUMN_NOTES.get(c, c)}" for c in columns]
    lines += [f"# {line}" for line in extra or []]
    return '\n'.join(lines) + '\n'


def _plot_frame(summary: pd.DataFrame, kind: str) -> pd.DataFrame:
    columns = PLOT_COLUMNS[kind]
    if summary.empty:
        return pd.DataFrame(columns=columns)
    if kind == 'error-vs-stage':
        return summary[columns].sort_values('tuple_index')
    key = 'ambient_dim' if kind == 'error-vs-D' else 'sigma'
    return summary[columns].sort_values([key, 'tuple_index'], kind='mergesort')


def emit_plot_data(
    records: pd.DataFrame,
    kind: str,
    path: Union[str, Path],
    profile: Optional[GroupingProfile] = None,
    points: int = 400,
) -> Path:
    """
    Write one plot-data CSV. Columns are documented in `#` header lines;
    rows are in a fixed order. The h-profile kind takes a GroupingProfile
    instead of records.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if kind == 'h-profile':
        if profile is None:
            raise ValueError("h-profile needs a GroupingProfile")
        frame = h_profile_frame(profile, points)
        extra = [
            f"R = {profile.R!r}, sigma = {profile.sigma!r}, D = {profile.D}",
            f"s_star = {profile.s_star!r}, nu_bar = {profile.nu_bar!r}",
            f"h = 0.5 at s = {phase_crossing(profile)!r}",
        ]
    else:
        frame = _plot_frame(summarize(records), kind)
        extra = None

    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(_header(kind, PLOT_COLUMNS[kind], extra))
        frame.to_csv(f, index=False, float_format='%.12g', lineterminator='\n')
    logger.info(f"Wrote {kind} plot data ({len(frame)} rows) to {path}")
    return path


def write_h_profile_html(profile: GroupingProfile, path: Union[str, Path], points: int = 400) -> Path:
    """Interactive chart of h and -h' with the s_star marker."""
    frame = h_profile_frame(profile, points)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame['s'], y=frame['h'], mode='lines', name='h(s)'))
    fig.add_trace(go.Scatter(x=frame['s'], y=frame['neg_h_dot'], mode='lines', name="-h'(s)", yaxis='y2'))
    fig.add_vline(x=profile.s_star, line_dash='dash', annotation_text='s*')
    fig.update_layout(
        title=f"Grouping probability, D = {profile.D}, sigma = {profile.sigma:g}, R^2 = {profile.R ** 2:.4g}",
        xaxis_title='s',
        yaxis=dict(title='h(s)', range=[0, 1.05]),
        yaxis2=dict(title="-h'(s)", overlaying='y', side='right'),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs='cdn')
    logger.info(f"Wrote h-profile chart to {path}")
    return path
