#!/usr/bin/env python3
"""
Landmark Pipeline
Single landmarking runs, pairwise-distance comparisons, greedy nets and
grouping-profile exports, each written as JSON or CSV with its provenance
"""

import json
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

# Add src directory to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from estimators import (
    build_net,
    estimate_pairwise_distance,
    estimate_signal,
    naive_pairwise_error,
    pairwise_error_scale,
)
from experiment_config import landmark_config_for, manifold_for
from grouping import DomainError, GroupingProfile
from landmarking import multi_round_landmark, two_round_landmark
from sampling import AcceptanceTooLow, SampleStream, derive_seed, generator_metadata
from sweep_summary import emit_plot_data, write_h_profile_html

logger = logging.getLogger(__name__)

PERTURBATION_KEY = 1


def _provenance(cfg: Dict, config) -> Dict:
    return {
        'experiment': cfg,
        'config': config.to_dict(),
        'generator': generator_metadata(),
    }


def _write_json(payload: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + '\n')
    logger.info(f"Wrote {path}")
    return path


def run_single(cfg: Dict, mode: str = 'two_round') -> Dict:
    """One seeded landmarking run from the first sample of the stream."""
    manifold = manifold_for(cfg)
    config = landmark_config_for(cfg, manifold)
    seed = int(cfg.get('seed', 0))
    stream = SampleStream(manifold, config.sigma, seed)

    if mode == 'multi_round':
        result = multi_round_landmark(stream, config)
        out = {
            'mode': mode,
            'q0_dist': manifold.extrinsic_distance(result.q0),
            'rounds': [r.to_dict() for r in result.rounds],
            'landmark': result.landmark.tolist(),
        }
    else:
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, PERTURBATION_KEY)))
        result = two_round_landmark(stream, config, rng)
        out = dict(result.to_dict(), mode=mode)
        out['signal_estimate_error'] = float(np.linalg.norm(result.batches[0].mean() - result.q0_nat))
        out['raw_point_error'] = float(np.linalg.norm(result.q0 - result.q0_nat))

    out['provenance'] = _provenance(cfg, config)
    out['draws'] = stream.draws_so_far
    logger.info(f"Run ({mode}, seed {seed}) used {stream.draws_so_far} draws")
    return out


def run_signal_estimates(cfg: Dict, seeds: int) -> pd.DataFrame:
    """Stage-1 signal estimate against the raw point, one row per seed."""
    manifold = manifold_for(cfg)
    config = landmark_config_for(cfg, manifold)
    base_seed = int(cfg.get('seed', 0))
    rows = []
    for index in range(seeds):
        stream = SampleStream(manifold, config.sigma, derive_seed(base_seed, index))
        first = stream.next_sample()
        row = {'seed_index': index, 'raw_error': float(np.linalg.norm(first.x - first.x_nat))}
        try:
            estimate = estimate_signal(stream, first.x, config)
            row['estimate_error'] = float(np.linalg.norm(estimate - first.x_nat))
            row['error'] = None
        except AcceptanceTooLow as e:
            row['estimate_error'] = math.nan
            row['error'] = str(e)
        rows.append(row)
    return pd.DataFrame(rows)


def run_pairwise(cfg: Dict, pairs: int) -> pd.DataFrame:
    """
    For each pair, draw two noisy points from a fresh seeded stream and
    compare the local-average distance estimate with the raw distance,
    both against the clean distance.
    """
    manifold = manifold_for(cfg)
    config = landmark_config_for(cfg, manifold)
    base_seed = int(cfg.get('seed', 0))
    rows = []
    for index in range(pairs):
        stream = SampleStream(manifold, config.sigma, derive_seed(base_seed, index))
        x_i, x_j = stream.next_sample(), stream.next_sample()
        true_distance = float(np.linalg.norm(x_i.x_nat - x_j.x_nat))
        row = {
            'pair': index,
            'true_distance': true_distance,
            'naive_error': naive_pairwise_error(x_i.x, x_j.x, true_distance),
        }
        try:
            estimate = estimate_pairwise_distance(stream, x_i.x, x_j.x, config)
            row.update(estimate=estimate, estimate_error=abs(estimate - true_distance), error=None)
        except AcceptanceTooLow as e:
            logger.error(f"Pair {index} failed: {e}")
            row.update(estimate=math.nan, estimate_error=math.nan, error=str(e))
        row['draws'] = stream.draws_so_far
        rows.append(row)

    df = pd.DataFrame(rows)
    scale = pairwise_error_scale(config.sigma, config.d, config.D)
    done = df[df['error'].isna()]
    improved = float((done['estimate_error'] < done['naive_error']).mean()) if len(done) else math.nan
    logger.info(
        f"Pairwise: {len(done)}/{pairs} pairs, improved in {improved:.1%}, "
        f"median error {done['estimate_error'].median():.4g} vs scale {scale:.4g}"
    )
    return df


def pairwise_summary(df: pd.DataFrame, sigma: float, d: int, D: int) -> Dict:
    done = df[df['error'].isna()]
    return {
        'pairs': int(len(df)),
        'completed': int(len(done)),
        'improved_fraction': float((done['estimate_error'] < done['naive_error']).mean()) if len(done) else math.nan,
        'median_estimate_error': float(done['estimate_error'].median()) if len(done) else math.nan,
        'median_naive_error': float(done['naive_error'].median()) if len(done) else math.nan,
        'error_scale': pairwise_error_scale(sigma, d, D),
    }


def run_net(cfg: Dict, separation: float, budget: int) -> Dict:
    manifold = manifold_for(cfg)
    config = landmark_config_for(cfg, manifold)
    stream = SampleStream(manifold, config.sigma, int(cfg.get('seed', 0)))
    net = build_net(stream, config, separation, budget)
    out = net.to_dict()
    out['landmark_errors'] = [manifold.extrinsic_distance(q) for q in net.landmarks]
    out['min_separation'] = net.min_separation()
    out['provenance'] = _provenance(cfg, config)
    return out


def run_profile(R_sq: float, sigma: float, D: int, out_dir: Union[str, Path], points: int = 400) -> Dict[str, Path]:
    profile = GroupingProfile.from_radius_sq(R_sq, sigma, D)
    out_dir = Path(out_dir)
    stem = f"h_profile_D{D}_sigma{sigma:g}"
    return {
        'csv': emit_plot_data(pd.DataFrame(), 'h-profile', out_dir / f"{stem}.csv", profile=profile, points=points),
        'html': write_h_profile_html(profile, out_dir / f"{stem}.html", points=points),
    }


def main(argv: Optional[List[str]] = None) -> int:
    import argparse
    from experiment_config import default_data_dir, load_experiment, parse_assignments

    parser = argparse.ArgumentParser(description="Single landmarking runs and estimators")
    parser.add_argument('command', choices=['run', 'signal', 'pairwise', 'net', 'profile'])
    parser.add_argument('--config', default=None, help="TOML or JSON experiment file")
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--sigma', type=float, default=None)
    parser.add_argument('--mode', choices=['two_round', 'multi_round'], default='two_round')
    parser.add_argument('--pairs', type=int, default=100)
    parser.add_argument('--seeds', type=int, default=50)
    parser.add_argument('--separation', type=float, default=0.5)
    parser.add_argument('--budget', type=int, default=200_000)
    parser.add_argument('--R-sq', dest='R_sq', type=float, default=3.84)
    parser.add_argument('--D', type=int, default=128)
    parser.add_argument('--points', type=int, default=400)
    parser.add_argument('--out', default=None)
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help="override a config entry, e.g. manifold.D=256")
    args = parser.parse_args(argv)

    Path('logs').mkdir(exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.FileHandler('logs/landmark.log'), logging.StreamHandler()],
    )
    data_dir = default_data_dir()

    if args.command == 'profile':
        sigma = args.sigma if args.sigma is not None else 0.1
        try:
            paths = run_profile(args.R_sq, sigma, args.D, args.out or data_dir / 'plots', args.points)
        except DomainError as e:
            logger.error(f"No phase transition for these parameters: {e}")
            return 2
        print(f"h-profile: {paths['csv']} and {paths['html']}")
        return 0

    cfg = load_experiment(args.config, dict(parse_assignments(args.set), seed=args.seed, sigma=args.sigma))

    if args.command == 'run':
        try:
            result = run_single(cfg, args.mode)
        except AcceptanceTooLow as e:
            logger.error(f"Run failed: {e}")
            return 1
        path = _write_json(result, args.out or data_dir / 'runs' / f"run_seed{cfg['seed']}.json")
        print(f"d(q, M) per stage written to {path}")
        return 0

    if args.command == 'signal':
        df = run_signal_estimates(cfg, args.seeds)
        print(df[['raw_error', 'estimate_error']].median().to_string())
        return 0 if df['error'].isna().all() else 1

    if args.command == 'pairwise':
        config = landmark_config_for(cfg)
        df = run_pairwise(cfg, args.pairs)
        summary = pairwise_summary(df, config.sigma, config.d, config.D)
        out = Path(args.out) if args.out else data_dir / 'pairwise' / f"pairs_seed{cfg['seed']}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out, index=False, float_format='%.12g', lineterminator='\n')
        print(json.dumps(summary, indent=2))
        return 0 if df['error'].isna().all() else 1

    net = run_net(cfg, args.separation, args.budget)
    path = _write_json(net, args.out or data_dir / 'nets' / f"net_seed{cfg['seed']}.json")
    print(f"Net of {net['size']} landmarks written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
