"""
Estimators built on local averages
Signal estimation, pairwise distances and greedy landmark nets
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import numpy as np

from landmarking import LandmarkConfig, STAGE1, two_round_landmark
from sampling import AcceptanceTooLow, Batch, SampleStream, derive_seed

logger = logging.getLogger(__name__)

# spawn key for the perturbation generator of net builds
NET_PERTURBATION_KEY = 7


def local_average(batch: Batch) -> np.ndarray:
    return batch.mean()


def signal_estimate_batch(stream: SampleStream, q0: np.ndarray, config: LandmarkConfig) -> Batch:
    """The stage-1 minibatch around q0, without perturbation."""
    return stream.collect_minibatch(q0, math.sqrt(config.R1_sq), config.n_mb1, config.max_draws, stage=STAGE1)


def estimate_signal(stream: SampleStream, q0: np.ndarray, config: LandmarkConfig) -> np.ndarray:
    """Stage-1 local average around a noisy point, as an estimate of its clean counterpart."""
    return local_average(signal_estimate_batch(stream, q0, config))


def signal_error_scale(config: LandmarkConfig) -> float:
    """sigma kbar^(1/2) (D d)^(1/4), the size of the signal-estimation error bound."""
    return config.sigma * math.sqrt(config.kappa_bar) * (config.D * config.d) ** 0.25


def pairwise_distance_from_batches(batch_i: Batch, batch_j: Batch) -> float:
    return float(np.linalg.norm(local_average(batch_i) - local_average(batch_j)))


def pairwise_batches(stream: SampleStream, q_i: np.ndarray, q_j: np.ndarray, config: LandmarkConfig) -> Tuple[Batch, Batch]:
    """Two fresh stage-1 minibatches, one per endpoint; no sample is shared."""
    radius = math.sqrt(config.R1_sq)
    batch_i = stream.collect_minibatch(q_i, radius, config.n_mb1, config.max_draws, stage='endpoint_i')
    batch_j = stream.collect_minibatch(q_j, radius, config.n_mb1, config.max_draws, stage='endpoint_j')
    return batch_i, batch_j


def estimate_pairwise_distance(stream: SampleStream, q_i: np.ndarray, q_j: np.ndarray, config: LandmarkConfig) -> float:
    """
    ||mean(X_i) - mean(X_j)|| for independent minibatches around q_i and q_j.

    Raises:
        AcceptanceTooLow: tagged with the endpoint that ran out of draws
    """
    return pairwise_distance_from_batches(*pairwise_batches(stream, q_i, q_j, config))


def naive_pairwise_error(x_i: np.ndarray, x_j: np.ndarray, true_distance: float) -> float:
    """Error of using the raw noisy distance ||x_i - x_j||."""
    return abs(float(np.linalg.norm(x_i - x_j)) - true_distance)


def pairwise_error_scale(sigma: float, d: int, D: int) -> float:
    """sigma d^(1/4) D^(1/4) log(D)^(1/4)."""
    return sigma * (d * D * math.log(D)) ** 0.25


def noise_corrected_distance(x: np.ndarray, q: np.ndarray, sigma: float) -> float:
    """Distance from a raw sample to a point near M with the expected noise energy sigma^2 D removed."""
    gap_sq = float(np.dot(x - q, x - q)) - sigma ** 2 * x.shape[-1]
    return math.sqrt(max(0.0, gap_sq))


@dataclass(frozen=True)
class NetSpec:
    landmarks: np.ndarray
    separation: float
    covering_radius: float
    provenance: Tuple[Dict, ...]
    draws_used: int
    discarded_runs: int

    def __len__(self) -> int:
        return self.landmarks.shape[0]

    def pairwise_distances(self) -> np.ndarray:
        diff = self.landmarks[:, None, :] - self.landmarks[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def min_separation(self) -> float:
        if len(self) < 2:
            return math.inf
        dist = self.pairwise_distances()
        return float(dist[np.triu_indices(len(self), k=1)].min())

    def to_dict(self) -> Dict:
        return {
            'size': len(self),
            'separation': self.separation,
            'covering_radius': self.covering_radius,
            'draws_used': self.draws_used,
            'discarded_runs': self.discarded_runs,
            'landmarks': self.landmarks.tolist(),
            'provenance': list(self.provenance),
        }


def covering_radius(stream: SampleStream, landmarks: np.ndarray, grid_size: int = 4096) -> float:
    """Largest distance from a manifold grid point to its nearest landmark."""
    if landmarks.shape[0] == 0:
        return math.inf
    grid = stream.manifold.grid(grid_size)
    nearest = np.full(grid.shape[0], np.inf)
    for q in landmarks:
        nearest = np.minimum(nearest, np.linalg.norm(grid - q, axis=1))
    return float(nearest.max())


def build_net(stream: SampleStream, config: LandmarkConfig, separation: float, budget: int) -> NetSpec:
    """
    Greedy net over incoming noisy samples. A sample whose noise-corrected
    distance to every landmark is at least `separation` seeds a two-round
    landmarking run; the resulting landmark is kept if it is itself at
    least `separation` from every kept landmark. Stops once `budget`
    draws have been consumed and returns whatever was built.
    """
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")
    start = stream.draws_so_far
    landmarks: List[np.ndarray] = []
    provenance: List[Dict] = []
    discarded = 0
    perturb_rng = np.random.Generator(np.random.PCG64(derive_seed(stream.seed, NET_PERTURBATION_KEY)))

    while stream.draws_so_far - start < budget:
        candidate = stream.next_sample()
        if any(noise_corrected_distance(candidate.x, q, stream.sigma) < separation for q in landmarks):
            continue

        remaining = budget - (stream.draws_so_far - start)
        if remaining < 1:
            break
        run_config = replace(config, max_draws=min(config.max_draws, remaining))
        try:
            result = two_round_landmark(stream, run_config, perturb_rng, initial=candidate)
        except AcceptanceTooLow as e:
            logger.info(f"Net build stopped at budget: {e}")
            break

        if any(np.linalg.norm(result.q2 - q) < separation for q in landmarks):
            discarded += 1
            continue
        landmarks.append(result.q2)
        provenance.append({
            'stream_seed': stream.seed,
            'seed_draw_index': candidate.draw_index,
            'draws': result.total_draws,
            'dist_to_manifold': result.distances['q2'],
            'seed_offset': float(np.linalg.norm(result.q2 - candidate.x_nat)),
        })

    stacked = np.array(landmarks) if landmarks else np.empty((0, stream.manifold.ambient_dim))
    net = NetSpec(
        landmarks=stacked,
        separation=separation,
        covering_radius=covering_radius(stream, stacked),
        provenance=tuple(provenance),
        draws_used=stream.draws_so_far - start,
        discarded_runs=discarded,
    )
    logger.info(f"Built net of {len(net)} landmarks in {net.draws_used} draws ({discarded} discarded)")
    return net
