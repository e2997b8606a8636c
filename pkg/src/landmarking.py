"""
Landmarking
Two-round minibatch local averaging with a Gaussian kick between rounds,
the running-average multi-round variant, and the radius/batch-size calculators
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from geometry import ManifoldModel
from sampling import DEFAULT_MAX_DRAWS, Batch, NoisySample, SampleStream

logger = logging.getLogger(__name__)

STAGE1 = 'stage1'
STAGE2 = 'stage2'


class ConfigError(Exception):
    """Error used when landmarking parameters are invalid or inconsistent."""
    pass


@dataclass(frozen=True)
class TuningConstants:
    C2: float = 1.0
    C3: float = 1.0
    C6: float = 1.0
    C7: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"constant {name} must be nonnegative, got {value}")


def stage1_radius_sq(sigma: float, D: int, d: int, kappa_bar: float, C3: float = 1.0) -> float:
    """R1^2 = sigma^2 (2D - d - 3) + C3 kbar^2 sigma^2 d + 3 C3 kbar sigma^2 sqrt(D d)."""
    s2 = sigma ** 2
    return s2 * (2 * D - d - 3) + C3 * kappa_bar ** 2 * s2 * d + 3.0 * C3 * kappa_bar * s2 * math.sqrt(D * d)


def stage2_radius_sq(sigma: float, D: int, C7: float = 1.0) -> float:
    """R2^2 = sigma^2 (D - 3 + D^(3/4) + 2 C7 D^(5/12))."""
    return sigma ** 2 * (D - 3 + D ** 0.75 + 2.0 * C7 * D ** (5.0 / 12.0))


def _batch_size(numerator_log_power: int, sigma: float, D: int, kappa: float, diam: float, C: float) -> int:
    log_d = math.log(D)
    raw = C * log_d ** numerator_log_power * diam ** 2 / (sigma ** 2 * (log_d + kappa * diam))
    return max(1, math.ceil(raw))


def stage1_batch_size(sigma: float, D: int, kappa: float, diam: float, C2: float = 1.0) -> int:
    """ceil(C2 log(D) diam^2 / (sigma^2 (log(D) + kappa diam))), at least 1."""
    return _batch_size(1, sigma, D, kappa, diam, C2)


def stage2_batch_size(sigma: float, D: int, kappa: float, diam: float, C6: float = 1.0) -> int:
    """Stage-1 formula with log^2(D) in the numerator."""
    return _batch_size(2, sigma, D, kappa, diam, C6)


def draw_perturbation(sigma: float, D: int, rng: np.random.Generator, enabled: bool = True) -> np.ndarray:
    """D i.i.d. coordinates with variance sigma^2 D^(-1/4); zeros when disabled."""
    if not enabled:
        return np.zeros(D)
    return sigma * D ** (-0.125) * rng.standard_normal(D)


@dataclass(frozen=True)
class LandmarkConfig:
    sigma: float
    d: int
    D: int
    kappa: float
    diam: float
    reach: float
    R1_sq: float
    R2_sq: float
    n_mb1: int
    n_mb2: int
    constants: TuningConstants = field(default_factory=TuningConstants)
    perturbation: bool = True
    max_draws: int = DEFAULT_MAX_DRAWS
    rounds: int = 2
    radius_sq_schedule: Tuple[float, ...] = ()
    batch_schedule: Tuple[int, ...] = ()
    auto_fields: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if self.D <= self.d:
            raise ConfigError(f"D ({self.D}) must exceed d ({self.d})")
        if self.n_mb1 < 1 or self.n_mb2 < 1:
            raise ConfigError(f"batch sizes must be at least 1, got {self.n_mb1}, {self.n_mb2}")
        if self.R1_sq <= 0 or self.R2_sq <= 0:
            raise ConfigError("radii must be positive")
        floor = self.sigma ** 2 * (self.D - 3)
        for name in ('R1_sq', 'R2_sq'):
            if name in self.auto_fields and getattr(self, name) < floor:
                raise ConfigError(f"auto {name} = {getattr(self, name):.6g} below sigma^2 (D - 3) = {floor:.6g}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be at least 1, got {self.rounds}")
        if self.max_draws < 1:
            raise ConfigError(f"max_draws must be positive, got {self.max_draws}")
        if len(self.radius_sq_schedule) != len(self.batch_schedule):
            raise ConfigError("radius and batch schedules must have equal length")
        if self.batch_schedule and len(self.batch_schedule) != self.rounds:
            raise ConfigError(
                f"schedule lists {len(self.batch_schedule)} rounds but rounds = {self.rounds}"
            )
        if any(r <= 0 for r in self.radius_sq_schedule) or any(n < 1 for n in self.batch_schedule):
            raise ConfigError("schedules need positive radii and batch sizes of at least 1")

    @property
    def kappa_bar(self) -> float:
        return max(1.0, self.kappa)

    def schedule(self) -> List[Tuple[float, int]]:
        """(R^2, N) per round for the running-average variant."""
        if self.radius_sq_schedule:
            return list(zip(self.radius_sq_schedule, self.batch_schedule))
        rounds = [(self.R1_sq, self.n_mb1)] + [(self.R2_sq, self.n_mb2)] * (self.rounds - 1)
        return rounds[:self.rounds]

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['kappa_bar'] = self.kappa_bar
        out['radius_sq_schedule'] = list(self.radius_sq_schedule)
        out['batch_schedule'] = list(self.batch_schedule)
        out['auto_fields'] = list(self.auto_fields)
        return out


def resolve_config(
    manifold: ManifoldModel,
    sigma: float,
    R1_sq: Optional[float] = None,
    R2_sq: Optional[float] = None,
    n_mb1: Optional[int] = None,
    n_mb2: Optional[int] = None,
    constants: Optional[TuningConstants] = None,
    perturbation: bool = True,
    max_draws: int = DEFAULT_MAX_DRAWS,
    rounds: int = 2,
    radius_sq_schedule: Optional[List[float]] = None,
    batch_schedule: Optional[List[int]] = None,
) -> LandmarkConfig:
    """Fill unset radii and batch sizes from the closed-form rules and record which ones were filled."""
    constants = constants or TuningConstants()
    geo = manifold.constants
    d, D = manifold.intrinsic_dim, manifold.ambient_dim
    if sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0 and None in (R1_sq, R2_sq, n_mb1, n_mb2):
        raise ConfigError("sigma = 0 needs explicit radii and batch sizes")

    auto = []
    if R1_sq is None:
        R1_sq = stage1_radius_sq(sigma, D, d, geo.kappa_bar, constants.C3)
        auto.append('R1_sq')
    if R2_sq is None:
        R2_sq = stage2_radius_sq(sigma, D, constants.C7)
        auto.append('R2_sq')
    if n_mb1 is None:
        n_mb1 = stage1_batch_size(sigma, D, geo.curvature_bound, geo.intrinsic_diameter, constants.C2)
        auto.append('n_mb1')
    if n_mb2 is None:
        n_mb2 = stage2_batch_size(sigma, D, geo.curvature_bound, geo.intrinsic_diameter, constants.C6)
        auto.append('n_mb2')

    config = LandmarkConfig(
        sigma=float(sigma), d=d, D=D,
        kappa=geo.curvature_bound, diam=geo.intrinsic_diameter, reach=geo.reach,
        R1_sq=float(R1_sq), R2_sq=float(R2_sq), n_mb1=int(n_mb1), n_mb2=int(n_mb2),
        constants=constants, perturbation=perturbation, max_draws=int(max_draws), rounds=int(rounds),
        radius_sq_schedule=tuple(float(r) for r in radius_sq_schedule or ()),
        batch_schedule=tuple(int(n) for n in batch_schedule or ()),
        auto_fields=tuple(auto),
    )
    logger.info(
        f"Resolved config: R1^2={config.R1_sq:.6g}, R2^2={config.R2_sq:.6g}, "
        f"N1={config.n_mb1}, N2={config.n_mb2} (auto: {', '.join(auto) or 'none'})"
    )
    return config


@dataclass(frozen=True)
class StageDiagnostics:
    stage: str
    radius_sq: float
    batch_size: int
    draws: int
    dist_to_manifold: float
    signal_average: np.ndarray
    noise_average: np.ndarray
    signal_dist_to_manifold: float

    @property
    def acceptance_rate(self) -> float:
        return self.batch_size / self.draws if self.draws else 0.0

    @property
    def noise_norm(self) -> float:
        return float(np.linalg.norm(self.noise_average))

    def to_dict(self) -> Dict:
        return {
            'stage': self.stage,
            'radius_sq': self.radius_sq,
            'batch_size': self.batch_size,
            'draws': self.draws,
            'acceptance_rate': self.acceptance_rate,
            'dist_to_manifold': self.dist_to_manifold,
            'signal_dist_to_manifold': self.signal_dist_to_manifold,
            'noise_norm': self.noise_norm,
        }


@dataclass(frozen=True)
class LandmarkResult:
    q0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    perturbation: np.ndarray
    batches: Tuple[Batch, Batch]
    draws_per_stage: Dict[str, int]
    q0_dist: float
    q0_nat: np.ndarray
    stages: Tuple[StageDiagnostics, StageDiagnostics]

    @property
    def distances(self) -> Dict[str, float]:
        return {'q0': self.q0_dist, 'q1': self.stages[0].dist_to_manifold, 'q2': self.stages[1].dist_to_manifold}

    @property
    def total_draws(self) -> int:
        return sum(self.draws_per_stage.values())

    def to_dict(self, include_points: bool = True) -> Dict:
        out = {
            'distances': self.distances,
            'draws_per_stage': dict(self.draws_per_stage),
            'perturbation_norm_sq': float(np.dot(self.perturbation, self.perturbation)),
            'stages': [s.to_dict() for s in self.stages],
        }
        if include_points:
            out.update(q0=self.q0.tolist(), q1=self.q1.tolist(), q2=self.q2.tolist(), perturbation=self.perturbation.tolist())
        return out


def _diagnose(manifold: ManifoldModel, stage: str, radius_sq: float, batch: Batch, q: np.ndarray) -> StageDiagnostics:
    signal = batch.signal_average()
    return StageDiagnostics(
        stage=stage,
        radius_sq=radius_sq,
        batch_size=len(batch),
        draws=batch.draws_consumed,
        dist_to_manifold=manifold.extrinsic_distance(q),
        signal_average=signal,
        noise_average=batch.noise_average(),
        signal_dist_to_manifold=manifold.extrinsic_distance(signal),
    )


def _check_stream(stream: SampleStream, config: LandmarkConfig) -> None:
    if not math.isclose(stream.sigma, config.sigma, rel_tol=1e-12):
        raise ConfigError(f"stream sigma {stream.sigma} does not match config sigma {config.sigma}")
    if stream.manifold.ambient_dim != config.D:
        raise ConfigError(f"stream D {stream.manifold.ambient_dim} does not match config D {config.D}")


def two_round_landmark(
    stream: SampleStream,
    config: LandmarkConfig,
    rng: np.random.Generator,
    initial: Optional[NoisySample] = None,
) -> LandmarkResult:
    """
    Initialize at the first sample (or at `initial`, already drawn by the
    caller), average a stage-1 minibatch inside R1, add the perturbation,
    then average a stage-2 minibatch inside R2 around the perturbed point.

    Raises:
        AcceptanceTooLow: tagged with the stage that ran out of draws
    """
    _check_stream(stream, config)
    manifold = stream.manifold

    first = initial if initial is not None else stream.next_sample()
    q0 = first.x
    batch1 = stream.collect_minibatch(q0, math.sqrt(config.R1_sq), config.n_mb1, config.max_draws, stage=STAGE1)

    theta = draw_perturbation(config.sigma, config.D, rng, config.perturbation)
    q1 = batch1.mean() + theta

    batch2 = stream.collect_minibatch(q1, math.sqrt(config.R2_sq), config.n_mb2, config.max_draws, stage=STAGE2)
    q2 = batch2.mean()

    result = LandmarkResult(
        q0=q0, q1=q1, q2=q2,
        perturbation=theta,
        batches=(batch1, batch2),
        draws_per_stage={'init': 0 if initial is not None else 1, STAGE1: batch1.draws_consumed, STAGE2: batch2.draws_consumed},
        q0_dist=manifold.extrinsic_distance(q0),
        q0_nat=first.x_nat,
        stages=(
            _diagnose(manifold, STAGE1, config.R1_sq, batch1, q1),
            _diagnose(manifold, STAGE2, config.R2_sq, batch2, q2),
        ),
    )
    d = result.distances
    logger.debug(f"Landmark done: d(q0)={d['q0']:.4g}, d(q1)={d['q1']:.4g}, d(q2)={d['q2']:.4g}, draws={result.total_draws}")
    return result


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    radius_sq: float
    batch_size: int
    draws: int
    assigned: int
    landmark: np.ndarray
    dist_to_manifold: float

    def to_dict(self) -> Dict:
        return {
            'round': self.round_index,
            'radius_sq': self.radius_sq,
            'batch_size': self.batch_size,
            'draws': self.draws,
            'assigned': self.assigned,
            'dist_to_manifold': self.dist_to_manifold,
        }


@dataclass(frozen=True)
class MultiRoundResult:
    q0: np.ndarray
    rounds: Tuple[RoundRecord, ...]
    batches: Tuple[Batch, ...]

    @property
    def landmark(self) -> np.ndarray:
        return self.rounds[-1].landmark if self.rounds else self.q0

    @property
    def trajectory(self) -> List[np.ndarray]:
        return [self.q0] + [r.landmark for r in self.rounds]


def multi_round_landmark(stream: SampleStream, config: LandmarkConfig) -> MultiRoundResult:
    """
    Running-average landmarking: every round collects a minibatch around
    the current landmark and mixes it in, so after each round the landmark
    is the exact mean of the first sample and all accepted samples.
    No perturbation is injected, so the stream is the only source of randomness.
    """
    _check_stream(stream, config)
    manifold = stream.manifold
    schedule = config.schedule()
    if not schedule:
        raise ConfigError("multi-round landmarking needs at least one round")

    q0 = stream.next_sample().x
    q = q0.copy()
    assigned = 1
    records, batches = [], []
    for index, (radius_sq, count) in enumerate(schedule, start=1):
        stage = f"round{index}"
        batch = stream.collect_minibatch(q, math.sqrt(radius_sq), count, config.max_draws, stage=stage)
        q = (assigned * q + batch.x.sum(axis=0)) / (assigned + count)
        assigned += count
        batches.append(batch)
        records.append(RoundRecord(
            round_index=index,
            radius_sq=radius_sq,
            batch_size=count,
            draws=batch.draws_consumed,
            assigned=assigned,
            landmark=q.copy(),
            dist_to_manifold=manifold.extrinsic_distance(q),
        ))
    return MultiRoundResult(q0=q0, rounds=tuple(records), batches=tuple(batches))

