"""
Verification Checks
Monte Carlo and grid checks of the grouping, geometry and concentration
bounds behind two-round landmarking. Every check returns a CheckReport.
"""

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betainc

from geometry import AmbiguousProjection, Circle, FlatTorus, ManifoldModel, Sphere
from grouping import (
    NEG_HDOT_BAND,
    NEG_HDOT_MONOTONE,
    PHI_CONV_H_BAND,
    PHI_CONV_NEG_HDOT_BAND,
    DomainError,
    GroupingProfile,
    c_of_d,
    c_of_d_bound,
    c_of_d_sharp_bound,
    gamma_density,
    gamma_dot_envelope,
    stirling_bracket,
    stirling_epsilon,
)
from landmarking import stage1_radius_sq
from sampling import SampleStream, derive_seed

logger = logging.getLogger(__name__)

# Monte Carlo verdicts within this many standard errors of the threshold are inconclusive
SE_BAND = 3.0
# Agreement checks fail only beyond this many standard errors
SE_FAIL = 5.0
# Constant slack for bounds stated up to an unspecified absolute constant
RATIO_SLACK = 10.0
FAR_DISTANCE_C = (math.sqrt(2.0) - 1.0) / math.sqrt(2.0)
HOEFFDING_DENOMINATOR = 64.0 * 25.0
CONDITIONAL_CHUNK = 32_768
BOOTSTRAP_RESAMPLES = 100


class Outcome(Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"
    SKIPPED = "SKIPPED"


@dataclass
class CheckReport:
    check_name: str
    parameters: Dict
    measured: Dict
    bounds: Dict
    outcome: Outcome
    samples: int = 0
    runtime: float = 0.0
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.outcome == Outcome.PASS

    def to_dict(self, include_runtime: bool = True) -> Dict:
        out = {
            'check_name': self.check_name,
            'parameters': _jsonable(self.parameters),
            'measured': _jsonable(self.measured),
            'bounds': _jsonable(self.bounds),
            'outcome': self.outcome.value,
            'samples': self.samples,
            'message': self.message,
        }
        if include_runtime:
            out['runtime'] = self.runtime
        return out


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _finish(report: CheckReport, started: float) -> CheckReport:
    report.runtime = time.perf_counter() - started
    logger.info(f"{report.check_name}: {report.outcome.value} ({report.runtime:.2f}s) {report.message}")
    return report


def _skipped(name: str, parameters: Dict, reason: str, started: float) -> CheckReport:
    return _finish(CheckReport(name, parameters, {}, {}, Outcome.SKIPPED, message=reason), started)


def threshold_outcome(value: float, se: float, threshold: float, upper: bool = True) -> Outcome:
    """
    Verdict for `value <= threshold` (upper=True) or `value >= threshold`
    measured with standard error `se`.
    """
    if abs(value - threshold) <= SE_BAND * se:
        return Outcome.INCONCLUSIVE
    ok = value <= threshold if upper else value >= threshold
    return Outcome.PASS if ok else Outcome.FAIL


def agreement_outcome(z_scores: np.ndarray) -> Outcome:
    worst = float(np.max(np.abs(z_scores))) if np.size(z_scores) else 0.0
    if worst <= SE_BAND:
        return Outcome.PASS
    if worst <= SE_FAIL:
        return Outcome.INCONCLUSIVE
    return Outcome.FAIL


def _manifold_params(manifold: ManifoldModel) -> Dict:
    return manifold.to_config()


# geometry


def signal_avg_sides(manifold: ManifoldModel, points: np.ndarray, q_nat: np.ndarray) -> Tuple[float, float]:
    """(d(mean, M), kappa / N * sum d_M^2(x_i, q_nat))."""
    points = np.atleast_2d(points)
    lhs = manifold.extrinsic_distance(points.mean(axis=0))
    geo = np.atleast_1d(manifold.geodesic_distance(points, q_nat))
    rhs = manifold.constants.curvature_bound * float(np.mean(geo ** 2))
    return lhs, rhs


def check_signal_avg(manifold: ManifoldModel, points: np.ndarray, q_nat: np.ndarray) -> CheckReport:
    started = time.perf_counter()
    lhs, rhs = signal_avg_sides(manifold, points, q_nat)
    tol = 1e-9 * manifold.scale
    outcome = Outcome.PASS if lhs <= rhs + tol else Outcome.FAIL
    return _finish(CheckReport(
        'signal_avg',
        {'manifold': _manifold_params(manifold), 'n_points': int(np.atleast_2d(points).shape[0])},
        {'lhs': lhs}, {'rhs': rhs}, outcome, samples=1,
    ), started)


def random_point_set(manifold: ManifoldModel, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """A base point on M and `size` points at random geodesic offsets of random spread around it."""
    q_nat = manifold.sample_uniform(rng)
    spread = rng.uniform(0.0, manifold.constants.intrinsic_diameter)
    points = np.array([
        manifold.geodesic_point(q_nat, manifold.random_unit_tangent(q_nat, rng), rng.uniform(0.0, spread))
        for _ in range(size)
    ])
    return points, q_nat


def check_signal_avg_sweep(manifold: ManifoldModel, trials: int = 100, seed: int = 0) -> CheckReport:
    started = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, 0))
    holds, evaluated, worst_margin = 0, 0, math.inf
    tol = 1e-9 * manifold.scale
    for _ in range(trials):
        points, q_nat = random_point_set(manifold, rng, int(rng.integers(2, 51)))
        try:
            lhs, rhs = signal_avg_sides(manifold, points, q_nat)
        except AmbiguousProjection:
            continue
        evaluated += 1
        holds += lhs <= rhs + tol
        worst_margin = min(worst_margin, rhs - lhs)
    outcome = Outcome.PASS if holds == evaluated else Outcome.FAIL
    return _finish(CheckReport(
        'signal_avg',
        {'manifold': _manifold_params(manifold), 'trials': trials, 'seed': seed},
        {'holds': holds, 'worst_margin': worst_margin}, {'required': evaluated}, outcome,
        samples=trials, message=f"{holds}/{evaluated} point sets satisfy the inequality",
    ), started)


def grid_spacing(manifold: ManifoldModel, n: int) -> Optional[float]:
    """Largest gap between neighbouring points of `manifold.grid(n)`, when it has a closed form."""
    if isinstance(manifold, FlatTorus):
        m = int(math.ceil(math.sqrt(n)))
        return 2.0 * math.pi / m * math.hypot(*manifold.radii)
    if isinstance(manifold, Sphere) and manifold.intrinsic_dim == 1:
        return 2.0 * math.pi * manifold.radius / n
    if isinstance(manifold, Sphere) and manifold.intrinsic_dim == 2:
        return 2.0 * manifold.radius * math.sqrt(4.0 * math.pi / n)
    return None


def check_geometry_invariants(manifold: ManifoldModel, seed: int = 0, pairs: int = 1000) -> CheckReport:
    """
    Sampling residuals, projection idempotence, geodesic >= chord,
    projection vs brute-force grid search, and the geodesic acceleration bound.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, 1))
    scale = manifold.scale
    geo = manifold.constants
    failures: List[str] = []

    a = manifold.sample_uniform_batch(rng, pairs)
    b = manifold.sample_uniform_batch(rng, pairs)
    residual = float(np.max(manifold.residual(np.concatenate([a, b]))))
    if residual > 1e-12 * scale:
        failures.append(f"sample residual {residual:.3e}")

    chord = np.linalg.norm(a - b, axis=1)
    geodesic = manifold.geodesic_distance(a, b)
    chord_gap = float(np.min(geodesic - chord))
    if chord_gap < -1e-9 * scale:
        failures.append(f"geodesic below chord by {-chord_gap:.3e}")

    # points inside the reach tube
    offsets = rng.standard_normal(a.shape)
    offsets *= (rng.uniform(0.0, 0.5 * geo.reach, size=pairs) / np.linalg.norm(offsets, axis=1))[:, None]
    x = a + offsets
    projected = manifold.project(x)
    idempotence = float(np.max(np.linalg.norm(manifold.project(projected) - projected, axis=1)))
    if idempotence > 1e-10 * scale:
        failures.append(f"projection not idempotent ({idempotence:.3e})")

    brute_force_gap = None
    spacing = grid_spacing(manifold, 10_000)
    if spacing is not None:
        grid = manifold.grid(10_000)
        worst = 0.0
        for xi, pi in zip(x[:100], projected[:100]):
            nearest = grid[np.argmin(np.linalg.norm(grid - xi, axis=1))]
            worst = max(worst, float(np.linalg.norm(nearest - pi)))
        brute_force_gap = worst
        if worst > 2.0 * spacing:
            failures.append(f"projection {worst:.3e} from grid minimizer (spacing {spacing:.3e})")

    step = 1e-4 * scale
    accel = 0.0
    for p in a:
        v = manifold.random_unit_tangent(p, rng)
        second = (manifold.geodesic_point(p, v, step) - 2.0 * p + manifold.geodesic_point(p, v, -step)) / step ** 2
        accel = max(accel, float(np.linalg.norm(second)))
    if accel > geo.curvature_bound * (1.0 + 1e-3):
        failures.append(f"geodesic acceleration {accel:.6g} above kappa {geo.curvature_bound:.6g}")

    outcome = Outcome.FAIL if failures else Outcome.PASS
    return _finish(CheckReport(
        'geometry_invariants',
        {'manifold': _manifold_params(manifold), 'seed': seed, 'pairs': pairs},
        {
            'max_residual': residual, 'min_geodesic_minus_chord': chord_gap,
            'idempotence': idempotence, 'brute_force_gap': brute_force_gap, 'max_acceleration': accel,
        },
        {'kappa': geo.curvature_bound, 'grid_spacing': spacing},
        outcome, samples=pairs, message='; '.join(failures),
    ), started)


def check_far_distance(manifold: ManifoldModel, q: np.ndarray, xi: float, grid_size: int = 10_000) -> CheckReport:
    """
    Points at geodesic distance >= xi from P_M q are far from q:
    min ||q - x||^2 >= min{||q - P_M q||^2 + c xi^2, tau^2} over a dense grid.
    """
    started = time.perf_counter()
    q = np.asarray(q, dtype=float)
    q_nat = manifold.project(q)
    grid = manifold.grid(grid_size)
    geodesic = manifold.geodesic_distance(grid, q_nat)
    far = grid[geodesic >= xi]
    params = {'manifold': _manifold_params(manifold), 'xi': xi, 'grid_size': int(grid.shape[0])}
    if far.shape[0] == 0:
        return _skipped('far_distance', params, "no grid point at geodesic distance >= xi", started)
    inf_sq = float(np.min(np.sum((far - q) ** 2, axis=1)))
    offset_sq = float(np.dot(q - q_nat, q - q_nat))
    bound = min(offset_sq + FAR_DISTANCE_C * xi ** 2, manifold.constants.reach ** 2)
    outcome = Outcome.PASS if inf_sq >= bound - 1e-12 * manifold.scale ** 2 else Outcome.FAIL
    return _finish(CheckReport(
        'far_distance', params, {'inf_dist_sq': inf_sq}, {'bound': bound, 'c': FAR_DISTANCE_C},
        outcome, samples=int(far.shape[0]),
    ), started)


def check_far_distance_sweep(manifold: ManifoldModel, trials: int = 20, seed: int = 0) -> CheckReport:
    started = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, 2))
    reports = []
    for _ in range(trials):
        p = manifold.sample_uniform(rng)
        direction = rng.standard_normal(manifold.ambient_dim)
        direction /= np.linalg.norm(direction)
        q = p + rng.uniform(0.0, 0.3 * manifold.constants.reach) * direction
        xi = rng.uniform(0.0, manifold.constants.intrinsic_diameter)
        reports.append(check_far_distance(manifold, q, xi))
    held = sum(r.outcome == Outcome.PASS for r in reports)
    failed = sum(r.outcome == Outcome.FAIL for r in reports)
    outcome = Outcome.FAIL if failed else Outcome.PASS
    return _finish(CheckReport(
        'far_distance', {'manifold': _manifold_params(manifold), 'trials': trials, 'seed': seed},
        {'held': held, 'failed': failed}, {'required': trials - sum(r.outcome == Outcome.SKIPPED for r in reports)},
        outcome, samples=trials,
    ), started)


def sphere_cap_fraction(d: int, theta: float) -> float:
    """Fraction of the area of S^d within geodesic angle theta of a point."""
    if theta >= math.pi:
        return 1.0
    half = 0.5 * betainc(0.5 * d, 0.5, math.sin(theta) ** 2)
    return float(half if theta <= 0.5 * math.pi else 1.0 - half)


def volume_ratio_bound(d: int, kappa: float, diam: float, delta: float) -> float:
    return 0.25 * (2.0 * kappa * delta) ** d * math.exp(-kappa * (d - 1) * diam)


def check_volume_ratio_sphere(d: int, r: float, deltas: Sequence[float]) -> CheckReport:
    started = time.perf_counter()
    sphere = Sphere(d, d + 2, r)
    geo = sphere.constants
    worst = math.inf
    failures = 0
    for delta in deltas:
        ratio = sphere_cap_fraction(d, delta / r)
        bound = volume_ratio_bound(d, geo.curvature_bound, geo.intrinsic_diameter, delta)
        worst = min(worst, ratio / bound)
        failures += ratio < bound
    return _finish(CheckReport(
        'volume_ratio_sphere', {'d': d, 'r': r, 'n_deltas': len(deltas)},
        {'min_ratio_over_bound': worst, 'failures': failures}, {'required_ratio': 1.0},
        Outcome.FAIL if failures else Outcome.PASS, samples=len(deltas),
    ), started)


def check_volume_ratio_suite(r: float = 1.0, points: int = 50) -> CheckReport:
    started = time.perf_counter()
    deltas = np.linspace(0.5 * math.pi * r / points, 0.5 * math.pi * r, points)
    reports = [check_volume_ratio_sphere(d, r, deltas) for d in range(2, 9)]
    failures = sum(rep.measured['failures'] for rep in reports)
    return _finish(CheckReport(
        'volume_ratio_sphere', {'d': list(range(2, 9)), 'r': r, 'points': points},
        {'failures': failures, 'min_ratio_over_bound': min(rep.measured['min_ratio_over_bound'] for rep in reports)},
        {'required_ratio': 1.0}, Outcome.FAIL if failures else Outcome.PASS, samples=7 * points,
    ), started)


# noise and conditional laws


def check_noisy_point_distance(manifold: ManifoldModel, sigma: float, trials: int = 10_000, seed: int = 0, C1: float = 5.0) -> CheckReport:
    """Coverage of sigma sqrt(D - d) +- C1 kbar sigma sqrt(d) by d(x, M)."""
    started = time.perf_counter()
    d, D = manifold.intrinsic_dim, manifold.ambient_dim
    if sigma * math.sqrt(D) > manifold.constants.reach:
        logger.warning(f"sigma sqrt(D) = {sigma * math.sqrt(D):.3g} exceeds the reach; bracket may not apply")
    stream = SampleStream(manifold, sigma, derive_seed(seed, 3))
    x_nat, z = stream.draw_arrays(trials)
    dist = manifold.extrinsic_distance(x_nat + z)
    center = sigma * math.sqrt(D - d)
    half = C1 * manifold.constants.kappa_bar * sigma * math.sqrt(d) + 1e-12 * manifold.scale
    inside = np.abs(dist - center) <= half
    coverage = float(inside.mean())
    se = math.sqrt(max(coverage * (1.0 - coverage), 1.0 / trials) / trials)
    mean_ratio = float(dist.mean() / center) if center > 0 else 0.0
    return _finish(CheckReport(
        'noisy_point_distance',
        {'manifold': _manifold_params(manifold), 'sigma': sigma, 'trials': trials, 'seed': seed, 'C1': C1},
        {'coverage': coverage, 'coverage_se': se, 'mean_ratio': mean_ratio},
        {'center': center, 'half_width': half, 'required_coverage': 0.9},
        threshold_outcome(coverage, se, 0.9, upper=False), samples=trials,
    ), started)


@dataclass
class ConditionalSample:
    """Accepted (x_nat, z) pairs from rejection sampling of ||x_nat + z - q|| <= R."""
    x_nat: np.ndarray
    z: np.ndarray
    draws: int

    @property
    def accepted(self) -> int:
        return self.z.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.draws if self.draws else 0.0

    def noise_mean(self) -> np.ndarray:
        return self.z.mean(axis=0)

    def noise_mean_se(self) -> np.ndarray:
        return self.z.std(axis=0, ddof=1) / math.sqrt(self.accepted)


def sample_conditional(
    manifold: ManifoldModel, q: np.ndarray, R: float, sigma: float, n_accept: int, seed: int, max_draws: int = 20_000_000
) -> ConditionalSample:
    stream = SampleStream(manifold, sigma, seed)
    q = np.asarray(q, dtype=float)
    nats, zs = [], []
    accepted = 0
    while accepted < n_accept and stream.draws_so_far < max_draws:
        x_nat, z = stream.draw_arrays(min(CONDITIONAL_CHUNK, max_draws - stream.draws_so_far))
        keep = np.linalg.norm(x_nat + z - q, axis=1) <= R
        nats.append(x_nat[keep])
        zs.append(z[keep])
        accepted += int(keep.sum())
    x_nat = np.concatenate(nats)[:n_accept]
    z = np.concatenate(zs)[:n_accept]
    logger.debug(f"Conditional sample: {x_nat.shape[0]} accepted of {stream.draws_so_far} draws")
    return ConditionalSample(x_nat, z, stream.draws_so_far)


def debiased_mean_norm(z: np.ndarray) -> float:
    """||E z|| estimated from ||mean||^2 minus its noise floor tr(Cov) / n."""
    n = z.shape[0]
    mean = z.mean(axis=0)
    floor = float(np.sum(z.var(axis=0, ddof=1))) / n
    return math.sqrt(max(0.0, float(np.dot(mean, mean)) - floor))


def noise_size_bound(manifold: ManifoldModel, profile: GroupingProfile, dist_q: float) -> float:
    """s_star (D - 3)^(-1/2) sqrt(log D + kappa d diam + d log(1 / (kappa s_par)))."""
    s_par = profile.s_star_parallel(dist_q)
    if s_par <= 0:
        raise DomainError("s_star_parallel is zero")
    geo = manifold.constants
    d = manifold.intrinsic_dim
    term = math.log(profile.D) + geo.curvature_bound * d * geo.intrinsic_diameter + d * math.log(1.0 / (geo.curvature_bound * s_par))
    if term <= 0:
        raise DomainError(f"logarithmic term {term:.4g} is not positive")
    return profile.s_star / math.sqrt(profile.D - 3) * math.sqrt(term)


def check_conditional_noise_mean(
    manifold: ManifoldModel, q: np.ndarray, R: float, sigma: float, trials: int = 20_000, seed: int = 0
) -> CheckReport:
    """||E[z | ||x_nat + z - q|| <= R]|| against the noise-size bound with unit constant."""
    started = time.perf_counter()
    params = {'manifold': _manifold_params(manifold), 'R': R, 'sigma': sigma, 'trials': trials, 'seed': seed}
    dist_q = manifold.extrinsic_distance(q)
    try:
        profile = GroupingProfile(R, sigma, manifold.ambient_dim)
        bound = noise_size_bound(manifold, profile, dist_q)
    except DomainError as e:
        return _skipped('conditional_noise_mean', params, str(e), started)

    sample = sample_conditional(manifold, q, R, sigma, trials, derive_seed(seed, 4))
    if sample.accepted < 100:
        return _finish(CheckReport(
            'conditional_noise_mean', params, {'accepted': sample.accepted, 'draws': sample.draws}, {'bound': bound},
            Outcome.INCONCLUSIVE, samples=sample.draws, message="too few accepted samples",
        ), started)

    norm = debiased_mean_norm(sample.z)
    rng = np.random.default_rng(derive_seed(seed, 5))
    boot = np.array([
        debiased_mean_norm(sample.z[rng.integers(0, sample.accepted, sample.accepted)])
        for _ in range(BOOTSTRAP_RESAMPLES)
    ])
    se = float(boot.std(ddof=1))
    ratio = norm / bound
    logger.info(f"conditional_noise_mean ratio {ratio:.4f} (acceptance {sample.acceptance_rate:.4f})")
    return _finish(CheckReport(
        'conditional_noise_mean', params,
        {
            'mean_norm': norm, 'mean_norm_se': se, 'raw_mean_norm': float(np.linalg.norm(sample.noise_mean())),
            'ratio': ratio, 'ci_low': float(np.quantile(boot, 0.025)), 'ci_high': float(np.quantile(boot, 0.975)),
            'acceptance_rate': sample.acceptance_rate, 'accepted': sample.accepted,
        },
        {'bound': bound, 'slack': RATIO_SLACK},
        threshold_outcome(norm, se, RATIO_SLACK * bound), samples=sample.draws,
    ), started)


def intrinsic_distance_bounds(manifold: ManifoldModel, profile: GroupingProfile, dist_q: float) -> Tuple[float, float]:
    """
    Unit-constant bounds on E[d_M^2 | grouped] and E[d_M^4 | grouped]:
    s^2 + sqrt(L) sigma^2 sqrt(D) and s^4 + L sigma^4 D with
    s^2 = s_par^2 - 2 sigma^2 and L = log(diam / s) + d kappa diam + d log(1 / (kappa s_par)).
    """
    s_par = profile.s_star_parallel(dist_q)
    s_check_sq = s_par ** 2 - 2.0 * profile.sigma ** 2
    if s_check_sq <= 0 or s_par <= 0:
        raise DomainError("s_star_parallel^2 must exceed 2 sigma^2")
    geo = manifold.constants
    d = manifold.intrinsic_dim
    log_term = (math.log(geo.intrinsic_diameter / math.sqrt(s_check_sq))
                + d * geo.curvature_bound * geo.intrinsic_diameter
                + d * math.log(1.0 / (geo.curvature_bound * s_par)))
    if log_term <= 0:
        raise DomainError(f"logarithmic term {log_term:.4g} is not positive")
    s2 = profile.sigma ** 2
    second = s_check_sq + math.sqrt(log_term) * s2 * math.sqrt(profile.D)
    fourth = s_check_sq ** 2 + log_term * s2 ** 2 * profile.D
    return second, fourth


def conditional_geodesic_moments(manifold: ManifoldModel, sample: ConditionalSample, q_nat: np.ndarray) -> Dict[str, float]:
    geo = np.atleast_1d(manifold.geodesic_distance(sample.x_nat, q_nat))
    g2, g4 = geo ** 2, geo ** 4
    n = max(1, geo.size)
    return {
        'second': float(g2.mean()), 'second_se': float(g2.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        'fourth': float(g4.mean()), 'fourth_se': float(g4.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
    }


def check_conditional_signal_distance(
    manifold: ManifoldModel, q: np.ndarray, R: float, sigma: float, trials: int = 20_000, seed: int = 0
) -> CheckReport:
    started = time.perf_counter()
    params = {'manifold': _manifold_params(manifold), 'R': R, 'sigma': sigma, 'trials': trials, 'seed': seed}
    dist_q = manifold.extrinsic_distance(q)
    try:
        profile = GroupingProfile(R, sigma, manifold.ambient_dim)
        second_bound, fourth_bound = intrinsic_distance_bounds(manifold, profile, dist_q)
    except DomainError as e:
        return _skipped('conditional_signal_distance', params, str(e), started)

    sample = sample_conditional(manifold, q, R, sigma, trials, derive_seed(seed, 6))
    if sample.accepted < 100:
        return _finish(CheckReport(
            'conditional_signal_distance', params, {'accepted': sample.accepted}, {},
            Outcome.INCONCLUSIVE, samples=sample.draws, message="too few accepted samples",
        ), started)
    moments = conditional_geodesic_moments(manifold, sample, manifold.project(q))
    second = threshold_outcome(moments['second'], moments['second_se'], RATIO_SLACK * second_bound)
    fourth = threshold_outcome(moments['fourth'], moments['fourth_se'], RATIO_SLACK * fourth_bound)
    if Outcome.FAIL in (second, fourth):
        outcome = Outcome.FAIL
    elif Outcome.INCONCLUSIVE in (second, fourth):
        outcome = Outcome.INCONCLUSIVE
    else:
        outcome = Outcome.PASS
    measured = dict(moments)
    measured.update(
        second_ratio=moments['second'] / second_bound,
        fourth_ratio=moments['fourth'] / fourth_bound,
        acceptance_rate=sample.acceptance_rate,
    )
    logger.info(f"conditional_signal_distance ratios {measured['second_ratio']:.4f}, {measured['fourth_ratio']:.4f}")
    return _finish(CheckReport(
        'conditional_signal_distance', params, measured,
        {'second': second_bound, 'fourth': fourth_bound, 'slack': RATIO_SLACK}, outcome, samples=sample.draws,
    ), started)


def check_vector_hoeffding(
    D: int, B: float, N: int, trials: int = 10_000, ts: Sequence[float] = (0.1, 0.2, 0.3), seed: int = 0
) -> CheckReport:
    """Tail of the mean of N bounded i.i.d. vectors against D exp(-t^2 N / (1600 B^2))."""
    started = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, 7))
    norms = np.empty(trials)
    chunk = max(1, 2_000_000 // (N * D))
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        v = rng.standard_normal((stop - start, N, D)) * (B / math.sqrt(D))
        lengths = np.linalg.norm(v, axis=2, keepdims=True)
        v *= np.minimum(1.0, B / lengths)
        norms[start:stop] = np.linalg.norm(v.mean(axis=1), axis=1)

    tails, bounds, bounds_64, outcomes = [], [], [], []
    for t in ts:
        tail = float(np.mean(norms > t))
        se = math.sqrt(max(tail * (1.0 - tail), 1.0 / trials) / trials)
        bound = D * math.exp(-t ** 2 * N / (HOEFFDING_DENOMINATOR * B ** 2))
        tails.append(tail)
        bounds.append(bound)
        bounds_64.append(D * math.exp(-t ** 2 * N / (64.0 * B ** 2)))
        outcomes.append(threshold_outcome(tail, se, bound) if bound < 1.0 else Outcome.PASS)
    if Outcome.FAIL in outcomes:
        outcome = Outcome.FAIL
    elif Outcome.INCONCLUSIVE in outcomes:
        outcome = Outcome.INCONCLUSIVE
    else:
        outcome = Outcome.PASS
    return _finish(CheckReport(
        'vector_hoeffding', {'D': D, 'B': B, 'N': N, 'trials': trials, 't': list(ts), 'seed': seed},
        {'tail': tails}, {'bound': bounds, 'bound_64': bounds_64}, outcome, samples=trials,
    ), started)


# grouping


def check_stirling_bracket(n_max: int = 20) -> CheckReport:
    started = time.perf_counter()
    eps = {n: stirling_epsilon(n) for n in range(1, n_max + 1)}
    violations = [n for n, e in eps.items() if not stirling_bracket(n)[0] <= e <= stirling_bracket(n)[1]]
    return _finish(CheckReport(
        'stirling_bracket', {'n_max': n_max}, {'epsilon': eps, 'violations': violations},
        {n: stirling_bracket(n) for n in eps}, Outcome.FAIL if violations else Outcome.PASS, samples=n_max,
    ), started)


def check_c_of_d(D_max: int = 1024) -> CheckReport:
    started = time.perf_counter()
    plain = [D for D in range(4, D_max + 1) if c_of_d(D) > c_of_d_bound(D)]
    # the sharper form is derived for odd D, where (D - 1) / 2 is an integer
    sharp = [D for D in range(5, D_max + 1, 2) if c_of_d(D) > c_of_d_sharp_bound(D)]
    scaled = c_of_d(10_000) * math.sqrt(10_000 - 3)
    asymptotic_ok = 1.0 / math.sqrt(2.0 * math.pi) <= scaled <= 1.0 / math.sqrt(math.pi)
    ok = not plain and not sharp and asymptotic_ok
    return _finish(CheckReport(
        'c_of_d', {'D_max': D_max},
        {'C4': c_of_d(4), 'plain_violations': plain, 'sharp_violations': sharp, 'C_sqrt_D_minus_3_at_1e4': scaled},
        {'asymptotic_band': [1.0 / math.sqrt(2.0 * math.pi), 1.0 / math.sqrt(math.pi)]},
        Outcome.PASS if ok else Outcome.FAIL, samples=D_max - 3,
    ), started)


FIG_PROFILE = GroupingProfile.from_radius_sq(3.84, 0.1, 128)

MONOTONE_PROFILES = (
    FIG_PROFILE,
    GroupingProfile.from_radius_sq(2.0 * 0.01 * 61, 0.1, 64),
    GroupingProfile.from_radius_sq(3.0 * 256, 1.0, 256),
    GroupingProfile.from_s_star_sq(50.0, 1.0, 1000),
    GroupingProfile.from_s_star_sq(0.5, 0.05, 32),
    GroupingProfile.from_s_star_sq(400.0, 0.5, 4096),
)


def check_h_monotone(profiles: Sequence[GroupingProfile] = MONOTONE_PROFILES, points: int = 1000) -> CheckReport:
    started = time.perf_counter()
    worst = 0.0
    for profile in profiles:
        values = profile.h(np.linspace(0.0, profile.R, points))
        worst = max(worst, float(np.max(np.diff(values))))
    return _finish(CheckReport(
        'h_monotone', {'profiles': [p.to_dict() for p in profiles], 'points': points},
        {'max_increase': worst}, {'tolerance': 1e-12},
        Outcome.PASS if worst <= 1e-12 else Outcome.FAIL, samples=points * len(profiles),
    ), started)


def check_h_upper_tail(profiles: Sequence[GroupingProfile] = MONOTONE_PROFILES, points: int = 1000) -> CheckReport:
    """h(s) <= 4 exp(-(s - s_check)^2 / (2 nu_check^2)) for s >= s_check."""
    started = time.perf_counter()
    worst = 0.0
    used = 0
    for profile in profiles:
        if profile.s_check_sq <= 0:
            continue
        used += 1
        s = np.linspace(profile.s_check, profile.R, points)
        worst = max(worst, float(np.max(profile.h(s) - profile.h_upper_tail(s))))
    if not used:
        return _skipped('h_upper_tail', {'points': points}, "no profile with R^2 > sigma^2 (D - 1)", started)
    return _finish(CheckReport(
        'h_upper_tail', {'profiles': used, 'points': points}, {'max_excess': worst}, {'tolerance': 1e-12},
        Outcome.PASS if worst <= 1e-12 else Outcome.FAIL, samples=points * used,
    ), started)


def check_neg_hdot_monotonicity(profile: Optional[GroupingProfile] = None, points: int = 2000) -> CheckReport:
    """-h' increases up to s_star - gap and decreases from s_star + gap, gap = sigma (D - 3)^(1/6) / 12."""
    started = time.perf_counter()
    profile = profile or NEG_HDOT_MONOTONE.midpoint_profile(500_000, 1.0)
    ok, reason = NEG_HDOT_MONOTONE.check(profile)
    if not ok:
        return _skipped('neg_hdot_monotonicity', profile.to_dict(), reason, started)
    gap = profile.neg_h_dot_monotone_gap()
    span = 40.0 * max(gap, profile.nu)
    s = np.concatenate([
        np.linspace(0.0, profile.R, points // 2, endpoint=False),
        np.linspace(max(0.0, profile.s_star - span), min(profile.R, profile.s_star + span), points // 2),
    ])
    deriv = profile.neg_h_dot_derivative(s)
    significant = np.abs(deriv) > 1e-12 * np.max(np.abs(deriv))
    wrong_left = (s <= profile.s_star - gap) & significant & (deriv < 0)
    wrong_right = (s >= profile.s_star + gap) & significant & (deriv > 0)
    violations = int(wrong_left.sum() + wrong_right.sum())
    return _finish(CheckReport(
        'neg_hdot_monotonicity', profile.to_dict(), {'violations': violations, 'gap': gap}, {'allowed': 0},
        Outcome.FAIL if violations else Outcome.PASS, samples=int(s.size),
    ), started)


def grouping_monte_carlo(profile: GroupingProfile, t: float, draws: int, rng: np.random.Generator) -> float:
    """
    Frequency of ||z - t e_1|| <= R for z ~ N(0, sigma^2 I_D), split as
    (z_1 - t)^2 + sigma^2 chi^2_(D-1).
    """
    hits = 0
    chunk = 1_000_000
    for start in range(0, draws, chunk):
        n = min(chunk, draws - start)
        z1 = profile.sigma * rng.standard_normal(n)
        rest = profile.sigma ** 2 * rng.chisquare(profile.D - 1, n)
        hits += int(np.count_nonzero((z1 - t) ** 2 + rest <= profile.R ** 2))
    return hits / draws


def check_grouping_monte_carlo(
    profile: GroupingProfile = FIG_PROFILE, points: int = 10, draws: int = 1_000_000, seed: int = 0
) -> CheckReport:
    started = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, 8))
    ts = np.linspace(0.0, profile.s_star + 4.0 * profile.nu_bar, points)
    exact = profile.phi_conv_h(ts)
    freq = np.array([grouping_monte_carlo(profile, float(t), draws, rng) for t in ts])
    se = np.sqrt(exact * (1.0 - exact) / draws) + 1.0 / draws
    z = (freq - exact) / se
    return _finish(CheckReport(
        'grouping_monte_carlo', dict(profile.to_dict(), draws=draws, seed=seed),
        {'t': ts, 'frequency': freq, 'max_abs_z': float(np.max(np.abs(z)))}, {'phi_conv_h': exact},
        agreement_outcome(z), samples=draws * points,
    ), started)


def check_sampling_acceptance_rate(
    manifold: ManifoldModel, sigma: float, q: np.ndarray, R: float, draws: int = 20_000, seed: int = 0, table: int = 200
) -> CheckReport:
    """Empirical acceptance of ||x - q|| <= R against the mean of phi*h(||q - x_nat||) over the same clean points."""
    started = time.perf_counter()
    params = {'manifold': _manifold_params(manifold), 'sigma': sigma, 'R': R, 'draws': draws, 'seed': seed}
    try:
        profile = GroupingProfile(R, sigma, manifold.ambient_dim)
    except DomainError as e:
        return _skipped('sampling_acceptance_rate', params, str(e), started)
    stream = SampleStream(manifold, sigma, derive_seed(seed, 9))
    x_nat, z = stream.draw_arrays(draws)
    accepted = np.linalg.norm(x_nat + z - q, axis=1) <= R
    offsets = np.linalg.norm(q - x_nat, axis=1)
    grid = np.linspace(offsets.min(), offsets.max(), table)
    expected_each = np.interp(offsets, grid, profile.tabulate_phi_conv_h(grid))
    expected = float(expected_each.mean())
    rate = float(accepted.mean())
    se = math.sqrt(max(float(np.sum(expected_each * (1.0 - expected_each))), 1.0)) / draws
    z_score = (rate - expected) / se
    return _finish(CheckReport(
        'sampling_acceptance_rate', params, {'rate': rate, 'z': z_score}, {'expected': expected, 'se': se},
        agreement_outcome(np.array([z_score])), samples=draws,
    ), started)


def _grid(window: Tuple[float, float], points: int) -> np.ndarray:
    return np.linspace(window[0], window[1], points)


def _envelope_gamma(points: int = 100) -> Dict:
    failures = 0
    for p in (28, 50, 100, 500):
        x_star = p - 1.0
        half = x_star ** (2.0 / 3.0)
        for x in _grid((x_star - half, x_star + half), points):
            band = gamma_dot_envelope(p, float(x))
            failures += not band.contains(gamma_density(p, float(x)))
    return {'failures': failures, 'evaluated': 4 * points}


def _envelope_neg_hdot(D_values: Sequence[int], points: int) -> Dict:
    failures, evaluated, skipped = 0, 0, []
    for D in D_values:
        profile = NEG_HDOT_BAND.midpoint_profile(D, 1.0)
        ok, reason = NEG_HDOT_BAND.check(profile)
        if not ok:
            skipped.append(reason)
            continue
        for s in _grid(profile.neg_h_dot_window(), points):
            failures += not profile.neg_h_dot_envelope(float(s)).contains(profile.neg_h_dot(float(s)))
            evaluated += 1
    return {'failures': failures, 'evaluated': evaluated, 'skipped': skipped}


def _envelope_phi_conv_neg_hdot(D_values: Sequence[int], points: int) -> Dict:
    failures, evaluated, skipped = 0, 0, []
    for D in D_values:
        profile = PHI_CONV_NEG_HDOT_BAND.midpoint_profile(D, 1.0)
        ok, reason = PHI_CONV_NEG_HDOT_BAND.check(profile)
        if not ok:
            skipped.append(reason)
            continue
        ts = _grid(profile.phi_conv_neg_hdot_window(), points)
        values = profile.phi_conv_neg_hdot(ts)
        for t, value in zip(ts, values):
            failures += not profile.phi_conv_neg_hdot_envelope(float(t)).contains(float(value))
            evaluated += 1
    return {'failures': failures, 'evaluated': evaluated, 'skipped': skipped}


def phi_conv_h_grid(profile: GroupingProfile, points: int) -> np.ndarray:
    """Half the points across the whole window, half around the transition."""
    lo, hi = profile.phi_conv_h_window()
    near = max(lo, profile.s_star - 6.0 * profile.nu_bar)
    return np.unique(np.concatenate([_grid((lo, hi), points // 2), _grid((near, hi), points - points // 2)]))


def _envelope_phi_conv_h(D_values: Sequence[int], points: int) -> Dict:
    failures, evaluated, skipped = 0, 0, []
    for D in D_values:
        profile = PHI_CONV_H_BAND.midpoint_profile(D, 1.0)
        ok, reason = PHI_CONV_H_BAND.check(profile)
        if not ok:
            skipped.append(reason)
            continue
        ts = phi_conv_h_grid(profile, points)
        values = profile.phi_conv_h(ts)
        for t, value in zip(ts, values):
            band = profile.phi_conv_h_envelope(float(t))
            failures += not (band.lower <= value <= band.upper + 1e-8)
            evaluated += 1
    return {'failures': failures, 'evaluated': evaluated, 'skipped': skipped}


NEG_HDOT_SUITE_D = (256, 1024, 4096)
PHI_CONV_NEG_HDOT_SUITE_D = (1_000_000, 4_000_000, 16_000_000)
PHI_CONV_H_SUITE_D = (70_000_000, 150_000_000, 300_000_000)


def check_envelope_suite(
    points: int = 200,
    neg_hdot_D: Sequence[int] = NEG_HDOT_SUITE_D,
    phi_conv_neg_hdot_D: Sequence[int] = PHI_CONV_NEG_HDOT_SUITE_D,
    phi_conv_h_D: Sequence[int] = PHI_CONV_H_SUITE_D,
) -> CheckReport:
    """Every envelope band on grids inside its window, for admissible parameter triples."""
    started = time.perf_counter()
    parts = {
        'gamma_density': _envelope_gamma(min(points, 100)),
        'neg_h_dot': _envelope_neg_hdot(neg_hdot_D, points),
        'phi_conv_neg_hdot': _envelope_phi_conv_neg_hdot(phi_conv_neg_hdot_D, points),
        'phi_conv_h': _envelope_phi_conv_h(phi_conv_h_D, points),
    }
    c_violations = [D for D in range(4, 1025) if c_of_d(D) > c_of_d_bound(D)]
    failures = sum(part['failures'] for part in parts.values()) + len(c_violations)
    evaluated = sum(part['evaluated'] for part in parts.values())
    if failures:
        outcome = Outcome.FAIL
    elif evaluated == 0:
        outcome = Outcome.SKIPPED
    else:
        outcome = Outcome.PASS
    return _finish(CheckReport(
        'envelope_suite',
        {'points': points, 'neg_hdot_D': list(neg_hdot_D), 'phi_conv_neg_hdot_D': list(phi_conv_neg_hdot_D),
         'phi_conv_h_D': list(phi_conv_h_D)},
        dict(parts, c_of_d_violations=c_violations), {'gamma_factor': 4.0}, outcome, samples=evaluated,
    ), started)


def check_relative_bound(profiles: Optional[Sequence[GroupingProfile]] = None, points: int = 100) -> CheckReport:
    """
    Fit the smallest C with (phi*-h')/(phi*h) <= C max{1/nu_bar, (s - s_star)/nu_bar^2}
    for s up to s_star + sigma (D - 3)^(1/6) / 12. The constant is reported, not asserted.
    """
    started = time.perf_counter()
    profiles = profiles or [PHI_CONV_H_BAND.midpoint_profile(D, 1.0) for D in PHI_CONV_H_SUITE_D]
    fitted = []
    for profile in profiles:
        hi = profile.phi_conv_h_window()[1]
        s = _grid((max(0.0, profile.s_star - 10.0 * profile.nu_bar), hi), points)
        ratio = profile.phi_conv_neg_hdot(s) / profile.phi_conv_h(s) / profile.relative_bound_scale(s)
        fitted.append(float(np.max(ratio)))
    constant = max(fitted) if fitted else math.nan
    logger.info(f"relative bound: fitted C = {constant:.6g}")
    return _finish(CheckReport(
        'relative_bound', {'profiles': [p.to_dict() for p in profiles], 'points': points},
        {'fitted_C': constant, 'per_profile': fitted}, {},
        Outcome.PASS if math.isfinite(constant) else Outcome.FAIL, samples=points * len(profiles),
    ), started)


# default-parameter runners for the suite


def _reference_sphere() -> Sphere:
    return Sphere(2, 128, 1.0)


def _noisy_reference_point(manifold: ManifoldModel, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, 10))
    return manifold.sample_uniform(rng) + sigma * rng.standard_normal(manifold.ambient_dim)


def _stage1_setup(seed: int, sigma: float = 0.05) -> Tuple[Sphere, np.ndarray, float]:
    sphere = _reference_sphere()
    q = _noisy_reference_point(sphere, sigma, seed)
    R = math.sqrt(stage1_radius_sq(sigma, 128, 2, 1.0))
    return sphere, q, R


def _run_conditional_noise(seed: int, trials: Optional[int]) -> CheckReport:
    sphere, q, R = _stage1_setup(seed)
    return check_conditional_noise_mean(sphere, q, R, 0.05, trials or 20_000, seed)


def _run_conditional_signal(seed: int, trials: Optional[int]) -> CheckReport:
    sphere, q, R = _stage1_setup(seed)
    return check_conditional_signal_distance(sphere, q, R, 0.05, trials or 20_000, seed)


def _run_acceptance_rate(seed: int, trials: Optional[int]) -> CheckReport:
    sphere, q, R = _stage1_setup(seed)
    return check_sampling_acceptance_rate(sphere, 0.05, q, R, trials or 20_000, seed)


def _run_geometry(seed: int, trials: Optional[int]) -> CheckReport:
    reports = [
        check_geometry_invariants(m, seed, trials or 1000)
        for m in (Sphere(2, 16, 1.0), Circle(8, 2.0), FlatTorus(8, (1.0, 0.5)))
    ]
    worst = next((r for r in reports if r.outcome == Outcome.FAIL), reports[0])
    return CheckReport(
        'geometry_invariants', {'manifolds': [r.parameters['manifold'] for r in reports]},
        {r.parameters['manifold']['kind']: r.measured for r in reports}, {},
        worst.outcome, samples=sum(r.samples for r in reports),
        runtime=sum(r.runtime for r in reports), message=worst.message,
    )


CheckRunner = Callable[[int, Optional[int]], CheckReport]

CHECKS: Dict[str, CheckRunner] = {
    'signal_avg': lambda seed, trials: check_signal_avg_sweep(Sphere(2, 3, 1.0), trials or 100, seed),
    'noisy_point_distance': lambda seed, trials: check_noisy_point_distance(_reference_sphere(), 0.03, trials or 10_000, seed),
    'conditional_noise_mean': _run_conditional_noise,
    'conditional_signal_distance': _run_conditional_signal,
    'far_distance': lambda seed, trials: check_far_distance_sweep(Sphere(2, 3, 1.0), trials or 20, seed),
    'volume_ratio_sphere': lambda seed, trials: check_volume_ratio_suite(1.0, trials or 50),
    'vector_hoeffding': lambda seed, trials: check_vector_hoeffding(16, 1.0, 100, trials or 10_000, seed=seed),
    'envelope_suite': lambda seed, trials: check_envelope_suite(trials or 200),
    'stirling_bracket': lambda seed, trials: check_stirling_bracket(20),
    'c_of_d': lambda seed, trials: check_c_of_d(1024),
    'grouping_monte_carlo': lambda seed, trials: check_grouping_monte_carlo(FIG_PROFILE, 10, trials or 1_000_000, seed),
    'sampling_acceptance_rate': _run_acceptance_rate,
    'h_monotone': lambda seed, trials: check_h_monotone(),
    'h_upper_tail': lambda seed, trials: check_h_upper_tail(),
    'neg_hdot_monotonicity': lambda seed, trials: check_neg_hdot_monotonicity(points=trials or 2000),
    'relative_bound': lambda seed, trials: check_relative_bound(points=trials or 100),
    'geometry_invariants': _run_geometry,
}

# what --trials counts for each check; None means the check ignores it
TRIALS_UNIT: Dict[str, Optional[str]] = {
    'signal_avg': 'random point sets',
    'noisy_point_distance': 'noisy samples',
    'conditional_noise_mean': 'accepted samples',
    'conditional_signal_distance': 'accepted samples',
    'far_distance': 'query points',
    'volume_ratio_sphere': 'grid points in delta',
    'vector_hoeffding': 'Monte Carlo repetitions',
    'envelope_suite': 'grid points per window',
    'stirling_bracket': None,
    'c_of_d': None,
    'grouping_monte_carlo': 'draws per offset',
    'sampling_acceptance_rate': 'noisy samples',
    'h_monotone': None,
    'h_upper_tail': None,
    'neg_hdot_monotonicity': 'grid points',
    'relative_bound': 'grid points per profile',
    'geometry_invariants': 'point pairs per manifold',
}


def run_check(name: str, seed: int = 0, trials: Optional[int] = None) -> CheckReport:
    """Run a registered check, turning unexpected errors into a FAIL report."""
    if name not in CHECKS:
        raise KeyError(f"unknown check '{name}'; choose from {', '.join(sorted(CHECKS))}")
    started = time.perf_counter()
    try:
        return CHECKS[name](seed, trials)
    except Exception as e:
        logger.error(f"Check {name} raised: {e}")
        return _finish(CheckReport(name, {'seed': seed, 'trials': trials}, {}, {}, Outcome.FAIL, message=str(e)), started)
