import math

import numpy as np
import pytest

from geometry import Sphere
from landmarking import (
    STAGE1,
    ConfigError,
    TuningConstants,
    draw_perturbation,
    multi_round_landmark,
    resolve_config,
    stage1_batch_size,
    stage1_radius_sq,
    stage2_batch_size,
    stage2_radius_sq,
    two_round_landmark,
)
from sampling import AcceptanceTooLow, SampleStream

REL_TOLERANCE = 1e-12
IDENTITY_TOLERANCE = 1e-12

REFERENCE_D = 128
REFERENCE_SIGMA = 0.5 / math.sqrt(REFERENCE_D)


def perturbation_rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def test_stage1_radius_example():
    # 0.0025 * 505 + 0.0025 * 4 + 3 * 0.0025 * 32
    assert stage1_radius_sq(0.05, 256, 4, 1.0, 1.0) == pytest.approx(1.5125, rel=REL_TOLERANCE)


def test_stage1_radius_terms():
    assert stage1_radius_sq(0.05, 256, 4, 1.0, 0.0) == pytest.approx(0.0025 * 505, rel=REL_TOLERANCE)
    assert stage1_radius_sq(0.1, 256, 4, 2.0, 1.5) == pytest.approx(4.0 * stage1_radius_sq(0.05, 256, 4, 2.0, 1.5))


def test_stage2_radius_example():
    assert stage2_radius_sq(0.1, 256, 1.0) == pytest.approx(0.01 * (317 + 2 * 256 ** (5 / 12)), rel=REL_TOLERANCE)
    assert stage2_radius_sq(0.1, 256, 1.0) == pytest.approx(3.37159, abs=1e-5)
    assert stage2_radius_sq(0.1, 256, 0.0) == pytest.approx(0.01 * (253 + 64), rel=REL_TOLERANCE)


def test_batch_size_examples():
    # log(128) pi^2 / (0.01 (log 128 + pi)) = 599.07...
    assert stage1_batch_size(0.1, 128, 1.0, math.pi, 1.0) == 600
    raw2 = math.log(128) ** 2 * math.pi ** 2 / (0.01 * (math.log(128) + math.pi))
    assert stage2_batch_size(0.1, 128, 1.0, math.pi, 1.0) == math.ceil(raw2)
    assert stage1_batch_size(0.1, 128, 1.0, math.pi, 0.0) == 1


def test_perturbation_moments():
    rng = perturbation_rng(3)
    norms_sq = np.array([np.dot(t, t) for t in (draw_perturbation(0.1, 256, rng) for _ in range(10_000))])
    assert norms_sq.mean() == pytest.approx(0.01 * 256 ** 0.75, rel=0.05)
    band = 3 * 0.01 * 256 ** 0.25 * math.sqrt(256)
    assert np.mean(np.abs(norms_sq[:200] - 0.01 * 256 ** 0.75) <= band) >= 0.9
    assert not np.any(draw_perturbation(0.1, 256, rng, enabled=False))


def test_perturbation_is_reproducible():
    assert np.array_equal(draw_perturbation(0.1, 64, perturbation_rng(5)), draw_perturbation(0.1, 64, perturbation_rng(5)))


def test_resolve_config_records_auto_fields(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, n_mb1=10)
    assert set(config.auto_fields) == {'R1_sq', 'R2_sq', 'n_mb2'}
    assert config.n_mb1 == 10
    assert config.R1_sq >= REFERENCE_SIGMA ** 2 * (REFERENCE_D - 3)
    assert config.kappa_bar == 1.0
    assert config.to_dict()['auto_fields'] == list(config.auto_fields)


def test_zero_noise_needs_manual_parameters(reference_sphere):
    with pytest.raises(ConfigError):
        resolve_config(reference_sphere, 0.0)
    config = resolve_config(reference_sphere, 0.0, R1_sq=0.1, R2_sq=0.1, n_mb1=5, n_mb2=5)
    assert config.auto_fields == ()


@pytest.mark.parametrize("kwargs", [
    {'rounds': 0},
    {'max_draws': 0},
    {'n_mb1': 0},
    {'R2_sq': -1.0},
    {'radius_sq_schedule': [0.5, 0.4], 'batch_schedule': [10]},
    {'rounds': 3, 'radius_sq_schedule': [0.6, 0.4], 'batch_schedule': [30, 20]},
])
def test_invalid_configs(reference_sphere, kwargs):
    with pytest.raises(ConfigError):
        resolve_config(reference_sphere, REFERENCE_SIGMA, **kwargs)


def test_negative_constant_rejected():
    with pytest.raises(ConfigError):
        TuningConstants(C2=-1.0)


def test_two_round_decomposition(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, n_mb1=200, n_mb2=300)
    stream = SampleStream(reference_sphere, REFERENCE_SIGMA, 11)
    result = two_round_landmark(stream, config, perturbation_rng())
    batch1, batch2 = result.batches

    assert np.allclose(result.q1 - result.perturbation, batch1.signal_average() + batch1.noise_average(),
                       atol=IDENTITY_TOLERANCE)
    assert np.all(batch1.distances <= math.sqrt(config.R1_sq))
    assert np.all(batch2.distances <= math.sqrt(config.R2_sq))
    assert np.allclose(batch2.center, result.q1)
    assert np.array_equal(result.q2, batch2.mean())
    assert len(batch1) == 200 and len(batch2) == 300
    assert stream.draws_so_far == result.total_draws
    assert result.q0_dist == pytest.approx(reference_sphere.extrinsic_distance(result.q0))
    assert set(result.to_dict()) >= {'distances', 'draws_per_stage', 'stages', 'q2'}


def test_unit_batch_with_huge_radius(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, R1_sq=1e6, n_mb1=1, n_mb2=1)
    stream = SampleStream(reference_sphere, REFERENCE_SIGMA, 4)
    result = two_round_landmark(stream, config, perturbation_rng(1))
    second = SampleStream(reference_sphere, REFERENCE_SIGMA, 4)
    second.next_sample()
    x2 = second.next_sample().x
    assert np.allclose(result.q1, x2 + result.perturbation, atol=IDENTITY_TOLERANCE)


def test_noiseless_run_obeys_signal_average_bound():
    sphere = Sphere(2, 16, 1.0)
    config = resolve_config(sphere, 0.0, R1_sq=0.09, R2_sq=0.09, n_mb1=50, n_mb2=50, perturbation=False)
    stream = SampleStream(sphere, 0.0, 2)
    result = two_round_landmark(stream, config, perturbation_rng())
    assert result.q0_dist == pytest.approx(0.0, abs=1e-12)
    batch = result.batches[0]
    spread = np.mean(sphere.geodesic_distance(batch.x_nat, np.broadcast_to(result.q0, batch.x_nat.shape)) ** 2)
    assert result.stages[0].dist_to_manifold <= sphere.constants.curvature_bound * spread + 1e-12


def test_stream_mismatch_rejected(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA)
    with pytest.raises(ConfigError):
        two_round_landmark(SampleStream(reference_sphere, 2 * REFERENCE_SIGMA, 0), config, perturbation_rng())


def test_acceptance_failure_is_tagged(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, R1_sq=1e-4, max_draws=500)
    with pytest.raises(AcceptanceTooLow) as info:
        two_round_landmark(SampleStream(reference_sphere, REFERENCE_SIGMA, 0), config, perturbation_rng())
    assert info.value.stage == STAGE1


def test_scaling_equivariance():
    factor = 2.0
    small, large = Sphere(2, 64, 1.0), Sphere(2, 64, factor)
    sigma = 0.03
    base = resolve_config(small, sigma, R1_sq=0.2, R2_sq=0.1, n_mb1=50, n_mb2=80)
    scaled = resolve_config(large, factor * sigma, R1_sq=factor ** 2 * 0.2, R2_sq=factor ** 2 * 0.1, n_mb1=50, n_mb2=80)
    a = two_round_landmark(SampleStream(small, sigma, 9), base, perturbation_rng(2))
    b = two_round_landmark(SampleStream(large, factor * sigma, 9), scaled, perturbation_rng(2))
    for p, q in [(a.q0, b.q0), (a.q1, b.q1), (a.q2, b.q2)]:
        assert np.allclose(factor * p, q, rtol=1e-9, atol=0.0)


def test_multi_round_is_running_mean(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, n_mb1=40, n_mb2=60, rounds=3)
    result = multi_round_landmark(SampleStream(reference_sphere, REFERENCE_SIGMA, 8), config)
    assert [r.batch_size for r in result.rounds] == [40, 60, 60]
    everything = np.vstack([result.q0[None, :]] + [b.x for b in result.batches])
    assert np.allclose(result.landmark, everything.mean(axis=0), atol=IDENTITY_TOLERANCE)
    assert result.rounds[-1].assigned == 1 + 40 + 60 + 60
    assert len(result.trajectory) == 4


def test_multi_round_single_round_formula(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, n_mb1=25, rounds=1)
    result = multi_round_landmark(SampleStream(reference_sphere, REFERENCE_SIGMA, 1), config)
    expected = (result.q0 + result.batches[0].x.sum(axis=0)) / 26
    assert np.allclose(result.landmark, expected, atol=IDENTITY_TOLERANCE)


def test_multi_round_custom_schedule(reference_sphere):
    config = resolve_config(
        reference_sphere, REFERENCE_SIGMA, rounds=2, radius_sq_schedule=[0.6, 0.4], batch_schedule=[30, 20]
    )
    result = multi_round_landmark(SampleStream(reference_sphere, REFERENCE_SIGMA, 1), config)
    assert [(r.radius_sq, r.batch_size) for r in result.rounds] == [(0.6, 30), (0.4, 20)]


def test_schedule_length_must_match_rounds(reference_sphere):
    with pytest.raises(ConfigError, match="2 rounds but rounds = 3"):
        resolve_config(
            reference_sphere, REFERENCE_SIGMA, rounds=3, radius_sq_schedule=[0.6, 0.4], batch_schedule=[30, 20]
        )
    config = resolve_config(reference_sphere, REFERENCE_SIGMA, n_mb1=10, n_mb2=10, rounds=4)
    assert len(config.schedule()) == 4


@pytest.mark.slow
def test_two_stage_improvement(reference_sphere):
    config = resolve_config(reference_sphere, REFERENCE_SIGMA)
    distances = []
    for seed in range(50):
        result = two_round_landmark(
            SampleStream(reference_sphere, REFERENCE_SIGMA, seed), config, perturbation_rng(10_000 + seed)
        )
        distances.append([result.distances[k] for k in ('q0', 'q1', 'q2')])
    d0, d1, d2 = np.median(np.array(distances), axis=0)
    raw_scale = REFERENCE_SIGMA * math.sqrt(REFERENCE_D - 2)
    assert 0.9 * raw_scale <= d0 <= 1.1 * raw_scale
    assert d1 <= 0.6 * d0
    assert d2 <= d1
    assert d2 <= 5 * REFERENCE_SIGMA * math.sqrt(2)


@pytest.mark.slow
def test_multi_round_distances_shrink():
    sphere = Sphere(2, 64, 1.0)
    sigma = 0.04
    config = resolve_config(sphere, sigma, n_mb1=300, n_mb2=600, rounds=3)
    per_round = np.array([
        [r.dist_to_manifold for r in multi_round_landmark(SampleStream(sphere, sigma, seed), config).rounds]
        for seed in range(50)
    ])
    medians = np.median(per_round, axis=0)
    assert np.all(np.diff(medians) <= 1e-12)
