import json
import math

import numpy as np
import pytest

from geometry import Sphere
from sampling import (
    AcceptanceTooLow,
    CHUNK_SIZE,
    SampleStream,
    derive_seed,
    dump_samples_jsonl,
    generator_metadata,
)

SIGMA = 0.05
DRAWS = 3 * CHUNK_SIZE + 17


def test_same_seed_same_stream(reference_sphere):
    a = SampleStream(reference_sphere, SIGMA, 7)
    b = SampleStream(reference_sphere, SIGMA, 7)
    for _ in range(10):
        assert np.array_equal(a.next_sample().x, b.next_sample().x)


def test_sequence_independent_of_consumption_pattern(reference_sphere):
    one_by_one = SampleStream(reference_sphere, SIGMA, 3)
    in_bulk = SampleStream(reference_sphere, SIGMA, 3)
    singles = np.array([one_by_one.next_sample().x_nat for _ in range(DRAWS)])
    x_nat, z = in_bulk.draw_arrays(DRAWS)
    assert np.array_equal(singles, x_nat)
    assert one_by_one.draws_so_far == in_bulk.draws_so_far == DRAWS


def test_sample_decomposition(reference_sphere):
    stream = SampleStream(reference_sphere, SIGMA, 0)
    sample = stream.next_sample()
    assert np.array_equal(sample.x, sample.x_nat + sample.z)
    assert reference_sphere.residual(sample.x_nat) < 1e-9
    assert sample.draw_index == 0
    assert stream.next_sample().draw_index == 1


def test_noise_level(reference_sphere):
    stream = SampleStream(reference_sphere, SIGMA, 11)
    _, z = stream.draw_arrays(2000)
    assert np.mean(z ** 2) == pytest.approx(SIGMA ** 2, rel=0.02)


def test_zero_noise(reference_sphere):
    stream = SampleStream(reference_sphere, 0.0, 1)
    _, z = stream.draw_arrays(50)
    assert not np.any(z)


def test_minibatch_accepts_only_inside_radius(reference_sphere):
    stream = SampleStream(reference_sphere, SIGMA, 5)
    center = stream.next_sample().x
    radius = math.sqrt(SIGMA ** 2 * 128 + 0.5)
    batch = stream.collect_minibatch(center, radius, 40, stage='test')
    assert len(batch) == 40
    assert np.all(batch.distances <= radius)
    assert np.all(np.diff(batch.draw_indices) > 0)
    # the last accepted draw ends the batch
    assert batch.draw_indices[-1] == batch.draws_consumed
    assert stream.draws_so_far == 1 + batch.draws_consumed
    assert np.allclose(batch.mean(), batch.signal_average() + batch.noise_average())


def test_minibatch_with_huge_radius_takes_consecutive_draws(reference_sphere):
    stream = SampleStream(reference_sphere, SIGMA, 5)
    batch = stream.collect_minibatch(np.zeros(128), 100.0, CHUNK_SIZE + 10)
    assert batch.draws_consumed == CHUNK_SIZE + 10
    assert batch.acceptance_rate == 1.0
    assert list(batch.draw_indices) == list(range(CHUNK_SIZE + 10))


def test_acceptance_too_low(reference_sphere):
    stream = SampleStream(reference_sphere, SIGMA, 5)
    far = np.zeros(128)
    far[10] = 50.0
    with pytest.raises(AcceptanceTooLow) as info:
        stream.collect_minibatch(far, 0.1, 5, max_draws=1000, stage='stage1')
    assert info.value.stage == 'stage1'
    assert info.value.draws == 1000
    assert info.value.accepted == 0
    assert 'stage1' in str(info.value)
    assert info.value.tagged('stage2').stage == 'stage2'


@pytest.mark.parametrize("radius, count", [(0.0, 5), (-1.0, 5), (1.0, 0)])
def test_minibatch_rejects_bad_arguments(reference_sphere, radius, count):
    stream = SampleStream(reference_sphere, SIGMA, 0)
    with pytest.raises(ValueError):
        stream.collect_minibatch(np.zeros(128), radius, count)


def test_negative_sigma_rejected(reference_sphere):
    with pytest.raises(ValueError):
        SampleStream(reference_sphere, -0.1, 0)


def test_derive_seed_is_deterministic_and_distinct():
    seeds = {derive_seed(42, t, r) for t in range(20) for r in range(20)}
    assert len(seeds) == 400
    assert derive_seed(42, 3, 4) == derive_seed(42, 3, 4)
    assert derive_seed(42, 3, 4) != derive_seed(43, 3, 4)
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_generator_metadata_names_the_rule():
    meta = generator_metadata()
    assert meta['bit_generator'] == 'PCG64'
    assert meta['chunk_size'] == CHUNK_SIZE
    assert 'SeedSequence' in meta['seed_splitting']


def test_dump_samples_jsonl(tmp_path):
    stream = SampleStream(Sphere(1, 4), 0.1, 0)
    samples = [stream.next_sample() for _ in range(3)]
    path = dump_samples_jsonl(samples, tmp_path / 'samples.jsonl')
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r['draw_index'] for r in rows] == [0, 1, 2]
    assert rows[1]['x'] == pytest.approx(samples[1].x.tolist())
