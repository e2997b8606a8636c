"""
Noisy Sample Stream
Seeded stream of x = x_nat + z samples and the radius-filtered minibatch loop
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np
import pandas as pd

from geometry import ManifoldModel

logger = logging.getLogger(__name__)

DEFAULT_MAX_DRAWS = 10_000_000
CHUNK_SIZE = 256


class AcceptanceTooLow(Exception):
    """Error used when a minibatch cannot be filled within its draw budget."""

    def __init__(self, draws: int, accepted: int, wanted: int, radius: float, stage: Optional[str] = None):
        self.draws = draws
        self.accepted = accepted
        self.wanted = wanted
        self.radius = radius
        self.stage = stage
        where = f" in {stage}" if stage else ""
        super().__init__(
            f"acceptance too low{where}: {accepted}/{wanted} accepted after {draws} draws at radius {radius:.6g}"
        )

    def tagged(self, stage: str) -> 'AcceptanceTooLow':
        return AcceptanceTooLow(self.draws, self.accepted, self.wanted, self.radius, stage)


@dataclass(frozen=True)
class NoisySample:
    x: np.ndarray
    x_nat: np.ndarray
    z: np.ndarray
    draw_index: int


@dataclass(frozen=True)
class Batch:
    """Accepted samples of one minibatch, stacked row-wise in draw order."""
    x: np.ndarray
    x_nat: np.ndarray
    z: np.ndarray
    draw_indices: np.ndarray
    center: np.ndarray
    radius: float
    draws_consumed: int

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> NoisySample:
        return NoisySample(self.x[i], self.x_nat[i], self.z[i], int(self.draw_indices[i]))

    def __iter__(self) -> Iterator[NoisySample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.x - self.center, axis=1)

    @property
    def acceptance_rate(self) -> float:
        return len(self) / self.draws_consumed if self.draws_consumed else 0.0

    def mean(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def signal_average(self) -> np.ndarray:
        return self.x_nat.mean(axis=0)

    def noise_average(self) -> np.ndarray:
        return self.z.mean(axis=0)


def derive_seed(base_seed: int, *indices: int) -> int:
    """
    Splitting rule for independent streams: SeedSequence(base_seed,
    spawn_key=indices) hashed to one 64-bit word, shifted down to 63 bits
    so seeds fit signed integer columns.
    """
    seq = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(i) for i in indices))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def generator_metadata(chunk_size: int = CHUNK_SIZE) -> Dict[str, Union[str, int]]:
    return {
        'bit_generator': 'PCG64',
        'normals': 'Generator.standard_normal',
        'chunk_size': chunk_size,
        'draw_order': 'per chunk: clean points, then noise matrix',
        'seed_splitting': 'SeedSequence(base_seed, spawn_key=indices).generate_state(1, uint64) >> 1',
        'numpy': np.__version__,
    }


class SampleStream:
    """
    Unbounded stream of noisy samples around a manifold.

    Samples are generated in fixed chunks (clean points first, then the
    noise for the whole chunk), so the sequence depends only on the seed
    and the chunk size, never on how the consumer reads it.
    """

    def __init__(self, manifold: ManifoldModel, sigma: float, seed: int, chunk_size: int = CHUNK_SIZE):
        if sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {sigma}")
        if chunk_size < 1:
            raise ValueError(f"chunk_size must be positive, got {chunk_size}")
        self.manifold = manifold
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.chunk_size = chunk_size
        self.rng = np.random.Generator(np.random.PCG64(self.seed))
        self.draws_so_far = 0

        D = manifold.ambient_dim
        self._x_nat = np.empty((0, D))
        self._z = np.empty((0, D))
        self._x = np.empty((0, D))
        self._pos = 0
        self._chunk_start = 0

    def __repr__(self) -> str:
        return f"SampleStream({self.manifold!r}, sigma={self.sigma}, seed={self.seed}, draws={self.draws_so_far})"

    def _refill(self) -> None:
        self._chunk_start += self._x.shape[0]
        self._x_nat = self.manifold.sample_uniform_batch(self.rng, self.chunk_size)
        self._z = self.sigma * self.rng.standard_normal((self.chunk_size, self.manifold.ambient_dim))
        self._x = self._x_nat + self._z
        self._pos = 0

    def _peek(self, limit: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Up to `limit` upcoming samples from the current chunk, without consuming them."""
        if self._pos >= self._x.shape[0]:
            self._refill()
        stop = min(self._x.shape[0], self._pos + limit)
        rows = slice(self._pos, stop)
        indices = self._chunk_start + np.arange(self._pos, stop)
        return self._x[rows], self._x_nat[rows], self._z[rows], indices

    def _advance(self, n: int) -> None:
        self._pos += n
        self.draws_so_far += n

    def next_sample(self) -> NoisySample:
        x, x_nat, z, idx = self._peek(1)
        self._advance(1)
        return NoisySample(x[0].copy(), x_nat[0].copy(), z[0].copy(), int(idx[0]))

    def draw_arrays(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Next n (x_nat, z) pairs as stacked arrays."""
        parts_nat, parts_z = [], []
        remaining = n
        while remaining > 0:
            _, x_nat, z, _ = self._peek(remaining)
            parts_nat.append(x_nat.copy())
            parts_z.append(z.copy())
            self._advance(x_nat.shape[0])
            remaining -= x_nat.shape[0]
        D = self.manifold.ambient_dim
        if not parts_nat:
            return np.empty((0, D)), np.empty((0, D))
        return np.concatenate(parts_nat), np.concatenate(parts_z)

    def collect_minibatch(
        self,
        center: np.ndarray,
        radius: float,
        count: int,
        max_draws: int = DEFAULT_MAX_DRAWS,
        stage: Optional[str] = None,
    ) -> Batch:
        """
        Consume the stream in order until `count` samples with
        ||x - center|| <= radius have been seen. Rejected samples are
        discarded.

        Raises:
            AcceptanceTooLow: if max_draws samples are consumed first
        """
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        if count < 1:
            raise ValueError(f"count must be at least 1, got {count}")

        center = np.asarray(center, dtype=float)
        accepted_rows = []
        accepted = 0
        draws = 0

        while accepted < count:
            if draws >= max_draws:
                logger.warning(f"Minibatch{' ' + stage if stage else ''} gave up: {accepted}/{count} after {draws} draws")
                raise AcceptanceTooLow(draws, accepted, count, radius, stage)

            x, x_nat, z, idx = self._peek(max_draws - draws)
            hits = np.flatnonzero(np.linalg.norm(x - center, axis=1) <= radius)
            needed = count - accepted
            if hits.size >= needed:
                hits = hits[:needed]
                used = int(hits[-1]) + 1
            else:
                used = x.shape[0]
            accepted_rows.append((x[hits].copy(), x_nat[hits].copy(), z[hits].copy(), idx[hits]))
            accepted += hits.size
            draws += used
            self._advance(used)

        xs, nats, zs, ids = zip(*accepted_rows)
        batch = Batch(
            x=np.concatenate(xs),
            x_nat=np.concatenate(nats),
            z=np.concatenate(zs),
            draw_indices=np.concatenate(ids),
            center=center.copy(),
            radius=float(radius),
            draws_consumed=draws,
        )
        logger.debug(f"Collected {count} samples in {draws} draws (rate {batch.acceptance_rate:.4f})")
        return batch


def dump_samples_jsonl(samples, path: Union[str, Path]) -> Path:
    """Write samples as `{draw_index, x, x_nat, z}` JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        {'draw_index': s.draw_index, 'x': s.x.tolist(), 'x_nat': s.x_nat.tolist(), 'z': s.z.tolist()}
        for s in samples
    ]
    df = pd.DataFrame(rows, columns=['draw_index', 'x', 'x_nat', 'z'])
    df.to_json(path, orient='records', lines=True)
    logger.info(f"Wrote {len(df)} samples to {path}")
    return path
