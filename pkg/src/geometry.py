"""
Manifold Models
Closed-form manifolds embedded in R^D with exact sampling, projection
and geodesic distance oracles
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

# Relative tolerance for "this point lies on M"
ON_MANIFOLD_TOL = 1e-9


class ManifoldKind(Enum):
    SPHERE = "sphere"
    CIRCLE = "circle"
    FLAT_TORUS = "flat_torus"


class AmbiguousProjection(Exception):
    """Error used when the nearest point on the manifold is not unique."""
    pass


class OffManifold(Exception):
    """Error used when a point expected on the manifold violates its defining equations."""
    pass


@dataclass(frozen=True)
class ManifoldConstants:
    """Geometric constants entering the radius and batch-size formulas."""
    reach: float
    curvature_bound: float
    intrinsic_diameter: float
    volume: float

    @property
    def kappa_bar(self) -> float:
        return max(1.0, self.curvature_bound)

    def to_dict(self) -> Dict[str, float]:
        return {
            'reach': self.reach,
            'kappa': self.curvature_bound,
            'kappa_bar': self.kappa_bar,
            'diam': self.intrinsic_diameter,
            'vol': self.volume,
        }


class ManifoldModel:
    """
    A d-dimensional manifold living in the first few coordinates of R^D,
    zero-padded beyond its active block. Instances are immutable.

    All point arguments accept a single point of shape (D,) or a stack of
    points of shape (n, D).
    """

    kind: ManifoldKind

    def __init__(self, intrinsic_dim: int, ambient_dim: int):
        if intrinsic_dim < 1:
            raise ValueError(f"intrinsic_dim must be positive, got {intrinsic_dim}")
        if ambient_dim <= intrinsic_dim:
            raise ValueError(f"ambient_dim ({ambient_dim}) must exceed intrinsic_dim ({intrinsic_dim})")
        self._d = int(intrinsic_dim)
        self._D = int(ambient_dim)

    @property
    def intrinsic_dim(self) -> int:
        return self._d

    @property
    def ambient_dim(self) -> int:
        return self._D

    @property
    def scale(self) -> float:
        """Largest radius; the length unit used by tolerances."""
        raise NotImplementedError

    @property
    def constants(self) -> ManifoldConstants:
        raise NotImplementedError

    def sample_uniform_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        """One point drawn uniformly w.r.t. the surface measure."""
        return self.sample_uniform_batch(rng, 1)[0]

    def residual(self, p: np.ndarray) -> np.ndarray:
        """Violation of the defining equations (0 for points exactly on M)."""
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def extrinsic_distance(self, x: np.ndarray):
        """d(x, M) = ||x - P_M x||."""
        x = np.asarray(x, dtype=float)
        dist = np.linalg.norm(x - self.project(x), axis=-1)
        return float(dist) if dist.ndim == 0 else dist

    def geodesic_distance(self, a: np.ndarray, b: np.ndarray):
        raise NotImplementedError

    def point_from_angles(self, angles: Sequence[float]) -> np.ndarray:
        raise NotImplementedError

    def geodesic_point(self, p: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        """Point at arclength t along the unit-speed geodesic leaving p with unit tangent v."""
        raise NotImplementedError

    def random_unit_tangent(self, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def grid(self, n: int) -> np.ndarray:
        """Dense deterministic set of roughly n points on M."""
        raise NotImplementedError

    def check_on_manifold(self, p: np.ndarray) -> None:
        worst = float(np.max(self.residual(p)))
        if worst > ON_MANIFOLD_TOL * self.scale:
            raise OffManifold(f"point is {worst:.3e} away from satisfying the {self.kind.value} equations")

    def to_config(self) -> Dict:
        raise NotImplementedError

    def _pad(self, block: np.ndarray) -> np.ndarray:
        out = np.zeros(block.shape[:-1] + (self._D,))
        out[..., :block.shape[-1]] = block
        return out


class Sphere(ManifoldModel):
    """S^d(r) in the first d+1 coordinates of R^D."""

    kind = ManifoldKind.SPHERE

    def __init__(self, intrinsic_dim: int, ambient_dim: int, radius: float = 1.0):
        super().__init__(intrinsic_dim, ambient_dim)
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.radius = float(radius)
        self._active = self._d + 1

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self._d}, D={self._D}, r={self.radius})"

    @property
    def scale(self) -> float:
        return self.radius

    @property
    def constants(self) -> ManifoldConstants:
        d, r = self._d, self.radius
        log_area = math.log(2.0) + 0.5 * (d + 1) * math.log(math.pi) - gammaln(0.5 * (d + 1)) + d * math.log(r)
        return ManifoldConstants(
            reach=r,
            curvature_bound=1.0 / r,
            intrinsic_diameter=math.pi * r,
            volume=math.exp(log_area),
        )

    def sample_uniform_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        g = rng.standard_normal((n, self._active))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self._pad(self.radius * g)

    def residual(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        block = np.linalg.norm(p[..., :self._active], axis=-1)
        pad = np.linalg.norm(p[..., self._active:], axis=-1)
        return np.abs(block - self.radius) + pad

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        block = x[..., :self._active]
        norms = np.linalg.norm(block, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise AmbiguousProjection("active coordinate block is zero; every point of the sphere is nearest")
        return self._pad(self.radius * block / norms)

    def geodesic_distance(self, a: np.ndarray, b: np.ndarray):
        self.check_on_manifold(a)
        self.check_on_manifold(b)
        # chord form of r*arccos(<a,b>/r^2), stable for nearby points
        chord = np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), axis=-1)
        dist = 2.0 * self.radius * np.arcsin(np.minimum(1.0, chord / (2.0 * self.radius)))
        return float(dist) if np.ndim(dist) == 0 else dist

    def point_from_angles(self, angles: Sequence[float]) -> np.ndarray:
        """Hyperspherical coordinates; a circle takes a single angle."""
        angles = np.asarray(angles, dtype=float)
        if angles.shape[-1] != self._d:
            raise ValueError(f"expected {self._d} angles, got {angles.shape[-1]}")
        block = np.ones(angles.shape[:-1] + (self._active,))
        sin_prod = np.ones(angles.shape[:-1])
        for k in range(self._d):
            block[..., k] = sin_prod * np.cos(angles[..., k])
            sin_prod = sin_prod * np.sin(angles[..., k])
        block[..., self._d] = sin_prod
        return self._pad(self.radius * block)

    def geodesic_point(self, p: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        theta = t / self.radius
        return np.cos(theta) * np.asarray(p, dtype=float) + self.radius * np.sin(theta) * np.asarray(v, dtype=float)

    def random_unit_tangent(self, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        u = p[:self._active] / self.radius
        g = rng.standard_normal(self._active)
        g -= np.dot(g, u) * u
        return self._pad(g / np.linalg.norm(g))

    def grid(self, n: int) -> np.ndarray:
        if self._d == 1:
            theta = 2.0 * np.pi * np.arange(n) / n
            return self.point_from_angles(theta[:, None])
        if self._d == 2:
            # Fibonacci lattice
            k = np.arange(n) + 0.5
            z = 1.0 - 2.0 * k / n
            phi = np.pi * (1.0 + math.sqrt(5.0)) * k
            rho = np.sqrt(1.0 - z * z)
            block = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
            return self._pad(self.radius * block)
        return self.sample_uniform_batch(np.random.default_rng(0), n)

    def to_config(self) -> Dict:
        return {'kind': self.kind.value, 'd': self._d, 'D': self._D, 'radii': [self.radius]}


class Circle(Sphere):
    """S^1(r) in the first two coordinates of R^D."""

    kind = ManifoldKind.CIRCLE

    def __init__(self, ambient_dim: int, radius: float = 1.0):
        super().__init__(1, ambient_dim, radius)

    def __repr__(self) -> str:
        return f"Circle(D={self._D}, r={self.radius})"


class FlatTorus(ManifoldModel):
    """Product of circles of radii r1, r2 in coordinates (1,2) and (3,4) of R^D."""

    kind = ManifoldKind.FLAT_TORUS

    def __init__(self, ambient_dim: int, radii: Tuple[float, float] = (1.0, 1.0)):
        super().__init__(2, ambient_dim)
        if ambient_dim < 4:
            raise ValueError(f"a flat torus needs at least 4 ambient coordinates, got {ambient_dim}")
        if len(radii) != 2 or min(radii) <= 0:
            raise ValueError(f"flat torus needs two positive radii, got {radii}")
        self.radii = (float(radii[0]), float(radii[1]))

    def __repr__(self) -> str:
        return f"FlatTorus(D={self._D}, radii={self.radii})"

    @property
    def scale(self) -> float:
        return max(self.radii)

    @property
    def constants(self) -> ManifoldConstants:
        r1, r2 = self.radii
        return ManifoldConstants(
            reach=min(r1, r2),
            # unit-speed geodesic with speed split (a, b) has acceleration sqrt(a^4/r1^2 + b^4/r2^2)
            curvature_bound=max(1.0 / r1, 1.0 / r2),
            intrinsic_diameter=math.pi * math.hypot(r1, r2),
            volume=4.0 * math.pi ** 2 * r1 * r2,
        )

    def angles(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.stack([np.arctan2(p[..., 1], p[..., 0]), np.arctan2(p[..., 3], p[..., 2])], axis=-1)

    def point_from_angles(self, angles: Sequence[float]) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        r1, r2 = self.radii
        block = np.stack([
            r1 * np.cos(angles[..., 0]), r1 * np.sin(angles[..., 0]),
            r2 * np.cos(angles[..., 1]), r2 * np.sin(angles[..., 1]),
        ], axis=-1)
        return self._pad(block)

    def sample_uniform_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.point_from_angles(rng.uniform(0.0, 2.0 * np.pi, size=(n, 2)))

    def residual(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        r1, r2 = self.radii
        return (np.abs(np.linalg.norm(p[..., 0:2], axis=-1) - r1)
                + np.abs(np.linalg.norm(p[..., 2:4], axis=-1) - r2)
                + np.linalg.norm(p[..., 4:], axis=-1))

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        first = x[..., 0:2]
        second = x[..., 2:4]
        n1 = np.linalg.norm(first, axis=-1, keepdims=True)
        n2 = np.linalg.norm(second, axis=-1, keepdims=True)
        if np.any(n1 == 0.0) or np.any(n2 == 0.0):
            raise AmbiguousProjection("a torus factor block is zero; its nearest circle point is not unique")
        r1, r2 = self.radii
        return self._pad(np.concatenate([r1 * first / n1, r2 * second / n2], axis=-1))

    def geodesic_distance(self, a: np.ndarray, b: np.ndarray):
        self.check_on_manifold(a)
        self.check_on_manifold(b)
        delta = np.abs(self.angles(a) - self.angles(b))
        delta = np.minimum(delta, 2.0 * np.pi - delta)
        dist = np.sqrt((self.radii[0] * delta[..., 0]) ** 2 + (self.radii[1] * delta[..., 1]) ** 2)
        return float(dist) if np.ndim(dist) == 0 else dist

    def _angular_frames(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        theta = self.angles(p)
        e1 = self._pad(np.array([-np.sin(theta[0]), np.cos(theta[0]), 0.0, 0.0]))
        e2 = self._pad(np.array([0.0, 0.0, -np.sin(theta[1]), np.cos(theta[1])]))
        return e1, e2

    def geodesic_point(self, p: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        e1, e2 = self._angular_frames(p)
        v = np.asarray(v, dtype=float)
        speeds = np.array([np.dot(v, e1), np.dot(v, e2)])
        theta = self.angles(p) + speeds * t / np.array(self.radii)
        return self.point_from_angles(theta)

    def random_unit_tangent(self, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        e1, e2 = self._angular_frames(p)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        return np.cos(phi) * e1 + np.sin(phi) * e2

    def grid(self, n: int) -> np.ndarray:
        m = int(math.ceil(math.sqrt(n)))
        theta = 2.0 * np.pi * np.arange(m) / m
        t1, t2 = np.meshgrid(theta, theta, indexing='ij')
        return self.point_from_angles(np.stack([t1.ravel(), t2.ravel()], axis=1))

    def to_config(self) -> Dict:
        return {'kind': self.kind.value, 'd': 2, 'D': self._D, 'radii': list(self.radii)}


def manifold_from_config(cfg: Dict) -> ManifoldModel:
    """Build a manifold from `{kind, d, D, radii}`."""
    try:
        kind = ManifoldKind(str(cfg['kind']).lower())
        ambient_dim = int(cfg['D'])
    except (KeyError, ValueError) as e:
        raise ValueError(f"invalid manifold config {cfg}: {e}")
    radii = list(cfg.get('radii') or [1.0])

    if kind == ManifoldKind.SPHERE:
        return Sphere(int(cfg.get('d', 2)), ambient_dim, radii[0])
    if kind == ManifoldKind.CIRCLE:
        return Circle(ambient_dim, radii[0])
    if len(radii) == 1:
        radii = radii * 2
    return FlatTorus(ambient_dim, (radii[0], radii[1]))


def rescaled(manifold: ManifoldModel, factor: float) -> ManifoldModel:
    """Same manifold with every radius multiplied by factor."""
    cfg = manifold.to_config()
    cfg['radii'] = [r * factor for r in cfg['radii']]
    return manifold_from_config(cfg)
