"""
Grouping Probability
h(s), its derivative, the phase-transition location and the Gaussian
convolutions that give the exact probability a noisy sample lands in B(q, R)
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.special import gammainc, gammaln, xlogy

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Above this shape the series/continued fraction gets slow; scipy uses a uniform asymptotic expansion
LARGE_SHAPE = 1.0e4
SERIES_EPS = 1.0e-16
SERIES_MAX_ITER = 200_000
FPMIN = 1.0e-300
STIRLING_SHAPE = 100.0

KERNEL_HALF_WIDTH = 12.0  # in units of sigma
QUAD_ABS_TOL = 1.0e-10
# per-panel floor relative to the panel estimate, used by the Gaussian convolutions
QUAD_REL_TOL = 1.0e-9
QUAD_MAX_EVALS = 4_000_000
QUAD_INITIAL_PANELS = 16

ENVELOPE_MIN_SHAPE = 28


class DomainError(Exception):
    """Error used when an argument lies outside the function's domain."""
    pass


class WindowError(Exception):
    """Error used when an envelope is requested outside its window of validity."""
    pass


class QuadratureNonConvergence(Exception):
    """Error used when adaptive quadrature exhausts its evaluation budget."""
    pass


class SeriesNonConvergence(Exception):
    """Error used when the incomplete gamma series or continued fraction fails to converge."""
    pass


def _as_output(values: np.ndarray, scalar: bool) -> ArrayLike:
    return float(values.reshape(-1)[0]) if scalar else values


def _gamma_series(p: float, x: np.ndarray) -> np.ndarray:
    """P(p, x) by the power series; meant for 0 < x < p + 1."""
    ap = np.full_like(x, p)
    term = np.full_like(x, 1.0 / p)
    total = term.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(SERIES_MAX_ITER):
        ap[active] += 1.0
        term[active] *= x[active] / ap[active]
        total[active] += term[active]
        active &= np.abs(term) >= np.abs(total) * SERIES_EPS
        if not active.any():
            break
    else:
        raise SeriesNonConvergence(f"series for P({p}, x) did not converge")
    return total * np.exp(-x + p * np.log(x) - math.lgamma(p))


def _gamma_continued_fraction(p: float, x: np.ndarray) -> np.ndarray:
    """Q(p, x) = 1 - P(p, x) by modified Lentz; meant for x >= p + 1."""
    b = x + 1.0 - p
    c = np.full_like(x, 1.0 / FPMIN)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, SERIES_MAX_ITER):
        an = -i * (i - p)
        b = b + 2.0
        d_new = an * d + b
        d_new = np.where(np.abs(d_new) < FPMIN, FPMIN, d_new)
        c_new = b + an / c
        c_new = np.where(np.abs(c_new) < FPMIN, FPMIN, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        # converged entries keep their values
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= SERIES_EPS
        if not active.any():
            break
    else:
        raise SeriesNonConvergence(f"continued fraction for Q({p}, x) did not converge")
    return np.exp(-x + p * np.log(x) - math.lgamma(p)) * h


def regularized_lower_gamma(p: float, x: ArrayLike) -> ArrayLike:
    """
    P(p, x) = gamma(p, x) / Gamma(p).

    Series for x < p + 1 and continued fraction otherwise, both with the
    prefactor evaluated in log space. Shapes above LARGE_SHAPE go to
    scipy.special.gammainc.

    Raises:
        DomainError: for p <= 0 or x < 0
    """
    if not p > 0:
        raise DomainError(f"shape must be positive, got {p}")
    scalar = np.ndim(x) == 0
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.isnan(x_arr)) or np.any(x_arr < 0):
        raise DomainError("argument must be nonnegative")

    if p > LARGE_SHAPE:
        return _as_output(gammainc(p, x_arr), scalar)

    out = np.zeros_like(x_arr)
    out[np.isinf(x_arr)] = 1.0
    series = (x_arr > 0) & (x_arr < p + 1.0)
    fraction = (x_arr >= p + 1.0) & np.isfinite(x_arr)
    if series.any():
        out[series] = _gamma_series(p, x_arr[series])
    if fraction.any():
        out[fraction] = 1.0 - _gamma_continued_fraction(p, x_arr[fraction])
    return _as_output(np.clip(out, 0.0, 1.0), scalar)


def log_gamma_density(p: float, x: ArrayLike) -> ArrayLike:
    """
    log of x^(p-1) e^(-x) / Gamma(p), the derivative of P(p, x) in x.

    For p > 1 the value is expanded around the mode p - 1 so that points
    near the peak do not lose digits to the O(p log p) terms.
    """
    x = np.asarray(x, dtype=float)
    if p <= 1.0:
        return xlogy(p - 1.0, x) - x - gammaln(p)
    mode = p - 1.0
    if p >= STIRLING_SHAPE:
        # log density at the mode with log Gamma(p) from the Stirling series
        peak = (mode * math.log1p(-1.0 / p) + 1.0 - 0.5 * math.log(2.0 * math.pi * p)
                - (1.0 / (12.0 * p) - 1.0 / (360.0 * p ** 3) + 1.0 / (1260.0 * p ** 5)))
    else:
        peak = mode * math.log(mode) - mode - float(gammaln(p))
    delta = x - mode
    with np.errstate(divide='ignore'):
        return peak + mode * np.log1p(delta / mode) - delta


def gamma_density(p: float, x: ArrayLike) -> ArrayLike:
    value = np.exp(log_gamma_density(p, x))
    return float(value) if np.ndim(value) == 0 else value


def c_of_d(D: int) -> float:
    """Peak height of the normalized gamma density for shape (D-1)/2."""
    if D < 4:
        raise DomainError(f"C(D) needs D >= 4, got {D}")
    return float(gamma_density(0.5 * (D - 1), 0.5 * (D - 3)))


def c_of_d_bound(D: int) -> float:
    return 1.0 / math.sqrt(math.pi * (D - 3))


def c_of_d_sharp_bound(D: int) -> float:
    return c_of_d_bound(D) * math.exp(-1.0 / (6.0 * (D - 3) + 1.0))


def stirling_epsilon(n: int) -> float:
    """eps_n in n! = sqrt(2 pi) n^(n + 1/2) e^(-n + eps_n)."""
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    return math.lgamma(n + 1) - (0.5 * math.log(2.0 * math.pi) + (n + 0.5) * math.log(n) - n)


def stirling_bracket(n: int) -> Tuple[float, float]:
    return 1.0 / (12.0 * n + 1.0), 1.0 / (12.0 * n)


@dataclass(frozen=True)
class EnvelopeBand:
    lower: float
    upper: float
    window: Tuple[float, float]

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"band lower {self.lower} exceeds upper {self.upper}")
        if self.window[0] > self.window[1]:
            raise ValueError(f"empty window {self.window}")

    def contains(self, value: float, rtol: float = 0.0) -> bool:
        return self.lower * (1.0 - rtol) <= value <= self.upper * (1.0 + rtol)

    def in_window(self, point: float) -> bool:
        return self.window[0] <= point <= self.window[1]


def gamma_dot_envelope(p: float, x: float) -> EnvelopeBand:
    """
    Factor-4 subgaussian band for the gamma density around its mode
    x_star = p - 1, valid for |x - x_star| <= x_star^(2/3).

    The band is stated for the normalized density; dividing both sides
    by Gamma(p) leaves the factor-4 statement unchanged.
    """
    if p < ENVELOPE_MIN_SHAPE:
        raise DomainError(f"envelope needs p >= {ENVELOPE_MIN_SHAPE}, got {p}")
    x_star = p - 1.0
    half = x_star ** (2.0 / 3.0)
    window = (x_star - half, x_star + half)
    if not window[0] <= x <= window[1]:
        raise WindowError(f"x = {x} outside [{window[0]:.6g}, {window[1]:.6g}]")
    center = gamma_density(p, x_star) * math.exp(-((x - x_star) ** 2) / (2.0 * x_star))
    return EnvelopeBand(center / 4.0, 4.0 * center, window)


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = QUAD_ABS_TOL,
    max_evals: int = QUAD_MAX_EVALS,
    initial_panels: int = QUAD_INITIAL_PANELS,
    rel_tol: float = 0.0,
) -> float:
    """
    Vectorized adaptive Simpson rule. All open panels are refined together
    level by level; each panel carries a share of `tol` proportional to its
    width. With `rel_tol` > 0 a panel also closes once its error estimate is
    within `rel_tol` of its own value, which bounds the relative error of the
    result when the integrand keeps one sign.
    """
    if b <= a:
        return 0.0
    edges = np.linspace(a, b, initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    f_lo, f_mid, f_hi = f(lo), f(mid), f(hi)
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    tols = tol * (hi - lo) / (b - a)
    evals = 3 * initial_panels
    total = 0.0

    while lo.size:
        left_mid = 0.5 * (lo + mid)
        right_mid = 0.5 * (mid + hi)
        f_lm, f_rm = f(left_mid), f(right_mid)
        evals += 2 * lo.size
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_lm + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_rm + f_hi)
        err = left + right - whole
        allowed = np.maximum(tols, rel_tol * np.abs(left + right))
        done = (np.abs(err) <= 15.0 * allowed) | (hi - lo <= 1e-14 * max(1.0, abs(b - a)))
        total += float(np.sum((left + right + err / 15.0)[done]))

        keep = ~done
        if not keep.any():
            break
        if evals > max_evals:
            raise QuadratureNonConvergence(f"{int(keep.sum())} panels unresolved after {evals} evaluations")
        lo = np.concatenate([lo[keep], mid[keep]])
        hi_new = np.concatenate([mid[keep], hi[keep]])
        f_lo = np.concatenate([f_lo[keep], f_mid[keep]])
        f_hi = np.concatenate([f_mid[keep], f_hi[keep]])
        f_mid = np.concatenate([f_lm[keep], f_rm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        tols = np.concatenate([tols[keep], tols[keep]]) / 2.0
        hi = hi_new
        mid = 0.5 * (lo + hi)

    return total


@dataclass(frozen=True)
class EnvelopeHypotheses:
    """
    Parameter range under which an envelope band holds:
    D > min_D and lower_coef * sigma^2 * D^lower_power <= s_star^2 <= 3 sigma^2 D.
    """
    name: str
    min_D: float
    lower_coef: float
    lower_power: float

    def s_star_sq_range(self, D: int, sigma: float) -> Tuple[float, float]:
        return self.lower_coef * sigma ** 2 * D ** self.lower_power, 3.0 * sigma ** 2 * D

    def check(self, profile: 'GroupingProfile') -> Tuple[bool, str]:
        if not profile.D > self.min_D:
            return False, f"{self.name}: needs D > {self.min_D:.6g}, got {profile.D}"
        lo, hi = self.s_star_sq_range(profile.D, profile.sigma)
        if not lo <= profile.s_star_sq <= hi:
            return False, f"{self.name}: s_star^2 = {profile.s_star_sq:.6g} outside [{lo:.6g}, {hi:.6g}]"
        return True, "admissible"

    def midpoint_profile(self, D: int, sigma: float) -> 'GroupingProfile':
        """Profile whose s_star^2 is the geometric midpoint of the admissible range."""
        lo, hi = self.s_star_sq_range(D, sigma)
        if lo > hi:
            raise DomainError(f"{self.name}: empty s_star range at D = {D}")
        return GroupingProfile.from_s_star_sq(math.sqrt(lo * hi), sigma, D)


NEG_HDOT_BAND = EnvelopeHypotheses('neg_hdot_band', 192, 1.0, 0.5)
NEG_HDOT_MONOTONE = EnvelopeHypotheses('neg_hdot_monotone', 48 ** 3 + 3, 96.0 * math.log(6.0), 2.0 / 3.0)
PHI_CONV_NEG_HDOT_BAND = EnvelopeHypotheses(
    'phi_conv_neg_hdot_band', (48.0 * math.log(6.0)) ** 3 + 3, 24.0 * math.log(6.0), 2.0 / 3.0
)
PHI_CONV_H_BAND = EnvelopeHypotheses(
    'phi_conv_h_band', (576.0 * math.log(2.0)) ** 3 + 3, 576.0 * math.log(2.0), 2.0 / 3.0
)


@dataclass(frozen=True)
class GroupingProfile:
    """
    Acceptance ball radius R, noise level sigma and ambient dimension D.

    h(s) is the probability that x_nat + z falls in B(q, R) when q sits at
    offset s from x_nat along one axis and the noise is N(0, sigma^2 I_D).
    It depends on s only through s^2, so h is extended evenly to s < 0.
    """
    R: float
    sigma: float
    D: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.D < 4:
            raise DomainError(f"D must be at least 4, got {self.D}")
        if self.R ** 2 < self.sigma ** 2 * (self.D - 3):
            raise DomainError(
                f"R^2 = {self.R ** 2:.6g} below sigma^2 (D - 3) = {self.sigma ** 2 * (self.D - 3):.6g}"
            )

    @classmethod
    def from_radius_sq(cls, R_sq: float, sigma: float, D: int) -> 'GroupingProfile':
        return cls(math.sqrt(R_sq), sigma, int(D))

    @classmethod
    def from_s_star_sq(cls, s_star_sq: float, sigma: float, D: int) -> 'GroupingProfile':
        return cls(math.sqrt(s_star_sq + sigma ** 2 * (D - 3)), sigma, int(D))

    @property
    def shape(self) -> float:
        return 0.5 * (self.D - 1)

    @property
    def s_star_sq(self) -> float:
        return self.R ** 2 - self.sigma ** 2 * (self.D - 3)

    @property
    def s_star(self) -> float:
        return math.sqrt(self.s_star_sq)

    @property
    def nu(self) -> float:
        if self.s_star_sq == 0:
            return math.inf
        return math.sqrt(self.sigma ** 4 * (self.D - 3) / (2.0 * self.s_star_sq))

    @property
    def nu_bar(self) -> float:
        return math.hypot(self.nu, self.sigma)

    @property
    def s_check_sq(self) -> float:
        return self.R ** 2 - self.sigma ** 2 * (self.D - 1)

    @property
    def s_check(self) -> float:
        if self.s_check_sq < 0:
            raise DomainError("R^2 below sigma^2 (D - 1); s_check undefined")
        return math.sqrt(self.s_check_sq)

    @property
    def nu_check(self) -> float:
        if self.s_check_sq <= 0:
            raise DomainError("R^2 not above sigma^2 (D - 1); nu_check undefined")
        return math.sqrt(self.sigma ** 4 * (self.D - 1) / (2.0 * self.s_check_sq))

    @property
    def c_of_d(self) -> float:
        return c_of_d(self.D)

    def to_dict(self) -> dict:
        out = {
            'R': self.R, 'sigma': self.sigma, 'D': self.D,
            's_star': self.s_star, 'nu': self.nu, 'nu_bar': self.nu_bar,
        }
        if self.s_check_sq > 0:
            out.update(s_check=self.s_check, nu_check=self.nu_check)
        return out

    def _chi_arg(self, s: np.ndarray) -> np.ndarray:
        # (R^2 - s^2) / (2 sigma^2) factored to limit cancellation near s = R
        a = np.abs(s)
        return (self.R - a) * (self.R + a) / (2.0 * self.sigma ** 2)

    def h(self, s: ArrayLike) -> ArrayLike:
        """P[chi^2_(D-1) <= (R^2 - s^2) / sigma^2], zero for |s| >= R."""
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = np.abs(s) < self.R
        if inside.any():
            out[inside] = regularized_lower_gamma(self.shape, self._chi_arg(s[inside]))
        return _as_output(out, scalar)

    def neg_h_dot(self, s: ArrayLike) -> ArrayLike:
        """-dh/ds = (s / sigma^2) * gamma_density(p, x(s)); odd in s."""
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = np.abs(s) < self.R
        if inside.any():
            si = s[inside]
            out[inside] = si / self.sigma ** 2 * np.exp(log_gamma_density(self.shape, self._chi_arg(si)))
        return _as_output(out, scalar)

    def neg_h_dot_derivative(self, s: ArrayLike) -> ArrayLike:
        """d/ds of -dh/ds in closed form."""
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = np.abs(s) < self.R
        if inside.any():
            si = s[inside]
            x = self._chi_arg(si)
            density = np.exp(log_gamma_density(self.shape, x))
            slope = (self.shape - 1.0) / x - 1.0
            out[inside] = density / self.sigma ** 2 * (1.0 - si ** 2 / self.sigma ** 2 * slope)
        return _as_output(out, scalar)

    def s_star_parallel(self, dist_q: float) -> float:
        """
        Part of s_star left after removing the landmark's own distance to M.

        Raises:
            DomainError: if dist_q exceeds s_star
        """
        gap = self.s_star_sq - dist_q ** 2
        if gap < 0:
            raise DomainError(f"d(q, M) = {dist_q:.6g} exceeds s_star = {self.s_star:.6g}")
        return math.sqrt(gap)

    def _convolve(self, f: Callable[[np.ndarray], np.ndarray], t: float, tol: float) -> float:
        a = max(t - KERNEL_HALF_WIDTH * self.sigma, -self.R)
        b = min(t + KERNEL_HALF_WIDTH * self.sigma, self.R)
        if b <= a:
            return 0.0
        norm = 1.0 / (math.sqrt(2.0 * math.pi) * self.sigma)

        def integrand(u: np.ndarray) -> np.ndarray:
            return norm * np.exp(-((t - u) ** 2) / (2.0 * self.sigma ** 2)) * f(u)

        return adaptive_simpson(integrand, a, b, tol, rel_tol=QUAD_REL_TOL)

    def phi_conv_h(self, t: ArrayLike) -> ArrayLike:
        """
        (phi_sigma * h)(t): the exact probability that x_nat + z lands in
        B(q, R) when ||q - x_nat|| = t.
        """
        if np.ndim(t) == 0:
            return self._convolve(self.h, float(t), QUAD_ABS_TOL)
        return np.array([self._convolve(self.h, float(ti), QUAD_ABS_TOL) for ti in np.asarray(t, dtype=float)])

    def phi_conv_neg_hdot(self, t: ArrayLike) -> ArrayLike:
        """(phi_sigma * -h')(t) = -d/dt (phi_sigma * h)(t)."""
        tol = QUAD_ABS_TOL * max(1.0, float(self.neg_h_dot(self.s_star)))
        if np.ndim(t) == 0:
            return self._convolve(self.neg_h_dot, float(t), tol)
        return np.array([self._convolve(self.neg_h_dot, float(ti), tol) for ti in np.asarray(t, dtype=float)])

    def tabulate_phi_conv_h(self, t_grid: np.ndarray) -> np.ndarray:
        t_grid = np.asarray(t_grid, dtype=float)
        logger.debug(f"Tabulating phi*h at {t_grid.size} points")
        return self.phi_conv_h(t_grid)

    # envelopes

    def neg_h_dot_window(self) -> Tuple[float, float]:
        half = self.sigma * (self.D - 3) ** (1.0 / 6.0) / 3.0
        return self.s_star - half, self.s_star + half

    def neg_h_dot_envelope(self, s: float) -> EnvelopeBand:
        window = self.neg_h_dot_window()
        if not window[0] <= s <= window[1]:
            raise WindowError(f"s = {s} outside [{window[0]:.6g}, {window[1]:.6g}]")
        center = self.c_of_d * self.s_star / self.sigma ** 2 * math.exp(-((s - self.s_star) ** 2) / (2.0 * self.nu ** 2))
        return EnvelopeBand(center / (8.0 * math.e), 6.0 * math.e * center, window)

    def neg_h_dot_monotone_gap(self) -> float:
        return self.sigma * (self.D - 3) ** (1.0 / 6.0) / 12.0

    def phi_conv_neg_hdot_window(self) -> Tuple[float, float]:
        half = self.sigma * (self.D - 3) ** (1.0 / 6.0) / 6.0
        return self.s_star - half, self.s_star + half

    def phi_conv_neg_hdot_envelope(self, t: float) -> EnvelopeBand:
        window = self.phi_conv_neg_hdot_window()
        if not window[0] <= t <= window[1]:
            raise WindowError(f"t = {t} outside [{window[0]:.6g}, {window[1]:.6g}]")
        center = (self.c_of_d * (self.nu / self.nu_bar) * self.s_star / self.sigma ** 2
                  * math.exp(-((t - self.s_star) ** 2) / (2.0 * self.nu_bar ** 2)))
        return EnvelopeBand(center / (16.0 * math.e), 9.0 * math.e * center, window)

    def phi_conv_h_window(self) -> Tuple[float, float]:
        return 0.0, self.s_star + self.sigma * (self.D - 3) ** (1.0 / 6.0) / 12.0

    def phi_conv_h_lower(self, t: float) -> float:
        base = self.c_of_d * self.s_star * self.nu / self.sigma ** 2
        gap = t - self.s_star
        if gap <= self.nu_bar:
            return base / (64.0 * math.e ** 2)
        return base / (64.0 * math.e) * (self.nu_bar / gap) * math.exp(-gap ** 2 / (2.0 * self.nu_bar ** 2))

    def phi_conv_h_upper(self, t: float) -> float:
        s_check = self.s_check
        if t < s_check:
            return 1.0
        return 4.0 * math.exp(-((t - s_check) ** 2) / (2.0 * (self.nu_check ** 2 + self.sigma ** 2)))

    def phi_conv_h_envelope(self, t: float) -> EnvelopeBand:
        window = self.phi_conv_h_window()
        if not window[0] <= t <= window[1]:
            raise WindowError(f"t = {t} outside [{window[0]:.6g}, {window[1]:.6g}]")
        return EnvelopeBand(self.phi_conv_h_lower(t), self.phi_conv_h_upper(t), window)

    def h_upper_tail(self, s: ArrayLike) -> ArrayLike:
        """4 exp(-(s - s_check)^2 / (2 nu_check^2)) bound on h for s >= s_check."""
        s = np.asarray(s, dtype=float)
        value = 4.0 * np.exp(-((s - self.s_check) ** 2) / (2.0 * self.nu_check ** 2))
        return float(value) if value.ndim == 0 else value

    def relative_bound_scale(self, s: ArrayLike) -> ArrayLike:
        """max{1 / nu_bar, (s - s_star) / nu_bar^2}."""
        s = np.asarray(s, dtype=float)
        value = np.maximum(1.0 / self.nu_bar, (s - self.s_star) / self.nu_bar ** 2)
        return float(value) if value.ndim == 0 else value


def phase_crossing(profile: GroupingProfile, level: float = 0.5, tol: Optional[float] = None) -> float:
    """Offset s where h(s) crosses `level`, by bisection on [0, R]."""
    lo, hi = 0.0, profile.R
    tol = tol if tol is not None else 1e-12 * profile.R
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if profile.h(mid) > level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
