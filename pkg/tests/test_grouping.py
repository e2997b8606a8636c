import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st
from scipy import special, stats

from grouping import (
    LARGE_SHAPE,
    NEG_HDOT_BAND,
    PHI_CONV_NEG_HDOT_BAND,
    DomainError,
    GroupingProfile,
    WindowError,
    adaptive_simpson,
    c_of_d,
    c_of_d_bound,
    c_of_d_sharp_bound,
    gamma_density,
    gamma_dot_envelope,
    log_gamma_density,
    phase_crossing,
    regularized_lower_gamma,
    stirling_bracket,
    stirling_epsilon,
)

GAMMA_RTOL = 1e-10
GAMMA_ATOL = 1e-13
CONV_ATOL = 1e-7
FD_STEP = 1e-6

FIG_R_SQ = 3.84
FIG_SIGMA = 0.1
FIG_D = 128


@pytest.fixture
def fig_profile():
    return GroupingProfile.from_radius_sq(FIG_R_SQ, FIG_SIGMA, FIG_D)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.5, 63.5, 500.0, 5000.5])
def test_regularized_gamma_matches_scipy(p):
    x = np.concatenate([np.linspace(0.0, 3.0 * p + 10.0, 60), [p - 1.0, p, p + 1.0]])
    x = x[x >= 0]
    ours = regularized_lower_gamma(p, x)
    assert np.allclose(ours, special.gammainc(p, x), rtol=GAMMA_RTOL, atol=GAMMA_ATOL)


def test_regularized_gamma_exponential_case():
    x = np.array([0.0, 0.1, 1.0, 5.0, 40.0])
    assert np.allclose(regularized_lower_gamma(1.0, x), -np.expm1(-x), rtol=GAMMA_RTOL, atol=GAMMA_ATOL)
    assert regularized_lower_gamma(3.0, math.inf) == 1.0


def test_regularized_gamma_large_shape_delegates():
    p = 2.0 * LARGE_SHAPE
    assert regularized_lower_gamma(p, p) == pytest.approx(float(special.gammainc(p, p)), rel=1e-12)


@pytest.mark.parametrize("p, x", [(0.0, 1.0), (-1.0, 1.0), (2.0, -0.5)])
def test_regularized_gamma_domain(p, x):
    with pytest.raises(DomainError):
        regularized_lower_gamma(p, x)


def test_gamma_density_is_derivative():
    p, x = 40.5, 37.0
    numeric = (regularized_lower_gamma(p, x + FD_STEP) - regularized_lower_gamma(p, x - FD_STEP)) / (2 * FD_STEP)
    assert gamma_density(p, x) == pytest.approx(numeric, rel=1e-6)


@pytest.mark.parametrize("p", [0.5, 1.0, 3.5, 60.0, 150.0, 2.0e4])
def test_log_gamma_density_matches_scipy(p):
    x = np.linspace(0.25 * p, 2.0 * p, 9)
    expected = stats.gamma.logpdf(x, p)
    assert np.allclose(log_gamma_density(p, x), expected, rtol=1e-12, atol=1e-8)


def test_log_gamma_density_is_smooth_at_large_shape():
    # second differences on a fine grid reveal rounding noise near the peak
    p = 8.0e6
    x = p - 1.0 + np.linspace(-50.0, 50.0, 201)
    second = np.diff(log_gamma_density(p, x), 2)
    assert np.allclose(second, -(0.5 ** 2) / (p - 1.0), rtol=0.0, atol=1e-9)


def test_phase_transition_location(fig_profile):
    assert fig_profile.s_star_sq == pytest.approx(2.59)
    assert fig_profile.s_star == pytest.approx(1.6093, abs=1e-4)
    assert 0.40 < fig_profile.h(fig_profile.s_star) < 0.55
    crossing = phase_crossing(fig_profile)
    assert fig_profile.h(crossing) == pytest.approx(0.5, abs=1e-9)
    assert abs(crossing - fig_profile.s_star) <= 3.0 * fig_profile.nu_bar


def test_h_matches_chi_square_cdf(fig_profile):
    s = np.linspace(0.0, 0.999 * fig_profile.R, 50)
    expected = stats.chi2.cdf((FIG_R_SQ - s ** 2) / FIG_SIGMA ** 2, FIG_D - 1)
    assert np.allclose(fig_profile.h(s), expected, rtol=1e-9, atol=1e-12)


def test_h_is_even_and_vanishes_outside_ball(fig_profile):
    s = np.linspace(0.1, 1.9, 7)
    assert np.allclose(fig_profile.h(s), fig_profile.h(-s))
    assert fig_profile.h(fig_profile.R) == 0.0
    assert fig_profile.h(fig_profile.R + 1.0) == 0.0
    assert fig_profile.neg_h_dot(2.5) == 0.0


def test_neg_h_dot_is_minus_derivative(fig_profile):
    for s in [1.4, fig_profile.s_star, 1.75]:
        numeric = -(fig_profile.h(s + FD_STEP) - fig_profile.h(s - FD_STEP)) / (2 * FD_STEP)
        assert fig_profile.neg_h_dot(s) == pytest.approx(numeric, rel=1e-5)
    assert fig_profile.neg_h_dot(-1.4) == pytest.approx(-fig_profile.neg_h_dot(1.4))


def test_neg_h_dot_derivative_closed_form(fig_profile):
    for s in [0.8, 1.5, 1.7]:
        numeric = (fig_profile.neg_h_dot(s + FD_STEP) - fig_profile.neg_h_dot(s - FD_STEP)) / (2 * FD_STEP)
        assert fig_profile.neg_h_dot_derivative(s) == pytest.approx(numeric, rel=1e-4)


def test_phi_conv_h_is_noncentral_chi_square(fig_profile):
    # ||z - t e1||^2 / sigma^2 is noncentral chi-square with D degrees of freedom
    for t in [0.0, 1.0, fig_profile.s_star, 1.9]:
        expected = stats.ncx2.cdf(FIG_R_SQ / FIG_SIGMA ** 2, FIG_D, (t / FIG_SIGMA) ** 2) if t > 0 \
            else stats.chi2.cdf(FIG_R_SQ / FIG_SIGMA ** 2, FIG_D)
        assert fig_profile.phi_conv_h(t) == pytest.approx(expected, abs=CONV_ATOL)


def test_phi_conv_neg_hdot_is_minus_derivative(fig_profile):
    step = 1e-4
    for t in [1.3, 1.5, 1.7]:
        numeric = -(fig_profile.phi_conv_h(t + step) - fig_profile.phi_conv_h(t - step)) / (2 * step)
        assert fig_profile.phi_conv_neg_hdot(t) == pytest.approx(numeric, rel=1e-3, abs=1e-5)


def test_phi_conv_neg_hdot_at_million_dimensions():
    profile = PHI_CONV_NEG_HDOT_BAND.midpoint_profile(1_000_000, 1.0)
    step = 1e-3
    for t in [profile.s_star - profile.nu_bar, profile.s_star, profile.s_star + profile.nu_bar]:
        value = profile.phi_conv_neg_hdot(t)
        numeric = -(profile.phi_conv_h(t + step) - profile.phi_conv_h(t - step)) / (2 * step)
        assert value > 0
        assert value == pytest.approx(numeric, rel=1e-4)


def test_tabulate_matches_pointwise(fig_profile):
    grid = np.array([0.5, 1.6])
    table = fig_profile.tabulate_phi_conv_h(grid)
    assert table.shape == (2,)
    assert table[1] == pytest.approx(fig_profile.phi_conv_h(1.6))


def test_profile_rejects_small_radius():
    with pytest.raises(DomainError):
        GroupingProfile.from_radius_sq(0.5 * FIG_SIGMA ** 2 * (FIG_D - 3), FIG_SIGMA, FIG_D)
    with pytest.raises(DomainError):
        GroupingProfile(1.0, 0.0, 10)
    with pytest.raises(DomainError):
        GroupingProfile(1.0, 0.1, 3)


def test_s_star_parallel(fig_profile):
    assert fig_profile.s_star_parallel(0.0) == pytest.approx(fig_profile.s_star)
    assert fig_profile.s_star_parallel(1.0) == pytest.approx(math.sqrt(2.59 - 1.0))
    with pytest.raises(DomainError):
        fig_profile.s_star_parallel(2.0)


def test_c_of_d_bounds():
    for D in range(4, 1025):
        assert c_of_d(D) <= c_of_d_bound(D)
    for D in range(5, 1025, 2):
        assert c_of_d(D) <= c_of_d_sharp_bound(D)
    with pytest.raises(DomainError):
        c_of_d(3)


def test_stirling_bracket():
    assert stirling_epsilon(1) == pytest.approx(1.0 - 0.5 * math.log(2 * math.pi), abs=1e-12)
    assert stirling_epsilon(1) == pytest.approx(0.0810615, abs=1e-7)
    for n in range(1, 21):
        lo, hi = stirling_bracket(n)
        assert lo <= stirling_epsilon(n) <= hi


@pytest.mark.parametrize("p", [28, 50, 100, 500])
def test_gamma_density_factor_four_band(p):
    x_star = p - 1.0
    half = x_star ** (2.0 / 3.0)
    for x in np.linspace(x_star - half, x_star + half, 100):
        band = gamma_dot_envelope(p, x)
        assert band.contains(gamma_density(p, x))
    with pytest.raises(WindowError):
        gamma_dot_envelope(p, x_star + 2 * half)
    with pytest.raises(DomainError):
        gamma_dot_envelope(10, 9.0)


def test_midpoint_profiles_are_admissible():
    profile = NEG_HDOT_BAND.midpoint_profile(256, 0.1)
    ok, message = NEG_HDOT_BAND.check(profile)
    assert ok, message
    small = GroupingProfile.from_s_star_sq(10.0, 0.1, 256)
    assert not NEG_HDOT_BAND.check(small)[0]
    with pytest.raises(DomainError):
        PHI_CONV_NEG_HDOT_BAND.midpoint_profile(256, 0.1)


def test_neg_h_dot_band_at_window_center():
    profile = NEG_HDOT_BAND.midpoint_profile(1024, 0.1)
    band = profile.neg_h_dot_envelope(profile.s_star)
    assert band.contains(profile.neg_h_dot(profile.s_star))
    lo, hi = profile.neg_h_dot_window()
    with pytest.raises(WindowError):
        profile.neg_h_dot_envelope(hi + 1.0)


def test_adaptive_simpson_gaussian():
    value = adaptive_simpson(lambda u: np.exp(-u ** 2), -5.0, 5.0)
    assert value == pytest.approx(math.sqrt(math.pi) * math.erf(5.0), abs=1e-9)
    assert adaptive_simpson(np.cos, 1.0, 1.0) == 0.0


def test_adaptive_simpson_relative_tolerance_on_large_values():
    scale = 1.0e12
    value = adaptive_simpson(lambda u: scale * np.exp(-u ** 2), -5.0, 5.0, rel_tol=1e-9)
    assert value == pytest.approx(scale * math.sqrt(math.pi) * math.erf(5.0), rel=1e-8)


@seed(1)
@settings(deadline=None)
@given(
    D=st.integers(min_value=8, max_value=2000),
    sigma=st.floats(min_value=1e-3, max_value=2.0),
    excess=st.floats(min_value=0.01, max_value=5.0),
)
def test_h_is_a_nonincreasing_probability(D, sigma, excess):
    profile = GroupingProfile.from_s_star_sq(excess * sigma ** 2 * D, sigma, D)
    s = np.linspace(0.0, profile.R, 200)
    h = profile.h(s)
    assert np.all(h >= 0.0) and np.all(h <= 1.0)
    assert np.all(np.diff(h) <= 1e-10)
    assert np.all(profile.neg_h_dot(s) >= 0.0)
