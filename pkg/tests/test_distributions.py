import math

import numpy as np

from momentbound.distributions import (EULER_GAMMA, Gumbel, TruncatedNormal,
                                       UniformDist, gumbel_loglik)


def test_gumbel_cdf_hand_values():
    g = Gumbel(rho=1013.0, beta=558.0)
    assert abs(g.cdf(1013.0) - math.exp(-1.0)) < 1e-15
    # one scale above the location: exp(-exp(-1))
    assert abs(g.cdf(1013.0 + 558.0) - math.exp(-math.exp(-1.0))) < 1e-15


def test_gumbel_ppf_inverts_cdf():
    g = Gumbel(rho=626.14, beta=190.0)
    u = np.linspace(0.001, 0.999, 200)
    assert np.allclose(g.cdf(g.ppf(u)), u, atol=1e-12)
    x = np.linspace(200.0, 2500.0, 200)
    assert np.allclose(g.ppf(g.cdf(x)), x, rtol=1e-10)


def test_gumbel_mean_is_location_plus_gamma_scale():
    g = Gumbel(rho=626.14, beta=190.0)
    assert abs(g.mean - (626.14 + EULER_GAMMA * 190.0)) < 1e-12
    # quadrature clips 1e-9 of tail mass; the long right tail costs ~0.1
    x, w = g.quadrature()
    assert abs(w @ x - g.mean) < 0.5
    x, w = g.quadrature(panels=128, order=16)
    assert abs(w @ x - g.mean) < 0.01


def test_gumbel_quadrature_against_sampling():
    g = Gumbel(rho=1013.0, beta=558.0)
    x, w = g.quadrature()
    assert abs(w.sum() - 1.0) < 1e-14
    rng = np.random.default_rng(2)
    sample = g.ppf(rng.random(400_000))
    assert abs(w @ x - sample.mean()) < 3.0
    assert abs(w @ x ** 2 - np.mean(sample ** 2)) < 2e4  # ~3 se


def test_gumbel_loglik_hand_formula():
    data = np.array([400.0, 700.0, 1100.0])
    rho, beta = 626.14, 190.0
    z = (data - rho) / beta
    by_hand = -3.0 * math.log(beta) - z.sum() - np.exp(-z).sum()
    assert abs(gumbel_loglik(data, rho, beta) - by_hand) < 1e-12
    assert abs(Gumbel(rho, beta).loglik(data) - by_hand) < 1e-12


def test_gumbel_loglik_vectorizes_over_parameters():
    data = np.array([400.0, 700.0, 1100.0])
    rhos = np.array([500.0, 626.14, 800.0])
    betas = np.array([150.0, 190.0, 250.0])
    out = gumbel_loglik(data, rhos, betas)
    assert out.shape == (3,)
    for k in range(3):
        assert abs(out[k] - gumbel_loglik(data, rhos[k], betas[k])) < 1e-12


def test_gumbel_loglik_peaks_near_truth():
    g = Gumbel(rho=626.14, beta=190.0)
    data = g.ppf(np.random.default_rng(17).random(4000))
    ll_true = gumbel_loglik(data, 626.14, 190.0)
    assert ll_true > gumbel_loglik(data, 500.0, 190.0)
    assert ll_true > gumbel_loglik(data, 626.14, 120.0)
    assert ll_true > gumbel_loglik(data, 750.0, 260.0)


def test_truncated_normal_cdf_and_ppf():
    tn = TruncatedNormal(mu=30.0, sigma=7.5, lo=15.0, hi=45.0)
    assert tn.cdf(15.0) == 0.0 and tn.cdf(45.0) == 1.0
    assert abs(tn.cdf(30.0) - 0.5) < 1e-14  # symmetric truncation
    u = np.linspace(0.001, 0.999, 200)
    assert np.allclose(tn.cdf(tn.ppf(u)), u, atol=1e-12)


def test_truncated_normal_moments_against_numeric_integration():
    tn = TruncatedNormal(mu=30.0, sigma=7.5, lo=15.0, hi=45.0)
    # Simpson on the renormalized normal density, fine grid
    x = np.linspace(15.0, 45.0, 60_001)
    pdf = np.exp(-0.5 * ((x - 30.0) / 7.5) ** 2)
    z = np.trapezoid(pdf, x)
    m1 = np.trapezoid(x * pdf, x) / z
    m2 = np.trapezoid(x ** 2 * pdf, x) / z
    assert abs(tn.mean - m1) < 1e-9
    assert abs(tn.second_moment - m2) < 1e-7
    # symmetric truncation: mean collapses to mu
    assert abs(tn.mean - 30.0) < 1e-13
    # the flood study's roughness law: E[X^2] just above 949
    ks = TruncatedNormal(mu=30.0, sigma=7.5, lo=12.55, hi=47.45)
    assert abs(ks.second_moment - 949.1368) < 5e-4


def test_truncated_normal_asymmetric_mean_shifts():
    tn = TruncatedNormal(mu=30.0, sigma=7.5, lo=25.0, hi=60.0)
    assert tn.mean > 30.0  # more mass cut from the left
    x = np.linspace(25.0, 60.0, 120_001)
    pdf = np.exp(-0.5 * ((x - 30.0) / 7.5) ** 2)
    assert abs(tn.mean - np.trapezoid(x * pdf, x) / np.trapezoid(pdf, x)) < 1e-8


def test_truncated_normal_quadrature_reproduces_moments():
    tn = TruncatedNormal(mu=30.0, sigma=7.5, lo=15.0, hi=45.0)
    x, w = tn.quadrature()
    assert abs(w.sum() - 1.0) < 1e-14
    assert abs(w @ x - tn.mean) < 1e-8
    assert abs(w @ x ** 2 - tn.second_moment) < 1e-5


def test_uniform_dist():
    ud = UniformDist(49.0, 51.0)
    assert ud.mean == 50.0
    assert ud.cdf(49.0) == 0.0 and ud.cdf(51.0) == 1.0 and ud.cdf(50.0) == 0.5
    u = np.linspace(0.0, 1.0, 101)
    assert np.allclose(ud.ppf(u), 49.0 + 2.0 * u, atol=1e-15)
    x, w = ud.quadrature()
    assert abs(w.sum() - 1.0) < 1e-14
    assert abs(w @ x - 50.0) < 1e-13
    # exact for polynomials well past any moment order used
    assert abs(w @ x ** 3 - (51.0 ** 4 - 49.0 ** 4) / (4.0 * 2.0)) < 1e-9
