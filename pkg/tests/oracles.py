"""Independent reference computations used only by the tests.

Everything here is built from a different route than the production code:
dense linear algebra instead of the Thomas recurrence, ODE/quadrature
integration instead of closed forms, textbook Black-Scholes with the
stdlib error function, and Gaussian-calculus identities for the corrective
term. Expected values in the tests are frozen from these oracles.
"""

import math

import numpy as np
from scipy.integrate import quad, solve_ivp


def dense_tridiagonal_solve(lower, main, upper, rhs):
    """Assemble the dense matrix and solve with LAPACK."""
    n = len(main)
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] = main[i]
        if i > 0:
            a[i, i - 1] = lower[i]
        if i < n - 1:
            a[i, i + 1] = upper[i]
    return np.linalg.solve(a, np.asarray(rhs, dtype=float))


def zc_by_affine_ode(a, sigma2, theta, r0, maturity):
    """Bond price by integrating the affine exponent ODEs."""

    def rhs(t, y):
        b, log_a = y
        return [1.0 - a * b, -theta * a * b + 0.5 * sigma2**2 * b * b]

    sol = solve_ivp(rhs, [0.0, maturity], [0.0, 0.0], rtol=1e-12, atol=1e-14)
    b_t, log_a_t = sol.y[0][-1], sol.y[1][-1]
    return math.exp(log_a_t - b_t * r0)


def joint_moments_by_quadrature(s0, a, sigma2, theta, r0, sigma1, rho, maturity):
    """Moments of (log S, r, int r) from the driver kernels by quadrature.

    Uses the stochastic-integral representations directly: the rate shock
    kernel is exp(-a (T-t)), the integrated-rate kernel (1 - exp(-a(T-t)))/a,
    and log S adds sigma1 W1 on top of the integrated rate.
    """
    t = maturity

    def q(f):
        return quad(f, 0.0, t, epsabs=1e-14, epsrel=1e-12, limit=400)[0]

    k_r = lambda u: math.exp(-a * (t - u))  # noqa: E731
    k_R = lambda u: (1.0 - math.exp(-a * (t - u))) / a  # noqa: E731

    mu_r = r0 * math.exp(-a * t) + a * theta * q(k_r)
    mean_rate_path = lambda u: r0 * math.exp(-a * u) + theta * (1.0 - math.exp(-a * u))  # noqa: E731
    mu_R = q(mean_rate_path)
    mu_y = math.log(s0) + mu_R - 0.5 * sigma1**2 * t

    var_r = sigma2**2 * q(lambda u: k_r(u) ** 2)
    var_R = sigma2**2 * q(lambda u: k_R(u) ** 2)
    cov_rR = sigma2**2 * q(lambda u: k_r(u) * k_R(u))
    cov_w1_r = rho * sigma2 * q(k_r)
    cov_w1_R = rho * sigma2 * q(k_R)
    var_y = var_R + sigma1**2 * t + 2.0 * sigma1 * cov_w1_R
    cov_yr = cov_rR + sigma1 * cov_w1_r
    cov_yR = var_R + sigma1 * cov_w1_R
    mean = np.array([mu_y, mu_r, mu_R])
    cov = np.array(
        [
            [var_y, cov_yr, cov_yR],
            [cov_yr, var_r, cov_rR],
            [cov_yR, cov_rR, var_R],
        ]
    )
    return mean, cov


def conditional_discount_by_quadrature(s0, a, sigma2, theta, r0, sigma1, rho, maturity, s, r):
    """E[exp(-R) | Y=log s, r] via the quadrature moments and a dense solve."""
    mean, cov = joint_moments_by_quadrature(s0, a, sigma2, theta, r0, sigma1, rho, maturity)
    sigma_yr = cov[:2, :2]
    sigma_yrR = cov[:2, 2]
    coeff = np.linalg.solve(sigma_yr, sigma_yrR)
    resid = cov[2, 2] - sigma_yrR @ coeff
    d = np.array([math.log(s) - mean[0], r - mean[1]])
    return math.exp(-mean[2] - coeff @ d + 0.5 * resid)


def bs_call_textbook(s0, strike, rate, sigma, maturity):
    """Plain Black-Scholes call with the stdlib error function."""
    sq = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (rate + 0.5 * sigma**2) * maturity) / sq
    d2 = d1 - sq
    n = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))  # noqa: E731
    return s0 * n(d1) - strike * math.exp(-rate * maturity) * n(d2)


def lognormal_density(s, s0, rate, sigma, maturity):
    """Terminal spot density of the flat-vol lognormal model."""
    s = np.asarray(s, dtype=float)
    sq = sigma * math.sqrt(maturity)
    mu = math.log(s0) + (rate - 0.5 * sigma**2) * maturity
    return np.exp(-0.5 * ((np.log(s) - mu) / sq) ** 2) / (s * sq * math.sqrt(2 * math.pi))


def corrective_term_closed_form(s0, a, sigma2, theta, r0, sigma1, rho, maturity, strike):
    """Adj(K) by Gaussian exponential tilting.

    E[e^{-R} (r - f) 1_{Y > k}] = ZC * cov(Y, r) * phi(z) / sd(Y) with the
    tilted log-spot mean mu_y - cov(Y, R) and f = E[e^{-R} r] / ZC.
    """
    mean, cov = joint_moments_by_quadrature(s0, a, sigma2, theta, r0, sigma1, rho, maturity)
    zc = math.exp(-mean[2] + 0.5 * cov[2, 2])
    tilted_mu_y = mean[0] - cov[0, 2]
    sd_y = math.sqrt(cov[0, 0])
    z = (math.log(strike) - tilted_mu_y) / sd_y
    phi = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return zc * cov[0, 1] * phi / sd_y
