"""Closed-form pricing and density references for the constant-vol hybrid model.

With a flat equity volatility the pair (log-spot, short rate) together with
the integrated rate is jointly Gaussian, which gives closed forms for
European calls, their maturity/strike sensitivities, and the projection of
the pathwise discount factor onto the terminal state. These are the oracles
the grid solver is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InvalidInputError, SingularCovarianceError
from .models import ConstantVol, HullWhiteParams, HybridModel, _b_factor, forward_rate, zc_price

__all__ = [
    "BshwMoments",
    "PriceAndGreeks",
    "IntrinsicValue",
    "integrated_variance",
    "bshw_call",
    "bshw_moments",
    "analytic_z",
    "analytic_pz",
    "bshw_greeks_fd_check",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _npdf(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / _SQRT_2PI


def _require_constant(m: HybridModel) -> ConstantVol:
    if not isinstance(m.vol, ConstantVol):
        raise InvalidInputError("closed forms require a constant equity volatility")
    if not m.rate.has_constant_theta:
        raise InvalidInputError("closed forms require a constant rate mean level")
    return m.vol


@dataclass(frozen=True)
class BshwMoments:
    """Gaussian moments of (Y, r, R) = (log S(T), r(T), int_0^T r) at horizon T."""

    mu_y: float
    mu_r: float
    mu_R: float
    sigma_y: float  # Var(Y)
    sigma_r: float  # Var(r)
    sigma_R: float  # Var(R)
    sigma_yr: np.ndarray  # 2x2 covariance of (Y, r)
    sigma_yrR: np.ndarray  # covariances of (Y, r) with R


@dataclass(frozen=True)
class PriceAndGreeks:
    """Call value with its maturity/strike sensitivities."""

    price: float
    c_t: float
    c_k: float
    c_kk: float
    d1: float
    d2: float
    g_t: float


@dataclass(frozen=True)
class IntrinsicValue:
    """Degenerate pricing result where the sensitivities are undefined."""

    price: float


def integrated_variance(m: HybridModel, maturity: float) -> float:
    """Integrated effective variance g(T) of the discounted-spot lognormal."""
    _require_constant(m)
    if maturity < 0:
        raise InvalidInputError(f"maturity must be >= 0, got {maturity!r}")
    t = float(maturity)
    if t == 0.0:
        return 0.0
    a, s2 = m.rate.a, m.rate.sigma2
    s1, rho = m.vol.sigma1, m.rho
    ea = math.exp(-a * t)
    e2a = math.exp(-2 * a * t)
    cross = 2.0 * rho * s1 * s2 / a * (t + (ea - 1.0) / a)
    rate_part = s2**2 / a**2 * (t - (3.0 - 4.0 * ea + e2a) / (2 * a))
    return s1**2 * t + cross + rate_part


def sigma_hat_sq(m: HybridModel, t: float) -> float:
    """Instantaneous effective variance sigma1^2 + 2 rho sigma1 sigma2 B + sigma2^2 B^2."""
    _require_constant(m)
    b = _b_factor(m.rate.a, t)
    s1, s2 = m.vol.sigma1, m.rate.sigma2
    return s1**2 + 2.0 * m.rho * s1 * s2 * b + (s2 * b) ** 2


def bshw_moments(m: HybridModel, maturity: float) -> BshwMoments:
    """Closed-form joint Gaussian moments of (log S(T), r(T), R(T)).

    The cross entries carry the coupling of the integrated rate into the
    log spot (Y contains R), so cov(Y, r) and cov(Y, R) each pick up an
    integrated-rate term on top of the direct driver correlation.
    """
    _require_constant(m)
    if maturity < 0:
        raise InvalidInputError(f"maturity must be >= 0, got {maturity!r}")
    t = float(maturity)
    p = m.rate
    a, s2, r0, th = p.a, p.sigma2, p.r0, float(p.theta)
    s1, rho = m.vol.sigma1, m.rho
    if t == 0.0:
        return BshwMoments(
            mu_y=math.log(m.s0),
            mu_r=r0,
            mu_R=0.0,
            sigma_y=0.0,
            sigma_r=0.0,
            sigma_R=0.0,
            sigma_yr=np.zeros((2, 2)),
            sigma_yrR=np.zeros(2),
        )
    ea = math.exp(-a * t)
    e2a = math.exp(-2 * a * t)
    b = (1.0 - ea) / a
    mu_r = r0 * ea + th * (1.0 - ea)
    mu_R = th * t + (r0 - th) * b
    mu_y = math.log(m.s0) + mu_R - 0.5 * s1**2 * t
    var_r = s2**2 * (1.0 - e2a) / (2 * a)
    var_R = (s2 / a) ** 2 * (t + (1.0 - e2a) / (2 * a) - 2.0 * b)
    cov_rR = s2**2 / a * (b - (1.0 - e2a) / (2 * a))
    var_y = var_R + s1**2 * t + 2.0 * rho * s1 * s2 / a * (t - b)
    cov_yr = rho * s1 * s2 * b + cov_rR
    cov_yR = var_R + rho * s1 * s2 / a * (t - b)
    return BshwMoments(
        mu_y=mu_y,
        mu_r=mu_r,
        mu_R=mu_R,
        sigma_y=var_y,
        sigma_r=var_r,
        sigma_R=var_R,
        sigma_yr=np.array([[var_y, cov_yr], [cov_yr, var_r]]),
        sigma_yrR=np.array([cov_yR, cov_rR]),
    )


def bshw_call(m: HybridModel, maturity: float, strike: float):
    """European call price and sensitivities under the constant-vol hybrid model.

    Returns :class:`PriceAndGreeks` for T > 0, or :class:`IntrinsicValue`
    when the maturity (or the total variance) degenerates to zero.
    """
    _require_constant(m)
    if not (np.isfinite(strike) and strike > 0):
        raise InvalidInputError(f"strike must be positive, got {strike!r}")
    if maturity < 0:
        raise InvalidInputError(f"maturity must be >= 0, got {maturity!r}")
    if maturity == 0.0:
        return IntrinsicValue(price=max(m.s0 - strike, 0.0))
    t = float(maturity)
    g = integrated_variance(m, t)
    zc = zc_price(m.rate, t)
    if g <= 0.0:
        return IntrinsicValue(price=max(m.s0 - strike * zc, 0.0))
    sq = math.sqrt(g)
    d1 = (math.log(m.s0 / strike) - math.log(zc) + 0.5 * g) / sq
    d2 = d1 - sq
    price = m.s0 * ndtr(d1) - strike * zc * ndtr(d2)
    f = forward_rate(m.rate, t)
    # The strike slope is -ZC N(d2): the d1/d2 sensitivities cancel through
    # the identity S0 n(d1) = K ZC n(d2) and no forward-rate factor survives
    # (cross-checked against central differences in the test suite).
    c_t = 0.5 * m.s0 * _npdf(d1) * sigma_hat_sq(m, t) / sq + strike * zc * f * ndtr(d2)
    c_k = -zc * ndtr(d2)
    c_kk = zc * _npdf(d2) / (strike * sq)
    return PriceAndGreeks(
        price=float(price),
        c_t=float(c_t),
        c_k=float(c_k),
        c_kk=float(c_kk),
        d1=float(d1),
        d2=float(d2),
        g_t=float(g),
    )


def _conditional_discount_terms(mom: BshwMoments):
    """Coefficients of the conditional mean/variance of R given (Y, r)."""
    cov = mom.sigma_yr
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    if det <= 1e-300:
        raise SingularCovarianceError(
            f"covariance of (log S, r) is numerically singular (det={det:.3e})"
        )
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
    coeff = inv @ mom.sigma_yrR
    resid_var = mom.sigma_R - float(mom.sigma_yrR @ coeff)
    return coeff, resid_var


def analytic_z(m: HybridModel, maturity: float, s, r):
    """Projection of the pathwise discount factor on the terminal state.

    Z(T, S, r) = E[exp(-R(T)) | log S(T), r(T)], evaluated from the joint
    Gaussian law; with deterministic rates this collapses to the plain
    discount factor.
    """
    _require_constant(m)
    if maturity <= 0:
        raise InvalidInputError(f"maturity must be > 0, got {maturity!r}")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise InvalidInputError("spot must be positive")
    mom = bshw_moments(m, maturity)
    if m.rate.sigma2 == 0.0:
        # R(T) is deterministic: the conditional expectation is the constant
        # discount factor whatever the conditioning state.
        out = np.full(np.broadcast(s_arr, np.asarray(r)).shape, math.exp(-mom.mu_R))
        return float(out) if out.ndim == 0 else out
    coeff, resid_var = _conditional_discount_terms(mom)
    y = np.log(s_arr)
    r_arr = np.asarray(r, dtype=float)
    expo = -mom.mu_R - coeff[0] * (y - mom.mu_y) - coeff[1] * (r_arr - mom.mu_r) + 0.5 * resid_var
    out = np.exp(expo)
    return float(out) if np.isscalar(s) and np.isscalar(r) else out


def analytic_pz(m: HybridModel, maturity: float, s, r):
    """Discounted joint density: density of (S(T), r(T)) times analytic_z.

    The joint density of (S, r) is the bivariate Gaussian of (log S, r)
    divided by S (change of variables).
    """
    _require_constant(m)
    if maturity <= 0:
        raise InvalidInputError(f"maturity must be > 0, got {maturity!r}")
    s_arr = np.asarray(s, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(s_arr <= 0):
        raise InvalidInputError("spot must be positive")
    mom = bshw_moments(m, maturity)
    cov = mom.sigma_yr
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    if det <= 1e-300:
        raise SingularCovarianceError(
            f"covariance of (log S, r) is numerically singular (det={det:.3e})"
        )
    coeff, resid_var = _conditional_discount_terms(mom)
    y = np.log(s_arr)
    dy = y - mom.mu_y
    dr = r_arr - mom.mu_r
    quad_form = (cov[1, 1] * dy**2 - 2.0 * cov[0, 1] * dy * dr + cov[0, 0] * dr**2) / det
    density = np.exp(-0.5 * quad_form) / (2.0 * math.pi * math.sqrt(det) * s_arr)
    z = np.exp(-mom.mu_R - coeff[0] * dy - coeff[1] * dr + 0.5 * resid_var)
    out = density * z
    return float(out) if np.isscalar(s) and np.isscalar(r) else out


def bshw_greeks_fd_check(m: HybridModel, maturity: float, strike: float) -> float:
    """Max relative deviation of the closed-form sensitivities from central
    differences of the price (steps 1e-4 in T and 1e-4 K in K)."""
    if maturity <= 0.05:
        raise InvalidInputError("maturity too short for the difference stencil")
    pg = bshw_call(m, maturity, strike)
    h_t = 1e-4
    h_k = 1e-4 * strike

    def price(t, k):
        return bshw_call(m, t, k).price

    fd_t = (price(maturity + h_t, strike) - price(maturity - h_t, strike)) / (2 * h_t)
    fd_k = (price(maturity, strike + h_k) - price(maturity, strike - h_k)) / (2 * h_k)
    fd_kk = (
        price(maturity, strike + h_k) - 2 * pg.price + price(maturity, strike - h_k)
    ) / h_k**2
    devs = [
        abs(pg.c_t - fd_t) / (abs(pg.c_t) + 1e-12),
        abs(pg.c_k - fd_k) / (abs(pg.c_k) + 1e-12),
        abs(pg.c_kk - fd_kk) / (abs(pg.c_kk) + 1e-12),
    ]
    return float(max(devs))
