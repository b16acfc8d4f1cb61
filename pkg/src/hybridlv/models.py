"""Model primitives for the hybrid equity / short-rate diffusion.

The asset follows a local-volatility diffusion and the short rate a Gaussian
mean-reverting (Hull-White) process, correlated through the Brownian drivers:

    dS(t)/S(t) = r(t) dt + sigma(t, S(t)) dW1(t)
    dr(t)      = a (theta(t) - r(t)) dt + sigma2 (rho dW1 + sqrt(1-rho^2) dW2)

This module holds the parameter containers, the local-volatility function
family (constant, hyperbolic skew, interpolated surface) together with their
spatial derivatives, and the discount-curve analytics of the rate model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInputError

__all__ = [
    "HullWhiteParams",
    "ConstantVol",
    "HyperbolicVol",
    "SurfaceVol",
    "LocalVolFunction",
    "HybridModel",
    "SdeCoefficients",
    "zc_price",
    "forward_rate",
    "fit_theta",
    "hyperbolic_vol",
    "sde_coefficients",
]


def _b_factor(a: float, t) -> float:
    """Bond duration factor (1 - exp(-a t)) / a."""
    return (1.0 - np.exp(-a * t)) / a


@dataclass(frozen=True)
class HullWhiteParams:
    """Mean-reverting Gaussian short-rate parameters.

    ``theta`` is either a constant long-term mean level or a deterministic
    function of time, e.g. produced by :func:`fit_theta` from a market
    forward curve.
    """

    a: float
    sigma2: float
    theta: Union[float, Callable[[float], float]]
    r0: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise InvalidInputError(f"mean-reversion speed must be positive, got {self.a!r}")
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise InvalidInputError(f"rate volatility must be >= 0, got {self.sigma2!r}")
        if not np.isfinite(self.r0):
            raise InvalidInputError(f"initial short rate must be finite, got {self.r0!r}")
        if callable(self.theta):
            if not np.isfinite(float(self.theta(0.0))):
                raise InvalidInputError("theta(0) must evaluate to a finite value")
        elif not np.isfinite(self.theta):
            raise InvalidInputError(f"theta must be finite, got {self.theta!r}")

    @property
    def has_constant_theta(self) -> bool:
        return not callable(self.theta)

    def theta_at(self, t: float) -> float:
        return float(self.theta(t)) if callable(self.theta) else float(self.theta)


def zc_price(p: HullWhiteParams, maturity: float) -> float:
    """Zero-coupon bond price ZC(0, T) = E[exp(-int_0^T r)].

    Constant mean level uses the affine closed form; a time-dependent level
    is integrated against the bond kernel by adaptive quadrature.
    """
    if not np.isfinite(maturity) or maturity < 0:
        raise InvalidInputError(f"maturity must be >= 0, got {maturity!r}")
    if maturity == 0.0:
        return 1.0
    a, s2, t = p.a, p.sigma2, float(maturity)
    b = _b_factor(a, t)
    if p.has_constant_theta:
        log_a = (p.theta - s2**2 / (2 * a**2)) * (b - t) - s2**2 / (4 * a) * b**2
        return float(np.exp(log_a - b * p.r0))
    mean_part = quad(
        lambda s: p.theta_at(s) * (1.0 - np.exp(-a * (t - s))),
        0.0,
        t,
        epsabs=1e-13,
        epsrel=1e-11,
        limit=200,
    )[0]
    convexity = s2**2 / (2 * a**2) * (t - (3.0 - 4.0 * np.exp(-a * t) + np.exp(-2 * a * t)) / (2 * a))
    return float(np.exp(-(p.r0 * b + mean_part - convexity)))


def forward_rate(p: HullWhiteParams, maturity: float) -> float:
    """Instantaneous forward rate f(0, T) = -d/dT log ZC(0, T)."""
    if not np.isfinite(maturity) or maturity < 0:
        raise InvalidInputError(f"maturity must be >= 0, got {maturity!r}")
    a, s2, t = p.a, p.sigma2, float(maturity)
    ea = np.exp(-a * t)
    if p.has_constant_theta:
        th = p.theta
        return float(
            -s2**2 / (2 * a**2)
            + th
            - (th - s2**2 / a**2 - p.r0) * ea
            - s2**2 / (2 * a**2) * np.exp(-2 * a * t)
        )
    if t == 0.0:
        return float(p.r0)
    mean_part = quad(
        lambda s: p.theta_at(s) * np.exp(-a * (t - s)),
        0.0,
        t,
        epsabs=1e-13,
        epsrel=1e-11,
        limit=200,
    )[0]
    return float(p.r0 * ea + a * mean_part - 0.5 * s2**2 * _b_factor(a, t) ** 2)


def fit_theta(
    forward_curve: Callable[[float], float],
    a: float,
    sigma2: float,
    t: float,
    forward_derivative: Callable[[float], float] | None = None,
) -> float:
    """Mean level theta(t) that makes the rate model reproduce ``forward_curve``.

    ``forward_curve`` maps maturity to the instantaneous forward rate f(0, .).
    When no analytic derivative is supplied, d f / dt is taken by central
    differences (one-sided at the origin).
    """
    if a <= 0:
        raise InvalidInputError(f"mean-reversion speed must be positive, got {a!r}")
    if forward_derivative is not None:
        slope = float(forward_derivative(t))
    else:
        h = 1e-6 * max(1.0, abs(t))
        if t >= h:
            slope = (forward_curve(t + h) - forward_curve(t - h)) / (2 * h)
        else:
            slope = (forward_curve(t + h) - forward_curve(t)) / h
    value = forward_curve(t)
    if not (np.isfinite(slope) and np.isfinite(value)):
        raise InvalidInputError("forward curve is not differentiable at t")
    return float(slope / a + value + 0.5 * (sigma2 / a) ** 2 * (1.0 - np.exp(-2 * a * t)))


def hyperbolic_vol(nu: float, beta: float, s):
    """Hyperbolic local-volatility function.

    sigma(S) = nu * [ (1-beta+beta^2)/beta
                      + (beta-1)/(beta S) * (sqrt(S^2 + beta^2 (1-S)^2) - beta) ]

    Strictly positive for all S > 0; reduces to the flat level ``nu`` at
    beta = 1 and produces a downward skew for beta < 1.
    """
    if not (np.isfinite(nu) and nu > 0):
        raise InvalidInputError(f"volatility level must be positive, got {nu!r}")
    if not (0.0 < beta <= 1.0):
        raise InvalidInputError(f"skew parameter must be in (0, 1], got {beta!r}")
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= 0):
        raise InvalidInputError("spot must be positive")
    g = np.sqrt(arr**2 + beta**2 * (1.0 - arr) ** 2)
    val = nu * ((1.0 - beta + beta**2) / beta + (beta - 1.0) / (beta * arr) * (g - beta))
    return float(val) if np.isscalar(s) else val


@dataclass(frozen=True)
class ConstantVol:
    """Flat lognormal volatility."""

    sigma1: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma1) and self.sigma1 >= 0):
            raise InvalidInputError(f"sigma1 must be >= 0, got {self.sigma1!r}")

    def value(self, t, s):
        return np.full_like(np.asarray(s, dtype=float), self.sigma1)

    def derivatives(self, t, s):
        arr = np.asarray(s, dtype=float)
        z = np.zeros_like(arr)
        return np.full_like(arr, self.sigma1), z, z

    @property
    def time_dependent(self) -> bool:
        return False


@dataclass(frozen=True)
class HyperbolicVol:
    """Hyperbolic skew local volatility with level ``nu`` and skew ``beta``."""

    nu: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise InvalidInputError(f"nu must be positive, got {self.nu!r}")
        if not (0.0 < self.beta <= 1.0):
            raise InvalidInputError(f"beta must be in (0, 1], got {self.beta!r}")

    def value(self, t, s):
        return hyperbolic_vol(self.nu, self.beta, np.asarray(s, dtype=float))

    def derivatives(self, t, s):
        arr = np.asarray(s, dtype=float)
        if np.any(arr <= 0):
            raise InvalidInputError("spot must be positive")
        nu, beta = self.nu, self.beta
        g = np.sqrt(arr**2 + beta**2 * (1.0 - arr) ** 2)
        gp = (arr - beta**2 * (1.0 - arr)) / g
        gpp = (1.0 + beta**2) / g - (arr - beta**2 * (1.0 - arr)) ** 2 / g**3
        k = nu * (beta - 1.0) / beta
        sig = nu * ((1.0 - beta + beta**2) / beta + (beta - 1.0) / (beta * arr) * (g - beta))
        sig_s = k * (gp * arr - g + beta) / arr**2
        sig_ss = k * (gpp * arr**2 - 2.0 * arr * gp + 2.0 * (g - beta)) / arr**3
        return sig, sig_s, sig_ss

    @property
    def time_dependent(self) -> bool:
        return False


@dataclass(frozen=True)
class SurfaceVol:
    """Local volatility read off a calibrated node surface.

    ``surface`` is any object exposing ``vol(t, s) -> array`` and a
    ``strikes`` array; spatial derivatives are taken by central differences
    on the interpolant with a step of one node spacing (floored at 1e-4 S,
    the interpolant is piecewise linear so smaller steps see no curvature).
    """

    surface: object

    def value(self, t, s):
        return np.asarray(self.surface.vol(t, np.asarray(s, dtype=float)), dtype=float)

    def _step(self, s):
        strikes = np.asarray(self.surface.strikes, dtype=float)
        if strikes.size >= 2:
            spacing = float(np.median(np.diff(strikes)))
        else:
            spacing = 1e-2
        return np.maximum(spacing, 1e-4 * np.abs(s))

    def derivatives(self, t, s):
        arr = np.asarray(s, dtype=float)
        h = self._step(arr)
        up = self.value(t, arr + h)
        dn = self.value(t, np.maximum(arr - h, 1e-12))
        sig = self.value(t, arr)
        sig_s = (up - dn) / (2.0 * h)
        sig_ss = (up - 2.0 * sig + dn) / h**2
        return sig, sig_s, sig_ss

    @property
    def time_dependent(self) -> bool:
        return True


LocalVolFunction = Union[ConstantVol, HyperbolicVol, SurfaceVol]


@dataclass(frozen=True)
class HybridModel:
    """Hybrid model state: spot, rate parameters, local vol and correlation."""

    s0: float
    rate: HullWhiteParams
    vol: LocalVolFunction
    rho: float

    def __post_init__(self):
        if not (np.isfinite(self.s0) and self.s0 > 0):
            raise InvalidInputError(f"initial spot must be positive, got {self.s0!r}")
        if not (np.isfinite(self.rho) and abs(self.rho) <= 1.0):
            raise InvalidInputError(f"correlation must lie in [-1, 1], got {self.rho!r}")

    def local_vol(self, t, s):
        return self.vol.value(t, s)

    @property
    def time_dependent(self) -> bool:
        return self.vol.time_dependent or not self.rate.has_constant_theta


@dataclass(frozen=True)
class SdeCoefficients:
    """Drift/volatility values and the spatial derivatives the solver needs."""

    drift_s: np.ndarray
    vol_s: np.ndarray
    drift_r: np.ndarray
    vol_r: np.ndarray
    sigma_s: np.ndarray
    sigma_ss: np.ndarray
    alpha_r: np.ndarray
    alpha_rr: np.ndarray
    mu_r: float


def sde_coefficients(m: HybridModel, t: float, s, r) -> SdeCoefficients:
    """Evaluate the SDE coefficient functions and their derivatives.

    ``s`` and ``r`` may be scalars or broadcastable arrays (e.g. a spot
    column and a rate row to produce full grids).
    """
    s_arr = np.asarray(s, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(s_arr <= 0):
        raise InvalidInputError("spot must be positive")
    sig, sig_s, sig_ss = m.vol.derivatives(t, s_arr)
    p = m.rate
    alpha = np.full_like(r_arr, p.sigma2)
    zeros_r = np.zeros_like(r_arr)
    return SdeCoefficients(
        drift_s=r_arr * s_arr,
        vol_s=sig,
        drift_r=p.a * (p.theta_at(t) - r_arr),
        vol_r=alpha,
        sigma_s=sig_s,
        sigma_ss=sig_ss,
        alpha_r=zeros_r,
        alpha_rr=zeros_r,
        mu_r=-p.a,
    )
