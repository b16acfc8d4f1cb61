import math
from dataclasses import replace

import numpy as np
import pytest

from hybridlv.analytic import analytic_pz, bshw_call
from hybridlv.calibration import (
    CalibrationSettings,
    CallSurface,
    CorrectiveTermCurve,
    LocalVolSurface,
    calibrate,
    corrective_terms,
    dupire_vol,
    local_vol_stochastic_rates,
    make_analytic_surface,
    price_calls_from_pz,
)
from hybridlv.calibration import _MarginalIntegrals
from hybridlv.errors import (
    ButterflyDegenerateError,
    CalibrationError,
    InvalidInputError,
    NegativeVarianceError,
)
from hybridlv.models import ConstantVol, HullWhiteParams, HybridModel, forward_rate, zc_price
from hybridlv.pde import Field2D, auto_grid, evolve

from .oracles import corrective_term_closed_form


def _analytic_field(model, maturity, ds=0.0156, dr=0.0026):
    grid = auto_grid(model, maturity, ds=ds, dr=dr, dt=0.01)
    s, r = np.meshgrid(grid.s_nodes, grid.r_nodes, indexing="ij")
    return Field2D(grid, analytic_pz(model, maturity, s, r), t=maturity)


class TestCallSurfaceValidation:
    def test_analytic_surface_passes(self, set1_model):
        surf = make_analytic_surface(set1_model, [0.5, 1.0], np.linspace(0.7, 1.3, 13))
        assert surf.provider == "analytic"

    def test_rejects_increasing_prices(self):
        with pytest.raises(InvalidInputError):
            CallSurface(
                np.array([1.0]), np.array([0.9, 1.0, 1.1]),
                np.array([[0.1, 0.2, 0.3]]),
            )

    def test_rejects_concave_prices(self):
        with pytest.raises(InvalidInputError):
            CallSurface(
                np.array([1.0]), np.array([0.9, 1.0, 1.1]),
                np.array([[0.30, 0.20, 0.05]]),
            )


class TestMarginalIntegrals:
    def test_slices_telescope_to_direct_integral(self, set1_model, rng):
        field = _analytic_field(set1_model, 1.0)
        f0t = forward_rate(set1_model.rate, 1.0)
        strikes = np.sort(rng.uniform(0.4, 2.2, 24))
        curve = corrective_terms(field, f0t, strikes)
        g = field.grid
        s_full = np.concatenate([[g.s_min], g.s_nodes, [g.s_max]])
        weighted = (field.values * (g.r_nodes - f0t)[None, :]).sum(axis=1) * g.dr
        marg = _MarginalIntegrals(s_full, np.concatenate([[0.0], weighted, [0.0]]))
        direct = marg.moment0(float(strikes[0]))
        assert curve.adj[0] == pytest.approx(direct, abs=1e-12)

    def test_partial_cells_match_quadrature(self, rng):
        from scipy.integrate import quad

        nodes = np.linspace(0.0, 1.0, 12)
        vals = rng.uniform(0.0, 2.0, 12)
        vals[0] = vals[-1] = 0.0
        marg = _MarginalIntegrals(nodes, vals)
        lin = lambda x: np.interp(x, nodes, vals)  # noqa: E731
        for k in (0.037, 0.5, 0.777):
            got0 = marg.moment0(k)
            want0 = quad(lin, k, 1.0, limit=400)[0]
            assert got0 == pytest.approx(want0, abs=1e-9)
            got1 = marg.moment1(k)
            want1 = quad(lambda x: x * lin(x), k, 1.0, limit=400)[0]
            assert got1 == pytest.approx(want1, abs=1e-9)


class TestCorrectiveTerms:
    def test_positive_correlation_sign_and_peak(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        strikes = np.arange(0.5, 1.51, 0.05)
        curve = corrective_terms(field, forward_rate(set1_model.rate, 1.0), strikes)
        assert np.all(curve.adj >= -1e-5)
        peak = curve.strikes[int(np.argmax(curve.adj))]
        assert 0.85 <= peak <= 1.15

    def test_negative_correlation_sign_and_trough(self, set2_model):
        field = _analytic_field(set2_model, 2.0, ds=0.025, dr=0.0037)
        strikes = np.arange(0.5, 1.51, 0.05)
        curve = corrective_terms(field, forward_rate(set2_model.rate, 2.0), strikes)
        assert np.all(curve.adj <= 1e-5)
        trough = curve.strikes[int(np.argmin(curve.adj))]
        assert 0.85 <= trough <= 1.15

    def test_matches_tilted_gaussian_closed_form(self, set1_model):
        field = _analytic_field(set1_model, 1.0, ds=0.008, dr=0.0015)
        strikes = np.array([0.7, 0.9, 1.0, 1.1, 1.4])
        curve = corrective_terms(field, forward_rate(set1_model.rate, 1.0), strikes)
        for k, adj in zip(strikes, curve.adj):
            oracle = corrective_term_closed_form(1.0, 0.5, 0.04, 0.02, 0.02, 0.2, 0.4, 1.0, k)
            assert adj == pytest.approx(oracle, abs=3e-6)

    def test_zero_correlation_residual_from_integrated_rate_coupling(self, set1_model):
        # With independent drivers the adjustment does not vanish: the log
        # spot still carries the integrated rate, leaving a positive hump of
        # order 1e-3 (closed-form oracle agrees with the field integral).
        m = replace(set1_model, rho=0.0)
        field = _analytic_field(m, 1.0, ds=0.008, dr=0.0015)
        strikes = np.arange(0.5, 1.51, 0.1)
        curve = corrective_terms(field, forward_rate(m.rate, 1.0), strikes)
        assert np.max(np.abs(curve.adj)) < 1.2e-3
        for k, adj in zip(strikes, curve.adj):
            oracle = corrective_term_closed_form(1.0, 0.5, 0.04, 0.02, 0.02, 0.2, 0.0, 1.0, k)
            assert adj == pytest.approx(oracle, abs=3e-6)

    def test_vanishes_at_the_upper_edge(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        hi = field.grid.s_max - 2 * field.grid.ds
        curve = corrective_terms(field, forward_rate(set1_model.rate, 1.0), np.array([1.0, hi]))
        assert abs(curve.adj[-1]) < 1e-7

    def test_strikes_outside_grid_rejected(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        with pytest.raises(InvalidInputError):
            corrective_terms(field, 0.02, np.array([field.grid.s_max + 1.0]))


class TestPriceFromField:
    def test_matches_closed_form_on_analytic_field(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        strikes = np.arange(0.5, 1.51, 0.05)
        prices = price_calls_from_pz(field, strikes)
        for k, p in zip(strikes, prices):
            assert p == pytest.approx(bshw_call(set1_model, 1.0, k).price, abs=3e-4)

    def test_decreasing_and_convex(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        strikes = np.arange(0.5, 1.51, 0.05)
        prices = price_calls_from_pz(field, strikes)
        assert np.all(np.diff(prices) < 0)
        assert np.all(np.diff(prices, n=2) >= -1e-8)

    def test_low_strike_limit_is_forward_parity(self, set1_model):
        field = _analytic_field(set1_model, 1.0)
        k = field.grid.s_min + field.grid.ds
        price = price_calls_from_pz(field, np.array([k]))[0]
        expect = set1_model.s0 - k * zc_price(set1_model.rate, 1.0)
        assert price == pytest.approx(expect, rel=2e-3)


class TestDupire:
    def test_flat_deterministic_model_recovers_variance(self):
        rate = HullWhiteParams(a=0.5, sigma2=0.0, theta=0.02, r0=0.02)
        m = HybridModel(s0=1.0, rate=rate, vol=ConstantVol(0.2), rho=0.0)
        surf = make_analytic_surface(m, [0.5, 1.0], np.linspace(0.5, 1.5, 21))
        fwd = lambda t: forward_rate(rate, t)  # noqa: E731
        for k in (0.5, 0.8, 1.0, 1.3, 1.5):
            assert dupire_vol(surf, fwd, 1.0, k) == pytest.approx(0.04, abs=1e-10)

    def test_stochastic_rates_consistency_at_the_money(self, set1_model):
        # Dupire value minus the adjustment recovers the generating flat
        # variance once the corrective term is read off the analytic field.
        surf = make_analytic_surface(set1_model, [1.0], np.linspace(0.5, 1.5, 21))
        fwd = lambda t: forward_rate(set1_model.rate, t)  # noqa: E731
        field = _analytic_field(set1_model, 1.0, ds=0.008, dr=0.0015)
        curve = corrective_terms(field, fwd(1.0), np.linspace(0.5, 1.5, 21))
        var = local_vol_stochastic_rates(surf, fwd, curve, 1.0, 1.0)
        assert math.sqrt(var) == pytest.approx(0.2, abs=1e-3)

    def test_positive_adjustment_lowers_local_variance(self, set1_model):
        surf = make_analytic_surface(set1_model, [1.0], np.linspace(0.5, 1.5, 21))
        fwd = lambda t: forward_rate(set1_model.rate, t)  # noqa: E731
        field = _analytic_field(set1_model, 1.0)
        curve = corrective_terms(field, fwd(1.0), np.linspace(0.5, 1.5, 21))
        dup = dupire_vol(surf, fwd, 1.0, 1.0)
        var = local_vol_stochastic_rates(surf, fwd, curve, 1.0, 1.0)
        assert var < dup

    def test_zero_rate_vol_equals_dupire_exactly(self, set1_model):
        surf = make_analytic_surface(set1_model, [1.0], np.linspace(0.7, 1.3, 13))
        fwd = lambda t: forward_rate(set1_model.rate, t)  # noqa: E731
        zeros = CorrectiveTermCurve.zeros(1.0, np.linspace(0.7, 1.3, 13))
        dup = dupire_vol(surf, fwd, 1.0, 1.0)
        assert local_vol_stochastic_rates(surf, fwd, zeros, 1.0, 1.0) == dup

    def test_degenerate_butterfly_raises(self, set1_model):
        # far wing on a coarse external lattice: convexity underflows
        ks = np.array([2.2, 2.5, 2.8])
        prices = np.array([[bshw_call(set1_model, 0.1, k).price for k in ks],
                           [bshw_call(set1_model, 0.2, k).price for k in ks]])
        prices[prices < 1e-14] = 0.0
        surf = CallSurface(np.array([0.1, 0.2]), ks, prices, provider="external")
        fwd = lambda t: forward_rate(set1_model.rate, t)  # noqa: E731
        with pytest.raises(ButterflyDegenerateError):
            dupire_vol(surf, fwd, 0.2, 2.5)

    def test_negative_variance_carries_diagnostics(self, set1_model):
        surf = make_analytic_surface(set1_model, [1.0], np.linspace(0.7, 1.3, 13))
        fwd = lambda t: forward_rate(set1_model.rate, t)  # noqa: E731
        huge = CorrectiveTermCurve(1.0, np.array([0.7, 1.3]), np.array([1.0, 1.0]))
        with pytest.raises(NegativeVarianceError) as err:
            local_vol_stochastic_rates(surf, fwd, huge, 1.0, 1.0)
        assert err.value.maturity == 1.0
        assert err.value.strike == 1.0
        assert err.value.adjustment == 1.0

    def test_lattice_derivatives_recover_flat_vol(self):
        rate = HullWhiteParams(a=0.5, sigma2=0.0, theta=0.02, r0=0.02)
        m = HybridModel(s0=1.0, rate=rate, vol=ConstantVol(0.2), rho=0.0)
        mats = np.arange(0.2, 1.61, 0.1)
        ks = np.arange(0.6, 1.41, 0.02)
        prices = np.array([[bshw_call(m, t, k).price for k in ks] for t in mats])
        surf = CallSurface(mats, ks, prices, provider="external")
        fwd = lambda t: forward_rate(rate, t)  # noqa: E731
        for k in (0.8, 1.0, 1.2):
            var = dupire_vol(surf, fwd, 1.0, k)
            assert math.sqrt(var) == pytest.approx(0.2, abs=2e-3)


class TestLocalVolSurface:
    def test_bilinear_interpolation_and_flat_extrapolation(self):
        surf = LocalVolSurface(
            np.array([0.5, 1.0]), np.array([0.8, 1.2]),
            np.array([[0.2, 0.3], [0.4, 0.5]]),
        )
        assert surf.vol(0.75, 1.0) == pytest.approx(0.35)
        assert surf.vol(0.25, 0.5) == pytest.approx(0.2)  # flat in both axes
        assert surf.vol(2.0, 2.0) == pytest.approx(0.5)

    def test_rejects_negative_nodes(self):
        with pytest.raises(InvalidInputError):
            LocalVolSurface(np.array([1.0]), np.array([1.0, 1.1]), np.array([[0.2, -0.1]]))


class TestCalibrate:
    def test_degenerate_single_node_recovers_flat_vol(self):
        rate = HullWhiteParams(a=0.5, sigma2=0.0, theta=0.02, r0=0.02)
        m = HybridModel(s0=1.0, rate=rate, vol=ConstantVol(0.2), rho=0.0)
        market = make_analytic_surface(m, [1.0], np.array([1.0]))
        settings = CalibrationSettings(ds=0.02, dr=0.003, dt=0.02)
        result = calibrate(market, m, settings)
        assert result.surface.sigma[0, 0] == pytest.approx(0.2, abs=1e-10)

    def test_flat_round_trip_two_maturities(self, set1_model):
        market = make_analytic_surface(
            set1_model, [0.5, 1.0], np.arange(0.8, 1.2001, 0.05)
        )
        settings = CalibrationSettings(ds=0.015, dr=0.0025, dt=0.01)
        result = calibrate(market, set1_model, settings)
        assert np.max(np.abs(result.surface.sigma - 0.2)) < 5e-3
        assert len(result.report.entries) == 2

    def test_continuation_agrees_with_restart(self, set1_model):
        market = make_analytic_surface(
            set1_model, [0.5, 1.0], np.arange(0.8, 1.2001, 0.05)
        )
        base = CalibrationSettings(ds=0.015, dr=0.0025, dt=0.01)
        rerun = CalibrationSettings(ds=0.015, dr=0.0025, dt=0.01, mode="continue")
        restart = calibrate(market, set1_model, base)
        cont = calibrate(market, set1_model, rerun)
        assert np.max(np.abs(restart.surface.sigma - cont.surface.sigma)) < 5e-4

    def test_dropping_the_adjustment_skews_the_wings(self, set1_model):
        # ablation: a stochastic-rates market calibrated with the corrective
        # term disabled reverts to plain Dupire, visibly off the flat level
        market = make_analytic_surface(set1_model, [0.25], np.arange(0.7, 1.3001, 0.05))
        plain = CalibrationSettings(ds=0.015, dr=0.0025, dt=0.0125, use_corrective=False)
        result = calibrate(market, set1_model, plain)
        wings = result.surface.sigma[0, [0, -1]]
        assert np.max(np.abs(wings - 0.2)) > 2e-3

    def test_calibrated_surface_reprices_through_the_solver(self, set1_model):
        # close the loop: wrap the recovered surface as the model vol and
        # re-solve; prices should sit on the market within grid accuracy
        market = make_analytic_surface(set1_model, [0.5, 1.0], np.arange(0.8, 1.2001, 0.1))
        settings = CalibrationSettings(ds=0.015, dr=0.0025, dt=0.01)
        surface = calibrate(market, set1_model, settings).surface
        model = replace(set1_model, vol=surface.as_vol_function())
        grid = auto_grid(model, 1.0, ds=0.015, dr=0.0025, dt=0.01)
        field = evolve(model, grid, snapshot_times=[1.0]).snapshots[-1]
        prices = price_calls_from_pz(field, market.strikes)
        assert np.max(np.abs(prices - market.prices[1])) < 8e-4

    def test_negative_variance_raises_with_report(self, set1_model):
        # a market convex enough to price but inconsistent with the rate
        # dynamics at the wing: shrink the maturity spacing of an otherwise
        # valid surface so the time slope goes slightly negative
        mats = [0.5]
        ks = np.arange(0.9, 1.1001, 0.05)
        prices = np.array([[bshw_call(set1_model, 0.5, k).price for k in ks]])
        prices[0, 2] -= 2.1e-4  # keep convexity, break the calendar
        market = CallSurface(np.asarray(mats), ks, prices, provider="external")
        with pytest.raises((CalibrationError, InvalidInputError)):
            calibrate(market, set1_model, CalibrationSettings(ds=0.02, dr=0.003, dt=0.02))
