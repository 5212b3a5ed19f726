"""Prediction-error criteria, derived quantities, and comparison tables.

Oracles: one-step predictions are rebuilt observation by observation
with xt_skeleton_step (tested independently against hand arithmetic in
test_blowfly), and the Gaussian likelihood is recomputed from its
closed form.  Noise-free recursions give exact-zero prediction error
by construction.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from blowpomp.blowfly import XTParams, xt_skeleton_step
from blowpomp.criteria import (
    ApeConfig,
    ComparisonRow,
    aic_table,
    ape_fit,
    ape_objective,
    chisq_compare,
    derived_quantities,
    table_to_markdown,
    xt_gaussian_loglik,
)
from blowpomp.errors import InsufficientHistory, OptimFailed


def _recursion_series(params, history, n_steps):
    """Noise-free recursion trajectory (oracle: stepwise skeleton calls)."""
    vals = list(history)
    for _ in range(n_steps):
        hist = np.array(vals[-(params.lag_steps + 1) :][::-1])
        vals.append(float(xt_skeleton_step(hist, params)))
    return np.array(vals)


def _oracle_predictions(y, params, first_k):
    preds = []
    for k in range(first_k, len(y) + 1):
        hist = y[k - 9 : k - 1][::-1]
        preds.append(float(xt_skeleton_step(hist, params)))
    return np.array(preds)


class TestApeConfig:
    def test_defaults(self):
        config = ApeConfig()
        assert config.horizon == 10
        assert np.array_equal(config.resolved_weights(), np.ones(10))

    def test_invalid(self):
        with pytest.raises(ValueError):
            ApeConfig(horizon=0)
        with pytest.raises(ValueError):
            ApeConfig(horizon=3, weights=(1.0, 1.0))
        with pytest.raises(ValueError):
            ApeConfig(horizon=2, weights=(1.0, -0.5))
        with pytest.raises(ValueError):
            ApeConfig(horizon=2, weights=(0.0, 0.0))


class TestXtGaussianLoglik:
    def test_matches_stepwise_oracle(self):
        rng = np.random.default_rng(7)
        y = rng.uniform(200.0, 3000.0, size=60)
        params = XTParams(c=20.1, alpha=0.846, N0_xt=589.8, nu=0.7599)
        preds = _oracle_predictions(y, params, first_k=9)
        resid = y[8:] - preds
        n = len(resid)
        rss = float(np.sum(resid**2))
        expected_prof = -0.5 * n * math.log(2 * math.pi * rss / n) - 0.5 * n
        assert xt_gaussian_loglik(params, y) == pytest.approx(expected_prof, rel=1e-12)

        fixed = XTParams(c=20.1, alpha=0.846, N0_xt=589.8, nu=0.7599, sigma2=750.0)
        expected_fix = -0.5 * n * math.log(2 * math.pi * 750.0) - 0.5 * rss / 750.0
        assert xt_gaussian_loglik(fixed, y) == pytest.approx(expected_fix, rel=1e-12)

    def test_perfect_predictor_closed_form(self):
        params = XTParams(c=6.0, alpha=0.9, N0_xt=500.0, nu=0.7, sigma2=4.0)
        y = _recursion_series(params, [400.0] * 8, 40)
        n = len(y) - 8
        expected = -0.5 * n * math.log(2 * math.pi * 4.0)
        assert xt_gaussian_loglik(params, y) == pytest.approx(expected, rel=1e-12)

    def test_insufficient_history(self):
        params = XTParams(c=6.0, alpha=0.9, N0_xt=500.0, nu=0.7)
        y = np.full(30, 400.0)
        with pytest.raises(InsufficientHistory):
            xt_gaussian_loglik(params, y, first_k=8)
        with pytest.raises(InsufficientHistory):
            xt_gaussian_loglik(params, y[:7])


class TestApeObjective:
    def test_perfect_predictor_is_zero(self):
        params = XTParams(c=6.0, alpha=0.9, N0_xt=500.0, nu=0.7)
        y = _recursion_series(params, [400.0] * 8, 60)
        obj = ape_objective(params, y, ApeConfig(horizon=3))
        assert obj < 1e-18

    def test_constant_series_at_fixed_point(self):
        # nu*100 + c*100*exp(-100/100) = 100 when c = 50 e / 100
        params = XTParams(c=50.0 * math.exp(1.0) / 100.0, alpha=1.0,
                          N0_xt=100.0, nu=0.5)
        y = np.full(50, 100.0)
        assert ape_objective(params, y, ApeConfig()) < 1e-20

    def test_one_step_ordering_matches_profiled_loglik(self):
        # minimizing one-step APE and maximizing the profiled Gaussian
        # likelihood are the same criterion, so they rank parameter
        # sets identically
        rng = np.random.default_rng(11)
        y = rng.uniform(200.0, 3000.0, size=80)
        config = ApeConfig(horizon=1)
        objs, logliks = [], []
        for _ in range(100):
            params = XTParams(
                c=math.exp(rng.uniform(0.5, 4.0)),
                alpha=rng.uniform(0.3, 1.2),
                N0_xt=math.exp(rng.uniform(4.0, 8.0)),
                nu=rng.uniform(0.2, 0.9),
            )
            objs.append(ape_objective(params, y, config))
            logliks.append(xt_gaussian_loglik(params, y))
        order_by_ape = np.argsort(objs)
        order_by_loglik = np.argsort(-np.asarray(logliks))
        assert np.array_equal(order_by_ape, order_by_loglik)

    def test_weights_on_first_horizon_equal_one_step(self):
        rng = np.random.default_rng(3)
        y = rng.uniform(200.0, 3000.0, size=50)
        params = XTParams(c=8.0, alpha=0.8, N0_xt=600.0, nu=0.6)
        weighted = ape_objective(params, y, ApeConfig(horizon=5, weights=(1, 0, 0, 0, 0)))
        one_step = ape_objective(params, y, ApeConfig(horizon=1))
        assert weighted == one_step

        # the direct mean squared one-step residual
        preds = _oracle_predictions(y, params, first_k=9)
        direct = float(np.mean((y[8:] - preds) ** 2))
        assert one_step == pytest.approx(direct, rel=1e-12)

    def test_insufficient_history(self):
        params = XTParams(c=8.0, alpha=0.8, N0_xt=600.0, nu=0.6)
        y = np.full(20, 400.0)
        with pytest.raises(InsufficientHistory):
            ape_objective(params, y, ApeConfig(horizon=13))
        # a zero-weight horizon is never evaluated, so it cannot fail
        config = ApeConfig(horizon=13, weights=(1.0,) + (0.0,) * 12)
        assert ape_objective(params, y, config) == ape_objective(
            params, y, ApeConfig(horizon=1)
        )


class TestDerivedQuantities:
    def test_one_step_fit_summaries(self):
        report = derived_quantities(XTParams(c=20.1, alpha=0.846, N0_xt=589.8, nu=0.7599))
        assert report["eggs_rate"] == 20.1
        assert report["recruit_maximizer"] == pytest.approx(499.0, abs=0.5)
        assert report["life_expectancy_days"] == pytest.approx(8.33, abs=0.01)

    def test_multi_horizon_fit_summaries(self):
        report = derived_quantities(XTParams(c=592.0, alpha=0.263, N0_xt=1308.0, nu=0.6473))
        assert report["eggs_rate"] == 592.0
        assert report["recruit_maximizer"] == pytest.approx(344.0, abs=0.5)
        assert report["life_expectancy_days"] == pytest.approx(5.67, abs=0.01)

    def test_no_survival_means_two_days(self):
        params = SimpleNamespace(c=5.0, alpha=1.0, N0_xt=100.0, nu=0.0)
        assert derived_quantities(params)["life_expectancy_days"] == 2.0

    def test_roundtrip(self):
        params = XTParams(c=13.7, alpha=0.62, N0_xt=912.0, nu=0.81)
        report = derived_quantities(params)
        assert report["eggs_rate"] == params.c
        assert report["recruit_maximizer"] == pytest.approx(
            params.alpha * params.N0_xt, rel=1e-15)
        nu_back = 1.0 - 2.0 / report["life_expectancy_days"]
        assert nu_back == pytest.approx(params.nu, rel=1e-12)


class TestChisqCompare:
    def test_close_fits_plausible(self):
        report = chisq_compare(-1568.5, -1569.5, df=5)
        assert report["twice_diff"] == pytest.approx(2.0, rel=1e-12)
        assert report["threshold_95"] == pytest.approx(11.0705, abs=1e-3)
        assert report["plausible_both"] is True

    def test_identical_fits(self):
        report = chisq_compare(-100.0, -100.0, df=3)
        assert report["twice_diff"] == 0.0
        assert report["plausible_both"] is True

    def test_large_gap_not_plausible(self):
        report = chisq_compare(-1465.4, -1542.3, df=6)
        assert report["twice_diff"] == pytest.approx(153.8, rel=1e-12)
        assert report["plausible_both"] is False

    def test_symmetric(self):
        assert chisq_compare(-5.0, -9.0, df=2) == chisq_compare(-9.0, -5.0, df=2)

    def test_df_validation(self):
        with pytest.raises(ValueError):
            chisq_compare(-1.0, -2.0, df=0)


class TestAicTable:
    def test_row_aic(self):
        row = ComparisonRow(model="pomp-1day", k=6, loglik=-1465.4)
        assert row.aic == pytest.approx(2942.8, abs=1e-9)
        assert row.to_dict()["aic"] == row.aic

    def test_sorted_ascending(self):
        rows = [
            ComparisonRow("xt-multi-horizon", 5, -1569.5),
            ComparisonRow("log-arma-2-2", 6, -1542.3),
            ComparisonRow("pomp-1day", 6, -1465.4),
            ComparisonRow("xt-one-step", 5, -1568.5),
            ComparisonRow("pomp-2day", 6, -1471.4),
        ]
        ordered = [r.model for r in aic_table(rows)]
        assert ordered == [
            "pomp-1day", "pomp-2day", "log-arma-2-2", "xt-one-step",
            "xt-multi-horizon",
        ]

    def test_single_row(self):
        rows = [ComparisonRow("pomp-1day", 6, -1465.4)]
        assert aic_table(rows) == rows

    def test_markdown(self):
        rows = [
            ComparisonRow("log-arma-2-2", 6, -1542.3, notes="exact Gaussian"),
            ComparisonRow("pomp-1day", 6, -1465.4),
        ]
        text = table_to_markdown(rows)
        lines = text.strip().split("\n")
        assert lines[0].startswith("| model |")
        assert len(lines) == 4
        assert lines[2].startswith("| pomp-1day |")
        assert "2942.8" in lines[2]
        assert all(line.count("|") == 6 for line in lines)


class TestApeFit:
    def test_recovers_recursion_parameters(self):
        truth = XTParams(c=6.56, alpha=1.0, N0_xt=680.0, nu=0.7246)
        clean = _recursion_series(truth, [400.0] * 8, 150)
        rng = np.random.default_rng(5)
        y = clean + rng.normal(0.0, 10.0, size=len(clean))
        start = XTParams(c=9.0, alpha=0.8, N0_xt=500.0, nu=0.6)
        fit = ape_fit(y, ApeConfig(horizon=1), [start])
        assert fit.params.c == pytest.approx(truth.c, rel=0.10)
        assert fit.params.alpha == pytest.approx(truth.alpha, rel=0.10)
        assert fit.params.N0_xt == pytest.approx(truth.N0_xt, rel=0.10)
        assert fit.params.nu == pytest.approx(truth.nu, rel=0.10)

    def test_reported_loglik_matches(self):
        truth = XTParams(c=6.56, alpha=1.0, N0_xt=680.0, nu=0.7246)
        clean = _recursion_series(truth, [400.0] * 8, 80)
        rng = np.random.default_rng(9)
        y = clean + rng.normal(0.0, 10.0, size=len(clean))
        fit = ape_fit(y, ApeConfig(horizon=1), [truth])
        assert fit.loglik == xt_gaussian_loglik(fit.params, y)
        assert fit.objective == pytest.approx(
            ape_objective(fit.params, y, ApeConfig(horizon=1)), rel=1e-12)

    def test_all_starts_failing(self):
        start = XTParams(c=6.0, alpha=0.9, N0_xt=500.0, nu=0.7)
        y = np.full(40, np.nan)
        with pytest.raises(OptimFailed):
            ape_fit(y, ApeConfig(horizon=1), [start])
