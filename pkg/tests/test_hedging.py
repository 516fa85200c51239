from __future__ import annotations

import numpy as np
import pytest

from jumplq import reference as ref
from jumplq.hedging import (MarketModel, hedge_value, hedging_error_simulation, o_grid, o_term,
                            optimal_portfolio, solve_hedge, solve_pmv, to_lq)
from jumplq.model import classify_case


@pytest.fixture(scope="module")
def generic():
    return solve_hedge(ref.generic_market())


def test_mapping_is_exact():
    mk = ref.generic_market()
    lq = to_lq(mk)
    for name in ("A", "C", "E", "Q", "R"):
        assert np.all(getattr(lq, name) == 0)
    assert np.array_equal(lq.B, mk.mu)
    assert np.array_equal(lq.D, np.swapaxes(mk.sigma, -1, -2))
    assert np.all(lq.Gb == 1) and np.all(lq.Ga == 1)
    assert np.array_equal(lq.F, mk.F) and np.array_equal(lq.lam, mk.lam)


def test_mapped_models_classify():
    assert classify_case(to_lq(ref.generic_market())).case == "SingularI"
    assert classify_case(to_lq(ref.jump_only_market())).case == "SingularIIPrime"


def test_degenerate_market_rejected():
    bad = MarketModel.build(1.0, 10, [[0.0]], mu=0.1, sigma=0.0)
    assert any("degenerate" in v for v in bad.violations())
    with pytest.raises(ValueError):
        to_lq(bad)


def test_riccati_part_positive_and_bounded(generic):
    assert generic.P.min() > 0 and generic.P.max() <= 1 + 1e-12
    assert np.all(generic.U == 1 - generic.P)


def test_constant_payoff_gives_K_proportional_to_P():
    sol = solve_hedge(ref.constant_payoff_market(0.7))
    assert np.allclose(sol.K_fine, 0.7 * sol.riccati.Pb_fine, rtol=0, atol=1e-13)
    assert np.allclose(sol.h, 0.7, atol=1e-13)
    assert np.max(np.abs(o_grid(sol))) < 1e-24


def test_zero_payoff_gives_zero_K():
    mk = MarketModel.build(1.0, 100, [[-1.0, 1.0], [2.0, -2.0]], **ref._GENERIC)
    sol = solve_hedge(mk)
    assert np.all(sol.K_fine == 0)
    assert np.all(sol.h == 0) and np.all(sol.gamma == 0)


def test_terminal_values(generic):
    mk = generic.market
    assert np.array_equal(generic.h[:, -1], mk.Hb)
    assert np.array_equal(generic.P[:, -1], np.ones(mk.ell))
    assert np.allclose(generic.zeta[:, 0], mk.Ha[:, 0] - generic.K[:, 0])


def test_odd_substeps_rejected():
    with pytest.raises(ValueError):
        solve_hedge(ref.mv_market(), substeps=3)


def test_mean_variance_portfolio_is_merton_feedback():
    sol = solve_hedge(ref.mv_market(mu=0.1, sigma=0.2))
    # zero payoff, no default: pi = -(mu / sigma^2) X
    assert optimal_portfolio(0.4, 2.0, 0, sol) == pytest.approx([-2.5 * 2.0], rel=1e-12)
    assert optimal_portfolio(0.4, 0.0, 0, sol) == pytest.approx([0.0], abs=1e-15)


def test_portfolio_vanishes_at_target_without_default():
    mk = MarketModel.build(1.0, 100, [[-1.0, 1.0], [1.0, -1.0]], mu=[0.1, 0.05],
                           sigma=[0.2, 0.3], Hb=[1.0, 2.0])
    sol = solve_hedge(mk)
    P, h, _, _ = sol._at(0.37)
    for i in range(2):
        assert optimal_portfolio(0.37, h[i], i, sol) == pytest.approx([0.0], abs=1e-12)


def test_o_term_examples(generic):
    # without diffusion the market is complete and O vanishes
    sol = solve_hedge(ref.jump_only_market())
    assert np.max(np.abs(o_grid(sol, fine=True))) == 0.0
    o = o_grid(generic)
    assert o.min() >= 0 and o.max() > 0
    assert o_term(0.0, 0, generic) == pytest.approx(o[0, 0], rel=1e-10)


def test_value_single_regime_has_no_mismatch():
    mk = MarketModel.build(1.0, 200, [[0.0]], m=2, n=2, mu=ref._GENERIC["mu"][0],
                           sigma=ref._GENERIC["sigma"][0], F=ref._GENERIC["F"][0],
                           lam=0.5, Hb=1.0, Ha=0.3, x0=0.9)
    v = hedge_value(solve_hedge(mk), 0.9, 0, n_chains=10)
    assert v.v_mismatch == pytest.approx(0.0, abs=1e-15)
    assert v.se_O == 0.0 and v.v_O > 0


def test_value_matches_simulation(generic):
    v = hedge_value(generic, generic.market.x0, 0, n_chains=4000, seed=1)
    mc = hedging_error_simulation(generic, 20000, seed=2)
    assert abs(v.v_total - mc.mean) <= 3 * np.hypot(v.se_total, mc.se)


def test_trivial_hedge_has_zero_error():
    sol = solve_hedge(ref.constant_payoff_market(0.7, n_steps=200))
    mc = hedging_error_simulation(sol, 200, seed=0)
    assert mc.mean < 1e-20


def test_solve_pmv_rejects_degenerate():
    with pytest.raises(ValueError):
        solve_pmv(MarketModel.build(1.0, 10, [[0.0]], mu=0.1))
