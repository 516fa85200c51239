from __future__ import annotations

import numpy as np
import pytest

from jumplq import reference as ref
from jumplq.model import RegimeModel, classify_case
from jumplq.riccati import (RhatNotPositive, comparison_upper_bound, decompose,
                            jump_bsde_residual, lower_bound_singular1, lower_bound_singular2,
                            nhat, pbm_rhs, rhat, solve_pbm, tilde_coefficients)


def test_tilde_coefficients_hand_values():
    m = RegimeModel.build(1.0, 4, [[0.0]], A=0.3, B=0.5, E=0.2, F=0.4, Q=1.0, R=2.0,
                          lam=1.5, Ga=0.8)
    tc = tilde_coefficients(m)
    assert tc.At[0, 0] == pytest.approx(0.3 - 1.5 * 0.2 - 0.75)
    assert tc.Bt[0, 0, 0] == pytest.approx(0.5 - 1.5 * 0.4)
    assert tc.Qt[0, 0] == pytest.approx(1.0 + 1.5 * 0.8 * 1.2 ** 2)
    assert tc.Rt[0, 0, 0, 0] == pytest.approx(2.0 + 1.5 * 0.8 * 0.16)
    assert tc.S[0, 0, 0] == pytest.approx(1.5 * 0.8 * 1.2 * 0.4)


def test_nhat_rhat_examples():
    m = RegimeModel.build(1.0, 4, [[0.0]], E=0.5, F=1.0, lam=2.0, Ga=1.0, R=0.0)
    assert nhat(m, 0.5, 0.0, 0) == pytest.approx([2.0 * 1.5 * 1.0])  # intercept S
    assert rhat(m, 0.5, 7.0, 0)[0, 0] == pytest.approx(2.0)  # D = 0: Rt only
    zero = RegimeModel.build(1.0, 4, [[0.0]], R=1.0)
    assert nhat(zero, 0.3, 5.0, 0) == pytest.approx([0.0])
    mv = RegimeModel.build(1.0, 4, [[0.0]], B=0.07, D=0.2)
    assert nhat(mv, 0.1, 1.0, 0) == pytest.approx([0.07])
    two = RegimeModel.build(1.0, 4, [[0.0]], m=2, n=2, D=1.0, R=0.0)
    assert np.allclose(rhat(two, 0.2, 3.0, 0), 3 * np.eye(2))


def test_pbm_rhs_linear_and_coupled():
    m = RegimeModel.build(1.0, 4, [[0.0]], A=0.3, R=1.0)
    assert pbm_rhs(m, 0.5, [2.0]) == pytest.approx([-1.2])
    c = RegimeModel.build(1.0, 4, [[-1.0, 1.0], [1.0, -1.0]], A=[0.3, -0.2], R=1.0)
    out = pbm_rhs(c, 0.5, [2.0, 1.0])
    assert out[0] == pytest.approx(-2 * 0.3 * 2.0 + (2.0 - 1.0))
    assert out[1] == pytest.approx(2 * 0.2 * 1.0 + (1.0 - 2.0))


def test_pbm_rhs_mean_variance():
    m = ref.mv_market(mu=0.1, sigma=0.2)
    from jumplq.hedging import to_lq

    lq = to_lq(m)
    assert pbm_rhs(lq, 0.3, [0.6]) == pytest.approx([0.25 * 0.6])


def test_pbm_rhs_signals_rhat_failure():
    m = RegimeModel.build(1.0, 4, [[0.0]], R=0.0, D=1.0)
    with pytest.raises(RhatNotPositive):
        pbm_rhs(m, 0.2, [0.0])


def test_linear_oracle():
    m = ref.linear_oracle()
    sol = solve_pbm(m)
    exact = 2.0 * np.exp(0.6 * (1.0 - m.grid.nodes))
    assert np.max(np.abs(sol.Pb[0] / exact - 1)) <= 1e-8
    # quadratic term vanishes, so the comparison bound coincides
    assert np.array_equal(sol.upper, sol.Pb)


def test_coupled_linear_oracle():
    m = ref.coupled_linear()
    sol = solve_pbm(m)
    assert np.max(np.abs(sol.Pb / ref.coupled_linear_oracle(m) - 1)) <= 1e-6


def test_solver_aborts_when_rhat_degenerates():
    # R = 0 and no diffusion or jump in the control: Rhat = 0 from the start
    m = RegimeModel.build(1.0, 10, [[0.0]], B=1.0, R=0.0, Gb=1.0, Ga=1.0)
    case = classify_case(RegimeModel.build(1.0, 10, [[0.0]], R=1.0))
    with pytest.raises(RhatNotPositive) as info:
        solve_pbm(m, case=case)
    assert info.value.regime == 0


@pytest.mark.parametrize("make", [ref.standard_model, ref.singular1_model,
                                  ref.singular2_model, ref.jump_lq])
def test_bounds_on_reference_models(make):
    sol = solve_pbm(make())
    assert sol.Pb.min() >= -1e-8
    assert np.max(sol.Pb - sol.upper) <= 1e-8
    if sol.lower_bound is not None:
        assert sol.Pb.min() >= sol.lower_bound - 1e-8
    assert sol.rhat_eig_min.min() > 0


def test_upper_bound_nonnegative_for_standard():
    ub = comparison_upper_bound(ref.standard_model())
    assert ub.min() >= 0


def test_singular1_floor_trivial_constant():
    m = RegimeModel.build(1.0, 10, [[0.0]], R=0.0, D=1.0, Gb=0.5, Ga=0.5, A=0.0)
    # rate = 2A + C'C - b'(D'D)^{-1}b = 0 with B = C = 0
    assert lower_bound_singular1(m) == pytest.approx(0.5)


def test_singular2_floor_formula():
    m = ref.singular2_model()
    case = classify_case(m)
    lb = lower_bound_singular2(m, case)
    assert 0 < lb < case.satisfied["SingularIIPrime"]
    with pytest.raises(ValueError):
        lower_bound_singular2(ref.standard_model())


def test_rk4_converges_with_substeps():
    m = ref.jump_lq(n_steps=20)
    fine = solve_pbm(m, substeps=64).Pb
    errs = [np.abs(solve_pbm(m, substeps=s).Pb - fine).max() for s in (1, 2, 4)]
    assert errs[0] / errs[1] > 8 and errs[1] / errs[2] > 8


def test_hermite_interpolation_hits_nodes_and_is_smooth():
    sol = solve_pbm(ref.jump_lq(n_steps=50))
    t = sol.fine_nodes
    assert np.allclose(sol.pb_at(t), sol.Pb_fine, rtol=0, atol=1e-15)
    # between nodes: compare against a finer solve
    fine = solve_pbm(ref.jump_lq(n_steps=50), substeps=40)
    mid = 0.5 * (t[:-1] + t[1:])
    assert np.abs(sol.pb_at(mid) - fine.pb_at(mid)).max() < 1e-9


def test_decomposition_identity_exact():
    m = ref.jump_lq()
    j = decompose(solve_pbm(m))
    t = m.grid.nodes
    for tau in (0.3, 0.77, np.inf):
        tt = t[t <= min(tau, 1.0)]
        for i in range(m.ell):
            ga = m.Ga[i, m.grid.interval(np.minimum(tt, tau))]
            assert np.max(np.abs(j.P_left(tt, i, tau) + j.U(tt, i, tau) - ga)) <= 4e-16 * 2


def test_decomposition_after_jump():
    m = ref.jump_lq()
    j = decompose(solve_pbm(m))
    tau = 0.4
    assert j.P(0.6, 0, tau) == m.Ga[0, m.grid.interval(tau)]
    assert j.U(0.6, 0, tau) == 0.0
    assert j.P(0.2, 0, tau) == j.riccati.pb_at(0.2, 0)
    assert np.all(j.Lam(np.array([0.1, 0.2]), 0) == 0)


def test_terminal_consistency_of_U():
    m = ref.linear_oracle()
    j = decompose(solve_pbm(m))
    assert j.U(1.0, 0) == pytest.approx(0.0, abs=1e-15)


def test_residual_no_jump_single_regime():
    m = RegimeModel.build(1.0, 2000, [[0.0]], A=0.1, B=0.5, C=0.2, D=0.3, Q=1.0, R=1.0)
    assert jump_bsde_residual(decompose(solve_pbm(m)), np.inf) <= 1e-6


def test_residual_order_under_refinement():
    res = [jump_bsde_residual(decompose(solve_pbm(ref.jump_lq(n))), 0.55) for n in (40, 80, 160)]
    assert res[0] / res[1] >= 2 and res[1] / res[2] >= 2


def test_lambda_bookkeeping_is_explicit_zero():
    sol = solve_pbm(ref.linear_oracle())
    assert np.all(sol.Lb == 0)
