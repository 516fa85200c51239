from __future__ import annotations

import numpy as np
import pytest

from jumplq import reference as ref
from jumplq.control import (FeedbackPolicy, _ncal, _rcal, build_policy, ncal, optimal_value,
                            rcal)
from jumplq.hedging import to_lq
from jumplq.model import RegimeModel
from jumplq.riccati import decompose, nhat, rhat, solve_pbm


def test_rcal_equals_rhat_on_the_decomposition():
    m = ref.jump_lq()
    for t, P, i in [(0.1, 1.3, 0), (0.7, 0.4, 1)]:
        U = m.Ga[i, m.grid.interval(t)] - P
        assert np.allclose(rcal(m, t, P, U, i), rhat(m, t, P, i), rtol=0, atol=1e-15)
        assert np.allclose(ncal(m, t, P, U, i), nhat(m, t, P, i), rtol=0, atol=1e-15)


def test_rcal_without_intensity_ignores_U():
    m = RegimeModel.build(1.0, 10, [[0.0]], D=0.5, R=1.0, F=0.7)
    assert rcal(m, 0.5, 2.0, 123.0, 0) == pytest.approx(np.array([[1.0 + 2.0 * 0.25]]))


def test_ncal_homogeneous():
    m = RegimeModel.build(1.0, 10, [[0.0]], B=0.5, C=0.3, D=0.2, R=1.0)
    assert ncal(m, 0.5, 0.0, 0.0, 0) == pytest.approx([0.0])


def test_intensity_killed_after_tau():
    m = ref.jump_lq()
    before = rcal(m, 0.5, 1.0, 0.5, 0, tau=0.8)
    after = rcal(m, 0.9, 1.0, 0.5, 0, tau=0.8)
    F2 = m.F[0, 0, 0] ** 2
    assert before[0, 0] - after[0, 0] == pytest.approx(m.lam[0, 0] * 1.5 * F2)


def test_zero_gain_without_control_loadings():
    m = RegimeModel.build(1.0, 100, [[-1, 1], [1, -1]], A=[0.2, -0.1], C=[0.3, 0.1],
                          Q=1.0, R=1.0)
    pol = build_policy(decompose(solve_pbm(m)))
    assert np.all(pol.gain == 0)


def test_merton_ratio():
    mk = ref.mv_market(mu=0.1, sigma=0.2)
    pol = build_policy(decompose(solve_pbm(to_lq(mk))))
    assert np.allclose(pol.gain, 0.1 / 0.04, rtol=1e-12)


def test_gains_differ_across_regimes():
    pol = build_policy(decompose(solve_pbm(ref.jump_lq())))
    assert not np.allclose(pol.gain[:, 0], pol.gain[:, 1])
    flat = RegimeModel.build(1.0, 50, [[-1, 1], [1, -1]], A=0.1, B=0.4, D=0.3, R=1.0, Q=1.0)
    pf = build_policy(decompose(solve_pbm(flat)))
    assert np.allclose(pf.gain[:, 0], pf.gain[:, 1])


def test_gain_consistency_with_jump_free_quantities():
    m = ref.jump_lq()
    j = decompose(solve_pbm(m))
    pol = build_policy(j)
    g = m.grid
    mid = g.nodes[:-1] + 0.5 * g.dt
    P = j.riccati.pb_at(mid)
    k = np.arange(g.n_steps)
    for i in range(m.ell):
        sl = m.slice(k, i)
        Rh = _rcal(sl, P[i], sl.Ga - P[i], sl.lam)
        Nh = _ncal(sl, P[i], sl.Ga - P[i], sl.lam)
        direct = np.linalg.solve(Rh, Nh[..., None])[..., 0]
        assert np.allclose(pol.gain[:, i], direct, rtol=1e-13, atol=0)
        for kk in (0, 777, g.n_steps - 1):
            nh = nhat(m, mid[kk], P[i, kk], i)
            rh = rhat(m, mid[kk], P[i, kk], i)
            assert np.allclose(pol.gain[kk, i], np.linalg.solve(rh, nh), rtol=1e-13)


def test_policy_is_homogeneous_and_zero_after_jump():
    pol = build_policy(decompose(solve_pbm(ref.jump_lq())))
    for c in (-2.0, 0.5, 3.0):
        assert np.allclose(pol.control(0.3, c * 1.7, 1), c * pol.control(0.3, 1.7, 1))
    assert np.all(pol.control(0.3, 1.7, 1, jumped=True) == 0)
    assert np.all(pol.gain_at(0.3, 1, jumped=True) == 0)


def test_optimal_value_examples():
    j = decompose(solve_pbm(ref.linear_oracle()))
    assert optimal_value(j, 0.0, 0) == 0.0
    assert optimal_value(j, 1.5, 0) == pytest.approx(2.0 * np.exp(0.6) * 2.25, rel=1e-10)
    jm = decompose(solve_pbm(to_lq(ref.mv_market())))
    assert optimal_value(jm, 1.0, 0) == pytest.approx(np.exp(-0.25), rel=1e-10)
    assert optimal_value(decompose(solve_pbm(ref.jump_lq())), 1.0, 0) >= 0


def test_zero_policy_shape():
    m = ref.jump_lq(n_steps=10)
    z = FeedbackPolicy.zero(m)
    assert z.gain.shape == (10, 2, 1) and z.is_linear
