from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jumplq.matutil import (NotPositiveDefinite, det_ratio_complement, eig_min, is_spd,
                            schur_identity_residual, solve_spd)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4).flatmap(lambda m: arrays(float, (m, m), elements=finite)))
def test_eig_min_matches_eigvalsh(M):
    S = M + M.T
    assert eig_min(S) == pytest.approx(np.linalg.eigvalsh(S)[0], abs=1e-12)


def test_eig_min_batched():
    S = np.stack([np.eye(2), np.diag([3.0, -1.0])])
    assert np.allclose(eig_min(S), [1.0, -1.0])


def test_solve_spd_and_rejection():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    assert np.allclose(A @ solve_spd(A, b), b)
    with pytest.raises(NotPositiveDefinite):
        solve_spd(np.diag([1.0, -1.0]), b)
    assert not is_spd(np.zeros((1, 1)))


def test_schur_examples():
    assert schur_identity_residual(1.0, np.zeros(2), np.eye(2)) == 0.0
    assert schur_identity_residual(2.0, np.array([1.0, 0.0]), np.eye(2)) == pytest.approx(0, abs=1e-15)
    with pytest.raises(NotPositiveDefinite):
        schur_identity_residual(1.0, np.zeros(2), -np.eye(2))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5).flatmap(lambda m: st.tuples(
    arrays(float, (m, m), elements=finite), arrays(float, (m,), elements=finite),
    st.floats(0.01, 5.0))))
def test_schur_identity_property(data):
    M, e, u = data
    A = M.T @ M + np.eye(M.shape[0])
    a = float(e @ np.linalg.solve(A, e) + u)
    assert schur_identity_residual(a, e, A) <= 1e-10


def test_det_ratio_examples():
    assert det_ratio_complement(np.zeros((1, 1)), 2.0, np.ones(1)) == 0.0
    assert det_ratio_complement(np.eye(2), 1.0, np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert det_ratio_complement(np.eye(2), 1.0, np.zeros(2)) == 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5).flatmap(lambda m: st.tuples(
    arrays(float, (m, m), elements=finite), arrays(float, (m,), elements=finite),
    st.floats(0.1, 3.0), st.integers(0, 1))))
def test_det_ratio_in_unit_interval_and_matches_determinants(data):
    M, F, w, drop = data
    m = M.shape[0]
    M = M[: max(m - drop, 0)] if m > 1 else M
    R = M.T @ M
    S = R + w * np.outer(F, F)
    if np.linalg.eigvalsh(S)[0] < 1e-6:
        return  # precondition: R + w F F' positive definite
    c = det_ratio_complement(R, w, F)
    assert 0.0 <= c <= 1.0
    assert c == pytest.approx(np.linalg.det(R) / np.linalg.det(S), abs=1e-8)
