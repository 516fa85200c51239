"""Built-in reference models used by the verification suite, tests and demos."""
from __future__ import annotations

import numpy as np

from .hedging import MarketModel
from .model import RegimeModel

HORIZON = 1.0
N_STEPS = 2000
TWO_STATE = [[-1.0, 1.0], [1.5, -1.5]]


def linear_oracle(A: float = 0.3, G: float = 2.0, n_steps: int = N_STEPS) -> RegimeModel:
    """Single regime, only the drift and terminal weight active: ``P = G exp(2A(T-t))``.

    ``R = 1`` keeps the Standard case certified while the gain stays zero.
    """
    return RegimeModel.build(HORIZON, n_steps, [[0.0]], A=A, R=1.0, Gb=G, Ga=G,
                             name="linear-oracle")


def coupled_linear(n_steps: int = N_STEPS) -> RegimeModel:
    """Two regimes with only drift and coupling: a matrix-exponential solution."""
    return RegimeModel.build(HORIZON, n_steps, [[-1.0, 1.0], [1.0, -1.0]], A=[0.3, -0.2],
                             R=1.0, Gb=[1.0, 2.0], Ga=[1.0, 2.0], name="coupled-linear")


def jump_lq(n_steps: int = N_STEPS) -> RegimeModel:
    """Generic two-regime model with a default time and nonzero jump loadings."""
    return RegimeModel.build(
        HORIZON, n_steps, TWO_STATE,
        A=[0.1, -0.2], B=[0.5, 0.3], C=[0.2, 0.1], D=[0.3, 0.5],
        E=[-0.3, 0.2], F=[0.4, -0.5], Q=[1.0, 0.5], R=[1.0, 2.0],
        lam=[0.8, 1.5], Gb=[1.0, 2.0], Ga=[0.5, 1.0], x0=1.0, i0=0, name="jump-lq",
    )


def standard_model(n_steps: int = N_STEPS) -> RegimeModel:
    """Certified only by a positive control weight (no diffusion in the control)."""
    return RegimeModel.build(
        HORIZON, n_steps, TWO_STATE, A=[0.2, -0.1], B=[1.0, 0.5], C=[0.3, 0.2], D=0.0,
        Q=[1.0, 2.0], R=[1.0, 0.5], Gb=[1.0, 0.5], Ga=[0.0, 0.2], lam=[0.5, 0.3],
        E=[0.1, -0.2], F=[0.5, 0.4], name="standard",
    )


def singular1_model(n_steps: int = N_STEPS) -> RegimeModel:
    """Zero control weight; positivity comes from ``D'D`` and the terminal weights."""
    return RegimeModel.build(
        HORIZON, n_steps, TWO_STATE, m=2, n=2,
        A=[0.1, 0.2], B=[[0.2, -0.1], [0.1, 0.3]], C=[[0.1, 0.0], [0.0, 0.2]],
        D=[[[0.6, 0.1], [0.0, 0.5]], [[0.4, 0.0], [0.2, 0.7]]],
        E=[0.2, -0.1], F=[[0.3, 0.0], [0.0, -0.2]], Q=[0.5, 0.0], R=0.0,
        Gb=[1.0, 0.8], Ga=[0.6, 1.2], lam=[0.4, 0.9], name="singular-1",
    )


def singular2_model(n_steps: int = N_STEPS) -> RegimeModel:
    """Zero control weight and no control diffusion; positivity comes from ``lam F^2``."""
    return RegimeModel.build(
        HORIZON, n_steps, TWO_STATE, A=[0.1, -0.1], B=[0.3, 0.2], C=[0.2, 0.3], D=0.0,
        E=[0.2, -0.3], F=[0.8, -0.6], Q=[0.2, 0.4], R=0.0, lam=[1.0, 2.0],
        Gb=[1.0, 0.7], Ga=[0.9, 0.5], name="singular-2",
    )


def weak_order_model() -> RegimeModel:
    """The jump model on a coarse 20-interval grid for discretisation-order checks."""
    return jump_lq(n_steps=20)


def mv_market(mu: float = 0.1, sigma: float = 0.2, n_steps: int = N_STEPS) -> MarketModel:
    """One regime, no default, zero payoff: ``P = exp(-theta^2 (T - t))``."""
    return MarketModel.build(HORIZON, n_steps, [[0.0]], mu=mu, sigma=sigma, x0=1.0,
                             name="mv-market")


def jump_only_market(n_steps: int = N_STEPS) -> MarketModel:
    """Complete market driven only by the default: ``sigma = 0``, ``m = 1``."""
    return MarketModel.build(HORIZON, n_steps, [[0.0]], mu=0.05, sigma=0.0, F=-0.3,
                             lam=0.5, Hb=1.0, Ha=0.4, x0=0.9, name="jump-only-market")


_GENERIC = dict(
    m=2, n=2,
    mu=[[0.1, 0.05], [0.02, 0.08]],
    sigma=[[[0.2, 0.05], [0.0, 0.3]], [[0.25, 0.0], [0.1, 0.2]]],
    F=[[-0.3, 0.1], [-0.5, 0.2]],
    lam=[0.5, 1.0],
)


def generic_market(n_steps: int = N_STEPS) -> MarketModel:
    """Two regimes, two assets, a default, and regime-dependent payoffs."""
    return MarketModel.build(HORIZON, n_steps, [[-1.0, 1.0], [2.0, -2.0]], **_GENERIC,
                             Hb=[1.0, 0.8], Ha=[0.3, 0.5], x0=0.9, name="generic-market")


def constant_payoff_market(h0: float = 0.7, n_steps: int = N_STEPS) -> MarketModel:
    """Same market with ``H = h0`` in every state and initial wealth ``h0``."""
    return MarketModel.build(HORIZON, n_steps, [[-1.0, 1.0], [2.0, -2.0]], **_GENERIC,
                             Hb=h0, Ha=h0, x0=h0, name="constant-payoff")


def coupled_linear_oracle(model: RegimeModel) -> np.ndarray:
    """Node values ``expm((diag(2A) + q)(T - t)) Gb`` for the constant-coefficient linear case."""
    from scipy.linalg import expm

    L = np.diag(2.0 * model.A[:, 0]) + model.q
    T = model.grid.horizon
    return np.stack([expm(L * (T - t)) @ model.Gb for t in model.grid.nodes], axis=1)
