"""Optimal feedback law and value for the regime-switching LQ problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matutil import NotPositiveDefinite, solve_spd
from .model import CoefficientSlice, RegimeModel, TimeGrid
from .riccati import JumpSolution


class RcalNotPositive(ArithmeticError):
    pass


def _ncal(sl: CoefficientSlice, P, U, lam_g, Lam=None) -> np.ndarray:
    """Batched N(P, Lam, U) with the slice's coefficients; trailing axis m."""
    P = np.asarray(P, dtype=float)[..., None]
    U = np.asarray(U, dtype=float)[..., None]
    lam_g = np.asarray(lam_g, dtype=float)[..., None]
    E = np.asarray(sl.E)[..., None]
    DtC = np.einsum("...nm,...n->...m", sl.D, sl.C)
    out = P * (DtC + sl.B) + lam_g * E * sl.F * (P + U) + lam_g * sl.F * U
    if Lam is not None:
        out = out + np.einsum("...nm,...n->...m", sl.D, np.asarray(Lam, dtype=float))
    return out


def _rcal(sl: CoefficientSlice, P, U, lam_g) -> np.ndarray:
    """Batched R(P, U) with the slice's coefficients; trailing axes (m, m)."""
    P = np.asarray(P, dtype=float)[..., None, None]
    U = np.asarray(U, dtype=float)[..., None, None]
    lam_g = np.asarray(lam_g, dtype=float)[..., None, None]
    DtD = np.einsum("...nm,...np->...mp", sl.D, sl.D)
    FFt = sl.F[..., :, None] * sl.F[..., None, :]
    return sl.R + P * DtD + lam_g * (P + U) * FFt


def _lam_g(model: RegimeModel, t, i, tau):
    lam = model.lam[i, model.grid.interval(t)]
    return lam * (np.asarray(t) <= tau)


def ncal(model: RegimeModel, t: float, P: float, U: float, i: int, Lam=None,
         tau: float = np.inf) -> np.ndarray:
    """N(t, P, Lam, U, i) with the intensity killed after ``tau``."""
    sl = model.slice(model.grid.interval(t), i)
    return _ncal(sl, P, U, _lam_g(model, t, i, tau), Lam)


def rcal(model: RegimeModel, t: float, P: float, U: float, i: int,
         tau: float = np.inf) -> np.ndarray:
    """R(t, P, U, i) with the intensity killed after ``tau``."""
    sl = model.slice(model.grid.interval(t), i)
    return _rcal(sl, P, U, _lam_g(model, t, i, tau))


@dataclass(frozen=True)
class FeedbackPolicy:
    """Affine feedback ``u = -gain X + offset``, piecewise constant on the grid.

    ``gain`` and ``offset`` have shape ``(n_steps, ell, m)``; row ``k`` applies on
    the simulation steps inside ``[t_k, t_{k+1})``.  Once the jump has occurred
    the problem has stopped, so the post-jump law is the zero control.
    """

    grid: TimeGrid
    gain: np.ndarray
    offset: np.ndarray
    source: str = ""

    @classmethod
    def zero(cls, model: RegimeModel) -> "FeedbackPolicy":
        shape = (model.grid.n_steps, model.ell, model.m)
        return cls(model.grid, np.zeros(shape), np.zeros(shape), source="zero")

    @property
    def is_linear(self) -> bool:
        return not np.any(self.offset)

    def gain_at(self, t: float, i: int, jumped: bool = False) -> np.ndarray:
        if jumped:
            return np.zeros(self.gain.shape[-1])
        k = min(int(t / self.grid.dt), self.grid.n_steps - 1)
        return self.gain[k, i]

    def control(self, t: float, x: float, i: int, jumped: bool = False) -> np.ndarray:
        if jumped:
            return np.zeros(self.gain.shape[-1])
        k = min(int(t / self.grid.dt), self.grid.n_steps - 1)
        return -self.gain[k, i] * x + self.offset[k, i]


def interval_midpoint_pb(jsol: JumpSolution) -> np.ndarray:
    """P^b at the midpoint of each grid interval, shape (ell, n_steps)."""
    g = jsol.model.grid
    mid = g.nodes[:-1] + 0.5 * g.dt
    return jsol.riccati.pb_at(mid)


def build_policy(jsol: JumpSolution) -> FeedbackPolicy:
    """Optimal linear feedback ``K = R^{-1} N`` before the jump.

    Interval ``k`` uses its own coefficients with ``P`` taken at the interval
    midpoint and ``U = Ga - P``.
    """
    model = jsol.model
    N = model.grid.n_steps
    P = interval_midpoint_pb(jsol)  # (ell, N)
    k = np.arange(N)
    gain = np.empty((N, model.ell, model.m))
    for i in range(model.ell):
        sl = model.slice(k, i)
        U = sl.Ga - P[i]
        Nv = _ncal(sl, P[i], U, sl.lam)
        Rm = _rcal(sl, P[i], U, sl.lam)
        try:
            gain[:, i] = solve_spd(Rm, Nv)
        except NotPositiveDefinite as exc:
            raise RcalNotPositive(f"R not positive definite in regime {i + 1}: {exc}") from None
    if not np.all(np.isfinite(gain)):
        raise RcalNotPositive("non-finite feedback gain")
    return FeedbackPolicy(model.grid, gain, np.zeros_like(gain), source=f"optimal:{model.name}")


def optimal_value(jsol: JumpSolution, x: float, i0: int) -> float:
    """``P^{b,i0}(0) x^2``."""
    return float(jsol.riccati.Pb[i0, 0]) * float(x) ** 2
