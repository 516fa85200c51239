"""Mean-variance hedging of a payoff with a defaultable asset under regime switching.

The wealth problem maps onto the LQ model with ``A = C = E = Q = R = 0``,
``B = mu``, ``D = sigma'`` and unit terminal weights.  The Riccati part ``P``
comes from the LQ solver; the linear ``K`` system is integrated jointly with
``P`` and the hedge target is recovered by the transform ``h = K / P``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .control import FeedbackPolicy
from .matutil import det_ratio_complement, eig_min, solve_spd
from .model import MarkovGenerator, RegimeModel, TimeGrid, expand_coefficient
from .riccati import (RhatNotPositive, RiccatiSolution, _generator, solve_pbm,
                      tilde_coefficients)
from .simulate import CostEstimate, estimate_cost, mean_se, path_stream, sample_regime_path


@dataclass(frozen=True)
class MarketModel:
    """Per-regime market data on a uniform grid.

    Shapes: ``mu`` (ell, N, m), ``sigma`` (ell, N, m, n), ``F`` (ell, N, m),
    ``lam`` (ell, N), ``Hb`` (ell,), ``Ha`` (ell, N).
    """

    grid: TimeGrid
    generator: MarkovGenerator
    m: int
    n: int
    mu: np.ndarray
    sigma: np.ndarray
    F: np.ndarray
    lam: np.ndarray
    Hb: np.ndarray
    Ha: np.ndarray
    x0: float = 1.0
    i0: int = 0
    name: str = field(default="market", compare=False)

    @classmethod
    def build(cls, horizon: float, n_steps: int, generator, *, m: int = 1, n: int = 1,
              mu=0.0, sigma=0.0, F=0.0, lam=0.0, Hb=0.0, Ha=0.0, x0: float = 1.0,
              i0: int = 0, name: str = "market") -> "MarketModel":
        gen = generator if isinstance(generator, MarkovGenerator) else MarkovGenerator(generator)
        ell = gen.ell
        grid = TimeGrid(float(horizon), int(n_steps))
        N = grid.n_steps

        def vec(name, v, shape):
            if np.isscalar(v) and shape:
                if len(shape) == 2:
                    out = np.zeros(shape)
                    d = min(shape)
                    out[np.arange(d), np.arange(d)] = v
                    v = out
                else:
                    v = np.full(shape, float(v))
            return expand_coefficient(name, v, ell, N, shape)

        hb = np.asarray(Hb, dtype=float)
        hb = np.broadcast_to(hb, (ell,)).copy() if hb.ndim == 0 else hb.reshape(ell).copy()
        return cls(grid=grid, generator=gen, m=int(m), n=int(n),
                   mu=vec("mu", mu, (m,)), sigma=vec("sigma", sigma, (m, n)),
                   F=vec("F", F, (m,)), lam=vec("lam", lam, ()), Hb=hb,
                   Ha=vec("Ha", Ha, ()), x0=float(x0), i0=int(i0), name=name)

    @property
    def ell(self) -> int:
        return self.generator.ell

    def violations(self) -> list[str]:
        out = list(self.generator.violations())
        if np.any(self.F < -1):
            out.append("jump loading F below -1")
        if np.any(self.lam < 0):
            out.append("lambda negative")
        ss = np.einsum("ikmn,ikpn->ikmp", self.sigma, self.sigma)
        vol_ok = eig_min(ss).min() > 0
        jump_ok = self.m == 1 and (self.lam * self.F[..., 0] ** 2).min() > 0
        if not (vol_ok or jump_ok):
            out.append("market is degenerate: neither sigma sigma' nor lambda F^2 is "
                       "uniformly positive")
        return out


def to_lq(market: MarketModel) -> RegimeModel:
    """Exact field mapping of the hedging problem onto the LQ model."""
    problems = market.violations()
    if problems:
        raise ValueError("; ".join(problems))
    ell, N, m = market.ell, market.grid.n_steps, market.m
    zeros = np.zeros((ell, N))
    return RegimeModel(
        grid=market.grid, generator=market.generator, m=m, n=market.n,
        A=zeros.copy(), B=market.mu.copy(), C=np.zeros((ell, N, market.n)),
        D=np.swapaxes(market.sigma, -1, -2).copy(), E=zeros.copy(), F=market.F.copy(),
        Q=zeros.copy(), R=np.zeros((ell, N, m, m)), Gb=np.ones(ell), Ga=np.ones((ell, N)),
        lam=market.lam.copy(), x0=market.x0, i0=market.i0, name=market.name,
    )


def solve_pmv(market: MarketModel, substeps: int = 10) -> RiccatiSolution:
    """Riccati part of the hedging problem; checks uniform positivity."""
    sol = solve_pbm(to_lq(market), substeps=substeps)
    if sol.Pb.min() <= 0:
        raise ArithmeticError(f"hedging Riccati solution not positive (min {sol.Pb.min():.3g})")
    return sol


@numba.njit(cache=True)
def _k_generator(P, K, k, bvec, svec, Rt, DD, mu, F, lam, Ha, q, out):
    """Backward generator of the linear K system (G^a = 1 substituted)."""
    ell = K.shape[0]
    m = mu.shape[2]
    for i in range(ell):
        M = Rt[i, k] + P[i] * DD[i, k]
        nn = P[i] * bvec[i, k] + svec[i, k]
        gap = Ha[i, k] - K[i]
        rhs = K[i] * mu[i, k] + lam[i, k] * F[i, k] * gap
        if m == 1:
            lin = nn[0] * rhs[0] / M[0, 0]
        else:
            lin = np.dot(nn, np.linalg.solve(M, rhs))
        acc = lin - lam[i, k] * gap
        for j in range(ell):
            acc -= q[i, j] * K[j]
        out[i] = -acc
    return -1


@numba.njit(cache=True)
def _integrate_pk(lin, cst, bvec, svec, Rt, DD, q, Gb, mu, F, lam, Ha, Hb, dt, nsub):
    ell, N = lin.shape
    fineP = np.empty((ell, N * nsub + 1))
    fineK = np.empty((ell, N * nsub + 1))
    P = Gb.copy()
    K = Hb.copy()
    fineP[:, N * nsub] = P
    fineK[:, N * nsub] = K
    h = dt / nsub
    k1, k2, k3, k4 = np.empty(ell), np.empty(ell), np.empty(ell), np.empty(ell)
    j1, j2, j3, j4 = np.empty(ell), np.empty(ell), np.empty(ell), np.empty(ell)
    tmp = np.empty(ell)
    tmpK = np.empty(ell)
    for k in range(N - 1, -1, -1):
        for s in range(nsub):
            bad = _generator(P, k, lin, cst, bvec, svec, Rt, DD, q, True, k1)
            if bad >= 0:
                return fineP, fineK, k * nsub + nsub - s, bad
            _k_generator(P, K, k, bvec, svec, Rt, DD, mu, F, lam, Ha, q, j1)
            tmp[:] = P + 0.5 * h * k1
            tmpK[:] = K + 0.5 * h * j1
            bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, True, k2)
            if bad >= 0:
                return fineP, fineK, k * nsub + nsub - s, bad
            _k_generator(tmp, tmpK, k, bvec, svec, Rt, DD, mu, F, lam, Ha, q, j2)
            tmp[:] = P + 0.5 * h * k2
            tmpK[:] = K + 0.5 * h * j2
            bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, True, k3)
            if bad >= 0:
                return fineP, fineK, k * nsub + nsub - s, bad
            _k_generator(tmp, tmpK, k, bvec, svec, Rt, DD, mu, F, lam, Ha, q, j3)
            tmp[:] = P + h * k3
            tmpK[:] = K + h * j3
            bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, True, k4)
            if bad >= 0:
                return fineP, fineK, k * nsub + nsub - s, bad
            _k_generator(tmp, tmpK, k, bvec, svec, Rt, DD, mu, F, lam, Ha, q, j4)
            P = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            K = K + (h / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
            fineP[:, k * nsub + nsub - s - 1] = P
            fineK[:, k * nsub + nsub - s - 1] = K
    return fineP, fineK, -1, -1


def solve_k_system(market: MarketModel, P: RiccatiSolution) -> np.ndarray:
    """Fine-grid solution of the linear K system, shape (ell, N*substeps + 1).

    ``P`` is re-integrated alongside ``K`` with identical arithmetic, so the
    joint solve reproduces ``P.Pb_fine`` exactly.
    """
    lq = P.model
    tc = tilde_coefficients(lq)
    fineP, fineK, at, regime = _integrate_pk(
        tc.lin, tc.Qt, tc.bvec, tc.S, tc.Rt, tc.DtD, lq.q, lq.Gb.astype(float),
        lq.B, lq.F, lq.lam, market.Ha, market.Hb.astype(float), lq.grid.dt, P.substeps)
    if at >= 0:
        raise RhatNotPositive(at * lq.grid.dt / P.substeps, int(regime))
    if not np.array_equal(fineP, P.Pb_fine):
        raise ArithmeticError("joint P/K solve diverged from the Riccati solution")
    return fineK


def _ha_nodes(market: MarketModel, substeps: int) -> np.ndarray:
    """H^a on fine nodes with the left-continuous convention."""
    nf = market.grid.n_steps * substeps
    k = np.maximum(np.arange(nf + 1) - 1, 0) // substeps
    return market.Ha[:, k]


def h_transform(K: np.ndarray, P: np.ndarray, Ha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``h = K / P`` and ``gamma = Ha - h`` on matching grids."""
    if np.any(P <= 0):
        raise ArithmeticError("P must be positive for the h-transform")
    h = K / P
    return h, Ha - h


@dataclass(frozen=True)
class HedgeSolution:
    market: MarketModel
    lq: RegimeModel
    riccati: RiccatiSolution
    K_fine: np.ndarray
    h_fine: np.ndarray
    gamma_fine: np.ndarray
    policy: FeedbackPolicy

    @property
    def substeps(self) -> int:
        return self.riccati.substeps

    @property
    def P(self) -> np.ndarray:
        return self.riccati.Pb

    @property
    def K(self) -> np.ndarray:
        return self.K_fine[:, ::self.substeps]

    @property
    def h(self) -> np.ndarray:
        return self.h_fine[:, ::self.substeps]

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma_fine[:, ::self.substeps]

    @property
    def U(self) -> np.ndarray:
        return 1.0 - self.P

    @property
    def eta(self) -> np.ndarray:
        return np.zeros(self.P.shape + (self.market.n,))

    @property
    def L(self) -> np.ndarray:
        return np.zeros(self.P.shape + (self.market.n,))

    @property
    def zeta(self) -> np.ndarray:
        return _ha_nodes(self.market, 1) - self.K

    def _at(self, t: float):
        """(P, h, gamma) for every regime at time ``t`` and the interval index."""
        lq = self.lq
        k = lq.grid.interval(t)
        P = self.riccati.pb_at(t)
        tf = self.riccati.fine_nodes
        K = np.array([np.interp(t, tf, self.K_fine[i]) for i in range(lq.ell)])
        h = K / P
        return P, h, self.market.Ha[:, k] - h, k


def _portfolio_pieces(lq: RegimeModel, k, i, P, h, gamma):
    """Gain and offset of the affine optimal portfolio (batched over ``k``)."""
    sl = lq.slice(k, i)
    P = np.asarray(P, dtype=float)
    lamF = np.asarray(sl.lam)[..., None] * sl.F
    DtD = np.einsum("...nm,...np->...mp", sl.D, sl.D)
    Rm = P[..., None, None] * DtD + lamF[..., :, None] * sl.F[..., None, :]
    Nv = P[..., None] * sl.B + lamF * (1.0 - P)[..., None]
    gain = solve_spd(Rm, Nv)
    rhs = Nv * np.asarray(h)[..., None] + lamF * np.asarray(gamma)[..., None]
    return gain, solve_spd(Rm, rhs)


def solve_hedge(market: MarketModel, substeps: int = 10) -> HedgeSolution:
    """Solve P and K, form h and gamma, and build the affine optimal portfolio."""
    if substeps % 2:
        raise ValueError("substeps must be even so interval midpoints are fine nodes")
    ric = solve_pmv(market, substeps)
    lq = ric.model
    K = solve_k_system(market, ric)
    h, gamma = h_transform(K, ric.Pb_fine, _ha_nodes(market, substeps))
    N = lq.grid.n_steps
    mid = np.arange(N) * substeps + substeps // 2
    k = np.arange(N)
    gain = np.empty((N, lq.ell, lq.m))
    offset = np.empty_like(gain)
    for i in range(lq.ell):
        hm = K[i, mid] / ric.Pb_fine[i, mid]
        gm = market.Ha[i] - hm
        gain[:, i], offset[:, i] = _portfolio_pieces(lq, k, i, ric.Pb_fine[i, mid], hm, gm)
    policy = FeedbackPolicy(lq.grid, gain, offset, source=f"hedge:{market.name}")
    return HedgeSolution(market, lq, ric, K, h, gamma, policy)


def optimal_portfolio(t: float, X: float, i: int, sol: HedgeSolution) -> np.ndarray:
    """Optimal pre-default holdings ``pi*(t, X, i)``."""
    P, h, gamma, k = sol._at(t)
    gain, off = _portfolio_pieces(sol.lq, k, i, P[i], h[i], gamma[i])
    return -gain * X + off


def o_term(t: float, i: int, sol: HedgeSolution) -> float:
    """Residual-risk density ``gamma^2 lam (1 - lam F' (P sigma sigma' + lam F F')^{-1} F)``."""
    P, _, gamma, k = sol._at(t)
    return float(_o_values(sol.lq, np.array([k]), i, P[i:i + 1], gamma[i:i + 1])[0])


def _o_values(lq: RegimeModel, k, i, P, gamma):
    sl = lq.slice(k, i)
    DtD = np.einsum("...nm,...np->...mp", sl.D, sl.D)
    ratio = det_ratio_complement(np.asarray(P)[..., None, None] * DtD, sl.lam, sl.F)
    return np.asarray(gamma) ** 2 * sl.lam * ratio


def o_grid(sol: HedgeSolution, fine: bool = False) -> np.ndarray:
    """O on grid nodes (or fine nodes), left-continuous coefficients."""
    step = 1 if fine else sol.substeps
    nf = sol.lq.grid.n_steps * sol.substeps
    j = np.arange(0, nf + 1, step)
    k = np.maximum(j - 1, 0) // sol.substeps
    P = sol.riccati.Pb_fine[:, j]
    return np.stack([_o_values(sol.lq, k, i, P[i], sol.gamma_fine[i, j])
                     for i in range(sol.lq.ell)])


def _cell_integrands(sol: HedgeSolution):
    """Mismatch and O densities at both ends of every fine cell (cell coefficients)."""
    lq, market = sol.lq, sol.market
    s = sol.substeps
    nf = lq.grid.n_steps * s
    kc = np.arange(nf) // s
    P = sol.riccati.Pb_fine
    h = sol.K_fine / P
    q = lq.q
    out = []
    for cols in (np.arange(nf), np.arange(1, nf + 1)):
        Pc, hc = P[:, cols], h[:, cols]
        mis = np.stack([np.einsum("j,jc->c", q[i], Pc * (hc - hc[i]) ** 2) for i in range(lq.ell)])
        O = np.stack([_o_values(lq, kc, i, Pc[i], market.Ha[i, kc] - hc[i])
                      for i in range(lq.ell)])
        out.append((mis, O))
    return out


@numba.njit(cache=True)
def _survival_integrals(gL, gR, lam, nsub, hf, horizon):
    """Per-regime prefix integrals of g(s) exp(-Lam_i(s)) on fine nodes."""
    ell, nf = gL.shape
    Lam = np.zeros((ell, nf + 1))
    I = np.zeros((ell, nf + 1))
    for i in range(ell):
        for j in range(nf):
            w = (horizon - j * hf) if j == nf - 1 else hf
            Lam[i, j + 1] = Lam[i, j] + lam[i, j // nsub] * w
            I[i, j + 1] = I[i, j] + 0.5 * (gL[i, j] * math.exp(-Lam[i, j])
                                           + gR[i, j] * math.exp(-Lam[i, j + 1])) * w
    return Lam, I


@numba.njit(cache=True)
def _partial(t, i, gL, gR, Lam, I, lam, nsub, hf, horizon):
    nf = gL.shape[1]
    j = min(int(t / hf), nf - 1)
    s = j * hf
    w = (horizon - s) if j == nf - 1 else hf
    d = t - s
    g = gL[i, j] + (gR[i, j] - gL[i, j]) * d / w
    lt = Lam[i, j] + lam[i, j // nsub] * d
    it = I[i, j] + 0.5 * (gL[i, j] * math.exp(-Lam[i, j]) + g * math.exp(-lt)) * d
    return lt, it


@numba.njit(cache=True)
def _chain_values(gL, gR, Lam, I, lam, nsub, hf, horizon, i0, sw_t, sw_r, nev, out):
    ell, nf = gL.shape
    for c in range(sw_t.shape[0]):
        r = i0
        a = 0.0
        logS = 0.0
        total = 0.0
        for p in range(nev[c] + 1):
            b = sw_t[c, p] if p < nev[c] else horizon
            la, ia = _partial(a, r, gL, gR, Lam, I, lam, nsub, hf, horizon)
            if b >= horizon:
                lb, ib = Lam[r, nf], I[r, nf]
            else:
                lb, ib = _partial(b, r, gL, gR, Lam, I, lam, nsub, hf, horizon)
            total += math.exp(la - logS) * (ib - ia)
            logS += lb - la
            if p < nev[c]:
                r = sw_r[c, p]
                a = b
        out[c] = total


@dataclass(frozen=True)
class HedgeValue:
    v0: float
    v_mismatch: float
    se_mismatch: float
    v_O: float
    se_O: float
    se_total: float
    n_chains: int

    @property
    def v_total(self) -> float:
        return self.v0 + self.v_mismatch + self.v_O


def hedge_value(sol: HedgeSolution, x: float, i0: int, n_chains: int = 100_000,
                seed: int = 0) -> HedgeValue:
    """Three-term optimal value; the expectations run over regime paths only.

    The default indicator is replaced by the conditional survival weight
    ``exp(-int_0^t lam(s, alpha_s) ds)``, so no Brownian or jump sampling is needed.
    """
    lq = sol.lq
    s = sol.substeps
    hf = lq.grid.dt / s
    T = lq.grid.horizon
    v0 = float(sol.P[i0, 0] * (x - sol.h[i0, 0]) ** 2)
    (misL, OL), (misR, OR) = _cell_integrands(sol)
    tabs = [_survival_integrals(gL, gR, lq.lam, s, hf, T) for gL, gR in ((misL, misR), (OL, OR))]
    paths = [sample_regime_path(lq.q, i0, T, path_stream(seed, c, domain=1))
             for c in range(int(n_chains))]
    maxev = max(1, max(len(p.times) for p in paths))
    sw_t = np.full((len(paths), maxev), np.inf)
    sw_r = np.zeros((len(paths), maxev), dtype=np.int64)
    nev = np.array([len(p.times) for p in paths], dtype=np.int64)
    for c, p in enumerate(paths):
        sw_t[c, :nev[c]] = p.times
        sw_r[c, :nev[c]] = p.regimes
    vals = []
    for (gL, gR), (Lam, I) in zip(((misL, misR), (OL, OR)), tabs):
        out = np.empty(len(paths))
        _chain_values(gL, gR, Lam, I, lq.lam, s, hf, T, i0, sw_t, sw_r, nev, out)
        vals.append(out)
    m_mean, m_se = mean_se(vals[0])
    o_mean, o_se = mean_se(vals[1])
    _, t_se = mean_se(vals[0] + vals[1])
    return HedgeValue(v0, m_mean, m_se, o_mean, o_se, t_se, int(n_chains))


def hedging_error_simulation(sol: HedgeSolution, n_paths: int = 100_000,
                             dt: float | None = None, seed: int = 0,
                             scheme: str = "euler") -> CostEstimate:
    """Monte Carlo estimate of ``E (X_{T^tau} - H)^2`` under the optimal portfolio."""
    lq = sol.lq.replace(x0=sol.market.x0, i0=sol.market.i0)
    return estimate_cost(lq, sol.policy, n_paths, dt, seed, scheme,
                         targets=(sol.market.Hb, sol.market.Ha))
