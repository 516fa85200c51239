"""Coupled Riccati systems: the jump-free backward system, its bounds, and the
jump-horizon solution built from it.

With deterministic per-regime coefficients the martingale parts vanish and the
jump-free system is a coupled backward ODE in ``ell`` unknowns::

    -dP^i/dt = (2 At + C'C) P^i + Qt + sum_j q_ij P^j - Nh' Rh^{-1} Nh
    Nh = P (D'C + Bt) + S,   Rh = Rt + P D'D,   P^i(T) = Gb^i

solved by fixed-step RK4 with ``substeps`` steps per grid interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .matutil import eig_min, solve_spd
from .model import AssumptionCase, RegimeModel, classify_case

BOUND_SLACK = 1e-8


class RhatNotPositive(ArithmeticError):
    def __init__(self, t: float, regime: int):
        super().__init__(f"Rhat not positive definite at t={t:.6g}, regime {regime + 1}")
        self.t = t
        self.regime = regime


class BoundViolation(ArithmeticError):
    pass


@dataclass(frozen=True)
class TildeCoefficients:
    At: np.ndarray
    Bt: np.ndarray
    Qt: np.ndarray
    Rt: np.ndarray
    S: np.ndarray
    # derived pieces of the drift
    lin: np.ndarray  # 2 At + C'C
    bvec: np.ndarray  # D'C + Bt
    DtD: np.ndarray


def tilde_coefficients(model: RegimeModel) -> TildeCoefficients:
    lam, Ga, E = model.lam, model.Ga, model.E
    lG = lam * Ga
    At = model.A - lam * model.E - 0.5 * lam
    Bt = model.B - lam[..., None] * model.F
    Qt = model.Q + lG * (E + 1.0) ** 2
    Rt = model.R + lG[..., None, None] * model.F[..., :, None] * model.F[..., None, :]
    S = (lG * (E + 1.0))[..., None] * model.F
    CtC = np.einsum("ikn,ikn->ik", model.C, model.C)
    DtC = np.einsum("iknm,ikn->ikm", model.D, model.C)
    DtD = np.einsum("iknm,iknp->ikmp", model.D, model.D)
    return TildeCoefficients(At=At, Bt=Bt, Qt=Qt, Rt=Rt, S=S, lin=2 * At + CtC,
                             bvec=DtC + Bt, DtD=DtD)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _quad_form(P, b, s, Rt, DD):
    """Return (Nh' Rh^{-1} Nh, ok) for one regime; ok is False if Rh is not SPD."""
    m = b.shape[0]
    if m == 1:
        M = Rt[0, 0] + P * DD[0, 0]
        if M <= 1e-12 * (1.0 + abs(M)):
            return 0.0, False
        nn = P * b[0] + s[0]
        return nn * nn / M, True
    M = Rt + P * DD
    nn = P * b + s
    tr = 0.0
    for a in range(m):
        tr += M[a, a]
    tol = 1e-12 * (1.0 + abs(tr))
    if m == 2:
        a, c, off = M[0, 0], M[1, 1], 0.5 * (M[0, 1] + M[1, 0])
        emin = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + off * off)
        if emin <= tol:
            return 0.0, False
        det = a * c - off * off
        x0 = (c * nn[0] - off * nn[1]) / det
        x1 = (a * nn[1] - off * nn[0]) / det
        return nn[0] * x0 + nn[1] * x1, True
    if np.linalg.eigvalsh(M)[0] <= tol:
        return 0.0, False
    x = np.linalg.solve(M, nn)
    return np.dot(nn, x), True


@numba.njit(cache=True)
def _generator(P, k, lin, cst, bvec, svec, Rt, DD, q, quad, out):
    """Fill ``out`` with the backward generator; return failing regime or -1."""
    ell = P.shape[0]
    for i in range(ell):
        acc = lin[i, k] * P[i] + cst[i, k]
        for j in range(ell):
            acc += q[i, j] * P[j]
        if quad:
            val, ok = _quad_form(P[i], bvec[i, k], svec[i, k], Rt[i, k], DD[i, k])
            if not ok:
                return i
            acc -= val
        out[i] = acc
    return -1


@numba.njit(cache=True)
def _integrate_backward(lin, cst, bvec, svec, Rt, DD, q, Gb, dt, nsub, quad):
    ell, N = lin.shape
    fine = np.empty((ell, N * nsub + 1))
    P = Gb.copy()
    fine[:, N * nsub] = P
    h = dt / nsub
    k1 = np.empty(ell)
    k2 = np.empty(ell)
    k3 = np.empty(ell)
    k4 = np.empty(ell)
    tmp = np.empty(ell)
    for k in range(N - 1, -1, -1):
        for s in range(nsub):
            bad = _generator(P, k, lin, cst, bvec, svec, Rt, DD, q, quad, k1)
            if bad < 0:
                tmp[:] = P + 0.5 * h * k1
                bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, quad, k2)
            if bad < 0:
                tmp[:] = P + 0.5 * h * k2
                bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, quad, k3)
            if bad < 0:
                tmp[:] = P + h * k3
                bad = _generator(tmp, k, lin, cst, bvec, svec, Rt, DD, q, quad, k4)
            if bad >= 0:
                return fine, k * nsub + nsub - s, bad
            P = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            fine[:, k * nsub + nsub - s - 1] = P
    return fine, -1, -1


def _run_backward(model: RegimeModel, tc: TildeCoefficients, substeps: int, quad: bool):
    fine, at, regime = _integrate_backward(
        tc.lin, tc.Qt, tc.bvec, tc.S, tc.Rt, tc.DtD, model.q,
        model.Gb.astype(float), model.grid.dt, int(substeps), bool(quad),
    )
    if at >= 0:
        raise RhatNotPositive(at * model.grid.dt / substeps, int(regime))
    return fine


# ---------------------------------------------------------------------------
# numpy evaluations (used for checks, interpolation and the public rhs)


def _generator_np(model: RegimeModel, tc: TildeCoefficients, k, P, quad: bool = True):
    """Backward generator at interval indices ``k`` (shape (J,)) for P of shape (ell, J)."""
    k = np.asarray(k)
    P = np.asarray(P, dtype=float)
    val = tc.lin[:, k] * P + tc.Qt[:, k] + model.q @ P
    if quad:
        nn = P[..., None] * tc.bvec[:, k] + tc.S[:, k]
        M = tc.Rt[:, k] + P[..., None, None] * tc.DtD[:, k]
        x = solve_spd(M, nn)
        val = val - np.einsum("...a,...a->...", nn, x)
    return val


def nhat(model: RegimeModel, t: float, P: float, i: int, Lam=None) -> np.ndarray:
    """Reduced N-hat: ``P (D'C + Bt) + D' Lam + S`` at ``(t, i)``."""
    tc = tilde_coefficients(model)
    k = model.grid.interval(t)
    out = P * tc.bvec[i, k] + tc.S[i, k]
    if Lam is not None:
        out = out + model.D[i, k].T @ np.asarray(Lam, dtype=float)
    return out


def rhat(model: RegimeModel, t: float, P: float, i: int) -> np.ndarray:
    """Reduced R-hat: ``Rt + P D'D`` at ``(t, i)``."""
    tc = tilde_coefficients(model)
    k = model.grid.interval(t)
    return tc.Rt[i, k] + P * tc.DtD[i, k]


def pbm_rhs(model: RegimeModel, t: float, P) -> np.ndarray:
    """Forward-time derivative ``dP/dt`` of the jump-free system at ``t``.

    Raises RhatNotPositive when R-hat fails to be SPD for some regime.
    """
    tc = tilde_coefficients(model)
    k = model.grid.interval(t)
    P = np.asarray(P, dtype=float).reshape(model.ell, 1)
    M = tc.Rt[:, [k]] + P[..., None, None] * tc.DtD[:, [k]]
    bad = np.flatnonzero(eig_min(M)[:, 0] <= 1e-12 * (1 + np.abs(np.trace(M, axis1=-2, axis2=-1)))[:, 0])
    if bad.size:
        raise RhatNotPositive(float(t), int(bad[0]))
    return -_generator_np(model, tc, np.array([k]), P)[:, 0]


# ---------------------------------------------------------------------------
# bounds


def comparison_upper_bound(model: RegimeModel, substeps: int = 10) -> np.ndarray:
    """Solve the linearised system (quadratic term dropped); node grid (ell, N+1)."""
    tc = tilde_coefficients(model)
    fine = _run_backward(model, tc, substeps, quad=False)
    return fine[:, ::substeps].copy()


def singular1_constant(model: RegimeModel) -> float:
    """Sup over grid and regimes of the linear-rate bound used for the Singular I floor."""
    DtD = np.einsum("iknm,iknp->ikmp", model.D, model.D)
    b = (np.einsum("iknm,ikn->ikm", model.D, model.C) + model.B
         - model.lam[..., None] * model.F)
    quad = np.einsum("ika,ika->ik", b, solve_spd(DtD, b))
    qii = np.diag(model.q)[:, None]
    rate = (2 * model.A - 2 * model.lam * model.E - model.lam
            + np.einsum("ikn,ikn->ik", model.C, model.C) + qii - quad)
    return float(np.abs(rate).max())


def singular2_constant(model: RegimeModel) -> float:
    if model.m != 1:
        raise ValueError("Singular II bound requires m = 1")
    F = model.F[..., 0]
    if np.any(F == 0):
        raise ZeroDivisionError("F vanishes on the grid")
    b = (np.einsum("iknm,ikn->ikm", model.D, model.C)[..., 0] + model.B[..., 0]
         - model.lam * F)
    qii = np.diag(model.q)[:, None]
    rate = (2 * model.A - 2 * model.lam * model.E - model.lam
            + np.einsum("ikn,ikn->ik", model.C, model.C) + qii
            - 2.0 / F * b * (model.E + 1.0))
    second = b ** 2 / (model.lam * model.Ga * F ** 2)
    return float(max(np.abs(rate).max(), second.max()))


def lower_bound_singular1(model: RegimeModel, case: AssumptionCase | None = None) -> float:
    """Uniform floor ``delta * exp(-c2 T)`` valid under Singular Case I."""
    case = case or classify_case(model)
    if not case.holds("SingularI"):
        raise ValueError("Singular Case I not certified for this model")
    c2 = singular1_constant(model)
    return case.satisfied["SingularI"] * np.exp(-c2 * model.grid.horizon)


def lower_bound_singular2(model: RegimeModel, case: AssumptionCase | None = None) -> float:
    """Uniform floor ``1 / ((1 + 1/delta) exp(c4 T) - 1)`` valid under Singular Case II'."""
    case = case or classify_case(model)
    if not case.holds("SingularIIPrime"):
        raise ValueError("Singular Case II' not certified for this model")
    c4 = singular2_constant(model)
    d = case.satisfied["SingularIIPrime"]
    return 1.0 / ((1.0 + 1.0 / d) * np.exp(c4 * model.grid.horizon) - 1.0)


# ---------------------------------------------------------------------------
# solution objects


@dataclass(frozen=True)
class RiccatiSolution:
    model: RegimeModel
    case: AssumptionCase
    substeps: int
    Pb: np.ndarray  # (ell, N+1) node values
    Pb_fine: np.ndarray  # (ell, N*substeps+1)
    upper: np.ndarray  # (ell, N+1) comparison bound
    lower_bounds: dict  # case name -> uniform floor
    rhat_eig_min: np.ndarray  # (ell, N+1)
    _dleft: np.ndarray = field(repr=False)
    _dright: np.ndarray = field(repr=False)

    @property
    def Lb(self) -> np.ndarray:
        # Brownian integrand of the jump-free system; zero for deterministic data
        return np.zeros_like(self.Pb)

    @property
    def lower_bound(self) -> float | None:
        return max(self.lower_bounds.values()) if self.lower_bounds else None

    @property
    def fine_nodes(self) -> np.ndarray:
        g = self.model.grid
        t = np.arange(g.n_steps * self.substeps + 1) * (g.dt / self.substeps)
        t[-1] = g.horizon
        return t

    def pb_at(self, t, i=None) -> np.ndarray:
        """Cubic Hermite interpolant of P^b at arbitrary times; shape (ell, *t.shape)."""
        t = np.asarray(t, dtype=float)
        g = self.model.grid
        h = g.dt / self.substeps
        nf = g.n_steps * self.substeps
        s = t / h
        r = np.rint(s)
        j = np.where(np.abs(s - r) <= 1e-9 * np.maximum(1.0, r), r - 1, np.floor(s))
        j = np.clip(j, 0, nf - 1).astype(np.int64)
        th = np.clip(t / h - j, 0.0, 1.0)
        h00 = (1 + 2 * th) * (1 - th) ** 2
        h10 = th * (1 - th) ** 2
        h01 = th ** 2 * (3 - 2 * th)
        h11 = th ** 2 * (th - 1)
        P = self.Pb_fine
        out = (h00 * P[:, j] + h10 * h * self._dleft[:, j]
               + h01 * P[:, j + 1] + h11 * h * self._dright[:, j])
        return out if i is None else out[i]


def solve_pbm(model: RegimeModel, substeps: int = 10, check_bounds: bool = True,
              case: AssumptionCase | None = None) -> RiccatiSolution:
    """Solve the jump-free coupled Riccati system backward from ``Gb``.

    Raises NoCertifiedCase, RhatNotPositive, or BoundViolation.
    """
    case = case or classify_case(model)
    tc = tilde_coefficients(model)
    fine = _run_backward(model, tc, substeps, quad=True)
    N = model.grid.n_steps
    Pb = fine[:, ::substeps].copy()
    upper = comparison_upper_bound(model, substeps)

    jf = np.arange(N * substeps)
    kf = jf // substeps
    dleft = -_generator_np(model, tc, kf, fine[:, :-1])
    dright = -_generator_np(model, tc, kf, fine[:, 1:])

    kn = np.maximum(np.arange(N + 1) - 1, 0)
    Mn = tc.Rt[:, kn] + Pb[..., None, None] * tc.DtD[:, kn]
    emin = eig_min(Mn)

    lower = {}
    if case.holds("SingularI"):
        lower["SingularI"] = lower_bound_singular1(model, case)
    if case.holds("SingularIIPrime"):
        lower["SingularIIPrime"] = lower_bound_singular2(model, case)

    sol = RiccatiSolution(model=model, case=case, substeps=int(substeps), Pb=Pb,
                          Pb_fine=fine, upper=upper, lower_bounds=lower,
                          rhat_eig_min=emin, _dleft=dleft, _dright=dright)
    if check_bounds:
        problems = bound_violations(sol)
        if problems:
            raise BoundViolation("; ".join(problems))
    return sol


def bound_violations(sol: RiccatiSolution) -> list[str]:
    out = []
    P = sol.Pb
    if P.min() < -BOUND_SLACK:
        out.append(f"P_b negative (min {P.min():.3g})")
    gap = (P - sol.upper).max()
    if gap > BOUND_SLACK:
        out.append(f"P_b exceeds comparison bound by {gap:.3g}")
    for name, lb in sol.lower_bounds.items():
        if P.min() < lb - BOUND_SLACK:
            out.append(f"P_b below {name} floor {lb:.6g} (min {P.min():.6g})")
    if sol.rhat_eig_min.min() <= 0:
        out.append("Rhat lost positive definiteness on the grid")
    return out


@dataclass(frozen=True)
class JumpSolution:
    """Solution of the system with jumps built from the jump-free one.

    ``P = P^b`` strictly before the jump time and ``Ga(tau)`` from it on;
    ``U = Ga - P^b`` up to the jump and 0 after; the Brownian part vanishes.
    """

    riccati: RiccatiSolution

    @property
    def model(self) -> RegimeModel:
        return self.riccati.model

    def _ga(self, t, i):
        return self.model.Ga[i, self.model.grid.interval(t)]

    def P(self, t, i, tau=np.inf):
        t = np.asarray(t, dtype=float)
        pb = self.riccati.pb_at(t, i)
        if np.isfinite(tau) and tau <= self.model.grid.horizon:
            return np.where(t < tau, pb, self._ga(tau, i))
        return pb

    def P_left(self, t, i, tau=np.inf):
        """Left limit ``P_{t-}``."""
        t = np.asarray(t, dtype=float)
        pb = self.riccati.pb_at(t, i)
        if np.isfinite(tau) and tau <= self.model.grid.horizon:
            return np.where(t <= tau, pb, self._ga(tau, i))
        return pb

    def U(self, t, i, tau=np.inf):
        t = np.asarray(t, dtype=float)
        u = self._ga(t, i) - self.riccati.pb_at(t, i)
        return np.where(t <= tau, u, 0.0)

    def Lam(self, t, i, tau=np.inf):
        return np.zeros(np.shape(t) + (self.model.n,))


def decompose(sol: RiccatiSolution) -> JumpSolution:
    return JumpSolution(sol)


def jump_bsde_residual(jsol: JumpSolution, tau: float, refine: int = 1) -> float:
    """Max nodewise residual of the integral form of the jump system along one jump time.

    The drift is integrated by the trapezoid rule on ``refine`` cells per grid
    interval (the interval containing ``tau`` is cut at ``tau``).  Equation ``i``
    uses the intensity of regime ``i`` in both drift and compensator.
    """
    from .control import _ncal, _rcal

    model = jsol.model
    g = model.grid
    T = g.horizon
    end = min(T, tau)
    nodes = g.nodes
    n_int = int(np.searchsorted(nodes, end, side="left"))  # intervals touching [0, end)
    n_int = max(n_int, 1) if end > 0 else 0
    r = int(refine)
    ell = model.ell
    q = model.q

    ks = np.repeat(np.arange(n_int), r + 1)
    frac = np.tile(np.linspace(0.0, 1.0, r + 1), n_int)
    lo = nodes[:n_int]
    hi = np.minimum(nodes[1:n_int + 1], end)
    s = np.repeat(lo, r + 1) + frac * np.repeat(hi - lo, r + 1)

    Pb = jsol.riccati.pb_at(s)  # (ell, J)
    integrand = np.empty_like(Pb)
    for i in range(ell):
        sl = model.slice(ks, i)
        U = sl.Ga - Pb[i]
        lam = sl.lam
        N_ = _ncal(sl, Pb[i], U, lam)
        R_ = _rcal(sl, Pb[i], U, lam)
        quad = np.einsum("ja,ja->j", N_, solve_spd(R_, N_))
        CtC = np.einsum("jn,jn->j", sl.C, sl.C)
        drift = ((2 * sl.A + CtC) * Pb[i] + lam * sl.E ** 2 * (Pb[i] + U)
                 + 2 * lam * sl.E * U + sl.Q + q[i] @ Pb - quad)
        integrand[i] = drift + lam * U
    vals = integrand.reshape(ell, n_int, r + 1)
    width = ((hi - lo) / r)[None, :]
    cell = 0.5 * (vals[..., :-1] + vals[..., 1:]).sum(axis=-1) * width  # (ell, n_int)
    tail = np.cumsum(cell[:, ::-1], axis=1)[:, ::-1]  # integral from t_k to end

    jumped = np.isfinite(tau) and tau <= T
    out = 0.0
    for i in range(ell):
        if jumped:
            ga_tau = model.Ga[i, g.interval(tau)]
            terminal = ga_tau
            u_tau = ga_tau - float(jsol.riccati.pb_at(tau, i))
        else:
            terminal = model.Gb[i]
            u_tau = 0.0
        rhs = terminal + tail[i] - u_tau
        lhs = jsol.riccati.pb_at(nodes[:n_int], i)
        out = max(out, float(np.abs(lhs - rhs).max(initial=0.0)))
    return out
