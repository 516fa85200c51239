"""Monte Carlo simulation of the controlled state on the random horizon ``T ^ tau``.

Every path owns a counter-based stream (Philox keyed by the seed, counter by
the path index), so results do not depend on blocking or worker count.  Per
path the draws happen in a fixed order: the regime chain (an exponential then
a uniform per switch), one uniform for the jump clock, then the Brownian
normals for the whole horizon.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .control import FeedbackPolicy
from .model import RegimeModel

SCHEMES = {"euler": 0, "exact-log": 1}
BLOCK = 1024


class SimulationError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# streams and samplers


@lru_cache(maxsize=64)
def _stream_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def path_stream(seed: int, index: int, domain: int = 0) -> np.random.Generator:
    """Independent generator for path ``index``; ``domain`` separates unrelated uses."""
    key = _stream_key(int(seed))
    return np.random.Generator(np.random.Philox(key=key, counter=[0, int(domain), int(index), 0]))


@dataclass(frozen=True)
class RegimePath:
    """Right-continuous regime path on ``[0, T]``: ``regimes[j]`` holds from ``times[j]``."""

    i0: int
    times: np.ndarray
    regimes: np.ndarray
    horizon: float

    def regime_at(self, t: float) -> int:
        j = np.searchsorted(self.times, t, side="right")
        return self.i0 if j == 0 else int(self.regimes[j - 1])


def sample_regime_path(q: np.ndarray, i0: int, horizon: float,
                       stream: np.random.Generator, max_events: int | None = None) -> RegimePath:
    """Exact chain sampling: exponential holding times, then a categorical jump.

    ``max_events`` stops the path after that many switches (used by sampler tests).
    """
    q = np.asarray(q, dtype=float)
    t, r = 0.0, int(i0)
    times, regimes = [], []
    while max_events is None or len(times) < max_events:
        rate = -q[r, r]
        if rate <= 0:
            break
        t += stream.exponential(1.0 / rate)
        if t > horizon:
            break
        w = np.clip(q[r], 0.0, None)
        w[r] = 0.0
        cdf = np.cumsum(w) / rate
        r = int(min(np.searchsorted(cdf, stream.random(), side="right"), q.shape[0] - 1))
        times.append(t)
        regimes.append(r)
    return RegimePath(int(i0), np.array(times, dtype=float), np.array(regimes, dtype=np.int64),
                      float(horizon))


@numba.njit(cache=True)
def _jump_time(u, lam, dt, horizon, sw_t, sw_r, nev, i0):
    """First time the cumulative hazard along the regime path reaches ``-log u``."""
    target = -math.log(u)
    acc = 0.0
    r = i0
    p = 0
    N = lam.shape[1]
    for k in range(N):
        s = k * dt
        b = horizon if k == N - 1 else (k + 1) * dt
        while True:
            nxt = sw_t[p] if p < nev else np.inf
            e = min(b, nxt)
            rate = lam[r, k]
            inc = rate * (e - s)
            if rate > 0 and acc + inc >= target:
                return s + (target - acc) / rate
            acc += inc
            if nxt <= b:
                r = sw_r[p]
                p += 1
                s = nxt
            else:
                break
    return np.inf


def sample_jump_time(model: RegimeModel, path: RegimePath, stream: np.random.Generator):
    """Jump time by exact inversion of the cumulative intensity, or None if beyond T."""
    u = stream.random()
    tau = _jump_time(u, model.lam, model.grid.dt, model.grid.horizon, path.times,
                     path.regimes, len(path.times), path.i0)
    return None if not np.isfinite(tau) else float(tau)


# ---------------------------------------------------------------------------
# path kernel


@numba.njit(cache=True)
def _run_path(x0, i0, horizon, dtm, sub, agg, A, B, C, D, E, F, Q, R, lam, Ga, Gb,
              gain, offset, tgt_b, tgt_a, scheme, sw_t, sw_r, nev, tau, Z,
              record, rec_t, rec_r, rec_j, rec_x, rec_u):
    N = A.shape[1]
    m = B.shape[2]
    n = C.shape[2]
    h = dtm / sub
    hb = h / agg
    sqhb = math.sqrt(hb)
    nsteps = N * sub
    X = x0
    r = i0
    p = 0
    run = 0.0
    u = np.empty(m)
    dW = np.empty(n)
    nrec = 0
    for s in range(nsteps):
        t = s * h
        k = s // sub
        t_next = horizon if s == nsteps - 1 else (s + 1) * h
        while p < nev and sw_t[p] <= t:
            r = sw_r[p]
            p += 1
        for a in range(m):
            u[a] = -gain[k, r, a] * X + offset[k, r, a]
        if record:
            rec_t[nrec] = t
            rec_r[nrec] = r
            rec_j[nrec] = 0
            rec_x[nrec] = X
            rec_u[nrec] = u
            nrec += 1
        cut = tau <= t_next
        L = tau - t if cut else t_next - t
        base = s * agg
        for c in range(n):
            dW[c] = 0.0
        if not cut and s < nsteps - 1:
            for j in range(agg):
                for c in range(n):
                    dW[c] += Z[base + j, c]
            for c in range(n):
                dW[c] *= sqhb
        else:
            rem = L
            for j in range(agg):
                seg = min(hb, rem)
                if seg <= 0.0:
                    break
                sq = math.sqrt(seg)
                for c in range(n):
                    dW[c] += Z[base + j, c] * sq
                rem -= seg
        # running cost, left point
        uRu = 0.0
        for a in range(m):
            for b in range(m):
                uRu += u[a] * R[r, k, a, b] * u[b]
        run += (Q[r, k] * X * X + uRu) * L
        lk = lam[r, k]
        if scheme == 0:
            drift = A[r, k] * X
            jt = E[r, k] * X
            for a in range(m):
                drift += u[a] * B[r, k, a]
                jt += u[a] * F[r, k, a]
            diff = 0.0
            for c in range(n):
                vol = C[r, k, c] * X
                for a in range(m):
                    vol += D[r, k, c, a] * u[a]
                diff += vol * dW[c]
            X = X + drift * L + diff - jt * lk * L
        else:
            ac = A[r, k]
            ec = E[r, k]
            for a in range(m):
                ac -= B[r, k, a] * gain[k, r, a]
                ec -= F[r, k, a] * gain[k, r, a]
            expo = 0.0
            c2 = 0.0
            for c in range(n):
                cc = C[r, k, c]
                for a in range(m):
                    cc -= D[r, k, c, a] * gain[k, r, a]
                c2 += cc * cc
                expo += cc * dW[c]
            X = X * math.exp((ac - lk * ec - 0.5 * c2) * L + expo)
        if cut:
            while p < nev and sw_t[p] <= tau:
                r = sw_r[p]
                p += 1
            jt = E[r, k] * X
            for a in range(m):
                u[a] = -gain[k, r, a] * X + offset[k, r, a]
                jt += u[a] * F[r, k, a]
            X = X + jt
            dev = X - tgt_a[r, k]
            if record:
                rec_t[nrec] = tau
                rec_r[nrec] = r
                rec_j[nrec] = 1
                rec_x[nrec] = X
                for a in range(m):
                    rec_u[nrec, a] = 0.0
                nrec += 1
            ok = math.isfinite(X)
            return run + Ga[r, k] * dev * dev, X, True, r, ok, nrec
        if not math.isfinite(X):
            return run, X, False, r, False, nrec
    while p < nev and sw_t[p] <= horizon:
        r = sw_r[p]
        p += 1
    dev = X - tgt_b[r]
    if record:
        rec_t[nrec] = horizon
        rec_r[nrec] = r
        rec_j[nrec] = 0
        rec_x[nrec] = X
        for a in range(m):
            rec_u[nrec, a] = -gain[N - 1, r, a] * X + offset[N - 1, r, a]
        nrec += 1
    return run + Gb[r] * dev * dev, X, False, r, True, nrec


@numba.njit(cache=True, nogil=True)
def _run_block(x0, i0, horizon, dtm, sub, agg, A, B, C, D, E, F, Q, R, lam, Ga, Gb,
               gains, offsets, tgt_b, tgt_a, scheme, sw_t, sw_r, nev, u_jump, Z,
               cost, x_end, jumped, taus, r_end):
    """Run every policy in ``gains``/``offsets`` on every path of the block."""
    npol = gains.shape[0]
    nb = Z.shape[0]
    dummy_f = np.empty(1)
    dummy_i = np.empty(1, dtype=np.int64)
    dummy_u = np.empty((1, B.shape[2]))
    for b in range(nb):
        tau = _jump_time(u_jump[b], lam, dtm, horizon, sw_t[b], sw_r[b], nev[b], i0)
        taus[b] = tau
        for pi in range(npol):
            c, xe, jp, re, ok, _ = _run_path(
                x0, i0, horizon, dtm, sub, agg, A, B, C, D, E, F, Q, R, lam, Ga, Gb,
                gains[pi], offsets[pi], tgt_b, tgt_a, scheme, sw_t[b], sw_r[b], nev[b],
                tau, Z[b], False, dummy_f, dummy_i, dummy_i, dummy_f, dummy_u)
            if not ok:
                return b
            cost[pi, b] = c
            x_end[pi, b] = xe
            jumped[pi, b] = jp
            r_end[pi, b] = re
    return -1


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class SimulationSetup:
    """Step sizes for one run: ``sub`` steps per grid interval, ``agg`` normals per step."""

    sub: int
    agg: int
    dt: float

    @classmethod
    def make(cls, model: RegimeModel, dt: float | None = None,
             base_dt: float | None = None) -> "SimulationSetup":
        dtm = model.grid.dt
        dt = dtm if dt is None else float(dt)
        sub = int(round(dtm / dt))
        if sub < 1 or abs(sub * dt - dtm) > 1e-9 * dtm:
            raise ValueError(f"dt={dt} must divide the grid interval {dtm}")
        agg = 1
        if base_dt is not None:
            agg = int(round(dt / base_dt))
            if agg < 1 or abs(agg * base_dt - dt) > 1e-9 * dt:
                raise ValueError(f"base_dt={base_dt} must divide dt={dt}")
        return cls(sub, agg, dtm / sub)


@dataclass(frozen=True)
class SimulationBatch:
    costs: np.ndarray  # (n_policies, n_paths)
    x_end: np.ndarray
    jumped: np.ndarray
    tau: np.ndarray  # (n_paths,), inf when no jump before T
    regime_end: np.ndarray
    setup: SimulationSetup


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    se: float
    n_paths: int
    scheme: str
    dt: float


def _draw_block(model: RegimeModel, seed: int, start: int, stop: int, nbase: int):
    nb = stop - start
    paths, us, Z = [], np.empty(nb), np.empty((nb, nbase, model.n))
    for b in range(nb):
        g = path_stream(seed, start + b)
        paths.append(sample_regime_path(model.q, model.i0, model.grid.horizon, g))
        us[b] = g.random()
        Z[b] = g.standard_normal((nbase, model.n))
    maxev = max(1, max(len(p.times) for p in paths))
    sw_t = np.full((nb, maxev), np.inf)
    sw_r = np.zeros((nb, maxev), dtype=np.int64)
    nev = np.zeros(nb, dtype=np.int64)
    for b, p in enumerate(paths):
        nev[b] = len(p.times)
        sw_t[b, :nev[b]] = p.times
        sw_r[b, :nev[b]] = p.regimes
    return sw_t, sw_r, nev, us, Z


def _targets(model: RegimeModel, targets):
    if targets is None:
        return np.zeros(model.ell), np.zeros((model.ell, model.grid.n_steps))
    tb, ta = targets
    return (np.broadcast_to(np.asarray(tb, dtype=float), (model.ell,)).copy(),
            np.broadcast_to(np.asarray(ta, dtype=float), (model.ell, model.grid.n_steps)).copy())


def simulate_batch(model: RegimeModel, policies, n_paths: int, dt: float | None = None,
                   seed: int = 0, scheme: str = "euler", base_dt: float | None = None,
                   targets=None, workers: int = 1) -> SimulationBatch:
    """Simulate ``n_paths`` paths under each policy with common random numbers.

    ``targets=(Hb, Ha)`` replaces the terminal cost ``G X^2`` by ``G (X - H)^2``.
    """
    if isinstance(policies, FeedbackPolicy):
        policies = [policies]
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    if scheme == "exact-log" and not all(p.is_linear for p in policies):
        raise ValueError("exact-log scheme requires linear feedback (zero offset)")
    n_paths = int(n_paths)
    setup = SimulationSetup.make(model, dt, base_dt)
    gains = np.ascontiguousarray(np.stack([p.gain for p in policies]))
    offsets = np.ascontiguousarray(np.stack([p.offset for p in policies]))
    tgt_b, tgt_a = _targets(model, targets)
    nbase = model.grid.n_steps * setup.sub * setup.agg
    npol = len(policies)
    cost = np.empty((npol, n_paths))
    x_end = np.empty((npol, n_paths))
    jumped = np.zeros((npol, n_paths), dtype=np.bool_)
    taus = np.empty(n_paths)
    r_end = np.zeros((npol, n_paths), dtype=np.int64)

    def run(start: int):
        stop = min(start + BLOCK, n_paths)
        sw_t, sw_r, nev, us, Z = _draw_block(model, seed, start, stop, nbase)
        sl = slice(start, stop)
        bad = _run_block(
            model.x0, model.i0, model.grid.horizon, model.grid.dt, setup.sub, setup.agg,
            model.A, model.B, model.C, model.D, model.E, model.F, model.Q, model.R,
            model.lam, model.Ga, model.Gb, gains, offsets, tgt_b, tgt_a, SCHEMES[scheme],
            sw_t, sw_r, nev, us, Z, cost[:, sl], x_end[:, sl], jumped[:, sl], taus[sl],
            r_end[:, sl])
        if bad >= 0:
            raise SimulationError(f"non-finite state on path {start + bad}")

    starts = range(0, n_paths, BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, starts))
    else:
        for s in starts:
            run(s)
    return SimulationBatch(cost, x_end, jumped, taus, r_end, setup)


def mean_se(values: np.ndarray) -> tuple[float, float]:
    """Mean and standard error with order-fixed compensated summation."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(v) / n
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def estimate_cost(model: RegimeModel, policy: FeedbackPolicy, n_paths: int = 100_000,
                  dt: float | None = None, seed: int = 0, scheme: str = "euler",
                  base_dt: float | None = None, targets=None, workers: int = 1) -> CostEstimate:
    batch = simulate_batch(model, policy, n_paths, dt, seed, scheme, base_dt, targets, workers)
    mean, se = mean_se(batch.costs[0])
    return CostEstimate(mean, se, int(n_paths), scheme, batch.setup.dt)


@dataclass(frozen=True)
class SimulatedPath:
    index: int
    seed: int
    regime_path: RegimePath
    tau: float  # inf when no jump before T
    t: np.ndarray
    regime: np.ndarray
    jumped: np.ndarray
    X: np.ndarray
    u: np.ndarray
    cost: float


def simulate_path(model: RegimeModel, policy: FeedbackPolicy, scheme: str = "euler",
                  dt: float | None = None, seed: int = 0, index: int = 0,
                  targets=None) -> SimulatedPath:
    """One recorded path using the same stream as path ``index`` of a batch run."""
    setup = SimulationSetup.make(model, dt)
    nbase = model.grid.n_steps * setup.sub
    g = path_stream(seed, index)
    rp = sample_regime_path(model.q, model.i0, model.grid.horizon, g)
    u = g.random()
    Z = g.standard_normal((nbase, model.n))
    tau = _jump_time(u, model.lam, model.grid.dt, model.grid.horizon, rp.times, rp.regimes,
                     len(rp.times), rp.i0)
    tgt_b, tgt_a = _targets(model, targets)
    size = nbase + 2
    rt, rr, rj = np.empty(size), np.empty(size, dtype=np.int64), np.empty(size, dtype=np.int64)
    rx, ru = np.empty(size), np.empty((size, model.m))
    c, _, _, _, ok, nrec = _run_path(
        model.x0, model.i0, model.grid.horizon, model.grid.dt, setup.sub, 1,
        model.A, model.B, model.C, model.D, model.E, model.F, model.Q, model.R,
        model.lam, model.Ga, model.Gb, policy.gain, policy.offset, tgt_b, tgt_a,
        SCHEMES[scheme], rp.times if len(rp.times) else np.full(1, np.inf),
        rp.regimes if len(rp.regimes) else np.zeros(1, dtype=np.int64), len(rp.times), tau,
        Z, True, rt, rr, rj, rx, ru)
    if not ok:
        raise SimulationError(f"non-finite state on path {index}")
    return SimulatedPath(index, seed, rp, tau, rt[:nrec], rr[:nrec], rj[:nrec].astype(bool),
                         rx[:nrec], ru[:nrec], c)


# ---------------------------------------------------------------------------
# perturbation harness


def perturb_policy(policy: FeedbackPolicy, magnitude: float,
                   stream: np.random.Generator) -> FeedbackPolicy:
    """Add a smooth bounded perturbation ``magnitude (c0 + c1 cos(pi t/T)) / 2`` to the gain.

    One pair ``(c0, c1)`` is drawn uniformly on [-1, 1] per regime and control
    component, so every perturbed gain stays within ``magnitude`` of the original.
    """
    g = policy.grid
    N, ell, m = policy.gain.shape
    c = stream.uniform(-1.0, 1.0, size=(2, ell, m))
    mid = (g.nodes[:-1] + 0.5 * g.dt) / g.horizon
    shape = np.cos(np.pi * mid)[:, None, None]
    delta = 0.5 * magnitude * (c[0][None] + c[1][None] * shape)
    return FeedbackPolicy(g, policy.gain + delta, policy.offset.copy(),
                          source=f"perturbed({magnitude}):{policy.source}")


@dataclass(frozen=True)
class SuboptimalityReport:
    base: CostEstimate
    gaps: np.ndarray  # mean of J(perturbed) - J(base) per perturbation
    se_paired: np.ndarray
    se_pooled: np.ndarray


def suboptimality_report(model: RegimeModel, policy: FeedbackPolicy, perturbations,
                         n_paths: int, dt: float | None = None, seed: int = 0,
                         scheme: str = "euler") -> SuboptimalityReport:
    """Cost gaps of perturbed policies against ``policy`` under common random numbers."""
    perturbations = list(perturbations)
    batch = simulate_batch(model, [policy] + perturbations, n_paths, dt, seed, scheme)
    base_mean, base_se = mean_se(batch.costs[0])
    gaps, sp, spool = [], [], []
    for j in range(1, batch.costs.shape[0]):
        g, s = mean_se(batch.costs[j] - batch.costs[0])
        _, sj = mean_se(batch.costs[j])
        gaps.append(g)
        sp.append(s)
        spool.append(math.hypot(base_se, sj))
    return SuboptimalityReport(
        base=CostEstimate(base_mean, base_se, int(n_paths), scheme, batch.setup.dt),
        gaps=np.array(gaps), se_paired=np.array(sp), se_pooled=np.array(spool))
