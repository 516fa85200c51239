"""Acceptance criteria as runnable checks on the built-in reference models.

Each ``criterion_*`` function returns a :class:`CriterionResult`.  Reports
contain only deterministic quantities (no timings), so two runs with the same
seed produce identical text; runtime limits still count toward pass/fail.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import reference as ref
from .control import build_policy, optimal_value
from .fileio import fmt
from .hedging import hedge_value, hedging_error_simulation, o_grid, solve_hedge
from .matutil import det_ratio_complement, schur_identity_residual
from .riccati import bound_violations, decompose, jump_bsde_residual, solve_pbm
from .simulate import (estimate_cost, mean_se, path_stream, perturb_policy, sample_jump_time,
                       sample_regime_path, simulate_batch, suboptimality_report)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = ", ".join(f"{k}={fmt(v) if isinstance(v, (float, np.floating)) else v}"
                         for k, v in self.details)
        return f"criterion {self.number:2d} [{status}] {self.title}: {body}"


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# Riccati oracles


def criterion_linear_oracle() -> CriterionResult:
    model = ref.linear_oracle()
    solve_pbm(model)  # load compiled kernels before timing
    sol, elapsed = _timed(solve_pbm, model)
    t = model.grid.nodes
    exact = model.Gb[0] * np.exp(2 * model.A[0, 0] * (model.grid.horizon - t))
    err = float(np.max(np.abs(sol.Pb[0] / exact - 1)))
    return CriterionResult(1, "linear Riccati oracle", err <= 1e-8 and elapsed < 1.0,
                           [("max_rel_err", err), ("tol", 1e-8)])


def criterion_coupled_linear() -> CriterionResult:
    model = ref.coupled_linear()
    sol = solve_pbm(model)
    exact = ref.coupled_linear_oracle(model)
    err = float(np.max(np.abs(sol.Pb / exact - 1)))
    return CriterionResult(2, "coupled linear expm oracle", err <= 1e-6,
                           [("max_rel_err", err), ("tol", 1e-6)])


def jump_only_reference(market, refine: int = 100) -> np.ndarray:
    """Fine fixed-step RK4 of the scalar jump-only Riccati ODE, sampled on grid nodes."""
    mu, F, lam = float(market.mu[0, 0, 0]), float(market.F[0, 0, 0]), float(market.lam[0, 0])
    grid = market.grid

    def dPdt(P):
        return lam * P - lam + (P * (mu - lam * F) + lam * F) ** 2 / (lam * F * F)

    h = grid.dt / refine
    out = np.empty(grid.n_steps + 1)
    P = 1.0
    out[-1] = P
    for k in range(grid.n_steps - 1, -1, -1):
        for _ in range(refine):
            k1 = dPdt(P)
            k2 = dPdt(P - 0.5 * h * k1)
            k3 = dPdt(P - 0.5 * h * k2)
            k4 = dPdt(P - h * k3)
            P -= h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = P
    return out


def criterion_mean_variance_oracles() -> CriterionResult:
    mv = ref.mv_market()
    sol = solve_hedge(mv)
    theta2 = float(mv.mu[0, 0, 0] ** 2 / mv.sigma[0, 0, 0, 0] ** 2)
    exact = np.exp(-theta2 * (mv.grid.horizon - mv.grid.nodes))
    err_mv = float(np.max(np.abs(sol.P[0] - exact)))
    jo = ref.jump_only_market()
    sol_j = solve_hedge(jo)
    err_j = float(np.max(np.abs(sol_j.P[0] - jump_only_reference(jo))))
    ok = err_mv <= 1e-6 and err_j <= 1e-6
    return CriterionResult(3, "mean-variance oracles", ok,
                           [("no_jump_err", err_mv), ("jump_only_err", err_j), ("tol", 1e-6)])


def criterion_bounds() -> CriterionResult:
    details, ok = [], True
    for make in (ref.standard_model, ref.singular1_model, ref.singular2_model, ref.jump_lq):
        model = make()
        sol = solve_pbm(model, check_bounds=False)
        problems = bound_violations(sol)
        ok &= not problems and sol.rhat_eig_min.min() > 0
        gap = float(np.max(sol.Pb - sol.upper))
        floor = sol.lower_bound if sol.lower_bound is not None else 0.0
        margin = float(sol.Pb.min() - floor)
        details += [(f"{model.name}.case", sol.case.case),
                    (f"{model.name}.max_P_minus_upper", gap),
                    (f"{model.name}.min_P_minus_floor", margin),
                    (f"{model.name}.min_rhat_eig", float(sol.rhat_eig_min.min()))]
    return CriterionResult(4, "a priori bounds", bool(ok), details)


# ---------------------------------------------------------------------------
# control and simulation


def criterion_value_identity(n_paths: int, seed: int) -> CriterionResult:
    model = ref.jump_lq()
    jsol = decompose(solve_pbm(model))
    v = optimal_value(jsol, model.x0, model.i0)
    est, elapsed = _timed(estimate_cost, model, build_policy(jsol), n_paths,
                          model.grid.horizon / 2000, seed)
    gap = abs(est.mean - v)
    tol = max(3 * est.se, 0.01 * abs(v))
    return CriterionResult(5, "value identity J(u*) = P0 x^2", gap <= tol and elapsed < 300,
                           [("P0x2", v), ("J_hat", est.mean), ("se", est.se),
                            ("gap", gap), ("tol", tol), ("paths", n_paths)])


def criterion_optimality(n_paths: int, seed: int, magnitude: float = 0.5,
                         count: int = 20) -> CriterionResult:
    model = ref.jump_lq()
    policy = build_policy(decompose(solve_pbm(model)))
    perts = [perturb_policy(policy, magnitude, path_stream(seed, j, domain=2))
             for j in range(count)]
    rep = suboptimality_report(model, policy, perts, n_paths, seed=seed + 1)
    z = rep.gaps / rep.se_pooled
    ok = bool(np.all(rep.gaps >= -2 * rep.se_pooled)) and rep.gaps.mean() > 0
    return CriterionResult(6, "optimality certificate", ok,
                           [("perturbations", count), ("magnitude", float(magnitude)),
                            ("min_gap_over_pooled_se", float(z.min())),
                            ("mean_gap", float(rep.gaps.mean())), ("paths", n_paths)])


def criterion_decomposition() -> CriterionResult:
    eps = np.finfo(float).eps
    model = ref.jump_lq()
    jsol = decompose(solve_pbm(model))
    t = model.grid.nodes
    worst = 0.0
    for tau in (0.1234567, 0.5, 0.87654321, np.inf):
        tt = t[t <= min(tau, model.grid.horizon)]
        for i in range(model.ell):
            ga = model.Ga[i, model.grid.interval(np.minimum(tt, tau))]
            lhs = jsol.P_left(tt, i, tau) + jsol.U(tt, i, tau)
            worst = max(worst, float(np.max(np.abs(lhs - ga) / np.maximum(1.0, np.abs(ga)))))
    ident_ok = worst <= 4 * eps

    residuals = {}
    for tau in (0.6180339887, np.inf):
        residuals[tau] = [jump_bsde_residual(decompose(solve_pbm(ref.jump_lq(n))), tau)
                          for n in (50, 100, 200, 400)]
    ratios = [r[j] / r[j + 1] for r in residuals.values() for j in range(3)]
    ok = ident_ok and min(ratios) >= 2.0
    return CriterionResult(7, "decomposition identity and residual order", ok,
                           [("identity_err", worst), ("residual_ratio_min", min(ratios)),
                            ("residual_dt50_jump", residuals[0.6180339887][0]),
                            ("residual_dt400_jump", residuals[0.6180339887][-1])])


def schur_instances(rng: np.random.Generator, count: int = 1000):
    for _ in range(count):
        m = int(rng.integers(1, 6))
        M = rng.standard_normal((m, m))
        A = M.T @ M + np.eye(m)
        e = rng.standard_normal(m)
        a = float(e @ np.linalg.solve(A, e) + rng.uniform(0.05, 2.0))
        yield a, e, A


def ratio_instances(rng: np.random.Generator, count: int = 1000):
    for _ in range(count):
        m = int(rng.integers(1, 6))
        r = int(rng.integers(max(m - 1, 0), m + 1))
        M = rng.standard_normal((r, m))
        R = M.T @ M
        w = float(rng.uniform(0.1, 3.0))
        F = rng.standard_normal(m)
        yield R, w, F


def criterion_schur(seed: int) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = max(schur_identity_residual(a, e, A) for a, e, A in schur_instances(rng))
    vals = np.array([det_ratio_complement(R, w, F) for R, w, F in ratio_instances(rng)])
    ok = worst <= 1e-10 and vals.min() >= 0 and vals.max() <= 1
    return CriterionResult(8, "determinant identity suite", bool(ok),
                           [("max_residual", worst), ("ratio_min", float(vals.min())),
                            ("ratio_max", float(vals.max()))])


# ---------------------------------------------------------------------------
# hedging


def criterion_hedge_trivial(n_paths: int, seed: int) -> CriterionResult:
    market = ref.constant_payoff_market()
    sol = solve_hedge(market)
    hv = hedge_value(sol, market.x0, market.i0, n_paths, seed)
    sim = hedging_error_simulation(sol, n_paths, seed=seed)
    ok = abs(hv.v_total) <= 1e-8 and sim.mean <= 1e-12
    return CriterionResult(9, "constant payoff hedge", ok,
                           [("v_total", hv.v_total), ("simulated_error", sim.mean)])


def criterion_hedge_value(n_paths: int, seed: int) -> CriterionResult:
    market = ref.generic_market()
    sol = solve_hedge(market)
    hv = hedge_value(sol, market.x0, market.i0, n_paths, seed)
    sim = hedging_error_simulation(sol, n_paths, seed=seed + 1)
    pooled = math.hypot(hv.se_total, sim.se)
    diff = abs(hv.v_total - sim.mean)
    o_min = float(o_grid(sol, fine=True).min())
    complete = solve_hedge(ref.jump_only_market())
    o_complete = float(np.abs(o_grid(complete, fine=True)).max())
    ok = diff <= 3 * pooled and o_min >= -1e-12 and o_complete <= 1e-12
    return CriterionResult(10, "hedging value cross-check", ok,
                           [("formula", hv.v_total), ("formula_se", hv.se_total),
                            ("simulated", sim.mean), ("simulated_se", sim.se),
                            ("diff_over_pooled_se", diff / pooled), ("O_min", o_min),
                            ("O_complete_max", o_complete)])


# ---------------------------------------------------------------------------
# samplers


def weak_order_ratios(n_paths: int, seed: int, divisors=(20, 40, 80, 160)):
    """Successive cost differences under dt halving with shared fine Brownian increments."""
    model = ref.weak_order_model()
    policy = build_policy(decompose(solve_pbm(model)))
    T = model.grid.horizon
    base = T / divisors[-1]
    costs = [simulate_batch(model, policy, n_paths, T / d, seed, base_dt=base).costs[0]
             for d in divisors]
    diffs = [mean_se(costs[j] - costs[j + 1]) for j in range(len(costs) - 1)]
    ratios = [diffs[j][0] / diffs[j + 1][0] for j in range(len(diffs) - 1)]
    return ratios, diffs


def criterion_samplers(n_paths: int, seed: int) -> CriterionResult:
    q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    hold = np.array([sample_regime_path(q, 0, np.inf, path_stream(seed, j, domain=3),
                                        max_events=1).times[0] for j in range(n_paths)])
    h_mean, h_se = mean_se(hold)
    hold_ok = abs(h_mean - 1.0) <= 3 * h_se

    c = 0.7
    surv_model = ref.linear_oracle().replace(lam=np.full((1, ref.N_STEPS), c))
    T = surv_model.grid.horizon
    taus = []
    for j in range(n_paths):
        g = path_stream(seed, j, domain=4)
        path = sample_regime_path(surv_model.q, 0, T, g)
        taus.append(sample_jump_time(surv_model, path, g))
    alive = np.array([tau is None or tau > T / 2 for tau in taus], dtype=float)
    p = math.exp(-c * T / 2)
    surv_se = math.sqrt(p * (1 - p) / n_paths)
    surv_ok = abs(alive.mean() - p) <= 3 * surv_se

    ratios, _ = weak_order_ratios(n_paths, seed)
    weak_ok = all(1.5 <= r <= 2.5 for r in ratios)
    return CriterionResult(11, "samplers and weak order", hold_ok and surv_ok and weak_ok,
                           [("holding_mean", h_mean), ("holding_se", h_se),
                            ("survival", float(alive.mean())), ("survival_exact", p),
                            ("weak_ratio_1", ratios[0]), ("weak_ratio_2", ratios[1])])


# ---------------------------------------------------------------------------
# suite


@dataclass
class SuiteReport:
    results: list
    header: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def text(self) -> str:
        n_ok = sum(r.passed for r in self.results)
        lines = list(self.header) + [r.line() for r in self.results]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} ({n_ok}/{len(self.results)})")
        return "\n".join(lines) + "\n"


def core_criteria(n_paths: int, seed: int, perturb_mag: float = 0.5,
                  perturb_count: int = 20, echo=None) -> list:
    runs = [
        lambda: criterion_linear_oracle(),
        lambda: criterion_coupled_linear(),
        lambda: criterion_mean_variance_oracles(),
        lambda: criterion_bounds(),
        lambda: criterion_value_identity(n_paths, seed),
        lambda: criterion_optimality(max(2, n_paths // 5), seed, perturb_mag, perturb_count),
        lambda: criterion_decomposition(),
        lambda: criterion_schur(seed),
        lambda: criterion_hedge_trivial(max(2, n_paths // 10), seed),
        lambda: criterion_hedge_value(n_paths, seed),
        lambda: criterion_samplers(n_paths, seed),
    ]
    out = []
    for run in runs:
        res = run()
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out


def criterion_reproducibility(n_paths: int, seed: int) -> CriterionResult:
    small = max(2000, n_paths // 50)
    texts = [SuiteReport(core_criteria(small, seed), []).text() for _ in range(2)]
    same = texts[0] == texts[1]
    return CriterionResult(12, "reproducibility", same,
                           [("paths", small), ("identical", "yes" if same else "no")])


def run_suite(n_paths: int = 100_000, seed: int = 2024, perturb_mag: float = 0.5,
              perturb_count: int = 20, reproducibility: bool = True, echo=None) -> SuiteReport:
    header = ["suite: jumplq verification", f"seed: {seed}", f"paths: {n_paths}"]
    results = core_criteria(n_paths, seed, perturb_mag, perturb_count, echo)
    if reproducibility:
        res = criterion_reproducibility(n_paths, seed)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return SuiteReport(results, header)
