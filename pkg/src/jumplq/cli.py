"""Command-line front end: ``jumplq {solve,simulate,hedge,verify}``.

Every failure exits nonzero after printing one line of the form
``jumplq-error[<kind>]: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import RcalNotPositive, build_policy, optimal_value
from .fileio import (ConfigError, ValidationError, fmt, load_model, write_csv,
                     write_policy_csv, write_report, write_riccati_csv, write_trace_csv)
from .hedging import (MarketModel, hedge_value, hedging_error_simulation, o_grid, solve_hedge,
                      to_lq)
from .matutil import NotPositiveDefinite
from .model import NoCertifiedCase, RegimeModel
from .riccati import BoundViolation, RhatNotPositive, decompose, solve_pbm
from .simulate import (SimulationError, estimate_cost, path_stream, perturb_policy,
                       simulate_path, suboptimality_report)
from .verify import run_suite

EXIT_CODES = {"parse": 2, "validation": 2, "no-case": 3, "solver": 4, "simulation": 5,
              "verify": 1}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Path | None
    out: Path
    seed: int = 0
    n_paths: int = 100_000
    dt_div: int | None = None
    scheme: str = "euler"
    perturb_mag: float = 0.5
    perturb_count: int = 0
    trace: int = 0

    def __post_init__(self):
        if self.command != "verify" and self.model is None:
            raise CliError("parse", f"command '{self.command}' needs --model")
        if self.model is not None and not Path(self.model).is_file():
            raise CliError("parse", f"model file not found: {self.model}")
        if self.n_paths < 2:
            raise CliError("parse", "--paths must be at least 2")
        if self.dt_div is not None and self.dt_div < 1:
            raise CliError("parse", "--dt-div must be a positive integer")
        if self.perturb_mag < 0 or self.perturb_count < 0 or self.trace < 0:
            raise CliError("parse", "perturbation and trace settings must be nonnegative")


def _load(config: RunConfig):
    try:
        return load_model(config.model)
    except ConfigError as exc:
        raise CliError("parse", str(exc)) from None
    except ValidationError as exc:
        raise CliError("validation", str(exc)) from None


def _lq(model) -> RegimeModel:
    if isinstance(model, MarketModel):
        try:
            return to_lq(model)
        except ValueError as exc:
            raise CliError("validation", str(exc)) from None
    return model


def _solve(model: RegimeModel):
    try:
        return solve_pbm(model)
    except NoCertifiedCase as exc:
        raise CliError("no-case", str(exc)) from None
    except (RhatNotPositive, BoundViolation, NotPositiveDefinite) as exc:
        raise CliError("solver", str(exc)) from None


def _dt(config: RunConfig, model: RegimeModel) -> float | None:
    if config.dt_div is None:
        return None
    if config.dt_div % model.grid.n_steps:
        raise CliError("parse", f"--dt-div {config.dt_div} must be a multiple of n_steps "
                                f"({model.grid.n_steps})")
    return model.grid.horizon / config.dt_div


def run_solve(config: RunConfig) -> int:
    model = _lq(_load(config))
    sol = _solve(model)
    try:
        policy = build_policy(decompose(sol))
    except RcalNotPositive as exc:
        raise CliError("solver", str(exc)) from None
    config.out.mkdir(parents=True, exist_ok=True)
    write_riccati_csv(config.out / "riccati.csv", sol)
    write_policy_csv(config.out / "policy.csv", policy)
    floors = sol.lower_bounds
    write_report(config.out / "solve_report.txt", [
        ("model", model.name),
        ("case", sol.case.case),
        ("delta", sol.case.delta),
        ("satisfied_cases", ",".join(sol.case.satisfied)),
        *[(f"lower_bound_{k}", v) for k, v in floors.items()],
        ("min_P_b", float(sol.Pb.min())),
        ("max_P_b_minus_upper", float(np.max(sol.Pb - sol.upper))),
        ("min_rhat_eig", float(sol.rhat_eig_min.min())),
        ("x0", model.x0),
        ("i0", model.i0 + 1),
        ("optimal_value", optimal_value(decompose(sol), model.x0, model.i0)),
    ])
    return 0


def run_simulate(config: RunConfig) -> int:
    model = _lq(_load(config))
    sol = _solve(model)
    jsol = decompose(sol)
    policy = build_policy(jsol)
    dt = _dt(config, model)
    v = optimal_value(jsol, model.x0, model.i0)
    try:
        est = estimate_cost(model, policy, config.n_paths, dt, config.seed, config.scheme)
        items = [("model", model.name), ("optimal_value", v), ("cost", (est.mean, est.se)),
                 ("gap", est.mean - v), ("paths", est.n_paths), ("dt", est.dt),
                 ("scheme", est.scheme), ("seed", config.seed)]
        if config.perturb_count:
            perts = [perturb_policy(policy, config.perturb_mag, path_stream(config.seed, j, 2))
                     for j in range(config.perturb_count)]
            rep = suboptimality_report(model, policy, perts, config.n_paths, dt,
                                       config.seed, config.scheme)
            items.append(("perturb_magnitude", float(config.perturb_mag)))
            for j, (g, sp, spool) in enumerate(zip(rep.gaps, rep.se_paired, rep.se_pooled)):
                items.append((f"perturbation_{j + 1}_gap", f"{fmt(g)} ± {fmt(spool)} "
                                                           f"(paired se {fmt(sp)})"))
        traces = [simulate_path(model, policy, config.scheme, dt, config.seed, j)
                  for j in range(min(config.trace, config.n_paths))]
    except (SimulationError, ValueError) as exc:
        raise CliError("simulation", str(exc)) from None
    config.out.mkdir(parents=True, exist_ok=True)
    write_report(config.out / "simulate_report.txt", items)
    if traces:
        write_trace_csv(config.out / "trace.csv", traces)
    return 0


def run_hedge(config: RunConfig) -> int:
    market = _load(config)
    if not isinstance(market, MarketModel):
        raise CliError("validation", "hedge needs a market model (fields mu, sigma, payoff)")
    lq = _lq(market)
    _solve(lq)  # surfaces certification and solver errors with their own exit codes
    sol = solve_hedge(market)
    dt = _dt(config, lq)
    try:
        hv = hedge_value(sol, market.x0, market.i0, config.n_paths, config.seed)
        sim = hedging_error_simulation(sol, config.n_paths, dt, config.seed + 1, config.scheme)
    except (SimulationError, ValueError) as exc:
        raise CliError("simulation", str(exc)) from None
    config.out.mkdir(parents=True, exist_ok=True)
    items = [("model", market.name), ("v0", hv.v0), ("v_mismatch", (hv.v_mismatch, hv.se_mismatch)),
             ("v_O", (hv.v_O, hv.se_O)), ("v_total", hv.v_total), ("v_total_se", hv.se_total),
             ("simulated_error", (sim.mean, sim.se)), ("paths", config.n_paths),
             ("dt", sim.dt), ("scheme", sim.scheme), ("seed", config.seed),
             ("min_O", float(o_grid(sol, fine=True).min()))]
    items += [(f"h0_regime_{i + 1}", float(sol.h[i, 0])) for i in range(market.ell)]
    write_report(config.out / "hedge_report.txt", items)
    t = lq.grid.nodes
    rows = [(t[k], i + 1, sol.P[i, k], sol.K[i, k], sol.h[i, k], sol.gamma[i, k])
            for k in range(t.size) for i in range(market.ell)]
    write_csv(config.out / "hedge_grids.csv", ["t", "regime", "P", "K", "h", "gamma"], rows)
    write_policy_csv(config.out / "hedge_policy.csv", sol.policy, with_offset=True)
    return 0


def run_verify(config: RunConfig, echo=print) -> int:
    report = run_suite(config.n_paths, config.seed, config.perturb_mag,
                       config.perturb_count or 20, echo=echo)
    config.out.mkdir(parents=True, exist_ok=True)
    (config.out / "verify_report.txt").write_text(report.text())
    if not report.passed:
        failed = [r.number for r in report.results if not r.passed]
        raise CliError("verify", f"criteria failed: {','.join(map(str, failed))}")
    return 0


COMMANDS = {"solve": run_solve, "simulate": run_simulate, "hedge": run_hedge,
            "verify": run_verify}


class _Parser(argparse.ArgumentParser):
    """Argument errors become a single-line diagnostic instead of a usage dump."""

    def error(self, message):
        raise CliError("parse", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jumplq", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--model", type=Path, help="model file (YAML)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths")
    p.add_argument("--dt-div", type=int, default=None,
                   help="simulation step T/D; D must be a multiple of n_steps")
    p.add_argument("--scheme", choices=["euler", "exact-log"], default="euler")
    p.add_argument("--perturb-mag", type=float, default=0.5)
    p.add_argument("--perturb-count", type=int, default=0)
    p.add_argument("--trace", type=int, default=0, help="dump traces of the first N paths")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        seed = args.seed if args.seed is not None else (2024 if args.command == "verify" else 0)
        config = RunConfig(args.command, args.model, args.out, seed, args.paths, args.dt_div,
                           args.scheme, args.perturb_mag, args.perturb_count, args.trace)
        return COMMANDS[args.command](config)
    except CliError as exc:
        msg = " ".join(str(exc).split())
        print(f"jumplq-error[{exc.kind}]: {msg}", file=sys.stderr)
        return EXIT_CODES[exc.kind]


if __name__ == "__main__":
    sys.exit(main())
