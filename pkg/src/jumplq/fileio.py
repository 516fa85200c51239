"""Model files (YAML) and result writers (CSV grids, key/value reports).

Floats are written with 17 significant digits so every value round-trips.
See README.md for the model file schema.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import yaml

from .control import FeedbackPolicy
from .hedging import MarketModel
from .model import RegimeModel, validate
from .riccati import RiccatiSolution

LQ_FIELDS = ("A", "B", "C", "D", "E", "F", "Q", "R", "Gb", "Ga", "lam")
MARKET_FIELDS = ("mu", "sigma", "F", "lam", "payoff")
COMMON_FIELDS = ("horizon", "n_steps", "m", "n", "ell", "generator", "x0", "i0", "name")


class ConfigError(ValueError):
    """Malformed model file: YAML syntax, unknown or ill-shaped fields."""


class ValidationError(ValueError):
    """Well-formed file whose model breaks a structural invariant."""


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return str(x)
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# reading


def load_model(path) -> RegimeModel | MarketModel:
    """Parse and validate a model file; market files are recognised by their fields."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read model file ({exc.strerror})") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: YAML syntax error: {problem}") from None
    return parse_model(doc, source=str(path))


def parse_model(doc, source: str = "<model>") -> RegimeModel | MarketModel:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    is_market = any(k in doc for k in ("mu", "sigma", "payoff"))
    allowed = set(COMMON_FIELDS) | set(MARKET_FIELDS if is_market else LQ_FIELDS)
    unknown = sorted(set(doc) - allowed - {"lambda"})
    if unknown:
        kind = "market" if is_market else "LQ"
        raise ConfigError(f"{source}: field '{unknown[0]}' is not part of the {kind} schema")
    for key in ("horizon", "n_steps", "generator"):
        if key not in doc:
            raise ConfigError(f"{source}: missing required field '{key}'")

    def number(key, default, kind=float):
        val = doc.get(key, default)
        try:
            out = kind(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{source}: field '{key}' must be a number, got {val!r}") from None
        if kind is int and out != val:
            raise ConfigError(f"{source}: field '{key}' must be an integer, got {val!r}")
        return out

    horizon = number("horizon", None)
    n_steps = number("n_steps", None, int)
    m = number("m", 1, int)
    n = number("n", 1, int)
    x0 = number("x0", 1.0)
    i0 = number("i0", 1, int)
    try:
        q = np.asarray(doc["generator"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: field 'generator' must be a numeric matrix") from None
    q = np.atleast_2d(q)
    ell = number("ell", q.shape[0], int)
    if q.shape != (ell, ell):
        raise ConfigError(f"{source}: field 'generator' has shape {q.shape}, expected {(ell, ell)}")
    if horizon <= 0 or n_steps < 1 or m < 1 or n < 1:
        raise ConfigError(f"{source}: horizon, n_steps, m and n must be positive")
    if "lambda" in doc:
        if "lam" in doc:
            raise ConfigError(f"{source}: give either 'lam' or 'lambda', not both")
        doc = dict(doc, lam=doc["lambda"])
    name = str(doc.get("name", Path(source).stem))
    kwargs = dict(m=m, n=n, x0=x0, i0=i0 - 1, name=name)

    def field(key, default):
        val = doc.get(key, default)
        if isinstance(val, list) and len(val) != ell:
            raise ConfigError(f"{source}: field '{key}' needs one entry per regime ({ell}), "
                              f"got {len(val)}")
        return val

    try:
        if is_market:
            payoff = doc.get("payoff", {}) or {}
            if not isinstance(payoff, dict) or set(payoff) - {"before", "after"}:
                raise ConfigError(f"{source}: field 'payoff' must map 'before'/'after' to values")
            model = MarketModel.build(
                horizon, n_steps, q, mu=field("mu", 0.0), sigma=field("sigma", 0.0),
                F=field("F", 0.0), lam=field("lam", 0.0), Hb=payoff.get("before", 0.0),
                Ha=payoff.get("after", 0.0), **kwargs)
        else:
            given = {k: field(k, None) for k in LQ_FIELDS if k in doc}
            model = RegimeModel.build(horizon, n_steps, q, **given, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None

    problems = model.violations() if is_market else validate(model)
    if not 0 <= model.i0 < ell:
        problems = list(problems) + [f"initial regime {i0} outside 1..{ell}"]
    if problems:
        raise ValidationError(f"{source}: " + "; ".join(dict.fromkeys(problems)))
    return model


# ---------------------------------------------------------------------------
# writing


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer, str)) else fmt(v) for v in row])


def write_report(path, items) -> None:
    """Key/value text: one ``key: value`` line per item; tuples print as ``mean ± se``."""
    lines = []
    for key, val in items:
        if isinstance(val, tuple):
            val = f"{fmt(val[0])} ± {fmt(val[1])}"
        elif isinstance(val, (float, np.floating)):
            val = fmt(val)
        lines.append(f"{key}: {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def riccati_rows(sol: RiccatiSolution):
    t = sol.model.grid.nodes
    for k in range(t.size):
        for i in range(sol.model.ell):
            yield (t[k], i + 1, sol.Pb[i, k], sol.upper[i, k], sol.rhat_eig_min[i, k])


def write_riccati_csv(path, sol: RiccatiSolution) -> None:
    write_csv(path, ["t", "regime", "P_b", "upper_bound", "rhat_eig_min"], riccati_rows(sol))


def write_policy_csv(path, policy: FeedbackPolicy, with_offset: bool = False) -> None:
    N, ell, m = policy.gain.shape
    t = policy.grid.nodes[:-1]
    header = ["t", "regime"] + [f"k_{a + 1}" for a in range(m)]
    if with_offset:
        header += [f"c_{a + 1}" for a in range(m)]
    rows = []
    for k in range(N):
        for i in range(ell):
            row = [t[k], i + 1, *policy.gain[k, i]]
            if with_offset:
                row += list(policy.offset[k, i])
            rows.append(row)
    write_csv(path, header, rows)


def write_trace_csv(path, paths) -> None:
    m = paths[0].u.shape[1] if paths else 1
    header = ["path", "t", "regime", "jumped", "X"] + [f"u_{a + 1}" for a in range(m)]
    rows = []
    for p in paths:
        for j in range(p.t.size):
            rows.append([p.index, p.t[j], int(p.regime[j]) + 1, int(p.jumped[j]), p.X[j], *p.u[j]])
    write_csv(path, header, rows)
