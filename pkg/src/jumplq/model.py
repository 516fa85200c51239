"""Problem data for regime-switching LQ control on a random horizon.

Coefficients are deterministic per regime and piecewise constant on a uniform
time grid.  Internally every time-dependent coefficient is stored as an array
with leading axes ``(ell, n_steps)``; entry ``[i, k]`` is the value on the
interval ``(t_k, t_{k+1}]`` (left-continuous convention, the value at ``t=0``
is the first interval's value).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matutil import eig_min

CASE_ORDER = ("SingularIIPrime", "SingularI", "Standard", "SingularII")


class NoCertifiedCase(ValueError):
    """None of the positivity cases holds for the model."""


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def interval(self, t):
        """Index of the interval ``(t_k, t_{k+1}]`` containing ``t`` (0 maps to 0)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12 * self.horizon) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError(f"time outside [0, {self.horizon}]")
        s = t / self.dt
        r = np.rint(s)
        on_node = np.abs(s - r) <= 1e-9 * np.maximum(1.0, r)
        k = np.where(on_node, r - 1, np.floor(s)).astype(np.int64)
        k = np.clip(k, 0, self.n_steps - 1)
        return int(k) if k.ndim == 0 else k


@dataclass(frozen=True)
class MarkovGenerator:
    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        object.__setattr__(self, "q", q)

    @property
    def ell(self) -> int:
        return self.q.shape[0]

    def violations(self) -> list[str]:
        q = self.q
        out = []
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            return [f"generator must be square, got shape {q.shape}"]
        if not np.all(np.isfinite(q)):
            out.append("generator has non-finite entries")
        for i in range(q.shape[0]):
            off = np.delete(q[i], i)
            if np.any(off < 0):
                out.append(f"generator row {i + 1} has negative off-diagonal rate")
            s = q[i].sum()
            if abs(s) > 1e-12:
                out.append(f"generator row {i + 1} sum != 0 (got {s:.6g})")
        return out


@dataclass(frozen=True)
class CoefficientSlice:
    """Coefficient values at one (or a batch of) (interval, regime) pairs."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Ga: np.ndarray
    lam: np.ndarray


# name -> per-regime trailing shape builder (m, n) -> shape
_SHAPES = {
    "A": lambda m, n: (),
    "B": lambda m, n: (m,),
    "C": lambda m, n: (n,),
    "D": lambda m, n: (n, m),
    "E": lambda m, n: (),
    "F": lambda m, n: (m,),
    "Q": lambda m, n: (),
    "R": lambda m, n: (m, m),
    "Ga": lambda m, n: (),
    "lam": lambda m, n: (),
}


def expand_coefficient(name: str, value, ell: int, n_steps: int, shape: tuple) -> np.ndarray:
    """Broadcast a user coefficient to shape ``(ell, n_steps, *shape)``.

    Accepted forms: one constant of ``shape`` for every regime; the full array;
    or a length-``ell`` sequence whose entries are either constants of
    ``shape`` or time series of shape ``(n_steps, *shape)``.
    """
    full = (ell, n_steps) + tuple(shape)
    arr = np.asarray(value, dtype=float) if not _is_ragged(value) else None
    if arr is not None:
        if arr.shape == tuple(shape):
            return np.broadcast_to(arr, full).copy()
        if arr.shape == full:
            return arr.copy()
    if len(value) != ell:
        raise ValueError(f"coefficient {name}: expected {ell} per-regime entries")
    out = np.empty(full)
    for i, entry in enumerate(value):
        e = np.asarray(entry, dtype=float)
        if e.ndim == 0 and shape:
            e = _scalar_fill(name, float(e), tuple(shape))
        if e.shape == tuple(shape):
            out[i] = e
        elif e.shape == (n_steps,) + tuple(shape):
            out[i] = e
        else:
            raise ValueError(
                f"coefficient {name}, regime {i + 1}: shape {e.shape} is neither "
                f"{tuple(shape)} nor {(n_steps,) + tuple(shape)}"
            )
    return out


def _is_ragged(value) -> bool:
    if isinstance(value, np.ndarray) or np.isscalar(value):
        return False
    try:
        np.asarray(value, dtype=float)
    except ValueError:
        return True
    return False


@dataclass(frozen=True)
class RegimeModel:
    """All LQ data: coefficient grids, generator, horizon, initial condition.

    Time-dependent arrays have shape ``(ell, n_steps, ...)``; ``Gb`` has shape
    ``(ell,)``.  Regimes are indexed from 0 in the Python API.
    """

    grid: TimeGrid
    generator: MarkovGenerator
    m: int
    n: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Gb: np.ndarray
    Ga: np.ndarray
    lam: np.ndarray
    x0: float = 1.0
    i0: int = 0
    name: str = field(default="model", compare=False)

    @classmethod
    def build(
        cls,
        horizon: float,
        n_steps: int,
        generator,
        *,
        m: int = 1,
        n: int = 1,
        A=0.0,
        B=0.0,
        C=0.0,
        D=0.0,
        E=0.0,
        F=0.0,
        Q=0.0,
        R=0.0,
        Gb=1.0,
        Ga=1.0,
        lam=0.0,
        x0: float = 1.0,
        i0: int = 0,
        name: str = "model",
    ) -> "RegimeModel":
        gen = generator if isinstance(generator, MarkovGenerator) else MarkovGenerator(generator)
        ell = gen.ell
        grid = TimeGrid(float(horizon), int(n_steps))
        given = dict(A=A, B=B, C=C, D=D, E=E, F=F, Q=Q, R=R, Ga=Ga, lam=lam)
        coeffs = {}
        for key, val in given.items():
            shape = _SHAPES[key](m, n)
            if np.isscalar(val) and shape:
                # scalar shorthand for vectors/matrices: fill (R, D'D use identity-like fill)
                val = _scalar_fill(key, float(val), shape)
            coeffs[key] = expand_coefficient(key, val, ell, grid.n_steps, shape)
        gb = np.asarray(Gb, dtype=float)
        gb = np.broadcast_to(gb, (ell,)).copy() if gb.ndim == 0 else gb.reshape(ell).copy()
        return cls(grid=grid, generator=gen, m=int(m), n=int(n), Gb=gb,
                   x0=float(x0), i0=int(i0), name=name, **coeffs)

    @property
    def ell(self) -> int:
        return self.generator.ell

    @property
    def q(self) -> np.ndarray:
        return self.generator.q

    def slice(self, k, i) -> CoefficientSlice:
        """Coefficients on interval(s) ``k`` in regime(s) ``i`` (broadcasting indices)."""
        return CoefficientSlice(
            A=self.A[i, k], B=self.B[i, k], C=self.C[i, k], D=self.D[i, k],
            E=self.E[i, k], F=self.F[i, k], Q=self.Q[i, k], R=self.R[i, k],
            Ga=self.Ga[i, k], lam=self.lam[i, k],
        )

    def replace(self, **changes) -> "RegimeModel":
        from dataclasses import replace
        return replace(self, **changes)


def _scalar_fill(key: str, v: float, shape: tuple) -> np.ndarray:
    if key == "R" or (key == "D" and shape[0] == shape[1]):
        return v * np.eye(shape[0])
    if key == "D":
        out = np.zeros(shape)
        k = min(shape)
        out[np.arange(k), np.arange(k)] = v
        return out
    return np.full(shape, v)


def evaluate(model: RegimeModel, t: float, i: int) -> CoefficientSlice:
    """Coefficient values at time ``t`` in regime ``i`` (left-continuous)."""
    if not 0 <= i < model.ell:
        raise ValueError(f"regime {i} outside 0..{model.ell - 1}")
    return model.slice(model.grid.interval(t), i)


def validate(model: RegimeModel) -> list[str]:
    """Return every structural violation; an empty list means well-formed."""
    out = list(model.generator.violations())
    ell, N, m, n = model.ell, model.grid.n_steps, model.m, model.n
    for key, shp in _SHAPES.items():
        arr = getattr(model, key)
        want = (ell, N) + shp(m, n)
        if arr.shape != want:
            out.append(f"{key} has shape {arr.shape}, expected {want}")
            continue
        if not np.all(np.isfinite(arr)):
            out.append(f"{key} has non-finite values")
    if model.Gb.shape != (ell,):
        out.append(f"Gb has shape {model.Gb.shape}, expected {(ell,)}")
    elif not np.all(np.isfinite(model.Gb)):
        out.append("Gb has non-finite values")
    if model.R.shape == (ell, N, m, m):
        for i in range(ell):
            R = model.R[i]
            asym = np.abs(R - np.swapaxes(R, -1, -2)).max(initial=0.0)
            if asym > 1e-12 * max(1.0, np.abs(R).max(initial=0.0)):
                out.append(f"R not symmetric, regime {i + 1}")
    if model.lam.shape == (ell, N):
        for i in range(ell):
            if np.any(model.lam[i] < 0):
                out.append(f"lambda negative, regime {i + 1}")
    if not 0 <= model.i0 < ell:
        out.append(f"initial regime {model.i0 + 1} outside 1..{ell}")
    if not np.isfinite(model.x0):
        out.append("x0 not finite")
    return out


@dataclass(frozen=True)
class AssumptionCase:
    """Certified positivity case; ``satisfied`` maps each holding case to its delta."""

    case: str
    delta: float
    satisfied: dict

    def holds(self, name: str) -> bool:
        return name in self.satisfied


def _psd_min(M: np.ndarray) -> float:
    """Smallest eigenvalue over a stack of symmetric matrices."""
    return float(np.min(eig_min(M)))


def case_quantities(model: RegimeModel) -> dict:
    """Grid minima of every quantity the case tests look at."""
    DtD = np.einsum("iknm,iknp->ikmp", model.D, model.D)
    lamF2 = model.lam * np.einsum("ikm,ikm->ik", model.F, model.F)
    trR = np.abs(np.trace(model.R, axis1=-2, axis2=-1)).max(initial=0.0)
    return {
        "eig_R": _psd_min(model.R),
        "eig_R_tol": 1e-12 * (1.0 + trR),
        "eig_DtD": _psd_min(DtD),
        "Q": float(model.Q.min()),
        "Gb": float(model.Gb.min()),
        "Ga": float(model.Ga.min()),
        "lamF2": float(lamF2.min()),
    }


def classify_case(model: RegimeModel) -> AssumptionCase:
    """Determine which positivity assumptions hold, with exact grid-minimum deltas.

    Raises NoCertifiedCase when none holds.
    """
    qs = case_quantities(model)
    R_psd = qs["eig_R"] >= -qs["eig_R_tol"]
    Q_nonneg = qs["Q"] >= 0
    sat = {}
    if qs["eig_R"] > qs["eig_R_tol"] and Q_nonneg and qs["Gb"] >= 0 and qs["Ga"] >= 0:
        sat["Standard"] = qs["eig_R"]
    if Q_nonneg and R_psd and min(qs["Gb"], qs["Ga"]) > 0 and qs["eig_DtD"] > 0:
        sat["SingularI"] = min(qs["Gb"], qs["Ga"], qs["eig_DtD"])
    if model.m == 1 and Q_nonneg and R_psd and qs["Gb"] >= 0 and qs["Ga"] > 0 and qs["lamF2"] > 0:
        sat["SingularII"] = min(qs["Ga"], qs["lamF2"])
        if qs["Gb"] > 0:
            sat["SingularIIPrime"] = min(qs["Gb"], qs["Ga"], qs["lamF2"])
    if not sat:
        raise NoCertifiedCase(
            "no positivity case holds: "
            f"min eig R={qs['eig_R']:.3g}, min Q={qs['Q']:.3g}, min Gb={qs['Gb']:.3g}, "
            f"min Ga={qs['Ga']:.3g}, min eig D'D={qs['eig_DtD']:.3g}, "
            f"min lambda F^2={qs['lamF2']:.3g}, m={model.m}"
        )
    best = next(c for c in CASE_ORDER if c in sat)
    return AssumptionCase(case=best, delta=float(sat[best]), satisfied={k: float(v) for k, v in sat.items()})

