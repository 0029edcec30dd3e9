"""Experiment harness: convergence tables, p* curves and error-scaling runs."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Literal, Sequence

import numpy as np

from . import estimators as est
from . import fisher
from . import numkernel as nk
from . import protocol as pr
from . import states as st
from .errors import CapacityError, ValidationError

DEFAULT_GHZ_GRID = (10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000)
DEFAULT_NOON_GRID = (10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000)
FAMILY_CODES = {"ghz": 1, "noon": 2, "custom": 3}


@dataclass
class ExperimentConfig:
    family: Literal["ghz", "noon", "custom"] = "ghz"
    N_list: tuple[int, ...] = (2, 3, 4, 5, 6)
    p: float = 0.25
    orders: tuple[int, ...] = (0, 1)
    M_grid: tuple[int, ...] = DEFAULT_GHZ_GRID
    R: int = 50
    seed: int = 0
    scheme: Literal["auto", "local", "global-cue", "global-quench"] = "auto"
    target_error: float = 0.1
    p_list: tuple[float, ...] = (0.0, 0.1, 0.25, 0.5)
    n_max: int = 8
    k_list: tuple[int, ...] | None = None  # None: (1, 2, N-1)
    pstar_orders: tuple = (0, 1, 2, "qfi")
    custom_state: str | None = None  # .npy with the density matrix
    custom_observable: str | None = None  # .npy with A
    quench: pr.QuenchSource = field(default_factory=pr.QuenchSource)
    max_rounds: int = 200_000_000
    workers: int = 1  # processes for run_error_scaling; results do not depend on it

    def __post_init__(self):
        self.N_list = tuple(int(n) for n in self.N_list)
        self.orders = tuple(int(n) for n in self.orders)
        self.M_grid = tuple(int(m) for m in self.M_grid)
        self.p_list = tuple(float(p) for p in self.p_list)
        if self.k_list is not None:
            self.k_list = tuple(int(k) for k in self.k_list)
        if isinstance(self.quench, dict):
            self.quench = pr.QuenchSource(**self.quench)
        if self.family not in FAMILY_CODES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.R < 1:
            raise ValidationError("R must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if any(b <= a for a, b in zip(self.M_grid, self.M_grid[1:])):
            raise ValidationError("M grid must be strictly increasing")
        for p in (self.p, *self.p_list):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"noise strength {p} outside [0, 1]")
        if self.target_error <= 0:
            raise ValidationError("target error must be > 0")
        if self.family == "custom" and not (self.custom_state and self.custom_observable):
            raise ValidationError("custom family needs custom_state and custom_observable files")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("N_list", "orders", "M_grid", "p_list", "k_list", "pstar_orders"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# --- families ----------------------------------------------------------------


def family_problem(config: ExperimentConfig, N: int, p: float):
    """``(rho, A, scheme)`` for one system size of the configured family."""
    if config.family == "ghz":
        rho, A = st.noisy_ghz(N, p), st.collective_spin_observable(N, "z")
    elif config.family == "noon":
        rho, A = st.noisy_noon(N, p), st.number_difference_observable(N)
    else:
        mat = np.load(config.custom_state)
        amat = np.load(config.custom_observable)
        d = mat.shape[0]
        N_q = int(round(math.log2(d)))
        space = st.HilbertSpec.qubits(N_q) if 2**N_q == d else st.HilbertSpec.collective(d - 1)
        rho = st.depolarize(st.DensityMatrix(space, mat), p)
        A = st.Observable(space, amat)
    kind = config.scheme
    if kind == "auto":
        kind = "local" if rho.space.kind == "qubits" else "global-cue"
    if kind == "local":
        scheme = pr.MeasurementScheme("local", rho.space)
    elif kind == "global-cue":
        scheme = pr.MeasurementScheme("global", rho.space)
    else:
        scheme = pr.MeasurementScheme("global", rho.space, config.quench)
    return rho, A, scheme


def _pstar_family(config: ExperimentConfig, N: int) -> fisher.DepolarizingFamily:
    if config.family in ("ghz", "noon"):
        return fisher.standard_family(config.family, N)
    rho, A, _ = family_problem(config, N, 0.0)
    return fisher.DepolarizingFamily(rho, A)


# --- exact tables ----------------------------------------------------------------


def run_convergence(config: ExperimentConfig) -> list[dict]:
    """Rows ``(family, N, p, n, F_n, F_Q, xi_n)`` from exact spectral evaluation."""
    rows = []
    for N in config.N_list:
        fam = _pstar_family(config, N) if config.family != "custom" else None
        for p in config.p_list:
            if fam is not None:
                series = fam.series(p, config.n_max)
            else:
                rho, A, _ = family_problem(config, N, p)
                series = fisher.bounds_spectral(rho, A, config.n_max)
            for n in range(config.n_max + 1):
                rows.append(
                    {
                        "family": config.family,
                        "N": N,
                        "p": p,
                        "n": n,
                        "F_n": float(series.orders[n]),
                        "F_Q": float(series.qfi),
                        "xi_n": float(series.gaps[n]),
                    }
                )
    return rows


def run_pstar_curves(config: ExperimentConfig) -> list[dict]:
    """Rows ``(N, k, order, p_star, detectable)``; undetectable cases are sentinel rows."""
    rows = []
    for N in config.N_list:
        fam = _pstar_family(config, N)
        ks = config.k_list if config.k_list is not None else tuple(sorted({1, min(2, N), max(N - 1, 1)}))
        for k in ks:
            if not 1 <= k <= N:
                continue
            for order in config.pstar_orders:
                res = fisher.pstar(N, k, order, fam)
                rows.append(
                    {"N": N, "k": k, "order": str(order), "p_star": res.value, "detectable": res.detectable}
                )
    return rows


# --- interpolation and fits ----------------------------------------------------------


@dataclass(frozen=True)
class TargetCrossing:
    M: float
    flag: str  # "ok", "non-monotone", "no-bracket"


def find_M_at_error(rows: Sequence[tuple[float, float]], target: float) -> TargetCrossing:
    """Linear interpolation of ``M`` where the mean error crosses ``target``.

    Uses the last grid segment that brackets the target (largest ``M``); a
    non-monotone error sequence is flagged. Without a bracket the result is
    ``nan`` with flag ``no-bracket``.
    """
    pts = sorted((float(m), float(e)) for m, e in rows)
    if not pts:
        return TargetCrossing(float("nan"), "no-bracket")
    errs = [e for _, e in pts]
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    for m, e in pts:
        if e == target and monotone:
            return TargetCrossing(m, "ok")
    hit = None
    for (m0, e0), (m1, e1) in zip(pts, pts[1:]):
        if (e0 - target) * (e1 - target) <= 0 and e0 != e1:
            hit = m0 + (e0 - target) / (e0 - e1) * (m1 - m0)
    if hit is None:
        return TargetCrossing(float("nan"), "no-bracket")
    return TargetCrossing(float(hit), "ok" if monotone else "non-monotone")


@dataclass(frozen=True)
class FitResult:
    model: Literal["exp2", "power"]
    a: float
    b: float  # exp2: M = 2^(b + a N); power: M = c N^a with b = log(c)
    residuals: tuple[float, ...]

    @property
    def c(self) -> float:
        return math.exp(self.b)


def fit_exponent(points: Sequence[tuple[float, float]], model: Literal["exp2", "power"] = "exp2") -> FitResult:
    """Least squares on ``log2 M`` vs ``N`` (``exp2``) or ``log M`` vs ``log N`` (``power``)."""
    pts = [(float(n), float(m)) for n, m in points if np.isfinite(m)]
    if len(pts) < 3:
        raise ValidationError(f"need at least 3 finite points to fit, got {len(pts)}")
    n = np.array([p[0] for p in pts])
    m = np.array([p[1] for p in pts])
    if np.any(m <= 0) or (model == "power" and np.any(n <= 0)):
        raise ValidationError("fit points must be positive")
    if np.unique(n).size < 2:
        raise ValidationError("fit needs at least two distinct N")
    if model == "exp2":
        x, y = n, np.log2(m)
    elif model == "power":
        x, y = np.log(n), np.log(m)
    else:
        raise ValidationError(f"unknown model {model!r}")
    a, b = np.polyfit(x, y, 1)
    return FitResult(model, float(a), float(b), tuple(float(r) for r in y - (a * x + b)))


def loglog_slope(Ms: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log E`` against ``log M``."""
    Ms, errors = np.asarray(Ms, float), np.asarray(errors, float)
    if Ms.size < 2:
        raise ValidationError("slope needs at least two points")
    return float(np.polyfit(np.log(Ms), np.log(errors), 1)[0])


# --- error scaling -----------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRow:
    N: int
    M: int
    order: int
    mean_error: float
    stderr: float


@dataclass
class ScalingResult:
    rows: list[ScalingRow]
    M_at_target: dict[int, dict[int, TargetCrossing]]  # order -> N -> crossing
    fits: dict[int, FitResult | None]
    exact: dict[int, dict[int, float]]  # order -> N -> F_n

    @property
    def collapse_exponent(self) -> dict[int, float | None]:
        return {n: (f.a if f is not None else None) for n, f in self.fits.items()}

    def curve(self, order: int, N: int) -> tuple[list[int], list[float]]:
        sel = [r for r in self.rows if r.order == order and r.N == N]
        return [r.M for r in sel], [r.mean_error for r in sel]

    def row_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def summary_dicts(self) -> list[dict]:
        out = []
        for n, per_N in self.M_at_target.items():
            fit = self.fits.get(n)
            for N, cr in per_N.items():
                out.append(
                    {
                        "order": n,
                        "N": N,
                        "M_at_target": cr.M,
                        "flag": cr.flag,
                        "fit_model": fit.model if fit else None,
                        "fit_a": fit.a if fit else None,
                        "fit_b": fit.b if fit else None,
                    }
                )
        return out


def estimate_rounds(config: ExperimentConfig) -> int:
    return int(config.R * sum(config.M_grid) * len(config.N_list))


def _exact_orders(config: ExperimentConfig, N: int) -> dict[int, float]:
    rho, A, _ = family_problem(config, N, config.p)
    series = fisher.bounds_spectral(rho, A, max(config.orders))
    return {n: float(series.orders[n]) for n in config.orders}


def _scaling_cell(config: ExperimentConfig, N: int, M: int) -> list[ScalingRow]:
    # one (N, M) grid point; everything it draws comes from its own substreams
    rho, A, scheme = family_problem(config, N, config.p)
    exact = _exact_orders(config, N)
    root = nk.SeededStream(config.seed, (FAMILY_CODES[config.family],))
    errs = {n: [] for n in config.orders}
    for rep in range(config.R):
        shadows = pr.acquire(rho, scheme, M, root.child(N, M, rep))
        for n in config.orders:
            val = est.estimate_Fn(shadows, A, n).value
            errs[n].append(abs(val - exact[n]) / abs(exact[n]))
    out = []
    for n in config.orders:
        e = np.asarray(errs[n])
        se = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else float("nan")
        out.append(ScalingRow(N, M, n, float(e.mean()), se))
    return out


def run_error_scaling(config: ExperimentConfig, progress=None) -> ScalingResult:
    """``R`` acquisitions per ``(N, M)``; mean relative error of every requested order.

    Acquisition ``(N, M, rep)`` draws from substream ``(family, N, M, rep)`` of the
    master seed, so rows are identical for any ``config.workers``. Rows come back
    in canonical ``(N, M, order)`` order.
    """
    total = estimate_rounds(config)
    if total > config.max_rounds:
        raise CapacityError(f"sweep needs ~{total:.3g} measurement rounds, above max_rounds={config.max_rounds}")
    exact: dict[int, dict[int, float]] = {n: {} for n in config.orders}
    for N in config.N_list:
        for n, fn in _exact_orders(config, N).items():
            if abs(fn) <= 1e-12:
                raise ValidationError(f"F_{n} = 0 for N={N}; relative error undefined")
            exact[n][N] = fn
    cells = [(N, M) for N in config.N_list for M in config.M_grid if M >= max(config.orders) + 2]
    rows: list[ScalingRow] = []
    if config.workers == 1:
        for N, M in cells:
            rows.extend(_scaling_cell(config, N, M))
            if progress is not None:
                progress(N, M)
    else:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(_scaling_cell, config, N, M) for N, M in cells]
            for (N, M), fut in zip(cells, futures):
                rows.extend(fut.result())
                if progress is not None:
                    progress(N, M)
    crossings: dict[int, dict[int, TargetCrossing]] = {}
    fits: dict[int, FitResult | None] = {}
    model = "exp2" if config.family == "ghz" or (config.family == "custom" and config.scheme == "local") else "power"
    for n in config.orders:
        crossings[n] = {}
        for N in config.N_list:
            pts = [(r.M, r.mean_error) for r in rows if r.order == n and r.N == N]
            crossings[n][N] = find_M_at_error(pts, config.target_error)
        pts = [(N, c.M) for N, c in crossings[n].items() if np.isfinite(c.M)]
        fits[n] = fit_exponent(pts, model) if len(pts) >= 3 else None
    return ScalingResult(rows, crossings, fits, exact)
