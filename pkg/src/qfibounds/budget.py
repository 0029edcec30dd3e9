"""Variance bounds and measurement budgets for the U-statistics estimators.

For a ``q``-copy moment ``X_q = Tr(O rho^{(x)q})`` let ``Obar`` be its average
over copy permutations and ``O_k = Tr_{k+1..q}(Obar [1^{(x)k} (x) rho^{(x)(q-k)}])``.
Then

    Var[X_q_hat] <= sum_k q!^2 d^k / (k! (q-k)!^2 (M-k+1)^k) Tr(O_k^2)

and Chebyshev gives ``Pr[|X_q_hat - X_q| >= eps] <= Var / eps^2``. The ``d^k``
factor is proven for local qubit shadows with ``d = 2^N``; reports on
collective (two-mode) spaces carry ``heuristic=True``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import fisher
from . import numkernel as nk
from .errors import CapacityError, ValidationError

TRACE_TOL = 1e-9


@dataclass(frozen=True)
class TraceTerms:
    """``Tr(O_k^2)`` for ``k = 1..q``."""

    q: int
    per_k: dict[int, float]
    heuristic: bool = False

    def __post_init__(self):
        for k, v in self.per_k.items():
            if v < -TRACE_TOL * max(1.0, *map(abs, self.per_k.values())):
                raise ValidationError(f"Tr(O_{k}^2) = {v} is negative")


@dataclass(frozen=True)
class VarianceBound:
    """``max_g sum_k c_{g,k} / (M - k + 1)^k`` over groups ``g``."""

    groups: tuple[dict[int, float], ...]

    def __call__(self, M: float) -> float:
        kmax = max((max(g) for g in self.groups if g), default=1)
        if M < kmax:
            raise ValidationError(f"variance bound needs M >= {kmax}")
        return max(sum(c / (M - k + 1) ** k for k, c in g.items()) for g in self.groups)


@dataclass(frozen=True)
class BudgetReport:
    epsilon: float
    delta: float
    per_k_M: dict[int, float]
    M_required: float
    variance_bound: VarianceBound
    heuristic: bool = False
    quantity: str = ""

    def rounds(self) -> int:
        """Smallest integer ``M`` meeting the budget (tolerant to float round-off)."""
        return int(math.ceil(self.M_required * (1 - 1e-12)))

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "per_k_M": {str(k): v for k, v in self.per_k_M.items()},
            "M_required": self.M_required,
            "variance_coefficients": [{str(k): c for k, c in g.items()} for g in self.variance_bound.groups],
            "heuristic": self.heuristic,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_eps_delta(eps: float, delta: float):
    if not (eps > 0 and np.isfinite(eps)):
        raise ValidationError(f"epsilon must be > 0, got {eps}")
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")


def _report(eps, delta, per_k, vb, heuristic, quantity) -> BudgetReport:
    per_k = {k: max(1.0, float(v)) for k, v in per_k.items()}
    return BudgetReport(eps, delta, per_k, max(per_k.values()), vb, heuristic, quantity)


def _mats(rho, A):
    r = nk.as_matrix(getattr(rho, "mat", rho), "rho")
    a = nk.as_matrix(getattr(A, "mat", A), "A")
    if r.shape != a.shape:
        raise ValidationError(f"rho {r.shape} and A {a.shape} live on different spaces")
    if hasattr(rho, "space") and hasattr(A, "space") and rho.space != A.space:
        raise ValidationError(f"rho on {rho.space}, A on {A.space}")
    heuristic = getattr(getattr(rho, "space", None), "kind", "qubits") == "collective"
    return r, a, heuristic


def _tr(x) -> float:
    return float(np.real(np.trace(x)))


# --- dense multi-copy construction ------------------------------------------------


def scrambled_operator(O, q: int, d: int) -> np.ndarray:
    """``Obar = (1/q!) sum_pi pi^dag O pi`` over all copy permutations."""
    O = nk.as_matrix(O, "O")
    if O.shape != (d**q, d**q):
        raise ValidationError(f"O must be {d**q}x{d**q} for q={q}, d={d}")
    out = np.zeros_like(O)
    for perm in nk.all_permutations(q):
        p = nk.general_permutation_operator(perm, d)
        out += p.conj().T @ O @ p
    return out / math.factorial(q)


def k_copy_operator(Obar, rho, k: int, q: int) -> np.ndarray:
    """``O_k = Tr_{k+1..q}(Obar [1^{(x)k} (x) rho^{(x)(q-k)}])``."""
    r = nk.as_matrix(getattr(rho, "mat", rho), "rho")
    d = r.shape[0]
    if not 1 <= k <= q:
        raise ValidationError(f"need 1 <= k <= q, got k={k}, q={q}")
    env = nk.kron(np.eye(d**k), *([r] * (q - k))) if k < q else np.eye(d**q)
    return nk.partial_trace(Obar @ env, range(k), d)


def trace_terms_dense(O, rho, q: int) -> TraceTerms:
    """``Tr(O_k^2)`` for every ``k`` by brute-force construction (``d^q <= 4096``)."""
    r = nk.as_matrix(getattr(rho, "mat", rho), "rho")
    d = r.shape[0]
    obar = scrambled_operator(O, q, d)
    per_k = {}
    for k in range(1, q + 1):
        ok = k_copy_operator(obar, r, k, q)
        per_k[k] = _tr(ok @ ok)
    heuristic = getattr(getattr(rho, "space", None), "kind", "qubits") == "collective"
    return TraceTerms(q, per_k, heuristic)


# --- closed forms for F_0 and F_1 ----------------------------------------------------


def trace_terms_F0(rho, A) -> TraceTerms:
    """Closed forms of ``Tr(O_1^2)`` and ``Tr(O_2^2)`` for the two-copy operator of ``F_0``."""
    r, a, heuristic = _mats(rho, A)
    d = r.shape[0]
    a2 = a @ a
    a3 = a2 @ a
    a4 = a2 @ a2
    t1 = 2 * _tr(r @ r @ a4) + 6 * _tr(r @ a2 @ r @ a2) - 8 * _tr(r @ a3 @ r @ a)
    t2 = 2 * _tr(a4) * d + 6 * _tr(a2) ** 2 - 8 * _tr(a) * _tr(a3)
    return TraceTerms(2, {1: t1, 2: t2}, heuristic)


def o1_F1(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    a2 = a @ a
    r2 = r @ r
    return (2.0 / 3.0) * (r @ a2 @ r + r2 @ a2 + a2 @ r2 - a @ r2 @ a - r @ a @ r @ a - a @ r @ a @ r)


def _o2_F1_terms(r: np.ndarray, a: np.ndarray):
    """``O_2 = (1/3) L Pi`` with ``L = sum_t c_t X_t (x) Y_t``."""
    one = np.eye(r.shape[0])
    a2 = a @ a
    return [
        (1, r @ a2, one), (1, one, r @ a2), (1, a2 @ r, one), (1, one, a2 @ r),
        (1, a2, r), (1, r, a2),
        (-1, a @ r @ a, one), (-1, one, a @ r @ a), (-1, a @ r, a), (-1, a, a @ r),
        (-1, r @ a, a), (-1, a, r @ a),
    ]


def o2_F1_dense(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    d = r.shape[0]
    L = sum(c * np.kron(x, y) for c, x, y in _o2_F1_terms(r, a))
    return L @ nk.general_permutation_operator([1, 0], d) / 3.0


def o3_F1_dense(a: np.ndarray) -> np.ndarray:
    d = a.shape[0]
    one = np.eye(d)
    a2 = a @ a
    k = (
        nk.kron(one, one, a2) + nk.kron(one, a2, one) + nk.kron(a2, one, one)
        - nk.kron(one, a, a) - nk.kron(a, one, a) - nk.kron(a, a, one)
    )
    p = nk.cyclic_permutation_operator(3, d)
    return k @ (p + p @ p) / 3.0


def _t2_F1(r: np.ndarray, a: np.ndarray) -> float:
    # Pi (X (x) Y) Pi = Y (x) X, so Tr(L Pi L Pi) = sum c c' Tr(X Y') Tr(Y X').
    terms = _o2_F1_terms(r, a)
    total = 0.0
    for c, x, y in terms:
        for c2, x2, y2 in terms:
            total += c * c2 * np.real(np.trace(x @ y2) * np.trace(y @ x2))
    return float(total) / 9.0


def _t3_F1(a: np.ndarray) -> float:
    # Obar = K (Pi + Pi^2) / 3 with K diagonal in the eigenbasis of A and
    # K = 0 on |iii>, so Tr(Obar^2) = (2/9) sum_ijk kappa_ijk^2 with
    # kappa = ((x-y)^2 + (x-z)^2 + (y-z)^2) / 2.
    lam = nk.hermitian_eig(a).eigenvalues
    d = lam.size
    m = [np.sum(lam**j) for j in range(5)]
    s4 = 2 * d * m[4] - 8 * m[1] * m[3] + 6 * m[2] ** 2
    v = d * lam**2 - 2 * lam * m[1] + m[2]
    sum_kappa2 = 0.25 * (3 * d * s4 + 6 * np.sum(v**2))
    return float(2.0 / 9.0 * sum_kappa2)


def trace_terms_F1(rho, A, method: str = "closed") -> TraceTerms:
    """``Tr(O_k^2)``, ``k = 1, 2, 3``, for the three-copy operator of ``F_1``.

    ``method="closed"`` uses trace identities valid for any ``d``;
    ``method="dense"`` builds the two- and three-copy operators explicitly.
    """
    r, a, heuristic = _mats(rho, A)
    d = r.shape[0]
    o1 = o1_F1(r, a)
    t1 = _tr(o1 @ o1)
    if method == "closed":
        t2, t3 = _t2_F1(r, a), _t3_F1(a)
    elif method == "dense":
        if d**3 > nk.DIM_CAP:
            raise CapacityError(f"dense three-copy operator needs d^3 = {d**3} <= {nk.DIM_CAP}")
        o2 = o2_F1_dense(r, a)
        o3 = o3_F1_dense(a)
        t2, t3 = _tr(o2 @ o2), _tr(o3 @ o3)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return TraceTerms(3, {1: t1, 2: t2, 3: t3}, heuristic)


# --- variance bounds and budgets ------------------------------------------------------


def xq_coefficient(q: int, k: int) -> float:
    """``q!^2 / (k! (q-k)!^2)``."""
    return math.factorial(q) ** 2 / (math.factorial(k) * math.factorial(q - k) ** 2)


def _xq_group(traces: TraceTerms, d: int, scale: float = 1.0) -> dict[int, float]:
    return {k: scale * xq_coefficient(traces.q, k) * d**k * t for k, t in sorted(traces.per_k.items())}


def _xq_budget(traces: TraceTerms, eps: float, delta: float, d: int, scale: float = 1.0) -> dict[int, float]:
    q = traces.q
    out = {}
    for k, t in sorted(traces.per_k.items()):
        inner = scale * q * xq_coefficient(q, k) * max(t, 0.0) / (eps**2 * delta)
        out[k] = inner ** (1.0 / k) * d + k - 1
    return out


def _need_M(M: int, need: int):
    if M < need:
        raise ValidationError(f"variance bound needs M >= {need}, got {M}")


def var_bound_F0(traces: TraceTerms, M: int, d: int) -> float:
    """``16 d/M Tr(O_1^2) + 8 d^2/(M-1)^2 Tr(O_2^2)``."""
    _need_M(M, 2)
    return VarianceBound((_xq_group(traces, d, 4.0),))(M)


def budget_F0(traces: TraceTerms, eps: float, delta: float, d: int) -> BudgetReport:
    """``M >= max{32 Tr(O_1^2) d/(eps^2 delta), 4 sqrt(Tr(O_2^2)) d/(eps sqrt(delta)) + 1}``."""
    _check_eps_delta(eps, delta)
    per_k = _xq_budget(traces, eps, delta, d, 4.0)
    return _report(eps, delta, per_k, VarianceBound((_xq_group(traces, d, 4.0),)), traces.heuristic, "F0")


def _f1_groups(t2: TraceTerms, t3: TraceTerms, d: int):
    # 4 (n+1)^2 C(n+1, q+1)^2 with n = 1: 64 for q = 0 and 16 for q = 1.
    return (_xq_group(t2, d, 64.0), _xq_group(t3, d, 16.0))


def var_bound_F1(traces_F0: TraceTerms, traces_F1: TraceTerms, M: int, d: int) -> float:
    """Max of the ``X_2`` and ``X_3`` branches (``256, 128`` and ``144, 288, 96``)."""
    _need_M(M, 3)
    return VarianceBound(_f1_groups(traces_F0, traces_F1, d))(M)


def budget_F1(traces_F0: TraceTerms, traces_F1: TraceTerms, eps: float, delta: float, d: int) -> BudgetReport:
    """Three-branch budget: ``max{512 T1, 432 T1'}``, ``max{16 sqrt T2, 12 sqrt6 sqrt T2'} + 1``, ``2 6^(2/3) T3'^(1/3) + 2``."""
    _check_eps_delta(eps, delta)
    b2 = _xq_budget(traces_F0, eps, delta, d, 64.0)
    b3 = _xq_budget(traces_F1, eps, delta, d, 16.0)
    per_k = {k: max(b2.get(k, 0.0), b3.get(k, 0.0)) for k in sorted(set(b2) | set(b3))}
    vb = VarianceBound(_f1_groups(traces_F0, traces_F1, d))
    return _report(eps, delta, per_k, vb, traces_F0.heuristic or traces_F1.heuristic, "F1")


def var_bound_Xq_generic(O, rho, q: int, M: int, d: int | None = None) -> tuple[float, TraceTerms, VarianceBound]:
    """Variance bound of ``X_q_hat`` from dense ``O_k`` (needs ``d^q <= 4096``)."""
    r = nk.as_matrix(getattr(rho, "mat", rho), "rho")
    d = r.shape[0] if d is None else d
    _need_M(M, q)
    traces = trace_terms_dense(O, rho, q)
    vb = VarianceBound((_xq_group(traces, d),))
    return vb(M), traces, vb


def budget_Xq_generic(traces: TraceTerms, eps: float, delta: float, d: int) -> BudgetReport:
    """``M >= max_k {(q q!^2/(k!(q-k)!^2) Tr(O_k^2)/(eps^2 delta))^(1/k) d + k - 1}``."""
    _check_eps_delta(eps, delta)
    per_k = _xq_budget(traces, eps, delta, d)
    return _report(eps, delta, per_k, VarianceBound((_xq_group(traces, d),)), traces.heuristic, f"X{traces.q}")


def trace_terms_Fn(rho, A, n: int) -> list[TraceTerms]:
    """Dense ``Tr(O_k^2)`` for every moment ``X_{q+2}``, ``q = 0..n``."""
    r, a, heuristic = _mats(rho, A)
    out = []
    for q in range(n + 1):
        Q = q + 2
        t = trace_terms_dense(fisher.multicopy_operator(Q, a), r, Q)
        out.append(TraceTerms(Q, t.per_k, heuristic))
    return out


def _fn_scales(n: int) -> list[float]:
    return [4.0 * (n + 1) ** 2 * fisher.binom(n + 1, q + 1) ** 2 for q in range(n + 1)]


def var_bound_Fn(traces: list[TraceTerms], n: int, M: int, d: int) -> float:
    """``4 (n+1)^2 max_q C(n+1,q+1)^2 Var-bound[X_{q+2}]``."""
    _need_M(M, n + 2)
    groups = tuple(_xq_group(t, d, s) for t, s in zip(traces, _fn_scales(n)))
    return VarianceBound(groups)(M)


def budget_Fn(traces: list[TraceTerms], n: int, eps: float, delta: float, d: int) -> BudgetReport:
    _check_eps_delta(eps, delta)
    per_k: dict[int, float] = {}
    for t, s in zip(traces, _fn_scales(n)):
        for k, v in _xq_budget(t, eps, delta, d, s).items():
            per_k[k] = max(per_k.get(k, 0.0), v)
    groups = tuple(_xq_group(t, d, s) for t, s in zip(traces, _fn_scales(n)))
    heuristic = any(t.heuristic for t in traces)
    return _report(eps, delta, per_k, VarianceBound(groups), heuristic, f"F{n}")


# --- purity and p3 ------------------------------------------------------------------


def var_bound_p2(p2: float, M: int, d: int) -> float:
    """``4 d p2/M + 2 d^4/(M-1)^2``."""
    _need_M(M, 2)
    return 4 * d * p2 / M + 2 * d**4 / (M - 1) ** 2


def budget_p2(p2: float, eps: float, delta: float, d: int, heuristic: bool = False) -> BudgetReport:
    """``M >= max{8 p2 d/(eps^2 delta), 2 d^2/(eps sqrt(delta)) + 1}``."""
    _check_eps_delta(eps, delta)
    per_k = {1: 8 * p2 * d / (eps**2 * delta), 2: 2 * d**2 / (eps * math.sqrt(delta)) + 1}
    vb = VarianceBound(({1: 4.0 * d * p2, 2: 2.0 * d**4},))
    return _report(eps, delta, per_k, vb, heuristic, "p2")


def var_bound_p3(tr_rho4: float, p2: float, M: int, d: int) -> float:
    """``9 d Tr(rho^4)/M + 18 d^3 p2/(M-1)^2 + 6 d^6/(M-2)^3``."""
    _need_M(M, 3)
    return 9 * d * tr_rho4 / M + 18 * d**3 * p2 / (M - 1) ** 2 + 6 * d**6 / (M - 2) ** 3


def budget_p3(tr_rho4: float, p2: float, eps: float, delta: float, d: int, heuristic: bool = False) -> BudgetReport:
    """``max{27 Tr(rho^4) d/(eps^2 delta), sqrt54 sqrt(p2) d^1.5/(eps sqrt delta) + 1, 18^(1/3) d^2/(eps^(2/3) delta^(1/3)) + 2}``."""
    _check_eps_delta(eps, delta)
    per_k = {
        1: 27 * tr_rho4 * d / (eps**2 * delta),
        2: math.sqrt(54) * math.sqrt(p2) * d**1.5 / (eps * math.sqrt(delta)) + 1,
        3: 18 ** (1 / 3) * d**2 / (eps ** (2 / 3) * delta ** (1 / 3)) + 2,
    }
    vb = VarianceBound(({1: 9.0 * d * tr_rho4, 2: 18.0 * d**3 * p2, 3: 6.0 * d**6},))
    return _report(eps, delta, per_k, vb, heuristic, "p3")


def chebyshev_confidence(var_bound: float, eps: float) -> float:
    """``min(1, Var/eps^2)``."""
    if not eps > 0:
        raise ValidationError("epsilon must be > 0")
    return min(1.0, var_bound / eps**2)
