"""Quantum Fisher information and its converging polynomial lower bounds.

Four independent ways to get the bound series ``F_0 <= F_1 <= ... <= F_Q``:

* ``bounds_spectral``: truncated geometric series in the eigenbasis of rho;
* ``bounds_polynomial``: hockey-stick sum of traces of powers of rho, no
  eigendecomposition;
* ``bounds_multicopy``: expectation of explicit multi-copy operators built
  from cyclic permutations (tiny systems only);
* ``bounds_recursive``: each ``F_n`` from ``F_0..F_{n-1}`` and the
  top-order polynomial alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np

from . import numkernel as nk
from . import states as st
from .errors import CapacityError, NumericalIntegrityError, ValidationError

EIG_CUTOFF = 1e-12
POLY_MAX_ORDER = 8


def _pair(rho, A) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(rho, st.DensityMatrix) and isinstance(A, st.Observable) and rho.space != A.space:
        raise ValidationError(f"state lives on {rho.space}, observable on {A.space}")
    r = nk.as_matrix(getattr(rho, "mat", rho), "rho")
    a = nk.as_matrix(getattr(A, "mat", A), "A")
    if r.shape != a.shape or r.shape[0] != r.shape[1]:
        raise ValidationError(f"state {r.shape} and observable {a.shape} shapes differ")
    return r, a


def _spectral(rho, A):
    r, a = _pair(rho, A)
    lam, vec = nk.hermitian_eig(r)
    a_eig = vec.conj().T @ a @ vec
    return lam, np.abs(a_eig) ** 2


def binom(n: int, k: int) -> int:
    return math.comb(n, k) if 0 <= k <= n else 0


def c_coeff(q: int, m: int) -> int:
    """``C(q, m) - 2 C(q, m-1) + C(q, m-2)`` with out-of-range binomials zero."""
    return binom(q, m) - 2 * binom(q, m - 1) + binom(q, m - 2)


@dataclass(frozen=True)
class ConvergenceRate:
    zeta: float
    exact: bool  # no admissible pair: every F_n already equals F_Q
    degenerate: bool  # rho has repeated eigenvalues, so the eigenbasis is not unique

    def gap_bound(self, n: int, qfi: float) -> float:
        """Upper bound ``F_Q * zeta**(n+1)`` on the gap ``F_Q - F_n``."""
        return 0.0 if self.exact else qfi * self.zeta ** (n + 1)


@dataclass(frozen=True)
class BoundSeries:
    orders: np.ndarray
    qfi: float
    gaps: np.ndarray
    rate: ConvergenceRate | None = None
    method: str = "spectral"

    @property
    def n_max(self) -> int:
        return len(self.orders) - 1

    def is_monotone(self, slack: float = 1e-9) -> bool:
        f = np.append(self.orders, self.qfi)
        return bool(np.all(np.diff(f) >= -slack))

    def as_rows(self, p: float | None = None) -> list[dict]:
        return [
            {"n": n, "p": p, "F_n": float(f), "F_Q": self.qfi, "xi": float(g)}
            for n, (f, g) in enumerate(zip(self.orders, self.gaps))
        ]


def _series(orders, qfi, rate, method) -> BoundSeries:
    orders = np.asarray(orders, dtype=float)
    return BoundSeries(orders, float(qfi), float(qfi) - orders, rate, method)


def qfi_exact(rho, A, eig_cutoff: float = EIG_CUTOFF) -> float:
    """``F_Q = 2 sum_{l_i + l_j > cutoff} (l_i - l_j)^2 / (l_i + l_j) |<i|A|j>|^2``."""
    lam, a2 = _spectral(rho, A)
    s = lam[:, None] + lam[None, :]
    mask = s > eig_cutoff
    num = (lam[:, None] - lam[None, :]) ** 2 * a2
    return float(2.0 * np.sum(num[mask] / s[mask]))


def convergence_rate(rho, A, eig_cutoff: float = EIG_CUTOFF) -> ConvergenceRate:
    """Largest ``1 - l_i - l_j`` over pairs that contribute to the gap."""
    lam, a2 = _spectral(rho, A)
    return _rate_from_spectrum(lam, a2, eig_cutoff)


def _rate_from_spectrum(lam, a2, eig_cutoff) -> ConvergenceRate:
    s = lam[:, None] + lam[None, :]
    admissible = (
        (s > eig_cutoff)
        & (np.abs(lam[:, None] - lam[None, :]) > eig_cutoff)
        & (np.sqrt(a2) > eig_cutoff)
    )
    degenerate = bool(np.any(np.diff(lam) <= eig_cutoff)) if len(lam) > 1 else False
    if not np.any(admissible):
        return ConvergenceRate(0.0, True, degenerate)
    zeta = float(np.max((1.0 - s)[admissible]))
    # zeta == 0 (pure states) also means F_n = F_Q at every order.
    if zeta <= eig_cutoff:
        return ConvergenceRate(0.0, True, degenerate)
    return ConvergenceRate(zeta, False, degenerate)


def _spectral_orders(lam, a2, n_max, eig_cutoff):
    """Bounds and directly-summed gaps from eigenvalues and ``|A_ij|^2``."""
    s = lam[:, None] + lam[None, :]
    w = (lam[:, None] - lam[None, :]) ** 2 * a2
    x = 1.0 - s
    mask = s > eig_cutoff
    tail = np.where(mask, w / np.where(mask, s, 1.0), 0.0)
    orders = np.empty(n_max + 1)
    gaps = np.empty(n_max + 1)
    acc = np.zeros_like(w)
    xl = np.ones_like(w)
    for n in range(n_max + 1):
        acc += xl
        xl = xl * x
        orders[n] = 2.0 * np.sum(w * acc)
        gaps[n] = 2.0 * np.sum(tail * xl)  # tail holds (1 - l_i - l_j)^(n+1)
    qfi = 2.0 * np.sum(tail)
    return orders, gaps, float(qfi)


def bounds_spectral(rho, A, n_max: int, eig_cutoff: float = EIG_CUTOFF) -> BoundSeries:
    """Series in the eigenbasis; gaps are summed directly, not as ``F_Q - F_n``."""
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    lam, a2 = _spectral(rho, A)
    orders, gaps, qfi = _spectral_orders(lam, a2, n_max, eig_cutoff)
    return BoundSeries(orders, qfi, gaps, _rate_from_spectrum(lam, a2, eig_cutoff), "spectral")


def polynomial_terms(rho, A, q_max: int) -> np.ndarray:
    """``P_{q+2} = 2 sum_m C_m^(q) Tr(rho^(q+2-m) A rho^m A)`` for ``q = 0..q_max``."""
    r, a = _pair(rho, A)
    powers = [np.eye(r.shape[0], dtype=complex)]
    for _ in range(q_max + 2):
        powers.append(powers[-1] @ r)
    # Tr(rho^j A rho^m A) = sum((rho^j A) * (rho^m A)^T)
    pa = [p @ a for p in powers]
    out = np.empty(q_max + 1)
    for q in range(q_max + 1):
        tot = 0.0
        for m in range(q + 3):
            c = c_coeff(q, m)
            if c:
                tot += c * np.einsum("ij,ji->", pa[q + 2 - m], pa[m]).real
        out[q] = 2.0 * tot
    return out


def bounds_polynomial(rho, A, n_max: int, eig_cutoff: float = EIG_CUTOFF) -> BoundSeries:
    """Hockey-stick form ``F_n = sum_q C(n+1, q+1) (-1)^q P_{q+2}``."""
    if not 0 <= n_max <= POLY_MAX_ORDER:
        raise CapacityError(f"polynomial route supports 0 <= n_max <= {POLY_MAX_ORDER}, got {n_max}")
    p = polynomial_terms(rho, A, n_max)
    orders = [sum(binom(n + 1, q + 1) * (-1) ** q * p[q] for q in range(n + 1)) for n in range(n_max + 1)]
    lam, a2 = _spectral(rho, A)
    return _series(orders, qfi_exact(rho, A, eig_cutoff), _rate_from_spectrum(lam, a2, eig_cutoff), "polynomial")


def bound_recursive(P: Sequence[float], prior_F: Sequence[float]) -> float:
    """``F_n = (-1)^n [P_{n+2} - sum_{r<n} C(n+1, r+1) (-1)^r F_r]``.

    ``P`` holds ``P_2, ..., P_{n+2}`` and ``prior_F`` holds ``F_0, ..., F_{n-1}``.
    """
    n = len(prior_F)
    if len(P) != n + 1:
        raise ValidationError(f"need {n + 1} polynomial terms for order {n}, got {len(P)}")
    acc = sum(binom(n + 1, r + 1) * (-1) ** r * prior_F[r] for r in range(n))
    return (-1) ** n * (P[n] - acc)


def bounds_recursive(rho, A, n_max: int, eig_cutoff: float = EIG_CUTOFF) -> BoundSeries:
    if not 0 <= n_max <= POLY_MAX_ORDER:
        raise CapacityError(f"recursive route supports 0 <= n_max <= {POLY_MAX_ORDER}, got {n_max}")
    p = polynomial_terms(rho, A, n_max)
    f: list[float] = []
    for n in range(n_max + 1):
        f.append(bound_recursive(p[: n + 1], f))
    return _series(f, qfi_exact(rho, A, eig_cutoff), None, "recursive")


def multicopy_operator(q: int, A) -> np.ndarray:
    """Dense ``O^(q)`` whose expectation on ``rho^(x)q`` is ``X_q`` (``q >= 2``).

    ``O^(q) = [2 (1^(q-1) x A^2) + sum_{m=1}^{q-1} C_m^(q-2) (1^(q-1-m) x A x 1^(m-1) x A)] Pi_(q)``.
    """
    a = nk.as_matrix(getattr(A, "mat", A), "A")
    d = a.shape[0]
    if q < 2:
        raise ValidationError("multi-copy operator needs q >= 2")
    if d**q > nk.DIM_CAP:
        raise CapacityError(f"d**q = {d**q} exceeds the dimension cap {nk.DIM_CAP}")
    eye = np.eye(d, dtype=complex)
    pre = 2.0 * nk.kron(*([eye] * (q - 1) + [a @ a]))
    for m in range(1, q):
        factors = [eye] * (q - 1 - m) + [a] + [eye] * (m - 1) + [a]
        pre = pre + c_coeff(q - 2, m) * nk.kron(*factors)
    return pre @ nk.cyclic_permutation_operator(q, d)


def bounds_multicopy(rho, A, n_max: int, eig_cutoff: float = EIG_CUTOFF) -> BoundSeries:
    r, a = _pair(rho, A)
    d = r.shape[0]
    if d ** (n_max + 2) > nk.DIM_CAP:
        raise CapacityError(f"multicopy route needs d**(n_max+2) <= {nk.DIM_CAP}, got {d ** (n_max + 2)}")
    x = []
    rho_k = r
    for q in range(2, n_max + 3):
        if q > 2:
            rho_k = np.kron(rho_k, r)
        else:
            rho_k = np.kron(r, r)
        x.append(np.einsum("ij,ji->", multicopy_operator(q, a), rho_k).real)
    orders = [2.0 * sum(binom(n + 1, q + 1) * (-1) ** q * x[q] for q in range(n + 1)) for n in range(n_max + 1)]
    return _series(orders, qfi_exact(r, a, eig_cutoff), None, "multicopy")


# --- entanglement depth -----------------------------------------------------------


def gamma_threshold(N: int, k: int) -> int:
    """``floor(N/k) k^2 + (N - floor(N/k) k)^2``: maximal QFI of k-producible states."""
    if not 1 <= k <= N:
        raise ValidationError(f"need 1 <= k <= N, got k={k}, N={N}")
    whole = N // k
    return whole * k * k + (N - whole * k) ** 2


@dataclass(frozen=True)
class DepthWitness:
    N: int
    k: int  # largest violated producibility order, 0 when nothing is certified
    gamma: int  # threshold exceeded (Gamma(N, 1) = N when k == 0)
    certified_depth: int


def certify_depth(F_value: float, N: int) -> DepthWitness:
    """Entanglement depth certified by a QFI lower bound ``F_value``."""
    if not np.isfinite(F_value):
        raise ValidationError("F_value must be finite")
    best = 0
    for k in range(1, N + 1):
        if F_value > gamma_threshold(N, k):
            best = k
    if best == 0:
        return DepthWitness(N, 0, gamma_threshold(N, 1), 1)
    # Exceeding Gamma(N, N) = N^2 is unphysical; depth cannot exceed N.
    return DepthWitness(N, best, gamma_threshold(N, best), min(best + 1, N))


# --- depolarized families -----------------------------------------------------------


@dataclass
class DepolarizingFamily:
    """``rho(p) = (1 - p) base + p 1/d`` evaluated against a fixed observable.

    All members share the eigenbasis of ``base``, so the spectral data are
    computed once and only the eigenvalues move with ``p``.
    """

    base: object
    A: object
    eig_cutoff: float = EIG_CUTOFF
    _mu: np.ndarray = field(init=False, repr=False)
    _a2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._mu, self._a2 = _spectral(self.base, self.A)

    @property
    def dim(self) -> int:
        return len(self._mu)

    def eigenvalues(self, p: float) -> np.ndarray:
        return (1 - p) * self._mu + p / self.dim

    def series(self, p: float, n_max: int) -> BoundSeries:
        lam = self.eigenvalues(p)
        orders, gaps, qfi = _spectral_orders(lam, self._a2, n_max, self.eig_cutoff)
        return BoundSeries(orders, qfi, gaps, _rate_from_spectrum(lam, self._a2, self.eig_cutoff), "spectral")

    def value(self, p: float, order: int | Literal["qfi"]) -> float:
        if order == "qfi":
            return self.series(p, 0).qfi
        return float(self.series(p, int(order)).orders[-1])


@lru_cache(maxsize=32)
def standard_family(family: str, N: int) -> DepolarizingFamily:
    """Noisy GHZ with ``A = S_z`` or noisy N00N with ``A = (n1 - n2)/2``.

    The N00N witness uses the collective spin ``S_z = (n1 - n2)/2`` so that
    the producibility thresholds ``Gamma(N, k)`` apply unchanged.
    """
    if family == "ghz":
        return DepolarizingFamily(st.ghz_state(N), st.collective_spin_observable(N, "z"))
    if family == "noon":
        a = st.number_difference_observable(N)
        return DepolarizingFamily(st.noon_state(N), st.Observable(a.space, 0.5 * a.mat))
    raise ValidationError(f"unknown state family {family!r}")


@dataclass(frozen=True)
class PStar:
    value: float
    detectable: bool


def pstar(
    N: int,
    k: int,
    order: int | Literal["qfi"],
    family: str | DepolarizingFamily = "ghz",
    tol: float = 1e-10,
) -> PStar:
    """Largest noise ``p`` for which the chosen bound still exceeds ``Gamma(N, k)``."""
    fam = standard_family(family, N) if isinstance(family, str) else family
    gamma = gamma_threshold(N, k)

    def f(p):
        return fam.value(p, order)

    grid = np.linspace(0.0, 1.0, 9)
    vals = np.array([f(p) for p in grid])
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.any(np.diff(vals) > 1e-10 * scale):
        raise NumericalIntegrityError(f"bound {order!r} is not monotone in p on the 9-point grid: {vals}")
    if not vals[0] > gamma:
        return PStar(0.0, False)
    # Bracket on the sampled grid first, then bisect inside the bracket.
    idx = int(np.argmax(vals <= gamma))
    lo, hi = grid[idx - 1], grid[idx]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > gamma:
            lo = mid
        else:
            hi = mid
    return PStar(0.5 * (lo + hi), True)
