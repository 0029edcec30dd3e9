"""U-statistics estimators of the bounds ``F_n`` and multi-copy moments ``X_q``.

A moment ``X_Q`` is the average of a kernel over ordered tuples of ``Q``
pairwise distinct shadows. Kernels are written as weighted cyclic *words*
``Tr(rho_1 A^{e_1} rho_2 A^{e_2} ... rho_Q A^{e_Q})``. Relabeling the tuple
does not change a U-statistic, so each word only matters up to rotation.

Three evaluation paths exist:

* ``oracle``: literal enumeration of the ordered tuples.
* ``fast``: inclusion-exclusion on the running sums ``S = sum_r rho_r`` and
  ``G_B = sum_r rho_r B rho_r`` built from dense shadows (``Q <= 3``).
* ``factored-fast``: the same identities with every ``M``-indexed sum built
  from the per-site ``2x2`` shadow factors and ``A = sum_l a^(l)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from . import fisher
from . import numkernel as nk
from .errors import CapacityError, InsufficientDataError, ValidationError
from .protocol import ShadowCollection, ShadowSnapshot, dense_from_factors

ORACLE_MAX_M = 12  # cap on M for oracle enumeration when Q >= 4
GEMM_CHUNK = 4096

Method = Literal["auto", "oracle", "fast", "factored"]


# --- kernels ----------------------------------------------------------------


def _canonical(word: tuple[int, ...]) -> tuple[int, ...]:
    return min(word[k:] + word[:k] for k in range(len(word)))


@dataclass(frozen=True)
class WordKernel:
    """``sum_t coef_t Tr(rho_1 A^{e_t1} ... rho_Q A^{e_tQ})`` with words up to rotation."""

    Q: int
    terms: tuple[tuple[float, tuple[int, ...]], ...]

    @classmethod
    def build(cls, Q: int, raw) -> "WordKernel":
        acc: dict[tuple[int, ...], float] = {}
        for coef, word in raw:
            if len(word) != Q:
                raise ValidationError(f"word {word} has length != {Q}")
            key = _canonical(tuple(int(e) for e in word))
            acc[key] = acc.get(key, 0.0) + float(coef)
        return cls(Q, tuple((c, w) for w, c in sorted(acc.items()) if c != 0.0))


def fisher_words(Q: int) -> list[tuple[float, tuple[int, ...]]]:
    """Raw (unmerged) words of the multi-copy operator behind ``X_Q``, ``Q >= 2``."""
    if Q < 2:
        raise ValidationError("fisher kernels need Q >= 2")
    q = Q - 2
    out = []
    for m in range(Q + 1):
        e = [0] * Q
        # Tr(rho^{Q-m} A rho^m A): first A after slot Q-m (cyclically), second after slot Q.
        e[(Q - m - 1) % Q] += 1
        e[Q - 1] += 1
        out.append((fisher.c_coeff(q, m), tuple(e)))
    return out


def fisher_kernel(Q: int) -> WordKernel:
    """Kernel of ``X_Q`` with ``F_n = 2 sum_q C(n+1,q+1) (-1)^q X_{q+2}``."""
    return WordKernel.build(Q, fisher_words(Q))


def moment_kernel(Q: int) -> WordKernel:
    """``Tr(rho_1 ... rho_Q)``, the kernel of ``Tr(rho^Q)`` (cyclic permutation operator)."""
    return WordKernel(Q, ((1.0, (0,) * Q),))


# --- results ----------------------------------------------------------------


@dataclass(frozen=True)
class EstimateResult:
    value: float
    n: int | None
    M: int
    method: str
    q: int | None = None
    seed: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


# --- shadow views ---------------------------------------------------------------


class _Shadows:
    """Uniform view of shadow input: dense stack and, when available, site factors."""

    def __init__(self, shadows):
        self.factors = None
        self.seed = None
        self._dense = None
        if isinstance(shadows, ShadowCollection):
            self.factors = shadows.factors
            if self.factors is None:
                self._dense = shadows.dense
            if shadows.labels is not None and len(shadows):
                self.seed = shadows.labels[0].rsplit("/", 1)[0] if "/" in shadows.labels[0] else None
            self.M = len(shadows)
        elif isinstance(shadows, np.ndarray):
            arr = np.asarray(shadows, dtype=complex)
            if arr.ndim == 4 and arr.shape[-2:] == (2, 2):
                self.factors = arr
            elif arr.ndim == 3 and arr.shape[1] == arr.shape[2]:
                self._dense = arr
            else:
                raise ValidationError(f"cannot interpret shadow array of shape {arr.shape}")
            self.M = arr.shape[0]
        else:
            snaps = list(shadows)
            if snaps and all(isinstance(s, ShadowSnapshot) and s.factors is not None for s in snaps):
                self.factors = np.stack([s.factors for s in snaps])
            elif snaps and all(isinstance(s, ShadowSnapshot) for s in snaps):
                self._dense = np.stack([s.dense for s in snaps])
            else:
                self._dense = np.stack([nk.as_matrix(s) for s in snaps]) if snaps else np.zeros((0, 1, 1))
            self.M = len(snaps)

    @cached_property
    def dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        return dense_from_factors(self.factors)

    @property
    def dim(self) -> int:
        if self.factors is not None:
            return 2 ** self.factors.shape[1]
        return self._dense.shape[1]

    def permuted(self, order) -> "_Shadows":
        out = object.__new__(_Shadows)
        out.M, out.seed = self.M, self.seed
        out.factors = None if self.factors is None else self.factors[order]
        out._dense = None if self._dense is None else self._dense[order]
        return out


def _observable(A, dim: int):
    site = getattr(A, "site_op", None)
    mat = nk.as_matrix(getattr(A, "mat", A), "A")
    if mat.shape != (dim, dim):
        raise ValidationError(f"observable has shape {mat.shape}, shadows are {dim}x{dim}")
    return mat, site


def _tree_sum(x: np.ndarray) -> np.ndarray:
    """Pairwise summation over axis 0 with a fixed reduction tree."""
    x = np.asarray(x)
    if x.shape[0] == 0:
        return np.zeros(x.shape[1:], dtype=x.dtype)
    while x.shape[0] > 1:
        tail = x[-1:] if x.shape[0] % 2 else None
        if tail is not None:
            x = x[:-1]
        x = x[0::2] + x[1::2]
        if tail is not None:
            x = np.concatenate([x, tail])
    return x[0]


# --- oracle -----------------------------------------------------------------


def _falling(M: int, Q: int) -> int:
    return math.perm(M, Q)


def _word_value(rhos: Sequence[np.ndarray], word, apow) -> complex:
    prod = None
    for rho, e in zip(rhos, word):
        blk = rho @ apow[e] if e else rho
        prod = blk if prod is None else prod @ blk
    return np.trace(prod)


def _apowers(A: np.ndarray, emax: int) -> list[np.ndarray]:
    out = [np.eye(A.shape[0], dtype=complex)]
    for _ in range(emax):
        out.append(out[-1] @ A)
    return out


def _oracle_sum(dense: np.ndarray, raw_terms, Q: int, A: np.ndarray) -> complex:
    M = dense.shape[0]
    if Q >= 4 and M > ORACLE_MAX_M:
        raise CapacityError(f"oracle enumeration for Q={Q} is capped at M <= {ORACLE_MAX_M}; use the fast path")
    emax = max((max(w) for _, w in raw_terms), default=0)
    apow = _apowers(A, emax)
    total = 0.0 + 0.0j
    for tup in itertools.permutations(range(M), Q):
        rhos = [dense[r] for r in tup]
        total += sum(c * _word_value(rhos, w, apow) for c, w in raw_terms)
    return total


def _oracle_operator_sum(dense: np.ndarray, O: np.ndarray, Q: int) -> complex:
    M, d = dense.shape[:2]
    if d**Q > nk.DIM_CAP:
        raise CapacityError(f"d**Q = {d**Q} exceeds the dense cap {nk.DIM_CAP}")
    if Q >= 4 and M > ORACLE_MAX_M:
        raise CapacityError(f"oracle enumeration for Q={Q} is capped at M <= {ORACLE_MAX_M}")
    total = 0.0 + 0.0j
    for tup in itertools.permutations(range(M), Q):
        total += np.trace(O @ nk.kron(*[dense[r] for r in tup]))
    return total


# --- accumulators for the fast paths ----------------------------------------


class _DenseAccum:
    method = "fast"

    def __init__(self, sh: _Shadows, A: np.ndarray, emax: int):
        self.rho = sh.dense
        self.apow = _apowers(A, emax)
        self._g: dict[int, np.ndarray] = {}

    @cached_property
    def S(self) -> np.ndarray:
        return _tree_sum(self.rho)

    def G(self, e: int) -> np.ndarray:
        """``sum_r rho_r A^e rho_r``."""
        if e not in self._g:
            left = self.rho @ self.apow[e] if e else self.rho
            self._g[e] = _tree_sum(left @ self.rho)
        return self._g[e]

    def diag(self, word) -> complex:
        prod = None
        for e in word:
            blk = self.rho @ self.apow[e] if e else self.rho
            prod = blk if prod is None else prod @ blk
        return complex(_tree_sum(np.trace(prod, axis1=1, axis2=2)))


def _kron_rows(rows: np.ndarray) -> np.ndarray:
    """``(K, n, 2, 2) -> (K, 2^n, 2^n)`` batched tensor products."""
    if rows.shape[1] == 0:
        return np.ones((rows.shape[0], 1, 1), dtype=complex)
    return dense_from_factors(rows)


def _kron_sum(left: np.ndarray, right: np.ndarray, chunk: int = GEMM_CHUNK) -> np.ndarray:
    """``sum_k left_k (x) right_k`` for stacks ``(K, a, a)`` and ``(K, b, b)``."""
    K, dl, dr = left.shape[0], left.shape[1], right.shape[1]
    parts = [
        left[s : s + chunk].reshape(-1, dl * dl).T @ right[s : s + chunk].reshape(-1, dr * dr)
        for s in range(0, K, chunk)
    ]
    t = _tree_sum(np.stack(parts)).reshape(dl, dl, dr, dr)
    return t.transpose(0, 2, 1, 3).reshape(dl * dr, dl * dr)


def sum_of_products(rows: np.ndarray, chunk: int = GEMM_CHUNK) -> np.ndarray:
    """``sum_k (x)_s rows[k, s]`` as a dense matrix, via one GEMM per chunk.

    Sites are split into two halves ``L (x) R`` so that
    ``sum_k L_k (x) R_k`` is a single matrix product of the flattened halves.
    """
    h = rows.shape[1] // 2
    return _kron_sum(_kron_rows(rows[:, :h]), _kron_rows(rows[:, h:]), chunk)


def _compositions(n_sites: int, e: int):
    """Ways to spread ``e`` commuting site tokens over sites, with multiplicities."""
    for combo in itertools.combinations_with_replacement(range(n_sites), e):
        counts = np.bincount(np.array(combo, dtype=int), minlength=n_sites) if e else np.zeros(n_sites, int)
        mult = math.factorial(e) / math.prod(math.factorial(int(c)) for c in counts)
        yield counts, mult


class _FactoredAccum:
    method = "factored-fast"

    def __init__(self, sh: _Shadows, A: np.ndarray, site: np.ndarray, emax: int):
        self.f = sh.factors
        self.M, self.N = self.f.shape[:2]
        self.a = _apowers(site, emax)
        self.apow = _apowers(A, emax)
        self._g: dict[int, np.ndarray] = {}
        self._halves: dict[tuple[int, int, int], np.ndarray] = {}

    @cached_property
    def S(self) -> np.ndarray:
        return sum_of_products(self.f)

    @cached_property
    def _sandwiches(self) -> np.ndarray:
        """``f_s a^c f_s`` for every power ``c``: shape ``(emax+1, N, M, 2, 2)``."""
        f = self.f.transpose(1, 0, 2, 3)
        return np.stack([f @ p @ f for p in self.a])

    def _half(self, sites: range, e: int) -> np.ndarray:
        """Per-round ``f (A_sites)^e f`` restricted to ``sites``: shape ``(M, 2^h, 2^h)``."""
        key = (sites.start, sites.stop, e)
        if key not in self._halves:
            sw = self._sandwiches
            idx = np.array(list(sites), dtype=int)
            out = None
            for counts, mult in _compositions(len(idx), e):
                term = _kron_rows(sw[counts, idx].transpose(1, 0, 2, 3))
                out = mult * term if out is None else out + mult * term
            if out is None:
                # no sites and e > 0: A restricted to an empty half vanishes
                out = np.zeros((self.M, 1, 1), dtype=complex)
            self._halves[key] = out
        return self._halves[key]

    def G(self, e: int) -> np.ndarray:
        """``sum_r rho_r A^e rho_r`` with ``A = A_L + A_R`` split over two site halves."""
        if e not in self._g:
            h = self.N // 2
            left, right = range(h), range(h, self.N)
            total = None
            for el in range(e + 1):
                term = _kron_sum(self._half(left, el), self._half(right, e - el))
                term = math.comb(e, el) * term
                total = term if total is None else total + term
            self._g[e] = total
        return self._g[e]

    def diag(self, word) -> complex:
        """``sum_r Tr(rho_r A^{e_1} rho_r A^{e_2} ...)`` by dynamic programming over sites.

        State: how many tokens of each slot have been placed on earlier sites.
        A slot holding ``e`` tokens split as ``c_s`` per site has
        ``e! / prod c_s!`` orderings, applied as ``1/c!`` per site and ``e!`` at the end.
        """
        word = tuple(word)
        shape = tuple(e + 1 for e in word)
        states = list(itertools.product(*[range(s) for s in shape]))
        local_cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

        def local(s: int, c: tuple[int, ...]) -> np.ndarray:
            key = (s, c)
            if key not in local_cache:
                fs = self.f[:, s]
                prod = None
                for cj in c:
                    blk = fs @ self.a[cj] if cj else fs
                    prod = blk if prod is None else prod @ blk
                w = 1.0 / math.prod(math.factorial(cj) for cj in c)
                local_cache[key] = w * np.trace(prod, axis1=1, axis2=2)
            return local_cache[key]

        table = {st: np.zeros(self.M, dtype=complex) for st in states}
        table[(0,) * len(word)] = np.ones(self.M, dtype=complex)
        for s in range(self.N):
            new = {st: np.zeros(self.M, dtype=complex) for st in states}
            for st, val in table.items():
                if not np.any(val):
                    continue
                for c in itertools.product(*[range(shape[j] - st[j]) for j in range(len(word))]):
                    tgt = tuple(st[j] + c[j] for j in range(len(word)))
                    new[tgt] = new[tgt] + val * local(s, c)
            table = new
        scale = math.prod(math.factorial(e) for e in word)
        return complex(scale * _tree_sum(table[tuple(word)]))


def _word_sum_fast(acc, word: tuple[int, ...]) -> complex:
    """Sum of a Q=2 or Q=3 word over ordered tuples of distinct indices."""
    apow, S = acc.apow, acc.S
    if len(word) == 2:
        x, y = apow[word[0]], apow[word[1]]
        full = np.trace(S @ x @ S @ y)
        return complex(full - acc.diag(word))
    if len(word) == 3:
        x, y, z = (apow[e] for e in word)
        full = np.trace(S @ x @ S @ y @ S @ z)
        ab = np.trace(acc.G(word[0]) @ y @ S @ z)  # a = b
        bc = np.trace(S @ x @ acc.G(word[1]) @ z)  # b = c
        ca = np.trace(S @ y @ acc.G(word[2]) @ x)  # a = c
        return complex(full - ab - bc - ca + 2.0 * acc.diag(word))
    raise ValidationError("fast inclusion-exclusion is implemented for Q in {2, 3} only")


# --- public API ----------------------------------------------------------------


@dataclass(frozen=True)
class FastSums:
    """Word sums over ordered distinct tuples, keyed by canonical word."""

    M: int
    method: str
    pair: dict
    triple: dict


def _pick_accum(sh: _Shadows, A, method: Method, emax: int):
    mat, site = _observable(A, sh.dim)
    if method == "factored" or (method == "auto" and sh.factors is not None and site is not None):
        if sh.factors is None or site is None:
            raise ValidationError("factored path needs local-qubit shadow factors and an observable with site_op")
        return _FactoredAccum(sh, mat, np.asarray(site), emax)
    return _DenseAccum(sh, mat, emax)


def fast_pair_triple_sums(shadows, A, method: Method = "auto") -> FastSums:
    """The word sums behind ``F_0`` and ``F_1`` via inclusion-exclusion."""
    sh = shadows if isinstance(shadows, _Shadows) else _Shadows(shadows)
    acc = _pick_accum(sh, A, method, 2)
    pair = {w: _word_sum_fast(acc, w) for _, w in fisher_kernel(2).terms} if sh.M >= 2 else {}
    triple = {w: _word_sum_fast(acc, w) for _, w in fisher_kernel(3).terms} if sh.M >= 3 else {}
    return FastSums(sh.M, acc.method, pair, triple)


def _require(M: int, need: int, what: str):
    if M < need:
        raise InsufficientDataError(f"{what} needs M >= {need} shadows, got {M}")


def _moment_from_sums(kernel: WordKernel, sums: dict, M: int) -> float:
    total = sum(c * sums[w] for c, w in kernel.terms)
    return float(np.real(total)) / _falling(M, kernel.Q)


def _x2_x3(sh: _Shadows, A, method: Method, need_x3: bool):
    if method == "oracle":
        mat, _ = _observable(A, sh.dim)
        x2 = float(np.real(_oracle_sum(sh.dense, [(4.0, (0, 2)), (-4.0, (1, 1))], 2, mat))) / _falling(sh.M, 2) / 2
        x3 = None
        if need_x3:
            # Literal kernel: 4 Tr(rho1 rho2 [rho3, A] A) = 2 X_3 kernel.
            x3 = float(np.real(_oracle_sum(sh.dense, [(4.0, (0, 0, 2)), (-4.0, (0, 1, 1))], 3, mat))) / _falling(sh.M, 3) / 2
        return x2, x3, "oracle"
    sums = fast_pair_triple_sums(sh, A, method) if need_x3 else None
    if sums is None:
        acc = _pick_accum(sh, A, method, 2)
        pair = {w: _word_sum_fast(acc, w) for _, w in fisher_kernel(2).terms}
        sums = FastSums(sh.M, acc.method, pair, {})
    x2 = _moment_from_sums(fisher_kernel(2), sums.pair, sh.M)
    x3 = _moment_from_sums(fisher_kernel(3), sums.triple, sh.M) if need_x3 else None
    return x2, x3, sums.method


def estimate_F0(shadows, A, method: Method = "auto") -> EstimateResult:
    """``4/(M(M-1)) sum_{r1 != r2} Tr(rho_r1 [rho_r2, A] A)``."""
    sh = _Shadows(shadows)
    _require(sh.M, 2, "F0")
    x2, _, used = _x2_x3(sh, A, method, False)
    return EstimateResult(2.0 * x2, 0, sh.M, used, seed=sh.seed)


def estimate_F1(shadows, A, method: Method = "auto") -> EstimateResult:
    """``2 F0_hat - 4/(M)_3 sum_{distinct} Tr(rho_r1 rho_r2 [rho_r3, A] A)``."""
    sh = _Shadows(shadows)
    _require(sh.M, 3, "F1")
    x2, x3, used = _x2_x3(sh, A, method, True)
    return EstimateResult(2.0 * (2.0 * x2) - 2.0 * x3, 1, sh.M, used, seed=sh.seed)


def estimate_Xq(shadows, O, q: int, A=None, method: Method = "auto") -> EstimateResult:
    """U-statistic of ``Tr(O rho_1 (x) ... (x) rho_q)``.

    ``O`` is a dense ``d^q x d^q`` operator (oracle only) or a :class:`WordKernel`
    (``A`` then supplies the observable in its words).
    """
    sh = _Shadows(shadows)
    _require(sh.M, q, f"X_{q}")
    if isinstance(O, WordKernel):
        if O.Q != q:
            raise ValidationError(f"kernel has Q={O.Q}, asked for q={q}")
        if A is None:
            if any(max(w) for _, w in O.terms):
                raise ValidationError("this kernel needs an observable A")
            A = np.zeros((sh.dim, sh.dim))
        if method != "oracle" and q in (2, 3):
            emax = max(max(w) for _, w in O.terms)
            acc = _pick_accum(sh, A, method, max(emax, 0))
            sums = {w: _word_sum_fast(acc, w) for _, w in O.terms}
            return EstimateResult(_moment_from_sums(O, sums, sh.M), None, sh.M, acc.method, q, sh.seed)
        if method in ("fast", "factored"):
            raise ValidationError("fast paths cover q in {2, 3}; use method='oracle'")
        mat, _ = _observable(A, sh.dim)
        val = float(np.real(_oracle_sum(sh.dense, O.terms, q, mat))) / _falling(sh.M, q)
        return EstimateResult(val, None, sh.M, "oracle", q, sh.seed)
    if method not in ("auto", "oracle"):
        raise ValidationError("a dense operator O is only supported by the oracle path")
    O = nk.as_matrix(O, "O")
    if O.shape != (sh.dim**q, sh.dim**q):
        raise ValidationError(f"O must be {sh.dim**q}x{sh.dim**q}")
    val = float(np.real(_oracle_operator_sum(sh.dense, O, q))) / _falling(sh.M, q)
    return EstimateResult(val, None, sh.M, "oracle", q, sh.seed)


def estimate_Fn(shadows, A, n: int, method: Method = "auto") -> EstimateResult:
    """``2 sum_q C(n+1, q+1) (-1)^q X_{q+2}``; orders 0 and 1 reuse the dedicated estimators."""
    if n < 0:
        raise ValidationError("order n must be >= 0")
    if n == 0:
        return estimate_F0(shadows, A, method)
    if n == 1:
        return estimate_F1(shadows, A, method)
    sh = _Shadows(shadows)
    _require(sh.M, n + 2, f"F{n}")
    if method in ("fast", "factored"):
        raise ValidationError("orders n >= 2 are evaluated by tuple enumeration (method='oracle')")
    mat, _ = _observable(A, sh.dim)
    total = 0.0
    for q in range(n + 1):
        Q = q + 2
        xq = float(np.real(_oracle_sum(sh.dense, fisher_kernel(Q).terms, Q, mat))) / _falling(sh.M, Q)
        total += 2.0 * fisher.binom(n + 1, q + 1) * (-1) ** q * xq
    return EstimateResult(total, n, sh.M, "oracle", seed=sh.seed)


def degenerate_value(rho, A, n: int) -> float:
    """Value every estimator takes when all shadows equal ``rho`` (exact polynomial ``F_n``)."""
    r = nk.as_matrix(getattr(rho, "mat", rho))
    mat, _ = _observable(A, r.shape[0])
    total = 0.0
    for q in range(n + 1):
        Q = q + 2
        apow = _apowers(mat, 2)
        xq = sum(c * _word_value([r] * Q, w, apow) for c, w in fisher_kernel(Q).terms)
        total += 2.0 * fisher.binom(n + 1, q + 1) * (-1) ** q * float(np.real(xq))
    return total
