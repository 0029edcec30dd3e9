"""Dense complex linear algebra, permutation operators and seeded randomness.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Every public
function validates shapes and returns a fresh array; nothing here mutates its
inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import CapacityError, ValidationError

DIM_CAP = 4096
HERMITIAN_TOL = 1e-10


def _cap(cap: int | None) -> int:
    return DIM_CAP if cap is None else cap


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    return m


def _square(x, name: str = "matrix") -> np.ndarray:
    m = as_matrix(x, name)
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    return m


def hermiticity_defect(h) -> float:
    """Max-abs entry of ``H - H^dagger``."""
    m = _square(h)
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


class HermitianEigen(NamedTuple):
    eigenvalues: np.ndarray  # ascending, real
    eigenvectors: np.ndarray  # columns


def hermitian_eig(h, tol: float = HERMITIAN_TOL) -> HermitianEigen:
    """Eigendecomposition of a Hermitian matrix (ascending eigenvalues).

    Inputs within ``tol`` of Hermitian are symmetrized first; anything further
    off raises :class:`ValidationError`. LAPACK ``zheevd`` via
    :func:`numpy.linalg.eigh` does the work and is deterministic for a fixed
    input.
    """
    m = _square(h, "H")
    defect = hermiticity_defect(m)
    if defect > tol:
        raise ValidationError(
            f"matrix is not Hermitian: max|H - H^dagger| = {defect:.3e} > {tol:.1e}"
        )
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return HermitianEigen(w, v)


def expm_hermitian(h, t: float) -> np.ndarray:
    """``exp(-i t H)`` for Hermitian ``H`` through its eigendecomposition."""
    w, v = hermitian_eig(h)
    return (v * np.exp(-1j * t * w)) @ v.conj().T


# --- standard kernels -------------------------------------------------------


def kron(*mats) -> np.ndarray:
    if not mats:
        raise ValidationError("kron needs at least one operand")
    out = as_matrix(mats[0])
    for m in mats[1:]:
        out = np.kron(out, as_matrix(m))
    return out


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    return a @ b


def trace(a) -> complex:
    return complex(np.trace(_square(a)))


def commutator(b, c) -> np.ndarray:
    b, c = _square(b, "B"), _square(c, "C")
    if b.shape != c.shape:
        raise ValidationError(f"shape mismatch in commutator: {b.shape} vs {c.shape}")
    return b @ c - c @ b


def matrix_power(rho, j: int) -> np.ndarray:
    """``rho**j`` by repeated multiplication (``j >= 0``)."""
    m = _square(rho)
    if j < 0:
        raise ValidationError("matrix_power needs j >= 0")
    out = np.eye(m.shape[0], dtype=complex)
    for _ in range(j):
        out = out @ m
    return out


def is_unitary(u, tol: float = 1e-12) -> bool:
    m = _square(u)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


# --- permutation operators ----------------------------------------------------


def _check_copies(q: int, local_dim: int, cap: int | None) -> int:
    if q < 1 or local_dim < 1:
        raise ValidationError("need q >= 1 and local_dim >= 1")
    total = local_dim**q
    if total > _cap(cap):
        raise CapacityError(f"local_dim**q = {total} exceeds the dimension cap {_cap(cap)}")
    return total


def general_permutation_operator(perm: Sequence[int], local_dim: int, cap: int | None = None) -> np.ndarray:
    """Operator ``|i_perm[0], ..., i_perm[q-1]><i_0, ..., i_{q-1}|`` (0-based ``perm``)."""
    perm = tuple(int(p) for p in perm)
    q = len(perm)
    if sorted(perm) != list(range(q)):
        raise ValidationError(f"{perm} is not a permutation of 0..{q - 1}")
    total = _check_copies(q, local_dim, cap)
    digits = np.indices((local_dim,) * q).reshape(q, -1)
    src = np.arange(total)
    dst = np.ravel_multi_index(digits[list(perm)], (local_dim,) * q)
    out = np.zeros((total, total), dtype=complex)
    out[dst, src] = 1.0
    return out


def cyclic_permutation_operator(q: int, local_dim: int, cap: int | None = None) -> np.ndarray:
    """Cyclic shift ``|i_1 ... i_q> -> |i_2 ... i_q i_1>`` on ``q`` copies."""
    return general_permutation_operator([(k + 1) % q for k in range(q)], local_dim, cap)


def all_permutations(q: int) -> Iterable[tuple[int, ...]]:
    return itertools.permutations(range(q))


def partial_trace(mat, keep: Iterable[int], local_dim: int, cap: int | None = None) -> np.ndarray:
    """Trace out every copy not listed in ``keep`` (0-based copy indices).

    Kept copies stay in increasing order. Keeping nothing returns a 1x1 matrix
    holding the full trace.
    """
    m = _square(mat, "Q")
    total = m.shape[0]
    if total > _cap(cap):
        raise CapacityError(f"dimension {total} exceeds the dimension cap {_cap(cap)}")
    q = round(math.log(total, local_dim)) if local_dim > 1 else 1
    if local_dim**q != total:
        raise ValidationError(f"dimension {total} is not a power of local_dim={local_dim}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= q for k in keep):
        raise ValidationError(f"copy indices {keep} out of range for q={q}")
    t = m.reshape((local_dim,) * (2 * q))
    traced = [k for k in range(q) if k not in keep]
    # Trace pairs of axes, highest first so remaining axis numbers stay valid.
    nq = q
    for k in sorted(traced, reverse=True):
        t = np.trace(t, axis1=k, axis2=k + nq)
        nq -= 1
    kd = local_dim ** len(keep)
    return t.reshape(kd, kd)


# --- randomness ----------------------------------------------------------------

_OPEN_SHIFT = 2.0**-54


@dataclass(frozen=True)
class SeededStream:
    """Deterministic random source addressed by ``(master_seed, path)``.

    ``child`` forks a sub-stream without touching shared state. Two kinds of
    draws are offered: :meth:`generator` for free-form use, and
    :meth:`uniform_blocks`, a counter-based layout where row ``r`` is a fixed
    function of ``(master_seed, path, r)`` so a batch of rounds and a single
    regenerated round agree bit-for-bit.
    """

    master_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *idx: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.path + tuple(idx))

    def _seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seed_sequence()))

    def uniform_blocks(self, start: int, count: int, width: int) -> np.ndarray:
        """``(count, width)`` uniforms in the open interval (0, 1) for rows ``start..``."""
        if count < 0 or width < 1 or start < 0:
            raise ValidationError("uniform_blocks needs start >= 0, count >= 0, width >= 1")
        key = self._seed_sequence().generate_state(2, np.uint64)
        per_row = -(-width // 4)  # Philox emits 4 doubles per counter step
        bitgen = np.random.Philox(key=key, counter=start * per_row)
        raw = np.random.Generator(bitgen).random(count * per_row * 4)
        return raw.reshape(count, per_row * 4)[:, :width] + _OPEN_SHIFT

    def normals_and_uniforms(self, start: int, count: int, n_normal: int, n_uniform: int):
        block = self.uniform_blocks(start, count, n_normal + n_uniform)
        return ndtri(block[:, :n_normal]), block[:, n_normal:]

    def label(self, r: int | None = None) -> str:
        parts = list(self.path) + ([] if r is None else [r])
        return f"{self.master_seed}:" + "/".join(str(p) for p in parts)

    @classmethod
    def from_label(cls, label: str) -> tuple["SeededStream", int | None]:
        """Inverse of :meth:`label` with a round index: returns ``(stream, r)``."""
        try:
            seed, _, rest = label.partition(":")
            parts = [int(p) for p in rest.split("/") if p != ""]
            master = int(seed)
        except ValueError as exc:
            raise ValidationError(f"malformed seed path {label!r}") from exc
        if not parts:
            return cls(master), None
        return cls(master, tuple(parts[:-1])), parts[-1]


def haar_from_gaussians(z: np.ndarray) -> np.ndarray:
    """QR of complex Gaussian matrices with the diagonal phase fix (stacked).

    ``z`` has shape ``(..., d, d)`` of standard complex normals; the result is
    Haar-distributed on U(d).
    """
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    phases = diag / np.where(np.abs(diag) == 0, 1.0, np.abs(diag))
    return q * phases[..., None, :]


def cue_batch(dim: int, normals: np.ndarray) -> np.ndarray:
    """Stack of CUE matrices from ``(..., 2*dim*dim)`` standard normals."""
    g = normals.reshape(normals.shape[:-1] + (2, dim, dim))
    z = (g[..., 0, :, :] + 1j * g[..., 1, :, :]) / math.sqrt(2.0)
    return haar_from_gaussians(z)


def cue_sample(dim: int, stream: SeededStream) -> np.ndarray:
    """One Haar-random ``dim x dim`` unitary drawn from ``stream``."""
    if dim < 1:
        raise ValidationError("cue_sample needs dim >= 1")
    normals, _ = stream.normals_and_uniforms(0, 1, 2 * dim * dim, 0)
    return cue_batch(dim, normals[0])
