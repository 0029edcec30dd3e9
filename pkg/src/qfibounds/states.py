"""States, observables and two-well Bose-Hubbard dynamics.

Two kinds of Hilbert space appear: ``N`` qubits (``d = 2**N``) and the
fixed-``N`` sector of two bosonic modes (``d = N + 1``). Fock states are
ordered ``|N,0>, |N-1,1>, ..., |0,N>``, i.e. basis index ``s`` holds
``n1 = N - s`` particles in the first (left) mode.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import numkernel as nk
from .errors import CapacityError, ValidationError

MAX_QUBITS = 12
STATE_TOL = 1e-10

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class HilbertSpec:
    kind: Literal["qubits", "collective"]
    N: int

    def __post_init__(self):
        if self.kind not in ("qubits", "collective"):
            raise ValidationError(f"unknown Hilbert space kind {self.kind!r}")
        if self.N < 1:
            raise ValidationError("need N >= 1")

    @property
    def dim(self) -> int:
        return 2**self.N if self.kind == "qubits" else self.N + 1

    @classmethod
    def qubits(cls, N: int) -> "HilbertSpec":
        return cls("qubits", N)

    @classmethod
    def collective(cls, N: int) -> "HilbertSpec":
        return cls("collective", N)


def _check_space(space: HilbertSpec, mat: np.ndarray, name: str):
    if mat.shape != (space.dim, space.dim):
        raise ValidationError(f"{name} has shape {mat.shape}, space needs {(space.dim, space.dim)}")


@dataclass(frozen=True)
class DensityMatrix:
    space: HilbertSpec
    mat: np.ndarray
    check_psd: InitVar[bool] = True

    def __post_init__(self, check_psd):
        m = nk.as_matrix(self.mat, "rho")
        _check_space(self.space, m, "rho")
        defect = nk.hermiticity_defect(m)
        if defect > STATE_TOL:
            raise ValidationError(f"rho is not Hermitian (defect {defect:.2e})")
        m = 0.5 * (m + m.conj().T)
        tr = np.trace(m).real
        if abs(tr - 1.0) > STATE_TOL:
            raise ValidationError(f"rho has trace {tr!r}, expected 1")
        lam_min = np.linalg.eigvalsh(m)[0] if check_psd else 0.0
        if lam_min < -STATE_TOL:
            raise ValidationError(f"rho is not positive semidefinite (min eigenvalue {lam_min:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.space.dim

    def purity(self) -> float:
        return float(np.einsum("ij,ji->", self.mat, self.mat).real)


@dataclass(frozen=True)
class Observable:
    """Hermitian operator; ``site_op`` is set when ``A = sum_l site_op^(l)`` on qubits."""

    space: HilbertSpec
    mat: np.ndarray
    site_op: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        m = nk.as_matrix(self.mat, "A")
        _check_space(self.space, m, "A")
        defect = nk.hermiticity_defect(m)
        if defect > STATE_TOL:
            raise ValidationError(f"observable is not Hermitian (defect {defect:.2e})")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)
        if self.site_op is not None:
            if self.space.kind != "qubits":
                raise ValidationError("a factored site operator only makes sense on qubits")
            s = nk.as_matrix(self.site_op, "site_op")
            if s.shape != (2, 2):
                raise ValidationError("site_op must be 2x2")
            s.setflags(write=False)
            object.__setattr__(self, "site_op", s)


def pure(space: HilbertSpec, psi) -> DensityMatrix:
    v = np.asarray(psi, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return DensityMatrix(space, np.outer(v, v.conj()), check_psd=False)


def ghz_vector(N: int) -> np.ndarray:
    if not 1 <= N <= MAX_QUBITS:
        raise CapacityError(f"GHZ states supported for 1 <= N <= {MAX_QUBITS}, got {N}")
    v = np.zeros(2**N, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return v


def ghz_state(N: int) -> DensityMatrix:
    return pure(HilbertSpec.qubits(N), ghz_vector(N))


def noon_state(N: int) -> DensityMatrix:
    space = HilbertSpec.collective(N)
    if space.dim > nk.DIM_CAP:
        raise CapacityError(f"N00N dimension {space.dim} exceeds cap {nk.DIM_CAP}")
    v = np.zeros(space.dim, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return pure(space, v)


def maximally_mixed(space: HilbertSpec) -> DensityMatrix:
    return DensityMatrix(space, np.eye(space.dim) / space.dim, check_psd=False)


def depolarize(rho: DensityMatrix, p: float) -> DensityMatrix:
    """``(1 - p) rho + p * 1/d``."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"noise strength p must lie in [0, 1], got {p}")
    d = rho.dim
    # Convex mixture of two valid states stays PSD.
    return DensityMatrix(rho.space, (1 - p) * rho.mat + p * np.eye(d) / d, check_psd=False)


def noisy_ghz(N: int, p: float) -> DensityMatrix:
    return depolarize(ghz_state(N), p)


def noisy_noon(N: int, p: float) -> DensityMatrix:
    return depolarize(noon_state(N), p)


def _axis_operator(axis) -> np.ndarray:
    if isinstance(axis, str):
        if axis not in PAULI:
            raise ValidationError(f"axis must be x, y, z or a 3-vector, got {axis!r}")
        return PAULI[axis]
    n = np.asarray(axis, dtype=float).reshape(-1)
    if n.shape != (3,):
        raise ValidationError("axis vector must have three components")
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValidationError("axis vector has zero norm")
    n = n / norm
    return n[0] * PAULI["x"] + n[1] * PAULI["y"] + n[2] * PAULI["z"]


def embed_site(op: np.ndarray, site: int, N: int) -> np.ndarray:
    left = np.eye(2**site)
    right = np.eye(2 ** (N - site - 1))
    return np.kron(np.kron(left, op), right)


def collective_spin_observable(N: int, axis="z") -> Observable:
    """``A = 1/2 sum_l sigma_mu^(l)`` on ``N`` qubits."""
    space = HilbertSpec.qubits(N)
    if space.dim > nk.DIM_CAP:
        raise CapacityError(f"2**N = {space.dim} exceeds cap {nk.DIM_CAP}")
    site = 0.5 * _axis_operator(axis)
    mat = site
    for n in range(1, N):
        # A_{n+1} = A_n (x) 1 + 1_{2^n} (x) a
        mat = np.kron(mat, np.eye(2)) + np.kron(np.eye(2**n), site)
    return Observable(space, mat, site_op=site)


def number_difference_observable(N: int) -> Observable:
    """``A = n1 - n2`` in the Fock ordering of :func:`noon_state`."""
    space = HilbertSpec.collective(N)
    n1 = N - np.arange(N + 1)
    return Observable(space, np.diag((2 * n1 - N).astype(complex)))


def bose_hubbard_hamiltonian(N: int, J: float, U_int: float, delta: float) -> Observable:
    """Two-well Bose-Hubbard Hamiltonian in the fixed-``N`` sector.

    ``H = J/2 (a_L^dag a_R + h.c.) + U/2 sum_l n_l (n_l - 1) + delta (n_L - n_R)``.
    """
    for v in (J, U_int, delta):
        if not np.isfinite(v):
            raise ValidationError("Bose-Hubbard parameters must be finite")
    n1 = N - np.arange(N + 1)  # left-well occupation per basis index
    n2 = N - n1
    diag = 0.5 * U_int * (n1 * (n1 - 1) + n2 * (n2 - 1)) + delta * (n1 - n2)
    h = np.diag(diag.astype(complex))
    # a_L^dag a_R |n1, n2> = sqrt((n1 + 1) n2) |n1 + 1, n2 - 1>; index s -> s - 1.
    for s in range(1, N + 1):
        amp = 0.5 * J * np.sqrt((n1[s] + 1) * n2[s])
        h[s - 1, s] = amp
        h[s, s - 1] = amp
    return Observable(HilbertSpec.collective(N), h)


def quench_unitary(N: int, T: float, offsets: Sequence[float], J: float, U_int: float) -> np.ndarray:
    """``U = exp(-i H_eta T) ... exp(-i H_1 T)`` with ``H_t`` using ``offsets[t-1]``."""
    offsets = list(offsets)
    if len(offsets) < 1:
        raise ValidationError("quench needs at least one offset (depth >= 1)")
    u = np.eye(N + 1, dtype=complex)
    for delta in offsets:
        h = bose_hubbard_hamiltonian(N, J, U_int, delta).mat
        u = nk.expm_hermitian(h, T) @ u
    return u


def sample_offsets(depth: int, low: float, high: float, uniforms=None, rng=None) -> np.ndarray:
    """Uniform random offsets on ``[low, high]`` for a quench of given depth."""
    if uniforms is None:
        rng = rng or np.random.default_rng()
        uniforms = rng.random(depth)
    u = np.asarray(uniforms, dtype=float)
    return low + (high - low) * u


def random_density_matrix(space: HilbertSpec, rank: int, stream: nk.SeededStream, spectrum=None) -> DensityMatrix:
    """Random state: uniform-simplex spectrum on ``rank`` levels, CUE eigenbasis.

    ``spectrum`` overrides the sampled eigenvalues (it is normalized).
    """
    d = space.dim
    if not 1 <= rank <= d:
        raise ValidationError(f"rank must lie in [1, {d}], got {rank}")
    gen = stream.child(0).generator()
    if spectrum is None:
        cuts = np.sort(gen.random(rank - 1))
        lam = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
    else:
        lam = np.asarray(spectrum, dtype=float)
        if lam.shape != (rank,) or np.any(lam < 0):
            raise ValidationError("spectrum must hold rank non-negative values")
        lam = lam / lam.sum()
    u = nk.cue_sample(d, stream.child(1))
    v = u[:, :rank]
    mat = (v * lam) @ v.conj().T
    return DensityMatrix(space, 0.5 * (mat + mat.conj().T))


def random_observable(space: HilbertSpec, stream: nk.SeededStream, scale: float = 1.0) -> Observable:
    """Random Hermitian matrix with i.i.d. complex Gaussian entries (test fixture)."""
    g = stream.generator()
    d = space.dim
    z = g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))
    return Observable(space, scale * 0.5 * (z + z.conj().T))
