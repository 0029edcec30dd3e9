"""Randomized-measurement acquisition and classical shadows.

Each round ``r`` owns a fixed block of counter-based uniforms from the
acquisition stream, so a batch of rounds and a single regenerated round see
identical draws. Within a round the block yields, in order, the unitary
(Gaussian normals for CUE, or quench offsets) and one uniform that selects
the outcome through the inverse CDF of the Born distribution.

Born probabilities use ``rho = c 1 + sum_k w_k |phi_k><phi_k|`` with ``c`` the
smallest eigenvalue, so ``Pr[s] = c + sum_k w_k |<s|U|phi_k>|^2``. For a
depolarized pure state only one ``phi_k`` survives, which keeps local
unitaries at ``O(N d)`` per round.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np
from scipy.special import ndtri

from . import numkernel as nk
from . import states as st
from .errors import NumericalIntegrityError, ValidationError

NEG_PROB_TOL = 1e-12
MASS_TOL = 1e-8
CHUNK = 2048


@dataclass(frozen=True)
class QuenchSource:
    """Global unitaries from a Bose-Hubbard quench with uniform random offsets."""

    J: float = 1.0
    U_int: float = 1.0
    T: float = 1.0
    depth: int = 10
    offset_low: float = -2.0
    offset_high: float = 2.0


@dataclass(frozen=True)
class MeasurementScheme:
    kind: Literal["local", "global"]
    space: st.HilbertSpec
    source: Literal["cue"] | QuenchSource = "cue"

    def __post_init__(self):
        if self.kind not in ("local", "global"):
            raise ValidationError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "local" and self.space.kind != "qubits":
            raise ValidationError("local random unitaries need a qubit register")
        if self.kind == "local" and self.source != "cue":
            raise ValidationError("local scheme only supports CUE single-qubit unitaries")
        if isinstance(self.source, QuenchSource) and self.space.kind != "collective":
            raise ValidationError("quench unitaries act on the collective (two-mode) space")

    @classmethod
    def local(cls, N: int) -> "MeasurementScheme":
        return cls("local", st.HilbertSpec.qubits(N))

    @classmethod
    def global_cue(cls, space: st.HilbertSpec) -> "MeasurementScheme":
        return cls("global", space)

    @property
    def label(self) -> str:
        if self.kind == "local":
            return "local"
        return "global-quench" if isinstance(self.source, QuenchSource) else "global-cue"

    @property
    def _n_unitary_draws(self) -> int:
        if self.kind == "local":
            return 8 * self.space.N
        if isinstance(self.source, QuenchSource):
            return self.source.depth
        return 2 * self.space.dim**2

    def draws(self, stream: nk.SeededStream, start: int, count: int):
        """Unitaries and outcome uniforms for rounds ``start .. start+count-1``."""
        n_u = self._n_unitary_draws
        block = stream.uniform_blocks(start, count, n_u + 1)
        pick = block[:, n_u]
        if self.kind == "local":
            normals = ndtri(block[:, :n_u]).reshape(count, self.space.N, 8)
            return nk.cue_batch(2, normals), pick
        if isinstance(self.source, QuenchSource):
            s = self.source
            us = np.stack(
                [
                    st.quench_unitary(
                        self.space.N, s.T, st.sample_offsets(s.depth, s.offset_low, s.offset_high, row), s.J, s.U_int
                    )
                    for row in block[:, :n_u]
                ]
            ) if count else np.zeros((0, self.space.dim, self.space.dim), complex)
            return us, pick
        return nk.cue_batch(self.space.dim, ndtri(block[:, :n_u])), pick


@dataclass(frozen=True)
class MeasurementRecord:
    round: int
    scheme: str
    seed_path: str
    outcome: int

    def bits(self, N: int) -> str:
        return format(self.outcome, f"0{N}b")


# --- Born probabilities ---------------------------------------------------------


def full_unitary(u: np.ndarray) -> np.ndarray:
    """Dense unitary: a ``(N, 2, 2)`` stack of local gates becomes their tensor product."""
    u = np.asarray(u)
    if u.ndim == 3:
        return nk.kron(*u)
    return u


def born_probabilities(rho, unitary) -> np.ndarray:
    """Literal ``<s|U rho U^dag|s>`` (reference implementation)."""
    r = nk.as_matrix(getattr(rho, "mat", rho))
    u = full_unitary(unitary)
    return np.real(np.einsum("si,ij,sj->s", u, r, u.conj()))


def finalize_probabilities(probs: np.ndarray) -> np.ndarray:
    """Clip rounding negatives, check the mass, renormalize (rows of ``probs``)."""
    probs = np.asarray(probs, dtype=float)
    worst = probs.min() if probs.size else 0.0
    if worst < -NEG_PROB_TOL:
        raise NumericalIntegrityError(f"negative Born probability {worst:.3e}")
    probs = np.clip(probs, 0.0, None)
    mass = probs.sum(axis=-1, keepdims=True)
    dev = np.max(np.abs(mass - 1.0)) if mass.size else 0.0
    if dev > MASS_TOL:
        raise NumericalIntegrityError(f"Born probabilities sum to 1 {dev:+.3e}")
    return probs / mass


def sample_outcomes(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling, one outcome per row."""
    cdf = np.cumsum(probs, axis=-1)
    idx = np.sum(cdf < np.asarray(uniforms)[..., None] * cdf[..., -1:], axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


class BornEngine:
    """Born probabilities of a fixed state under batches of unitaries."""

    def __init__(self, rho):
        r = nk.as_matrix(getattr(rho, "mat", rho))
        lam, vec = nk.hermitian_eig(r)
        self.floor = float(lam[0])
        w = lam - self.floor
        keep = w > 1e-15
        self.vectors = vec[:, keep] * np.sqrt(w[keep])  # (d, rank)
        self.dim = r.shape[0]

    def probabilities(self, unitaries: np.ndarray, local: bool = False) -> np.ndarray:
        """Rows of Born probabilities; ``local`` means ``(M, N, 2, 2)`` gate stacks."""
        u = np.asarray(unitaries)
        m = u.shape[0]
        k = self.vectors.shape[1]
        if k == 0:
            return np.full((m, self.dim), self.floor)
        amps = self._apply_local(u) if local else u @ self.vectors
        return self.floor + np.sum(np.abs(amps) ** 2, axis=-1)

    def _apply_local(self, u: np.ndarray) -> np.ndarray:
        m, n = u.shape[:2]
        k = self.vectors.shape[1]
        t = np.broadcast_to(self.vectors.T.reshape((1, k) + (2,) * n), (m, k) + (2,) * n)
        for site in range(n):
            ax = 2 + site
            t = np.moveaxis(t, ax, -1)
            g = u[:, site].swapaxes(-1, -2).reshape((m,) + (1,) * (t.ndim - 3) + (2, 2))
            t = np.moveaxis(t @ g, -1, ax)
        return t.reshape(m, k, self.dim).swapaxes(1, 2)


# --- shadows ----------------------------------------------------------------


def local_factors(unitaries: np.ndarray, outcomes: np.ndarray, N: int) -> np.ndarray:
    """``3 u^dag |s_l><s_l| u - 1`` for every round and site: shape ``(M, N, 2, 2)``."""
    outcomes = np.asarray(outcomes, dtype=np.int64)
    bits = (outcomes[:, None] >> (N - 1 - np.arange(N))[None, :]) & 1
    rows = np.take_along_axis(unitaries, bits[:, :, None, None], axis=2)[:, :, 0, :]  # <s|u
    outer = rows.conj()[..., :, None] * rows[..., None, :]
    return 3.0 * outer - np.eye(2)


def global_shadows(unitaries: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    """``(d + 1) U^dag |s><s| U - 1``; with ``d = N + 1`` this is the ``(N + 2)`` form."""
    d = unitaries.shape[-1]
    rows = unitaries[np.arange(len(outcomes)), np.asarray(outcomes, dtype=np.int64), :]
    return (d + 1) * (rows.conj()[:, :, None] * rows[:, None, :]) - np.eye(d)


def dense_from_factors(factors: np.ndarray) -> np.ndarray:
    """Batched tensor product of per-site ``2x2`` factors: ``(M, N, 2, 2) -> (M, d, d)``."""
    m, n = factors.shape[:2]
    out = factors[:, 0]
    for site in range(1, n):
        f = factors[:, site]
        out = (out[:, :, None, :, None] * f[:, None, :, None, :]).reshape(m, out.shape[1] * 2, out.shape[2] * 2)
    return out


@dataclass
class ShadowSnapshot:
    record: MeasurementRecord
    factors: np.ndarray | None = None
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = dense_from_factors(self.factors[None])[0]
        return self._dense


@dataclass
class ShadowCollection(Sequence):
    """Shadows of one acquisition, stored as arrays; dense matrices are built lazily."""

    scheme: MeasurementScheme
    unitaries: np.ndarray
    outcomes: np.ndarray
    labels: Sequence[str] | None = None
    rounds: np.ndarray | None = None

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.int64)
        if self.rounds is None:
            self.rounds = np.arange(len(self.outcomes))
        d = self.scheme.space.dim
        if len(self.outcomes) and (self.outcomes.min() < 0 or self.outcomes.max() >= d):
            raise ValidationError("outcome outside the basis range of the space")

    def __len__(self) -> int:
        return len(self.outcomes)

    @cached_property
    def factors(self) -> np.ndarray | None:
        if self.scheme.kind != "local":
            return None
        return local_factors(self.unitaries, self.outcomes, self.scheme.space.N)

    @cached_property
    def dense(self) -> np.ndarray:
        if self.scheme.kind == "local":
            return dense_from_factors(self.factors)
        return global_shadows(self.unitaries, self.outcomes)

    def record(self, i: int) -> MeasurementRecord:
        label = self.labels[i] if self.labels is not None else ""
        return MeasurementRecord(int(self.rounds[i]), self.scheme.label, label, int(self.outcomes[i]))

    def records(self) -> list[MeasurementRecord]:
        return [self.record(i) for i in range(len(self))]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        i = int(i)
        if self.scheme.kind == "local":
            return ShadowSnapshot(self.record(i), self.factors[i])
        return ShadowSnapshot(self.record(i), None, self.dense[i])

    def __iter__(self) -> Iterator[ShadowSnapshot]:
        for i in range(len(self)):
            yield self[i]


class _Labels(Sequence):
    """Seed-path labels computed on demand (avoids M string allocations)."""

    def __init__(self, stream: nk.SeededStream, rounds: np.ndarray):
        self.stream, self.rounds = stream, rounds

    def __len__(self):
        return len(self.rounds)

    def __getitem__(self, i):
        return self.stream.label(int(self.rounds[i]))


def _simulate(rho, scheme: MeasurementScheme, stream: nk.SeededStream, start: int, count: int, engine=None):
    engine = engine or BornEngine(rho)
    us, picks = scheme.draws(stream, start, count)
    probs = finalize_probabilities(engine.probabilities(us, scheme.kind == "local"))
    return us, sample_outcomes(probs, picks)


def _check_space(rho, scheme):
    if isinstance(rho, st.DensityMatrix) and rho.space != scheme.space:
        raise ValidationError(f"state on {rho.space} but scheme on {scheme.space}")
    d = np.asarray(getattr(rho, "mat", rho)).shape[0]
    if d != scheme.space.dim:
        raise ValidationError(f"state dimension {d} does not match scheme dimension {scheme.space.dim}")


def simulate_round(rho, scheme: MeasurementScheme, stream: nk.SeededStream, r: int = 0) -> MeasurementRecord:
    """One randomized-measurement round; reproducible from ``(stream, r)``."""
    _check_space(rho, scheme)
    _, out = _simulate(rho, scheme, stream, r, 1)
    return MeasurementRecord(int(r), scheme.label, stream.label(r), int(out[0]))


def acquire(rho, scheme: MeasurementScheme, M: int, stream: nk.SeededStream) -> ShadowCollection:
    """``M`` independent rounds; round ``r`` matches ``simulate_round(..., r)``."""
    if M < 1:
        raise ValidationError("acquire needs M >= 1")
    _check_space(rho, scheme)
    engine = BornEngine(rho)
    us, outs = [], []
    for start in range(0, M, CHUNK):
        u, o = _simulate(rho, scheme, stream, start, min(CHUNK, M - start), engine)
        us.append(u)
        outs.append(o)
    rounds = np.arange(M)
    return ShadowCollection(scheme, np.concatenate(us), np.concatenate(outs), _Labels(stream, rounds), rounds)


def regenerate_unitary(record: MeasurementRecord, scheme: MeasurementScheme) -> np.ndarray:
    stream, r = nk.SeededStream.from_label(record.seed_path)
    if r is None:
        raise ValidationError(f"seed path {record.seed_path!r} carries no round index")
    us, _ = scheme.draws(stream, r, 1)
    return us[0]


def build_shadow(record: MeasurementRecord, scheme: MeasurementScheme) -> ShadowSnapshot:
    """Classical shadow of one record, with the unitary regenerated from its seed path."""
    if record.scheme != scheme.label:
        raise ValidationError(f"record was taken with scheme {record.scheme!r}, not {scheme.label!r}")
    if not 0 <= record.outcome < scheme.space.dim:
        raise ValidationError(f"outcome {record.outcome} outside the basis of {scheme.space}")
    u = regenerate_unitary(record, scheme)
    if scheme.kind == "local":
        return ShadowSnapshot(record, local_factors(u[None], [record.outcome], scheme.space.N)[0])
    return ShadowSnapshot(record, None, global_shadows(u[None], [record.outcome])[0])


def shadows_from_records(records: Iterable[MeasurementRecord], scheme: MeasurementScheme) -> ShadowCollection:
    records = list(records)
    if not records:
        raise ValidationError("no records")
    for rec in records:
        if rec.scheme != scheme.label:
            raise ValidationError(f"record was taken with scheme {rec.scheme!r}, not {scheme.label!r}")
    parsed = [nk.SeededStream.from_label(rec.seed_path) for rec in records]
    us = np.empty((len(records),) + ((scheme.space.N, 2, 2) if scheme.kind == "local" else (scheme.space.dim,) * 2), complex)
    # Batch contiguous rounds of the same stream.
    i = 0
    while i < len(records):
        stream, r0 = parsed[i]
        if r0 is None:
            raise ValidationError(f"seed path {records[i].seed_path!r} carries no round index")
        j = i + 1
        while j < len(records) and parsed[j][0] == stream and parsed[j][1] == r0 + (j - i):
            j += 1
        us[i:j] = scheme.draws(stream, r0, j - i)[0]
        i = j
    return ShadowCollection(
        scheme,
        us,
        [rec.outcome for rec in records],
        [rec.seed_path for rec in records],
        np.array([rec.round for rec in records]),
    )


# --- CSV interchange -------------------------------------------------------------

CSV_COLUMNS = ("round", "scheme", "seed_path", "outcome")


def write_records(fh, records: Iterable[MeasurementRecord], space: st.HilbertSpec) -> None:
    """Line-oriented CSV; qubit outcomes are bitstrings (site 0 first), Fock outcomes integers."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        out = rec.bits(space.N) if space.kind == "qubits" else str(rec.outcome)
        w.writerow([rec.round, rec.scheme, rec.seed_path, out])


def read_records(fh, space: st.HilbertSpec) -> list[MeasurementRecord]:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
        raise ValidationError(f"record CSV must have columns {CSV_COLUMNS}, got {reader.fieldnames}")
    out = []
    for row in reader:
        raw = row["outcome"].strip()
        try:
            if space.kind == "qubits":
                if len(raw) != space.N or set(raw) - {"0", "1"}:
                    raise ValueError(raw)
                outcome = int(raw, 2)
            else:
                outcome = int(raw)
            rnd = int(row["round"])
        except ValueError as exc:
            raise ValidationError(f"malformed record row {row}") from exc
        if not 0 <= outcome < space.dim:
            raise ValidationError(f"outcome {raw!r} outside the basis of {space}")
        out.append(MeasurementRecord(rnd, row["scheme"], row["seed_path"], outcome))
    return out
