"""Finite-dimensional quantum state and operator algebra.

Everything here works in units with hbar = 1; matrices are dense complex
arrays and dimensions are expected to stay small (d <~ 200).  All wrapper
types are immutable value objects: the backing arrays are copied on
construction and marked read-only, so instances can be shared freely across
threads.  Randomness is always explicit (a seed goes in, a value comes out).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "DensityMatrix",
    "UnitaryOperator",
    "Observable",
    "ProjectorSet",
    "ChoiMatrix",
    "CpTpReport",
    "evolve_unitary",
    "hamiltonian_unitary",
    "apply_unitary",
    "choi_of_map",
    "cp_tp_check",
    "random_density_matrix",
    "random_unitary",
    "trace_norm",
    "trace_distance",
    "hermitian_expm",
    "annihilation_operator",
    "position_operator",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
]

# Default constructor tolerances; every constructor takes overrides.
HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
UNITARITY_TOL = 1e-10
PROJECTOR_TOL = 1e-10

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


class ValidationError(ValueError):
    """An input failed one of the declared invariants."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, order="C")
    a.setflags(write=False)
    return a


def _check_square(entries: np.ndarray, name: str) -> np.ndarray:
    entries = np.asarray(entries, dtype=complex)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ValidationError(f"{name}: expected a square matrix, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise ValidationError(f"{name}: entries must be finite")
    return entries


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def trace_norm(a: np.ndarray) -> float:
    """Sum of singular values of ``a``."""
    return float(np.sum(np.linalg.svd(np.asarray(a, dtype=complex), compute_uv=False)))


def trace_distance(a: "DensityMatrix | np.ndarray", b: "DensityMatrix | np.ndarray") -> float:
    am = a.entries if isinstance(a, DensityMatrix) else np.asarray(a)
    bm = b.entries if isinstance(b, DensityMatrix) else np.asarray(b)
    return trace_norm(am - bm)


@dataclass(frozen=True)
class DensityMatrix:
    """A d x d density matrix: Hermitian, unit trace, positive semidefinite."""

    entries: np.ndarray
    herm_tol: float = field(default=HERMITICITY_TOL, repr=False, compare=False)
    trace_tol: float = field(default=TRACE_TOL, repr=False, compare=False)
    psd_tol: float = field(default=PSD_TOL, repr=False, compare=False)

    def __post_init__(self):
        entries = _check_square(self.entries, "DensityMatrix")
        if max_abs(entries - entries.conj().T) > self.herm_tol:
            raise ValidationError("DensityMatrix: not Hermitian within tolerance")
        if abs(np.trace(entries).real - 1.0) > self.trace_tol or abs(np.trace(entries).imag) > self.trace_tol:
            raise ValidationError(f"DensityMatrix: trace {np.trace(entries)} is not 1 within tolerance")
        evals = np.linalg.eigvalsh(0.5 * (entries + entries.conj().T))
        if evals[0] < -self.psd_tol:
            raise ValidationError(f"DensityMatrix: smallest eigenvalue {evals[0]:.3e} below -{self.psd_tol:.0e}")
        object.__setattr__(self, "entries", _freeze(entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def pure(cls, vec: Sequence[complex], **tols) -> "DensityMatrix":
        v = np.asarray(vec, dtype=complex)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValidationError("pure state: zero vector")
        v = v / n
        return cls(np.outer(v, v.conj()), **tols)

    @classmethod
    def basis_state(cls, dim: int, index: int) -> "DensityMatrix":
        v = np.zeros(dim, dtype=complex)
        v[index] = 1.0
        return cls.pure(v)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def from_probabilities(cls, probs: Sequence[float]) -> "DensityMatrix":
        return cls(np.diag(np.asarray(probs, dtype=complex)))

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)

    def expectation(self, obs: "Observable | np.ndarray") -> float:
        m = obs.entries if isinstance(obs, Observable) else np.asarray(obs)
        return float(np.trace(m @ self.entries).real)


@dataclass(frozen=True)
class UnitaryOperator:
    """A d x d unitary, validated via ||U^dag U - 1||_max."""

    entries: np.ndarray
    tol: float = field(default=UNITARITY_TOL, repr=False, compare=False)

    def __post_init__(self):
        entries = _check_square(self.entries, "UnitaryOperator")
        d = entries.shape[0]
        if max_abs(entries.conj().T @ entries - np.eye(d)) > self.tol:
            raise ValidationError("UnitaryOperator: U^dag U deviates from identity")
        object.__setattr__(self, "entries", _freeze(entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "UnitaryOperator":
        return cls(np.eye(dim, dtype=complex))


@dataclass(frozen=True)
class Observable:
    """A Hermitian operator (Hamiltonians, measured quantities)."""

    entries: np.ndarray
    tol: float = field(default=HERMITICITY_TOL, repr=False, compare=False)

    def __post_init__(self):
        entries = _check_square(self.entries, "Observable")
        if max_abs(entries - entries.conj().T) > self.tol:
            raise ValidationError("Observable: not Hermitian within tolerance")
        object.__setattr__(self, "entries", _freeze(entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ProjectorSet:
    """A complete orthogonal family of projectors with classical labels.

    Each projector must be Hermitian and idempotent, distinct projectors must
    be mutually orthogonal, and the family must sum to the identity.
    """

    labels: tuple
    projectors: tuple
    tol: float = field(default=PROJECTOR_TOL, repr=False, compare=False)

    def __post_init__(self):
        if len(self.labels) != len(self.projectors):
            raise ValidationError("ProjectorSet: labels and projectors differ in length")
        mats = [_check_square(p, "ProjectorSet") for p in self.projectors]
        d = mats[0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for i, p in enumerate(mats):
            if p.shape[0] != d:
                raise ValidationError("ProjectorSet: mixed dimensions")
            if max_abs(p - p.conj().T) > self.tol:
                raise ValidationError(f"ProjectorSet: projector {i} not Hermitian")
            if max_abs(p @ p - p) > self.tol:
                raise ValidationError(f"ProjectorSet: projector {i} not idempotent")
            total += p
        for i in range(len(mats)):
            for j in range(i + 1, len(mats)):
                if max_abs(mats[i] @ mats[j]) > self.tol:
                    raise ValidationError(f"ProjectorSet: projectors {i},{j} not orthogonal")
        if max_abs(total - np.eye(d)) > self.tol:
            raise ValidationError("ProjectorSet: projectors do not sum to identity")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "projectors", tuple(_freeze(p) for p in mats))

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    @classmethod
    def from_basis(cls, vectors: np.ndarray, labels: Sequence | None = None) -> "ProjectorSet":
        """Rank-1 projectors onto the columns of a unitary matrix."""
        vectors = np.asarray(vectors, dtype=complex)
        d = vectors.shape[1]
        if labels is None:
            labels = list(range(d))
        projs = [np.outer(vectors[:, i], vectors[:, i].conj()) for i in range(d)]
        return cls(tuple(labels), tuple(projs))

    @classmethod
    def computational(cls, dim: int) -> "ProjectorSet":
        return cls.from_basis(np.eye(dim, dtype=complex))

    @classmethod
    def from_observable(cls, obs: Observable, decimals: int = 10) -> "ProjectorSet":
        """Eigenprojectors of ``obs``; degenerate eigenvalues share a label."""
        evals, evecs = np.linalg.eigh(obs.entries)
        rounded = np.round(evals, decimals)
        labels, projs = [], []
        for val in sorted(set(rounded.tolist())):
            cols = evecs[:, rounded == val]
            labels.append(float(val))
            projs.append(cols @ cols.conj().T)
        return cls(tuple(labels), tuple(projs))


@dataclass(frozen=True)
class ChoiMatrix:
    """Choi matrix of a map on d-dimensional states.

    Convention: C = sum_ij E_ij (x) M(E_ij) over matrix units E_ij, so the
    map is trace preserving iff the partial trace over the output factor is
    the identity, and completely positive iff C >= 0.
    """

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        entries = _check_square(self.entries, "ChoiMatrix")
        if entries.shape[0] != self.dim * self.dim:
            raise ValidationError("ChoiMatrix: entries must be d^2 x d^2")
        object.__setattr__(self, "entries", _freeze(entries))

    def output_partial_trace(self) -> np.ndarray:
        d = self.dim
        return np.einsum("iaja->ij", self.entries.reshape(d, d, d, d))


@dataclass(frozen=True)
class CpTpReport:
    min_eigenvalue: float
    tp_deficit: float
    is_cp: bool
    is_tp: bool


def hermitian_expm(h: np.ndarray, scale: complex = -1.0j) -> np.ndarray:
    """exp(scale * h) for Hermitian h via eigendecomposition.

    Exactly unitary (to rounding) when scale is purely imaginary, which is why
    this is used instead of a series expansion.
    """
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(scale * evals)) @ evecs.conj().T


def hamiltonian_unitary(h: Observable, t: float) -> UnitaryOperator:
    """U(t) = exp(-i H t)."""
    if not np.isfinite(t):
        raise ValidationError("hamiltonian_unitary: t must be finite")
    return UnitaryOperator(hermitian_expm(h.entries * float(t)))


def evolve_unitary(rho: DensityMatrix, h: Observable, t: float) -> DensityMatrix:
    """Propagate ``rho`` for time ``t`` under Hamiltonian ``h``."""
    if rho.dim != h.dim:
        raise ValidationError("evolve_unitary: dimension mismatch")
    u = hamiltonian_unitary(h, t).entries
    return DensityMatrix(u @ rho.entries @ u.conj().T)


def apply_unitary(rho: DensityMatrix, u: UnitaryOperator) -> DensityMatrix:
    """U rho U^dag."""
    if rho.dim != u.dim:
        raise ValidationError("apply_unitary: dimension mismatch")
    return DensityMatrix(u.entries @ rho.entries @ u.entries.conj().T)


def _matrix_unit_states(dim: int, i: int, j: int):
    """Four density matrices whose fixed complex combination equals E_ij.

    E_ij = P3 + i P4 - (1+i)/2 (Pi + Pj) with P3, P4 the projectors onto
    (|i> + |j>)/sqrt2 and (|i> + i|j>)/sqrt2.  Used to probe maps that are
    only defined on states.
    """
    ei = np.zeros(dim, dtype=complex)
    ej = np.zeros(dim, dtype=complex)
    ei[i] = 1.0
    ej[j] = 1.0
    plus = (ei + ej) / np.sqrt(2.0)
    ply = (ei + 1.0j * ej) / np.sqrt(2.0)
    return (
        DensityMatrix(np.outer(ei, ei.conj())),
        DensityMatrix(np.outer(ej, ej.conj())),
        DensityMatrix(np.outer(plus, plus.conj())),
        DensityMatrix(np.outer(ply, ply.conj())),
    )


def _map_output_entries(out) -> np.ndarray:
    return out.entries if isinstance(out, DensityMatrix) else np.asarray(out, dtype=complex)


def choi_of_map(apply_map: Callable[[DensityMatrix], "DensityMatrix | np.ndarray"], dim: int) -> ChoiMatrix:
    """Assemble the Choi matrix of a declared-linear, exactly computable map.

    The map is probed only with valid density matrices; its action on the
    matrix units is recovered by the declared linearity.  Monte-Carlo maps
    and maps that are not declared linear have no Choi representation here.
    The map may return either a DensityMatrix or a plain matrix (useful for
    maps that preserve the trace only approximately).
    """
    basis_out = {}
    for i in range(dim):
        basis_out[i] = _map_output_entries(apply_map(DensityMatrix.basis_state(dim, i)))
    c = np.zeros((dim * dim, dim * dim), dtype=complex)

    def accumulate(i: int, j: int, m_out: np.ndarray) -> None:
        unit = np.zeros((dim, dim), dtype=complex)
        unit[i, j] = 1.0
        nonlocal c
        c = c + np.kron(unit, m_out)

    for i in range(dim):
        accumulate(i, i, basis_out[i])
    for i in range(dim):
        for j in range(i + 1, dim):
            _, _, p3, p4 = _matrix_unit_states(dim, i, j)
            m3 = _map_output_entries(apply_map(p3))
            m4 = _map_output_entries(apply_map(p4))
            diag_part = basis_out[i] + basis_out[j]
            m_ij = m3 + 1.0j * m4 - 0.5 * (1.0 + 1.0j) * diag_part
            m_ji = m3 - 1.0j * m4 - 0.5 * (1.0 - 1.0j) * diag_part
            accumulate(i, j, m_ij)
            accumulate(j, i, m_ji)
    return ChoiMatrix(dim, c)


def cp_tp_check(choi: ChoiMatrix, tol: float = 1e-9) -> CpTpReport:
    """Complete-positivity / trace-preservation diagnostic on a Choi matrix."""
    herm = 0.5 * (choi.entries + choi.entries.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm)[0])
    tp_deficit = max_abs(choi.output_partial_trace() - np.eye(choi.dim))
    return CpTpReport(
        min_eigenvalue=min_eig,
        tp_deficit=tp_deficit,
        is_cp=min_eig >= -tol,
        is_tp=tp_deficit <= tol,
    )


def random_density_matrix(dim: int, rank: int, rng_seed) -> DensityMatrix:
    """Hilbert-Schmidt-style random state: rho = G G^dag / tr with Ginibre G.

    ``rng_seed`` may be an int seed or a numpy Generator.  Fixed seeds give
    bitwise-identical output.
    """
    if not 1 <= rank <= dim:
        raise ValidationError(f"random_density_matrix: rank {rank} outside [1, {dim}]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    g = rng.standard_normal((dim, rank)) + 1.0j * rng.standard_normal((dim, rank))
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T)
    return DensityMatrix(m / np.trace(m).real)


def random_unitary(dim: int, rng_seed) -> UnitaryOperator:
    """Haar-style random unitary from the QR decomposition of a Ginibre matrix."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    g = rng.standard_normal((dim, dim)) + 1.0j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    phases = np.diag(r).copy()
    phases = phases / np.abs(phases)
    return UnitaryOperator(q * phases.conj())


def annihilation_operator(dim: int) -> np.ndarray:
    """Truncated harmonic-oscillator lowering operator on Fock levels 0..dim-1."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def position_operator(dim: int) -> Observable:
    """q = (a + a^dag)/sqrt2 in the truncated Fock space."""
    a = annihilation_operator(dim)
    return Observable((a + a.conj().T) / np.sqrt(2.0))
