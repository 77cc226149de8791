"""Sequences of projective questions: class operators and decoherence.

A history is a tuple of outcomes (z_1, ..., z_n) picked from complete
orthogonal projector families at ordered times.  Its class operator is the
time-ordered product of projectors interleaved with the free propagators,

    C_z = P_zn U(t_n - t_{n-1}) ... P_z2 U(t_2 - t_1) P_z1 U(t_1),

which reduces to the bare projector product when the Hamiltonian vanishes.
The history probability is tr(C_z^dag C_z rho); consistency of treating the
label tuple as a classical record requires the decoherence condition that
tr(C_z^dag C_u rho) vanish for z != u.  A z-conditioned unitary applied after
the history completes gives a map with Kraus form U_z C_z, so the free-will
test on history records couples the map diagnostics to the decoherence
precondition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from fwtlab.harness import DynamicalMap
from fwtlab.qcore import (
    DensityMatrix,
    Observable,
    ProjectorSet,
    UnitaryOperator,
    ValidationError,
    hamiltonian_unitary,
    max_abs,
)

__all__ = [
    "HistorySpec",
    "ClassOperator",
    "DecoherenceFunctional",
    "class_operator",
    "class_operators",
    "decoherence_functional",
    "decoherence_check",
    "post_history_controlled_map",
]

MAX_TIMES = 6
MAX_LABEL_TUPLES = 64
COMPLETENESS_TOL = 1e-9


@dataclass(frozen=True)
class HistorySpec:
    """Ordered question times, one projector family per time, free Hamiltonian."""

    times: tuple
    projector_sets: tuple
    hamiltonian: Observable

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.projector_sets):
            raise ValidationError("HistorySpec: one projector set per time required")
        if not times:
            raise ValidationError("HistorySpec: need at least one time")
        if len(times) > MAX_TIMES:
            raise ValidationError(f"HistorySpec: at most {MAX_TIMES} times supported")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValidationError("HistorySpec: times must be strictly increasing")
        if times[0] < 0:
            raise ValidationError("HistorySpec: times must be nonnegative")
        dim = self.hamiltonian.dim
        count = 1
        for ps in self.projector_sets:
            if ps.dim != dim:
                raise ValidationError("HistorySpec: projector set dimension mismatch")
            count *= len(ps)
        if count > MAX_LABEL_TUPLES:
            raise ValidationError(f"HistorySpec: {count} label tuples exceed the cap of {MAX_LABEL_TUPLES}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "projector_sets", tuple(self.projector_sets))

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    def label_tuples(self) -> list:
        return [tuple(t) for t in itertools.product(*(ps.labels for ps in self.projector_sets))]

    def propagators(self) -> list:
        """U(t_1), U(t_2 - t_1), ..., one per question time."""
        steps = [self.times[0]] + [t2 - t1 for t1, t2 in zip(self.times, self.times[1:])]
        return [hamiltonian_unitary(self.hamiltonian, dt).entries for dt in steps]


@dataclass(frozen=True)
class ClassOperator:
    labels: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))


def class_operator(spec: HistorySpec, labels) -> ClassOperator:
    """Class operator for one label tuple."""
    labels = tuple(labels)
    if len(labels) != len(spec.times):
        raise ValidationError("class_operator: one label per time required")
    mat = np.eye(spec.dim, dtype=complex)
    for label, ps, prop in zip(labels, spec.projector_sets, spec.propagators()):
        if label not in ps.labels:
            raise ValidationError(f"class_operator: label {label!r} not in the projector set")
        proj = ps.projectors[ps.labels.index(label)]
        mat = proj @ prop @ mat
    return ClassOperator(labels, mat)


def class_operators(spec: HistorySpec, completeness_tol: float = COMPLETENESS_TOL) -> list:
    """All class operators, validated for completeness: sum_z C_z = U(t_n)."""
    ops = [class_operator(spec, labels) for labels in spec.label_tuples()]
    total = sum(op.matrix for op in ops)
    u_total = hamiltonian_unitary(spec.hamiltonian, spec.times[-1]).entries
    if max_abs(total - u_total) > completeness_tol:
        raise ValidationError("class_operators: completeness violated")
    return ops


@dataclass(frozen=True)
class DecoherenceFunctional:
    """D[z][u] = tr(C_z^dag C_u rho) over all label tuples."""

    labels: tuple
    matrix: np.ndarray
    herm_tol: float = field(default=1e-10, repr=False, compare=False)
    diag_tol: float = field(default=1e-8, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if max_abs(m - m.conj().T) > self.herm_tol:
            raise ValidationError("DecoherenceFunctional: not Hermitian")
        diag = np.diag(m)
        if np.any(diag.real < -1e-12):
            raise ValidationError("DecoherenceFunctional: negative history probability")
        if abs(diag.real.sum() - 1.0) > self.diag_tol:
            raise ValidationError("DecoherenceFunctional: probabilities do not sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))

    def probabilities(self) -> dict:
        return {z: float(p.real) for z, p in zip(self.labels, np.diag(self.matrix))}

    def max_offdiag(self) -> float:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return max_abs(off)


def decoherence_functional(spec: HistorySpec, rho: DensityMatrix) -> DecoherenceFunctional:
    if rho.dim != spec.dim:
        raise ValidationError("decoherence_functional: dimension mismatch")
    ops = class_operators(spec)
    mats = [op.matrix for op in ops]
    k = len(mats)
    d = np.empty((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            d[a, b] = np.trace(mats[a].conj().T @ mats[b] @ rho.entries)
    d = 0.5 * (d + d.conj().T)
    return DecoherenceFunctional(tuple(op.labels for op in ops), d)


def decoherence_check(df: DecoherenceFunctional, tol: float = 1e-10) -> dict:
    off = df.max_offdiag()
    return {"is_decoherent": off <= tol, "max_offdiag": off}


def post_history_controlled_map(spec: HistorySpec, ctrl) -> DynamicalMap:
    """Map rho -> sum_z U_z C_z rho C_z^dag U_z^dag over the history record z.

    ``ctrl`` maps each label tuple to a UnitaryOperator (any mapping works;
    missing tuples default to the identity only if the mapping's ``get``
    says so -- a plain dict must be complete).  Exactly linear and in Kraus
    form, so the Choi diagnostics are available.
    """
    ops = class_operators(spec)
    kraus = []
    for op in ops:
        u = ctrl[op.labels] if not callable(ctrl) else ctrl(op.labels)
        if isinstance(u, UnitaryOperator):
            u = u.entries
        kraus.append(np.asarray(u, dtype=complex) @ op.matrix)

    def evaluator(rho: DensityMatrix):
        acc = np.zeros((spec.dim, spec.dim), dtype=complex)
        for k in kraus:
            acc += k @ rho.entries @ k.conj().T
        return DensityMatrix(0.5 * (acc + acc.conj().T))

    return DynamicalMap(
        dim=spec.dim,
        kind="exact",
        evaluator=evaluator,
        declared_linear=True,
        choi_available=True,
        name="post-history-control",
    )
