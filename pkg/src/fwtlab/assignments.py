"""Instantaneous assignments of classical variables to quantum states.

Three assignment rules are implemented.  Projective measurement draws a
discrete label ``z`` with the Born probabilities and collapses the state.
The phase-space (Husimi) assignment draws ``z = (q, p)`` from the coherent
state POVM on a discretized grid.  The mean-field rule deterministically
assigns the expectation value of a chosen observable.  Each rule comes with
the matching z-controlled map so the harness can test whether the assigned
variable is tangible.

Phase-space convention: a grid point ``(q, p)`` corresponds to the coherent
amplitude ``alpha = (q + i p) / sqrt(2)`` and the POVM cell measure is
``dq dp / (2 pi)`` (hbar = 1).  Coherent vectors are built in a truncated
Fock space by exponentiating the displacement generator (default), which
behaves better near the cutoff than truncating the analytic amplitudes;
the analytic construction is available for cross-checks.  Grid weights are
renormalized by their raw sum, which is reported as the truncation deficit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from fwtlab.qcore import (
    DensityMatrix,
    Observable,
    ProjectorSet,
    UnitaryOperator,
    ValidationError,
    annihilation_operator,
    hermitian_expm,
)

__all__ = [
    "ClassicalValue",
    "OutcomeEntry",
    "OutcomeEnsemble",
    "ControlPolicy",
    "CoherentBasis",
    "coherent_vector",
    "projective_assign",
    "controlled_average_map",
    "meanfield_assign",
    "meanfield_controlled_step",
    "husimi_assign",
    "husimi_raw_average",
    "husimi_controlled_average_map",
]

# A classical value is a discrete label, a real scalar, or a (q, p) pair.
ClassicalValue = int | float | tuple[float, float]

DROP_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-8


class OutcomeEntry(NamedTuple):
    z: ClassicalValue
    weight: float
    post_state: DensityMatrix


@dataclass(frozen=True)
class OutcomeEnsemble:
    """Realization of an assignment: classical values, weights, post-states.

    ``dropped_weight`` accounts for outcomes removed below the probability
    floor; ``raw_weight_sum`` records the pre-renormalization POVM mass for
    grid-based assignments (None when no renormalization happened).
    """

    entries: tuple
    dropped_weight: float = 0.0
    raw_weight_sum: float | None = None
    weight_tol: float = field(default=WEIGHT_SUM_TOL, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(OutcomeEntry(*e) for e in self.entries)
        if not entries:
            raise ValidationError("OutcomeEnsemble: no outcomes")
        for e in entries:
            if not (np.isfinite(e.weight) and e.weight >= 0.0):
                raise ValidationError(f"OutcomeEnsemble: bad weight {e.weight}")
        total = sum(e.weight for e in entries) + self.dropped_weight
        if abs(total - 1.0) > self.weight_tol:
            raise ValidationError(f"OutcomeEnsemble: weights sum to {total}, expected 1")
        object.__setattr__(self, "entries", entries)

    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    def values(self) -> list:
        return [e.z for e in self.entries]

    def to_jsonable(self, include_states: bool = False) -> list:
        rows = []
        for e in self.entries:
            row = {
                "z": list(e.z) if isinstance(e.z, tuple) else e.z,
                "weight": e.weight,
                "purity": e.post_state.purity(),
            }
            if include_states:
                m = e.post_state.entries
                row["post_state"] = [[[v.real, v.imag] for v in r] for r in m]
            rows.append(row)
        return rows


@dataclass(frozen=True)
class ControlPolicy:
    """Maps a classical value to the unitary it triggers.

    Discrete labels use a lookup table.  Continuous values use the
    single-generator family U_z = exp(-i g(z) F) with a configured gain ``g``
    and a Hermitian generator ``F``.  A constant policy ignores ``z``.
    """

    table: Mapping | None = None
    gain: Callable | None = None
    generator: Observable | None = None
    constant: UnitaryOperator | None = None

    @classmethod
    def from_table(cls, table: Mapping) -> "ControlPolicy":
        return cls(table=dict(table))

    @classmethod
    def from_gain(cls, gain: Callable, generator: Observable) -> "ControlPolicy":
        return cls(gain=gain, generator=generator)

    @classmethod
    def constant_unitary(cls, u: UnitaryOperator) -> "ControlPolicy":
        return cls(constant=u)

    @classmethod
    def identity(cls, dim: int) -> "ControlPolicy":
        return cls(constant=UnitaryOperator.identity(dim))

    def unitary_for(self, z: ClassicalValue, dim: int) -> UnitaryOperator:
        if self.constant is not None:
            return self.constant
        if self.table is not None:
            try:
                return self.table[z]
            except KeyError:
                raise ValidationError(f"ControlPolicy: no unitary for label {z!r}")
        return UnitaryOperator(hermitian_expm(self.generator.entries * float(self.gain(z))))

    def transform_vectors(self, zs: Sequence, vectors: np.ndarray) -> np.ndarray:
        """Apply U_z row-wise to a stack of state vectors (one z per row)."""
        if self.constant is not None:
            return vectors @ self.constant.entries.T
        if self.gain is None:
            raise ValidationError("ControlPolicy: vectorized transform needs a gain policy")
        evals, evecs = np.linalg.eigh(self.generator.entries)
        g = np.array([float(self.gain(z)) for z in zs])
        x = vectors @ evecs.conj()
        x = x * np.exp(-1.0j * np.outer(g, evals))
        return x @ evecs.T


def projective_assign(rho: DensityMatrix, ps: ProjectorSet, drop_tol: float = DROP_TOL) -> OutcomeEnsemble:
    """Born-rule assignment: outcome z with weight tr(P_z rho), collapsed state.

    Outcomes below ``drop_tol`` are dropped and their total weight reported in
    the ensemble metadata instead of being silently renormalized away.
    """
    if rho.dim != ps.dim:
        raise ValidationError("projective_assign: dimension mismatch")
    entries = []
    dropped = 0.0
    for z, p in zip(ps.labels, ps.projectors):
        w = float(np.trace(p @ rho.entries).real)
        if w <= drop_tol:
            dropped += max(w, 0.0)
            continue
        post = p @ rho.entries @ p / w
        entries.append((z, w, DensityMatrix(0.5 * (post + post.conj().T))))
    if not entries:
        raise ValidationError("projective_assign: every outcome fell below the probability floor")
    return OutcomeEnsemble(tuple(entries), dropped_weight=dropped)


def controlled_average_map(rho: DensityMatrix, ps: ProjectorSet, ctrl: ControlPolicy) -> DensityMatrix:
    """Collapse, apply the z-conditioned unitary, and average over outcomes.

    rho' = sum_z U_z P_z rho P_z U_z^dag, which is linear in rho by
    construction and has Kraus form K_z = U_z P_z.
    """
    if rho.dim != ps.dim:
        raise ValidationError("controlled_average_map: dimension mismatch")
    acc = np.zeros_like(rho.entries)
    for z, p in zip(ps.labels, ps.projectors):
        u = ctrl.unitary_for(z, ps.dim).entries
        k = u @ p
        acc = acc + k @ rho.entries @ k.conj().T
    return DensityMatrix(0.5 * (acc + acc.conj().T))


def meanfield_assign(rho: DensityMatrix, q: Observable) -> OutcomeEnsemble:
    """Deterministic assignment z = tr(q rho); the state is left untouched."""
    if rho.dim != q.dim:
        raise ValidationError("meanfield_assign: dimension mismatch")
    z = float(np.trace(q.entries @ rho.entries).real)
    return OutcomeEnsemble(((z, 1.0, rho),))


def meanfield_controlled_step(
    rho: DensityMatrix,
    q: Observable,
    gain: Callable[[float], float],
    generator: Observable,
    dt: float,
) -> DensityMatrix:
    """One step of dynamics controlled by the mean value z = tr(q rho).

    rho' = exp(-i g(z) F dt) rho exp(+i g(z) F dt).  The control strength
    depends on the state through z, so the step is intentionally nonlinear.
    """
    if dt <= 0:
        raise ValidationError("meanfield_controlled_step: dt must be positive")
    z = meanfield_assign(rho, q).entries[0].z
    u = hermitian_expm(generator.entries * (float(gain(z)) * dt))
    return DensityMatrix(u @ rho.entries @ u.conj().T)


def _log_factorials(n: int) -> np.ndarray:
    return np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n, dtype=float)))))


def coherent_vector(alpha: complex, dim: int, method: str = "displacement") -> np.ndarray:
    """Normalized coherent vector |alpha> in a dim-level Fock space.

    ``displacement`` exponentiates alpha a^dag - alpha* a (exactly unitary in
    the truncated space); ``analytic`` truncates the closed-form amplitudes
    and renormalizes.
    """
    if method == "displacement":
        a = annihilation_operator(dim)
        gen = alpha * a.conj().T - np.conj(alpha) * a
        v = expm(gen)[:, 0]
    elif method == "analytic":
        n = np.arange(dim)
        absa = abs(alpha)
        if absa == 0.0:
            v = np.zeros(dim, dtype=complex)
            v[0] = 1.0
            return v
        logmag = n * math.log(absa) - 0.5 * _log_factorials(dim) - 0.5 * absa**2
        v = np.exp(logmag) * np.exp(1.0j * n * np.angle(alpha))
    else:
        raise ValidationError(f"coherent_vector: unknown method {method!r}")
    return v / np.linalg.norm(v)


def _truncated_mass(alpha_sq: np.ndarray, dim: int) -> np.ndarray:
    """Poisson(alpha_sq) mass on levels 0..dim-1 (norm^2 of the truncated amplitudes)."""
    out = np.zeros_like(alpha_sq)
    for i, lam in enumerate(np.atleast_1d(alpha_sq)):
        if lam == 0.0:
            out.flat[i] = 1.0
            continue
        term = math.exp(-lam)
        total = term
        for n in range(1, dim):
            term *= lam / n
            total += term
        out.flat[i] = total
    return out


@dataclass(frozen=True)
class CoherentBasis:
    """Coherent vectors on a rectangular (q, p) lattice in truncated Fock space.

    ``mask_radius_sq`` (in units of |alpha|^2) optionally restricts the lattice
    to a disk; completeness of the POVM on low Fock levels is then controlled
    by the disk radius rather than the lattice corners.
    """

    fock_cutoff: int
    q_values: np.ndarray
    p_values: np.ndarray
    dq: float
    dp: float
    points: np.ndarray  # (cells, 2) kept cell centers
    vectors: np.ndarray  # (cells, fock_cutoff)
    method: str = "displacement"
    mask_radius_sq: float | None = None

    @classmethod
    def build(
        cls,
        fock_cutoff: int,
        extent: float,
        spacing: float,
        method: str = "displacement",
        mask_radius_sq: float | None = None,
        validity_tol: float = 1e-4,
    ) -> "CoherentBasis":
        """Construct the lattice [-extent, extent]^2 with the given spacing.

        Cell centers sit at -extent + spacing/2, ...; cells outside the mask
        disk are omitted.  Stored vectors are unit-norm by construction; the
        guard checks that a true coherent state anywhere in the validity
        domain |alpha|^2 <= fock_cutoff/4 keeps at least 1 - validity_tol of
        its mass below the cutoff, rejecting configurations whose truncated
        space cannot faithfully hold the states it claims to resolve.
        """
        qs = np.arange(-extent + spacing / 2.0, extent, spacing)
        pts, alphas = [], []
        for q in qs:
            for p in qs:
                a2 = 0.5 * (q * q + p * p)
                if mask_radius_sq is not None and a2 > mask_radius_sq:
                    continue
                pts.append((q, p))
                alphas.append((q + 1.0j * p) / np.sqrt(2.0))
        if not pts:
            raise ValidationError("CoherentBasis: empty grid")
        pts_arr = np.array(pts)
        a2 = 0.5 * np.sum(pts_arr**2, axis=1)
        valid = a2 <= fock_cutoff / 4.0
        if np.any(valid):
            mass = _truncated_mass(a2[valid], fock_cutoff)
            worst = float(np.min(mass))
            if worst < 1.0 - validity_tol:
                raise ValidationError(
                    f"CoherentBasis: cutoff {fock_cutoff} loses {1 - worst:.2e} of a "
                    "coherent state inside the validity domain; raise the cutoff"
                )
        vecs = np.array([coherent_vector(al, fock_cutoff, method) for al in alphas])
        vecs.setflags(write=False)
        pts_arr.setflags(write=False)
        return cls(
            fock_cutoff=fock_cutoff,
            q_values=qs,
            p_values=qs,
            dq=spacing,
            dp=spacing,
            points=pts_arr,
            vectors=vecs,
            method=method,
            mask_radius_sq=mask_radius_sq,
        )

    @property
    def cell_measure(self) -> float:
        return self.dq * self.dp / (2.0 * np.pi)

    def raw_weights(self, rho_entries: np.ndarray) -> np.ndarray:
        """<z|rho|z> * dq dp / (2 pi) for every kept cell."""
        amp = self.vectors @ rho_entries
        w = np.real(np.einsum("ci,ci->c", amp, self.vectors.conj()))
        return np.clip(w, 0.0, None) * self.cell_measure


def _check_husimi_input(rho: DensityMatrix, basis: CoherentBasis, mass_tol: float = 1e-6):
    if rho.dim != basis.fock_cutoff:
        raise ValidationError("husimi: state dimension does not match the basis cutoff")
    top = float(rho.entries[-1, -1].real)
    if top > mass_tol:
        raise ValidationError(
            f"husimi: population {top:.2e} at the top Fock level exceeds {mass_tol:.0e}; "
            "the state is not contained in the truncated space"
        )


def husimi_assign(
    rho: DensityMatrix,
    basis: CoherentBasis,
    min_raw_sum: float = 0.99,
) -> OutcomeEnsemble:
    """Phase-space assignment from the discretized coherent-state POVM.

    Weights are <z|rho|z> dq dp / (2 pi), renormalized by their sum; the raw
    sum is reported so the truncation deficit stays visible.  The post-state
    for outcome z is the coherent projector |z><z|.
    """
    _check_husimi_input(rho, basis)
    raw = basis.raw_weights(rho.entries)
    raw_sum = float(np.sum(raw))
    if raw_sum < min_raw_sum:
        raise ValidationError(
            f"husimi: grid captures only {raw_sum:.4f} of the state; "
            "enlarge the grid extent or the Fock cutoff"
        )
    weights = raw / raw_sum
    entries = []
    for (qp, w, vec) in zip(basis.points, weights, basis.vectors):
        entries.append(((float(qp[0]), float(qp[1])), float(w), DensityMatrix.pure(vec)))
    return OutcomeEnsemble(tuple(entries), raw_weight_sum=raw_sum)


def husimi_raw_average(rho_entries: np.ndarray, basis: CoherentBasis, ctrl: ControlPolicy) -> np.ndarray:
    """Pre-renormalization output sum_z w_z U_z |z><z| U_z^dag as a plain matrix.

    This is exactly linear in the input (the weights w_z = <z|.|z> dq dp/2pi
    are linear functionals), but its trace equals the raw POVM mass, which
    deviates from 1 by the grid truncation deficit.
    """
    raw = basis.raw_weights(np.asarray(rho_entries, dtype=complex))
    zs = [(float(q), float(p)) for q, p in basis.points]
    moved = ctrl.transform_vectors(zs, basis.vectors)
    out = (moved * raw[:, None]).T @ moved.conj()
    return 0.5 * (out + out.conj().T)


def husimi_controlled_average_map(
    rho: DensityMatrix,
    basis: CoherentBasis,
    ctrl: ControlPolicy,
) -> DensityMatrix:
    """Average of U_z |z><z| U_z^dag over the renormalized phase-space weights.

    Linear in rho up to the grid truncation deficit; the exactly linear
    pre-renormalization version is :func:`husimi_raw_average`.
    """
    _check_husimi_input(rho, basis)
    out = husimi_raw_average(rho.entries, basis, ctrl)
    raw_sum = float(np.trace(out).real)
    if raw_sum < 0.99:
        raise ValidationError(
            f"husimi: grid captures only {raw_sum:.4f} of the state; "
            "enlarge the grid extent or the Fock cutoff"
        )
    return DensityMatrix(out / raw_sum)
