"""Markovian time-continuous measurement with record-driven feedback.

The measured observable q generates a diffusive conditional evolution.  With
measurement strength Gamma (units 1/time) one Ito-Euler step reads

    rho' = V rho V^dag                                  (coherent part, exact)
    rho' += Gamma (q rho' q - {q^2, rho'}/2) dt          (decoherence)
    rho' += sqrt(Gamma) (q rho' + rho' q - 2<q> rho') dW (conditioning)

followed by hermitization and trace renormalization, where V = exp(-i (H +
H_fb) dt) and dW ~ Normal(0, dt) is injected by the caller so runs can be
replayed.  The classical record sampled each step is

    z = tr(q rho) + dW / (sqrt(4 Gamma) dt),

and feedback acts with the record-then-act ordering: the Hamiltonian of the
*next* step gains H_fb = lam * z * F, so dynamics at a given time never
depends on records from its own or later steps.  This normalization ties the
record noise to the state conditioning so that the ensemble-averaged feedback
map is linear; stripping the noise (feedback from tr(q rho) alone) breaks
that cancellation, which is exactly what the free-will test detects.  The
ensemble average over trajectories reproduces the deterministic dephasing
master equation with off-diagonal decay rate 2 Gamma for q = sigma_z.

Trajectories are independent work units: the noise stream of trajectory i is
derived from (seed, i), so serial and batched runs agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from fwtlab.harness import DynamicalMap
from fwtlab.qcore import DensityMatrix, Observable, ValidationError, trace_norm

__all__ = [
    "SmeConfig",
    "MeasurementRecord",
    "TrajectoryResult",
    "EnsembleResult",
    "UnreliableRunError",
    "sme_step",
    "run_trajectory",
    "ensemble_average_map",
    "feedback_linearity_test",
    "make_feedback_map",
]

GAMMA_DT_GUARD = 0.05
NEGATIVE_EIG_FLAG = -1e-6
FLAGGED_FRACTION_ABORT = 1e-3
BOOTSTRAP_RESAMPLES = 100


class UnreliableRunError(ValidationError):
    """Raised when too many steps tripped the negative-eigenvalue guard."""


@dataclass(frozen=True)
class SmeConfig:
    """Parameters of a continuous-measurement run."""

    gamma: float
    observable: Observable
    hamiltonian: Observable
    dt: float
    steps: int
    n_traj: int = 1
    feedback_gain: float = 0.0
    feedback_generator: Observable | None = None
    rng_seed: int = 0
    signal: str = "record"  # "record" = mean + noise; "mean-field" = noise stripped

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("SmeConfig: dt must be positive")
        if self.gamma < 0:
            raise ValidationError("SmeConfig: gamma must be nonnegative")
        if self.gamma * self.dt > GAMMA_DT_GUARD:
            raise ValidationError(f"SmeConfig: gamma*dt = {self.gamma * self.dt:.3f} exceeds {GAMMA_DT_GUARD}")
        if self.steps <= 0 or self.n_traj <= 0:
            raise ValidationError("SmeConfig: steps and n_traj must be positive")
        if self.signal not in ("record", "mean-field"):
            raise ValidationError(f"SmeConfig: unknown signal kind {self.signal!r}")
        if self.feedback_gain != 0.0:
            if self.feedback_generator is None:
                raise ValidationError("SmeConfig: feedback needs a generator")
            if self.gamma == 0.0 and self.signal == "record":
                raise ValidationError("SmeConfig: record feedback needs gamma > 0")
        if self.observable.dim != self.hamiltonian.dim:
            raise ValidationError("SmeConfig: operator dimensions differ")

    @property
    def dim(self) -> int:
        return self.observable.dim

    @property
    def record_noise_scale(self) -> float:
        """Amplitude multiplying dW in the record: z = <q> + scale * dW."""
        if self.gamma == 0.0:
            return 0.0
        return 1.0 / (np.sqrt(4.0 * self.gamma) * self.dt)


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-step record samples and the Wiener increments that produced them."""

    z: np.ndarray
    dW: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        dw = np.asarray(self.dW, dtype=float)
        if z.shape != dw.shape or z.ndim != 1:
            raise ValidationError("MeasurementRecord: z and dW must be matching 1-D series")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(dw))):
            raise ValidationError("MeasurementRecord: entries must be finite")
        z.setflags(write=False)
        dw.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "dW", dw)


@dataclass(frozen=True)
class TrajectoryResult:
    states: tuple  # DensityMatrix at each checkpoint (always includes the final step)
    checkpoint_steps: tuple
    record: MeasurementRecord
    flagged_steps: int


@dataclass(frozen=True)
class EnsembleResult:
    mean_state: DensityMatrix
    bootstrap_se: float
    n: int
    flagged_fraction: float


def _expm_minus_i_batched(h: np.ndarray) -> np.ndarray:
    """exp(-i h) for a stack (..., d, d) of Hermitian matrices."""
    d = h.shape[-1]
    if d == 2:
        c0 = 0.5 * np.trace(h, axis1=-2, axis2=-1)
        v = h - c0[..., None, None] * np.eye(2)
        vnorm = np.sqrt(np.abs(v[..., 0, 0]) ** 2 + np.abs(v[..., 0, 1]) ** 2)
        safe = np.where(vnorm == 0.0, 1.0, vnorm)
        sinc = np.where(vnorm == 0.0, 1.0, np.sin(vnorm) / safe)
        u = np.cos(vnorm)[..., None, None] * np.eye(2) - 1.0j * sinc[..., None, None] * v
        return np.exp(-1.0j * c0)[..., None, None] * u
    evals, evecs = np.linalg.eigh(h)
    phases = np.exp(-1.0j * evals)
    return np.einsum("...ik,...k,...jk->...ij", evecs, phases, evecs.conj())


def _min_eig_batched(rho: np.ndarray) -> np.ndarray:
    d = rho.shape[-1]
    if d == 2:
        c0 = 0.5 * np.real(np.trace(rho, axis1=-2, axis2=-1))
        v00 = np.real(rho[..., 0, 0]) - c0
        vnorm = np.sqrt(v00**2 + np.abs(rho[..., 0, 1]) ** 2)
        return c0 - vnorm
    return np.linalg.eigvalsh(rho)[..., 0]


def _noise_matrix(cfg: SmeConfig, n: int, seed_entropy, offset: int = 0) -> np.ndarray:
    """(steps, n) Wiener increments; column i comes from stream (seed, offset + i)."""
    entropy = list(seed_entropy) if isinstance(seed_entropy, (tuple, list)) else [int(seed_entropy)]
    cols = np.empty((cfg.steps, n))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=(offset + i,)))
        cols[:, i] = rng.normal(0.0, np.sqrt(cfg.dt), size=cfg.steps)
    return cols


def _batched_run(
    rho0: np.ndarray,
    cfg: SmeConfig,
    dW: np.ndarray,
    checkpoint_steps: Sequence[int] | None = None,
    collect_records: bool = False,
):
    """Evolve one trajectory per noise column; returns (checkpoint states, records, flags)."""
    d = cfg.dim
    n = dW.shape[1]
    q = cfg.observable.entries
    h = cfg.hamiltonian.entries
    q2 = q @ q
    lam = cfg.feedback_gain
    fgen = cfg.feedback_generator.entries if cfg.feedback_generator is not None else None
    noise_scale = cfg.record_noise_scale
    dt = cfg.dt
    sqrt_gamma = np.sqrt(cfg.gamma)

    rho = np.broadcast_to(rho0, (n, d, d)).copy()
    z_prev = np.zeros(n)
    checkpoints = sorted(set(checkpoint_steps or [])) or []
    if cfg.steps not in checkpoints:
        checkpoints = checkpoints + [cfg.steps]
    saved = {}
    records = np.empty((cfg.steps, n)) if collect_records else None
    flagged = 0

    u_static = None
    if lam == 0.0:
        u_static = _expm_minus_i_batched(h * dt)

    for k in range(cfg.steps):
        if lam == 0.0:
            u = u_static
            rho = np.einsum("ij,njk,lk->nil", u, rho, u.conj())
        else:
            h_eff = h[None, :, :] + (lam * z_prev)[:, None, None] * fgen[None, :, :]
            u = _expm_minus_i_batched(h_eff * dt)
            rho = np.einsum("nij,njk,nlk->nil", u, rho, u.conj())

        mean_q = np.real(np.einsum("nij,ji->n", rho, q))
        w = dW[k]
        if cfg.signal == "record":
            z = mean_q + noise_scale * w
        else:
            z = mean_q.copy()

        if cfg.gamma > 0.0:
            qr = np.einsum("ij,njk->nik", q, rho)
            rq = np.einsum("nij,jk->nik", rho, q)
            lind = np.einsum("ij,njk,kl->nil", q, rho, q) - 0.5 * (
                np.einsum("ij,njk->nik", q2, rho) + np.einsum("nij,jk->nik", rho, q2)
            )
            rho = rho + cfg.gamma * dt * lind + (sqrt_gamma * w)[:, None, None] * (
                qr + rq - 2.0 * mean_q[:, None, None] * rho
            )
            rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
            tr = np.real(np.einsum("nii->n", rho))
            rho = rho / tr[:, None, None]
            flagged += int(np.count_nonzero(_min_eig_batched(rho) < NEGATIVE_EIG_FLAG))

        if collect_records:
            records[k] = z
        z_prev = z
        if (k + 1) in checkpoints:
            saved[k + 1] = rho.copy()

    total_steps = n * cfg.steps
    if flagged / total_steps > FLAGGED_FRACTION_ABORT:
        raise UnreliableRunError(
            f"{flagged} of {total_steps} steps dipped below the eigenvalue guard"
        )
    return saved, (records, dW), flagged


def sme_step(rho: DensityMatrix, cfg: SmeConfig, dW: float, feedback_record: float = 0.0):
    """One conditioned step; returns (rho_next, z_step).

    ``feedback_record`` is the previous step's record sample z; the coherent
    part of this step runs under H + feedback_gain * z * F (record-then-act).
    The caller supplies dW ~ Normal(0, dt).
    """
    d = cfg.dim
    if rho.dim != d:
        raise ValidationError("sme_step: dimension mismatch")
    q = cfg.observable.entries
    h_eff = cfg.hamiltonian.entries
    if cfg.feedback_gain != 0.0:
        h_eff = h_eff + cfg.feedback_gain * feedback_record * cfg.feedback_generator.entries
    u = _expm_minus_i_batched(h_eff * cfg.dt)
    m = u @ rho.entries @ u.conj().T

    mean_q = float(np.trace(q @ m).real)
    z = mean_q + (cfg.record_noise_scale * dW if cfg.signal == "record" else 0.0)

    if cfg.gamma > 0.0:
        lind = q @ m @ q - 0.5 * (q @ q @ m + m @ q @ q)
        cond = q @ m + m @ q - 2.0 * mean_q * m
        m = m + cfg.gamma * cfg.dt * lind + np.sqrt(cfg.gamma) * dW * cond
        m = 0.5 * (m + m.conj().T)
        m = m / np.trace(m).real
        if np.linalg.eigvalsh(m)[0] < NEGATIVE_EIG_FLAG:
            raise UnreliableRunError("sme_step: negative-eigenvalue excursion beyond the guard")
    # a single Euler step can dip a hair negative; the constructor floor
    # mirrors the per-step flag threshold rather than the global default
    return DensityMatrix(m, psd_tol=-NEGATIVE_EIG_FLAG), float(z)


def run_trajectory(
    rho0: DensityMatrix,
    cfg: SmeConfig,
    stream_index: int = 0,
    checkpoint_steps: Sequence[int] | None = None,
) -> TrajectoryResult:
    """Evolve a single trajectory on the noise stream (rng_seed, stream_index).

    Column ``stream_index`` of a batched run over the same seed uses the
    identical noise, so serial and batched execution agree exactly.
    """
    dW = _noise_matrix(cfg, 1, [cfg.rng_seed], offset=stream_index)
    saved, (records, _), flagged = _batched_run(
        rho0.entries, cfg, dW, checkpoint_steps=checkpoint_steps, collect_records=True
    )
    steps_sorted = sorted(saved)
    states = tuple(DensityMatrix(saved[s][0], psd_tol=1e-6) for s in steps_sorted)
    return TrajectoryResult(
        states=states,
        checkpoint_steps=tuple(steps_sorted),
        record=MeasurementRecord(records[:, 0], dW[:, 0]),
        flagged_steps=flagged,
    )


def ensemble_average_map(
    rho0: DensityMatrix,
    cfg: SmeConfig,
    n: int | None = None,
    seed_entropy=None,
) -> EnsembleResult:
    """Mean final state over independent trajectories plus a bootstrap error.

    The bootstrap standard error is the root-mean-square trace-norm deviation
    of resampled ensemble means around the full mean (100 resamples).
    """
    n = int(n or cfg.n_traj)
    entropy = seed_entropy if seed_entropy is not None else [cfg.rng_seed]
    dW = _noise_matrix(cfg, n, entropy)
    saved, _, flagged = _batched_run(rho0.entries, cfg, dW)
    finals = saved[cfg.steps]
    mean = finals.mean(axis=0)
    mean = 0.5 * (mean + mean.conj().T)
    mean = mean / np.trace(mean).real

    boot_entropy = (list(entropy) if isinstance(entropy, (list, tuple)) else [int(entropy)]) + [0xB007]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=boot_entropy))
    devs = np.empty(BOOTSTRAP_RESAMPLES)
    for b in range(BOOTSTRAP_RESAMPLES):
        idx = rng.integers(0, n, size=n)
        resampled = finals[idx].mean(axis=0)
        devs[b] = trace_norm(resampled - mean)
    se = float(np.sqrt(np.mean(devs**2)))
    return EnsembleResult(
        mean_state=DensityMatrix(mean, psd_tol=1e-6),
        bootstrap_se=se,
        n=n,
        flagged_fraction=flagged / (n * cfg.steps),
    )


def feedback_linearity_test(rho1: DensityMatrix, rho2: DensityMatrix, alpha: float, cfg: SmeConfig) -> dict:
    """Mixture-linearity check of the ensemble-averaged map at one ensemble size.

    Three independent ensembles (mixture and both branches) are compared;
    PASS means the deficit sits inside three combined bootstrap errors.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError("feedback_linearity_test: alpha must lie in (0, 1)")
    mix = DensityMatrix(alpha * rho1.entries + (1.0 - alpha) * rho2.entries)
    res_mix = ensemble_average_map(mix, cfg, seed_entropy=[cfg.rng_seed, 0])
    res_1 = ensemble_average_map(rho1, cfg, seed_entropy=[cfg.rng_seed, 1])
    res_2 = ensemble_average_map(rho2, cfg, seed_entropy=[cfg.rng_seed, 2])
    combo = alpha * res_1.mean_state.entries + (1.0 - alpha) * res_2.mean_state.entries
    deficit = trace_norm(res_mix.mean_state.entries - combo)
    bound = 3.0 * float(
        np.sqrt(
            res_mix.bootstrap_se**2
            + alpha**2 * res_1.bootstrap_se**2
            + (1.0 - alpha) ** 2 * res_2.bootstrap_se**2
        )
    )
    return {
        "deficit": float(deficit),
        "statistical_bound": bound,
        "verdict": "PASS" if deficit <= bound else "FAIL",
        "n": res_mix.n,
    }


def make_feedback_map(cfg: SmeConfig) -> DynamicalMap:
    """Wrap the ensemble-averaged evolution as a Monte-Carlo map for the harness."""

    def evaluator(state: DensityMatrix, n: int, seed_entropy):
        res = ensemble_average_map(state, cfg, n=n, seed_entropy=list(seed_entropy))
        return res.mean_state.entries, res.bootstrap_se

    return DynamicalMap(
        dim=cfg.dim,
        kind="monte-carlo",
        evaluator=evaluator,
        name=f"continuous-measurement[{cfg.signal}]",
    )
