"""The free-will test harness.

A scheme under test is wrapped as a :class:`DynamicalMap`: the ensemble map
rho -> rho' produced by assigning a classical variable and letting it control
the subsequent dynamics.  The harness probes the map with random mixtures and
measures the linearity deficit

    || M(a rho1 + (1-a) rho2) - a M(rho1) - (1-a) M(rho2) ||_tr,

adds complete-positivity / trace-preservation diagnostics where the map is
exact and defined on the full operator space, and issues a verdict:

- TANGIBLE: the assigned variable can control later dynamics consistently.
- NOT_TANGIBLE: the deficit is significant and stable under sampling growth.
- INCONSISTENT_ASSIGNMENT: the assignment's own consistency precondition
  (decoherence of the history family) failed, so the test does not apply.
- INCONCLUSIVE: the numbers support neither call at the configured scale.

Monte-Carlo maps are judged statistically: the deficit must fall below three
combined bootstrap standard errors at the largest ensemble size and shrink
like 1/sqrt(N) along a ladder of ensemble sizes; a genuine deficit instead
plateaus well above the shrinking bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from fwtlab.qcore import (
    ChoiMatrix,
    DensityMatrix,
    ValidationError,
    choi_of_map,
    cp_tp_check,
    random_density_matrix,
    trace_norm,
)

__all__ = [
    "VERDICT_TANGIBLE",
    "VERDICT_NOT_TANGIBLE",
    "VERDICT_INCONSISTENT",
    "VERDICT_INCONCLUSIVE",
    "VERDICT_FAILED",
    "DensityProbeSpace",
    "DynamicalMap",
    "LinearityScan",
    "FwtReport",
    "linearity_deficit",
    "mc_linearity_ladder",
    "fwt_verdict",
    "verdict_table",
    "render_table_text",
    "table_csv_rows",
    "TABLE_CSV_HEADER",
]

VERDICT_TANGIBLE = "TANGIBLE"
VERDICT_NOT_TANGIBLE = "NOT_TANGIBLE"
VERDICT_INCONSISTENT = "INCONSISTENT_ASSIGNMENT"
VERDICT_INCONCLUSIVE = "INCONCLUSIVE"
VERDICT_FAILED = "FAILED_TO_RUN"

EXACT_DEFICIT_TOL = 1e-9
CP_TOL = 1e-9
NOT_TANGIBLE_FACTOR = 10.0
SCALING_TOLERANCE = 1.5


@dataclass(frozen=True)
class DensityProbeSpace:
    """Probe generator over density matrices of dimension ``dim``.

    ``support`` restricts random probes to the leading ``support`` levels
    (for maps only valid on a guarded subspace); ``rank`` fixes the Ginibre
    rank of the probes (defaults to the support dimension).
    """

    dim: int
    rank: int | None = None
    support: int | None = None

    def random_state(self, rng: np.random.Generator) -> DensityMatrix:
        sup = self.support or self.dim
        rank = self.rank or sup
        small = random_density_matrix(sup, rank, rng)
        if sup == self.dim:
            return small
        full = np.zeros((self.dim, self.dim), dtype=complex)
        full[:sup, :sup] = small.entries
        return DensityMatrix(full)

    def mix(self, alpha: float, a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
        return DensityMatrix(alpha * a.entries + (1.0 - alpha) * b.entries)

    def as_array(self, state_or_output) -> np.ndarray:
        if isinstance(state_or_output, DensityMatrix):
            return state_or_output.entries
        return np.asarray(state_or_output, dtype=complex)

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        return trace_norm(x - y)


@dataclass(frozen=True)
class DynamicalMap:
    """A state map the harness can interrogate.

    ``kind`` is "exact" (deterministic evaluator ``state -> state``) or
    "monte-carlo" (evaluator ``(state, n, seed_entropy) -> (output, se)``
    where ``se`` is a bootstrap standard error of the returned mean in the
    space's distance).  ``choi_available`` marks exact maps that are declared
    linear and defined on the whole operator space, so a Choi matrix can be
    assembled by linear extension.
    """

    dim: int
    kind: str
    evaluator: Callable
    space: object = None
    declared_linear: bool = False
    choi_available: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("exact", "monte-carlo"):
            raise ValidationError(f"DynamicalMap: unknown kind {self.kind!r}")
        if self.space is None:
            object.__setattr__(self, "space", DensityProbeSpace(self.dim))
        if self.choi_available and (self.kind != "exact" or not self.declared_linear):
            raise ValidationError("DynamicalMap: Choi form needs an exact, declared-linear map")

    def apply(self, state):
        if self.kind != "exact":
            raise ValidationError("DynamicalMap: exact evaluation requested on a Monte-Carlo map")
        return self.evaluator(state)

    def apply_mc(self, state, n: int, seed_entropy: Sequence[int]):
        if self.kind != "monte-carlo":
            raise ValidationError("DynamicalMap: Monte-Carlo evaluation on an exact map")
        return self.evaluator(state, n, seed_entropy)

    def choi(self) -> ChoiMatrix:
        if not self.choi_available:
            raise ValidationError(
                "DynamicalMap: no Choi representation (map is Monte-Carlo, not declared "
                "linear, or only defined on a guarded domain); use mixture probing"
            )
        return choi_of_map(self.evaluator, self.dim)


@dataclass(frozen=True)
class LinearityScan:
    max_deficit: float
    argmax_probe: int
    deficits: tuple
    alphas: tuple


def _probe_triples(space, probes: int, rng_seed) -> list:
    rng = np.random.default_rng(rng_seed)
    triples = []
    for _ in range(probes):
        r1 = space.random_state(rng)
        r2 = space.random_state(rng)
        alpha = float(rng.uniform(0.1, 0.9))
        triples.append((alpha, r1, r2))
    return triples


def linearity_deficit(dmap: DynamicalMap, probes: int = 100, rng_seed=0) -> LinearityScan:
    """Max mixture-linearity violation of an exact map over random probes."""
    if probes < 10:
        raise ValidationError("linearity_deficit: need at least 10 probes")
    space = dmap.space
    deficits, alphas = [], []
    for alpha, r1, r2 in _probe_triples(space, probes, rng_seed):
        mixed_out = space.as_array(dmap.apply(space.mix(alpha, r1, r2)))
        combo = alpha * space.as_array(dmap.apply(r1)) + (1.0 - alpha) * space.as_array(dmap.apply(r2))
        deficits.append(space.distance(mixed_out, combo))
        alphas.append(alpha)
    idx = int(np.argmax(deficits))
    return LinearityScan(
        max_deficit=float(deficits[idx]),
        argmax_probe=idx,
        deficits=tuple(deficits),
        alphas=tuple(alphas),
    )


def mc_linearity_ladder(
    dmap: DynamicalMap,
    n_ladder: Sequence[int],
    probes: int = 3,
    rng_seed=0,
) -> dict:
    """Mean linearity deficit and statistical bound along a ladder of ensemble sizes.

    The same probe triples are reused at every rung so deficits are comparable;
    each of the three ensembles per probe gets an independent noise stream.
    The per-rung bound is three times the combined bootstrap standard error.
    """
    triples = _probe_triples(dmap.space, probes, rng_seed)
    base = rng_seed if isinstance(rng_seed, int) else 0
    out = {"n_ladder": list(n_ladder), "deficits": [], "bounds": [], "per_probe": {}}
    space = dmap.space
    for n in n_ladder:
        ds, bs = [], []
        for p_idx, (alpha, r1, r2) in enumerate(triples):
            mix = space.mix(alpha, r1, r2)
            out_mix, se_mix = dmap.apply_mc(mix, n, (base, p_idx, 0, n))
            out_1, se_1 = dmap.apply_mc(r1, n, (base, p_idx, 1, n))
            out_2, se_2 = dmap.apply_mc(r2, n, (base, p_idx, 2, n))
            combo = alpha * space.as_array(out_1) + (1.0 - alpha) * space.as_array(out_2)
            deficit = space.distance(space.as_array(out_mix), combo)
            se = float(np.sqrt(se_mix**2 + alpha**2 * se_1**2 + (1.0 - alpha) ** 2 * se_2**2))
            ds.append(deficit)
            bs.append(3.0 * se)
        out["deficits"].append(float(np.mean(ds)))
        out["bounds"].append(float(np.mean(bs)))
        out["per_probe"][int(n)] = {"deficits": ds, "bounds": bs}
    return out


def _scaling_flags(n_ladder, deficits, tolerance=SCALING_TOLERANCE):
    """(shrinks like 1/sqrt(N), plateaus) for consecutive ladder rungs."""
    shrinks, plateaus = True, True
    for i in range(len(n_ladder) - 1):
        expected = float(np.sqrt(n_ladder[i + 1] / n_ladder[i]))
        if deficits[i + 1] <= 0:
            return False, False
        ratio = deficits[i] / deficits[i + 1]
        if not (expected / tolerance <= ratio <= expected * tolerance):
            shrinks = False
        if not (1.0 / tolerance <= ratio <= tolerance):
            plateaus = False
    return shrinks, plateaus


@dataclass
class FwtReport:
    """Outcome of one free-will test run."""

    scheme: str
    deficit: float
    bound: float
    verdict: str
    cp: bool | None = None
    tp_deficit: float | None = None
    probes: int = 0
    n: int | None = None
    seed: int | None = None
    runtime_seconds: float = 0.0
    details: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_jsonable(self, deterministic: bool = True) -> dict:
        # runtime is zeroed in reports so reruns with the same seed are
        # byte-identical; wall-clock time goes to the log instead
        return {
            "scheme": self.scheme,
            "deficit": None if self.deficit is None or np.isnan(self.deficit) else float(self.deficit),
            "bound": None if self.bound is None or np.isnan(self.bound) else float(self.bound),
            "verdict": self.verdict,
            "cp": self.cp,
            "tp": self.tp_deficit,
            "probes": self.probes,
            "n": self.n,
            "seed": self.seed,
            "runtime_seconds": 0.0 if deterministic else self.runtime_seconds,
            "details": self.details,
            "config": self.config,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "FwtReport":
        return cls(
            scheme=obj["scheme"],
            deficit=float("nan") if obj.get("deficit") is None else float(obj["deficit"]),
            bound=float("nan") if obj.get("bound") is None else float(obj["bound"]),
            verdict=obj["verdict"],
            cp=obj.get("cp"),
            tp_deficit=obj.get("tp"),
            probes=obj.get("probes") or 0,
            n=obj.get("n"),
            seed=obj.get("seed"),
            runtime_seconds=obj.get("runtime_seconds") or 0.0,
            details=obj.get("details") or {},
            config=obj.get("config") or {},
        )


def fwt_verdict(
    scheme: str,
    dmap: DynamicalMap,
    probes: int = 100,
    rng_seed: int = 0,
    n_ladder: Sequence[int] | None = None,
    exact_tol: float = EXACT_DEFICIT_TOL,
    cp_tol: float = CP_TOL,
    not_tangible_factor: float = NOT_TANGIBLE_FACTOR,
    scaling_tolerance: float = SCALING_TOLERANCE,
    decoherence: tuple | None = None,
    config: dict | None = None,
) -> FwtReport:
    """Run the free-will test on a wrapped map and issue a verdict.

    ``decoherence`` is an optional ``(passed, max_offdiag)`` precondition from
    a history family; when it failed the verdict is INCONSISTENT_ASSIGNMENT
    regardless of the map diagnostics.  Monte-Carlo maps need ``n_ladder``.
    """
    t0 = time.perf_counter()
    details: dict = {}
    if dmap.kind == "exact":
        scan = linearity_deficit(dmap, probes=probes, rng_seed=rng_seed)
        deficit, bound, n = scan.max_deficit, 0.0, None
        cp = tp = None
        if dmap.choi_available:
            rep = cp_tp_check(dmap.choi(), tol=cp_tol)
            cp, tp = rep.is_cp, rep.tp_deficit
            details["choi_min_eigenvalue"] = rep.min_eigenvalue
        diagnostics_ok = (cp is None) or (cp and tp <= cp_tol)
        if deficit <= exact_tol and diagnostics_ok:
            verdict = VERDICT_TANGIBLE
        elif deficit > not_tangible_factor * exact_tol:
            verdict = VERDICT_NOT_TANGIBLE
        else:
            verdict = VERDICT_INCONCLUSIVE
        details["argmax_probe"] = scan.argmax_probe
    else:
        if not n_ladder:
            raise ValidationError("fwt_verdict: Monte-Carlo maps need an n_ladder")
        ladder = mc_linearity_ladder(dmap, n_ladder, probes=probes, rng_seed=rng_seed)
        deficit = ladder["deficits"][-1]
        bound = ladder["bounds"][-1]
        n = int(n_ladder[-1])
        cp = tp = None
        shrinks, plateaus = _scaling_flags(ladder["n_ladder"], ladder["deficits"], scaling_tolerance)
        details.update(
            {
                "ladder_n": ladder["n_ladder"],
                "ladder_deficits": ladder["deficits"],
                "ladder_bounds": ladder["bounds"],
                "scaling_shrinks": shrinks,
                "scaling_plateaus": plateaus,
                # sensitivity of the NOT_TANGIBLE call to the 10x threshold
                "bound_ratio": (deficit / bound) if bound > 0 else None,
            }
        )
        if deficit <= bound and shrinks:
            verdict = VERDICT_TANGIBLE
        elif bound > 0 and deficit > not_tangible_factor * bound and plateaus:
            verdict = VERDICT_NOT_TANGIBLE
        else:
            verdict = VERDICT_INCONCLUSIVE

    if decoherence is not None:
        passed, max_offdiag = decoherence
        details["decoherence_max_offdiag"] = float(max_offdiag)
        if not passed:
            verdict = VERDICT_INCONSISTENT

    return FwtReport(
        scheme=scheme,
        deficit=float(deficit),
        bound=float(bound),
        verdict=verdict,
        cp=cp,
        tp_deficit=tp,
        probes=probes,
        n=n,
        seed=rng_seed if isinstance(rng_seed, int) else None,
        runtime_seconds=time.perf_counter() - t0,
        details=details,
        config=dict(config or {}),
    )


def verdict_table(registry: Mapping[str, Callable], configs: Mapping[str, dict] | None = None) -> list:
    """Run every registered experiment and collect the reports in order.

    ``registry`` maps scheme names to callables ``config -> FwtReport``.  A
    failing experiment yields a FAILED_TO_RUN row; the table is still emitted.
    """
    reports = []
    for name, runner in registry.items():
        cfg = dict((configs or {}).get(name, {}))
        t0 = time.perf_counter()
        try:
            reports.append(runner(cfg))
        except Exception as exc:  # noqa: BLE001 - the row records the failure
            reports.append(
                FwtReport(
                    scheme=name,
                    deficit=float("nan"),
                    bound=float("nan"),
                    verdict=VERDICT_FAILED,
                    runtime_seconds=time.perf_counter() - t0,
                    details={"error": f"{type(exc).__name__}: {exc}"},
                    config=cfg,
                )
            )
    return reports


TABLE_CSV_HEADER = ["scheme", "verdict", "deficit", "bound", "cp", "tp", "probes", "n", "seed"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and np.isnan(v):
        return ""
    return v


def table_csv_rows(reports: Sequence[FwtReport]) -> list:
    rows = []
    for r in reports:
        rows.append(
            [
                r.scheme,
                r.verdict,
                _cell(r.deficit),
                _cell(r.bound),
                _cell(r.cp),
                _cell(r.tp_deficit),
                r.probes,
                _cell(r.n),
                _cell(r.seed),
            ]
        )
    return rows


def render_table_text(reports: Sequence[FwtReport]) -> str:
    """Fixed-width plain-text verdict table."""
    headers = ["scheme", "verdict", "deficit", "bound", "cp", "tp"]
    rows = []
    for r in reports:
        rows.append(
            [
                r.scheme,
                r.verdict,
                "" if np.isnan(r.deficit) else f"{r.deficit:.3e}",
                "" if np.isnan(r.bound) else f"{r.bound:.3e}",
                "" if r.cp is None else ("true" if r.cp else "false"),
                "" if r.tp_deficit is None else f"{r.tp_deficit:.2e}",
            ]
        )
    widths = [max(len(h), *(len(str(row[i])) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
