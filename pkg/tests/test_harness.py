import numpy as np
import pytest

from fwtlab.assignments import ControlPolicy, controlled_average_map, meanfield_controlled_step
from fwtlab.harness import (
    VERDICT_FAILED,
    VERDICT_INCONCLUSIVE,
    VERDICT_INCONSISTENT,
    VERDICT_NOT_TANGIBLE,
    VERDICT_TANGIBLE,
    DensityProbeSpace,
    DynamicalMap,
    FwtReport,
    fwt_verdict,
    linearity_deficit,
    mc_linearity_ladder,
    render_table_text,
    table_csv_rows,
    verdict_table,
)
from fwtlab.qcore import (
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    Observable,
    ProjectorSet,
    ValidationError,
    random_unitary,
    trace_norm,
)
from fwtlab.serialize import canonical_json


def exact_map(dim, fn, linear=False, choi=False, space=None, name=""):
    return DynamicalMap(
        dim=dim, kind="exact", evaluator=fn, declared_linear=linear, choi_available=choi, space=space, name=name
    )


def controlled_average_dmap(dim=3, seed=7):
    rng = np.random.default_rng(seed)
    ps = ProjectorSet.from_basis(random_unitary(dim, rng).entries)
    ctrl = ControlPolicy.from_table({z: random_unitary(dim, rng) for z in ps.labels})
    return exact_map(dim, lambda r: controlled_average_map(r, ps, ctrl), linear=True, choi=True)


def meanfield_dmap():
    q, f = Observable(SIGMA_Z), Observable(SIGMA_Y)
    return exact_map(2, lambda r: meanfield_controlled_step(r, q, lambda z: z, f, 0.1))


class TestLinearityDeficit:
    def test_identity_map_zero(self):
        scan = linearity_deficit(exact_map(2, lambda r: r), probes=20, rng_seed=0)
        assert scan.max_deficit == 0.0

    def test_controlled_average_below_kraus_tolerance(self):
        scan = linearity_deficit(controlled_average_dmap(), probes=100, rng_seed=1)
        assert scan.max_deficit <= 1e-12

    def test_meanfield_benchmark_exceeds_threshold(self):
        scan = linearity_deficit(meanfield_dmap(), probes=100, rng_seed=2)
        assert scan.max_deficit > 1e-3
        assert 0 <= scan.argmax_probe < 100

    def test_probe_floor(self):
        with pytest.raises(ValidationError):
            linearity_deficit(exact_map(2, lambda r: r), probes=5)


class TestChoiAccess:
    def test_choi_unavailable_for_undeclared(self):
        with pytest.raises(ValidationError):
            meanfield_dmap().choi()

    def test_choi_construction_rule(self):
        with pytest.raises(ValidationError):
            DynamicalMap(dim=2, kind="exact", evaluator=lambda r: r, choi_available=True)


class TestScaleCovariance:
    def test_rescaled_policy_bitwise_identical(self):
        # z -> 2z with gain g(z/2) composes to the identical map, bit for bit
        f = Observable(SIGMA_Y)
        gain = lambda z: 0.7 * z
        base = ControlPolicy.from_gain(gain, f)
        resc = ControlPolicy.from_gain(lambda z: gain(z / 2.0), f)
        rng = np.random.default_rng(3)
        for _ in range(20):
            z = float(rng.uniform(-2, 2))
            u1 = base.unitary_for(z, 2).entries
            u2 = resc.unitary_for(2.0 * z, 2).entries
            np.testing.assert_array_equal(u1, u2)


def _noisy_mc_from_exact(fn, sigma, dim):
    """Monte-Carlo wrapper: exact map plus seeded mean-zero noise ~ sigma/sqrt(n)."""

    def evaluator(state, n, seed_entropy):
        rng = np.random.default_rng(np.random.SeedSequence(list(seed_entropy)))
        scale = sigma / np.sqrt(n)
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        noise = 0.5 * (g + g.conj().T) * scale
        noise -= np.trace(noise) / dim * np.eye(dim)
        out = fn(state).entries + noise
        return out, scale * np.sqrt(2.0 * dim)
    return evaluator


class TestMonteCarloVerdicts:
    def test_ladder_shapes(self):
        dmap = DynamicalMap(
            dim=2, kind="monte-carlo", evaluator=_noisy_mc_from_exact(lambda r: r, 0.3, 2)
        )
        ladder = mc_linearity_ladder(dmap, n_ladder=[100, 400], probes=2, rng_seed=5)
        assert len(ladder["deficits"]) == 2 and len(ladder["bounds"]) == 2

    def test_linear_map_with_sampling_noise_is_tangible(self):
        ca = controlled_average_dmap(dim=2, seed=11)
        dmap = DynamicalMap(
            dim=2, kind="monte-carlo", evaluator=_noisy_mc_from_exact(ca.apply, 0.05, 2)
        )
        report = fwt_verdict("toy-linear", dmap, probes=8, rng_seed=8, n_ladder=[1000, 4000, 16000])
        assert report.verdict == VERDICT_TANGIBLE
        assert report.deficit <= report.bound

    def test_nonlinear_map_plateau_is_not_tangible(self):
        q, f = Observable(SIGMA_Z), Observable(SIGMA_Y)
        strong = lambda r: meanfield_controlled_step(r, q, lambda z: 3 * z, f, 0.3)
        dmap = DynamicalMap(
            dim=2, kind="monte-carlo", evaluator=_noisy_mc_from_exact(strong, 0.05, 2)
        )
        report = fwt_verdict("toy-nonlinear", dmap, probes=8, rng_seed=9, n_ladder=[1000, 4000, 16000])
        assert report.verdict == VERDICT_NOT_TANGIBLE
        assert report.deficit > 10.0 * report.bound
        assert report.details["scaling_plateaus"]

    def test_mc_needs_ladder(self):
        dmap = DynamicalMap(dim=2, kind="monte-carlo", evaluator=_noisy_mc_from_exact(lambda r: r, 0.1, 2))
        with pytest.raises(ValidationError):
            fwt_verdict("x", dmap, probes=2)


class TestVerdicts:
    def test_exact_tangible_with_choi(self):
        report = fwt_verdict("projective-style", controlled_average_dmap(), probes=100, rng_seed=4)
        assert report.verdict == VERDICT_TANGIBLE
        assert report.cp is True
        assert report.tp_deficit <= 1e-9
        assert report.details["choi_min_eigenvalue"] >= -1e-10

    def test_exact_not_tangible(self):
        report = fwt_verdict("meanfield-style", meanfield_dmap(), probes=100, rng_seed=4)
        assert report.verdict == VERDICT_NOT_TANGIBLE
        assert report.cp is None

    def test_decoherence_precondition_overrides(self):
        report = fwt_verdict(
            "histories-style",
            controlled_average_dmap(),
            probes=20,
            rng_seed=4,
            decoherence=(False, 0.25),
        )
        assert report.verdict == VERDICT_INCONSISTENT
        assert report.details["decoherence_max_offdiag"] == 0.25

    def test_borderline_exact_is_inconclusive(self):
        # an exact map with a deficit between tol and 10x tol
        def slightly_off(rho):
            eps = 1e-8
            return (1 - eps) * rho.entries + eps * rho.purity() * np.eye(2) / 2

        report = fwt_verdict("borderline", exact_map(2, slightly_off), probes=20, rng_seed=6)
        assert report.verdict == VERDICT_INCONCLUSIVE


class TestReportsAndTable:
    def test_report_roundtrip(self):
        report = fwt_verdict("rt", controlled_average_dmap(), probes=20, rng_seed=12)
        obj = report.to_jsonable()
        back = FwtReport.from_jsonable(obj)
        assert back.scheme == report.scheme and back.verdict == report.verdict
        assert back.deficit == report.deficit

    def test_reports_deterministic_bytes(self):
        a = fwt_verdict("det", controlled_average_dmap(), probes=50, rng_seed=13)
        b = fwt_verdict("det", controlled_average_dmap(), probes=50, rng_seed=13)
        assert canonical_json(a.to_jsonable()) == canonical_json(b.to_jsonable())

    def test_runtime_zeroed_in_reports(self):
        report = fwt_verdict("rt", controlled_average_dmap(), probes=20, rng_seed=12)
        assert report.runtime_seconds > 0.0
        assert report.to_jsonable()["runtime_seconds"] == 0.0

    def test_verdict_table_handles_failures(self):
        registry = {
            "ok": lambda cfg: fwt_verdict("ok", controlled_average_dmap(), probes=20, rng_seed=1),
            "broken": lambda cfg: (_ for _ in ()).throw(RuntimeError("boom")),
        }
        reports = verdict_table(registry)
        assert [r.scheme for r in reports] == ["ok", "broken"]
        assert reports[1].verdict == VERDICT_FAILED
        assert "boom" in reports[1].details["error"]
        text = render_table_text(reports)
        assert "ok" in text and "FAILED_TO_RUN" in text
        rows = table_csv_rows(reports)
        assert len(rows) == 2 and rows[0][1] == VERDICT_TANGIBLE

    def test_empty_table(self):
        assert verdict_table({}) == []
        assert render_table_text([]).startswith("scheme")


class TestProbeSpace:
    def test_support_embedding(self):
        space = DensityProbeSpace(dim=10, support=3)
        rng = np.random.default_rng(0)
        rho = space.random_state(rng)
        assert rho.dim == 10
        assert trace_norm(rho.entries[3:, 3:]) == 0.0

    def test_mix_is_state(self):
        space = DensityProbeSpace(dim=4)
        rng = np.random.default_rng(1)
        m = space.mix(0.4, space.random_state(rng), space.random_state(rng))
        assert isinstance(m, DensityMatrix)
