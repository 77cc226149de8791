import math

import numpy as np
import pytest
from scipy.linalg import expm

from fwtlab.assignments import (
    CoherentBasis,
    ControlPolicy,
    OutcomeEnsemble,
    coherent_vector,
    controlled_average_map,
    husimi_assign,
    husimi_controlled_average_map,
    husimi_raw_average,
    meanfield_assign,
    meanfield_controlled_step,
    projective_assign,
)
from fwtlab.qcore import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    Observable,
    ProjectorSet,
    UnitaryOperator,
    ValidationError,
    annihilation_operator,
    apply_unitary,
    position_operator,
    random_density_matrix,
    random_unitary,
    trace_distance,
    trace_norm,
)

SZ_SET = ProjectorSet.computational(2)


def embedded_random_state(dim, support, rng):
    """Random state on the first ``support`` levels of a dim-level space."""
    small = random_density_matrix(support, support, rng).entries
    full = np.zeros((dim, dim), dtype=complex)
    full[:support, :support] = small
    return DensityMatrix(full)


class TestProjectiveAssign:
    def test_maximally_mixed(self):
        ens = projective_assign(DensityMatrix.maximally_mixed(2), SZ_SET)
        assert ens.values() == [0, 1]
        np.testing.assert_allclose(ens.weights(), [0.5, 0.5], atol=1e-14)
        assert trace_distance(ens.entries[0].post_state, DensityMatrix.basis_state(2, 0)) < 1e-14

    def test_eigenstate_drops_other_outcome(self):
        ens = projective_assign(DensityMatrix.basis_state(2, 0), SZ_SET)
        assert len(ens.entries) == 1
        assert ens.entries[0].z == 0
        assert ens.entries[0].weight == pytest.approx(1.0, abs=1e-14)
        assert ens.dropped_weight == pytest.approx(0.0, abs=1e-14)

    def test_plus_state_born_rule(self):
        plus = DensityMatrix.pure([1.0, 1.0])
        ens = projective_assign(plus, SZ_SET)
        np.testing.assert_allclose(ens.weights(), [0.5, 0.5], atol=1e-14)
        assert ens.entries[0].post_state.purity() == pytest.approx(1.0)

    def test_all_dropped_is_error(self):
        with pytest.raises(ValidationError):
            projective_assign(DensityMatrix.maximally_mixed(2), SZ_SET, drop_tol=2.0)

    def test_born_completeness_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d = int(rng.integers(2, 6))
            basis = random_unitary(d, rng).entries
            ps = ProjectorSet.from_basis(basis)
            rho = random_density_matrix(d, int(rng.integers(1, d + 1)), rng)
            ens = projective_assign(rho, ps)
            assert abs(ens.weights().sum() + ens.dropped_weight - 1.0) < 1e-10


class TestControlledAverageMap:
    def test_identity_control_dephases(self):
        plus = DensityMatrix.pure([1.0, 1.0])
        out = controlled_average_map(plus, SZ_SET, ControlPolicy.identity(2))
        assert trace_distance(out, DensityMatrix.maximally_mixed(2)) < 1e-14

    def test_conditional_flip(self):
        ctrl = ControlPolicy.from_table({0: UnitaryOperator.identity(2), 1: UnitaryOperator(SIGMA_X)})
        out = controlled_average_map(DensityMatrix.basis_state(2, 1), SZ_SET, ctrl)
        assert trace_distance(out, DensityMatrix.basis_state(2, 0)) < 1e-14

    def test_linearity_over_random_probes(self):
        # the ensemble-averaged controlled map is linear in the state
        rng = np.random.default_rng(11)
        d = 3
        ps = ProjectorSet.from_basis(random_unitary(d, rng).entries)
        ctrl = ControlPolicy.from_table(
            {z: random_unitary(d, rng) for z in ps.labels}
        )
        worst = 0.0
        for _ in range(100):
            r1 = random_density_matrix(d, d, rng)
            r2 = random_density_matrix(d, d, rng)
            a = rng.uniform(0.1, 0.9)
            mix = DensityMatrix(a * r1.entries + (1 - a) * r2.entries)
            lhs = controlled_average_map(mix, ps, ctrl).entries
            rhs = a * controlled_average_map(r1, ps, ctrl).entries + (1 - a) * controlled_average_map(r2, ps, ctrl).entries
            worst = max(worst, trace_norm(lhs - rhs))
        assert worst <= 1e-12

    def test_agrees_with_assign_then_apply(self):
        rng = np.random.default_rng(13)
        d = 3
        ps = ProjectorSet.from_basis(random_unitary(d, rng).entries)
        ctrl = ControlPolicy.from_table({z: random_unitary(d, rng) for z in ps.labels})
        for _ in range(25):
            rho = random_density_matrix(d, d, rng)
            direct = controlled_average_map(rho, ps, ctrl)
            ens = projective_assign(rho, ps)
            acc = np.zeros((d, d), dtype=complex)
            for z, w, post in ens.entries:
                acc += w * apply_unitary(post, ctrl.unitary_for(z, d)).entries
            assert trace_norm(direct.entries - acc) < 1e-12


class TestMeanfieldAssign:
    def test_oscillator_ground_state(self):
        dim = 24
        rho = DensityMatrix.basis_state(dim, 0)
        ens = meanfield_assign(rho, position_operator(dim))
        assert ens.entries[0].z == pytest.approx(0.0, abs=1e-14)
        assert ens.entries[0].weight == 1.0

    def test_qubit_sigma_z(self):
        ens = meanfield_assign(DensityMatrix.basis_state(2, 0), Observable(SIGMA_Z))
        assert ens.entries[0].z == pytest.approx(1.0, abs=1e-14)

    def test_coherent_state_position(self):
        # oracle: direct truncated-Fock expectation from the analytic amplitudes
        dim, alpha = 40, 1.3
        amps = np.array(
            [math.exp(-0.5 * alpha**2) * alpha**n / math.sqrt(math.factorial(n)) for n in range(dim)]
        )
        amps = amps / np.linalg.norm(amps)
        q = position_operator(dim).entries
        oracle = float(np.real(amps.conj() @ q @ amps))
        assert abs(oracle - math.sqrt(2.0) * 1.3) < 1e-6

        rho = DensityMatrix.pure(coherent_vector(1.3, dim))
        ens = meanfield_assign(rho, position_operator(dim))
        assert abs(ens.entries[0].z - math.sqrt(2.0) * 1.3) < 1e-6

    def test_state_untouched(self):
        rho = random_density_matrix(3, 2, rng_seed=8)
        ens = meanfield_assign(rho, Observable(np.diag([1.0, 0.0, -1.0]).astype(complex)))
        assert ens.entries[0].post_state is rho


class TestMeanfieldControlledStep:
    def test_zero_feedback_fixed_point(self):
        plus = DensityMatrix.pure([1.0, 1.0])  # tr(sigma_z rho) = 0
        out = meanfield_controlled_step(plus, Observable(SIGMA_Z), lambda z: z, Observable(SIGMA_Y), dt=0.1)
        assert trace_distance(out, plus) < 1e-14

    def test_qubit_benchmark_matches_closed_form(self):
        # closed form: each eigenstate branch rotates about y by 2*g(z)*dt
        q, f, dt = Observable(SIGMA_Z), Observable(SIGMA_Y), 0.1
        r1 = DensityMatrix.basis_state(2, 0)
        r2 = DensityMatrix.basis_state(2, 1)
        chi = 2.0 * 1.0 * dt
        branch1 = 0.5 * (np.eye(2) + math.sin(chi) * SIGMA_X + math.cos(chi) * SIGMA_Z)
        branch2 = 0.5 * (np.eye(2) + math.sin(chi) * SIGMA_X - math.cos(chi) * SIGMA_Z)
        out1 = meanfield_controlled_step(r1, q, lambda z: z, f, dt)
        out2 = meanfield_controlled_step(r2, q, lambda z: z, f, dt)
        assert np.max(np.abs(out1.entries - branch1)) < 1e-10
        assert np.max(np.abs(out2.entries - branch2)) < 1e-10

        mix = DensityMatrix.maximally_mixed(2)  # tr(q mix) = 0 -> unchanged
        out_mix = meanfield_controlled_step(mix, q, lambda z: z, f, dt)
        assert trace_distance(out_mix, mix) < 1e-14
        deficit = trace_norm(out_mix.entries - 0.5 * out1.entries - 0.5 * out2.entries)
        assert deficit == pytest.approx(math.sin(chi), abs=1e-10)
        assert deficit > 1e-3

    def test_control_off_restores_linearity(self):
        q, f, dt = Observable(SIGMA_Z), Observable(SIGMA_Y), 0.1
        rng = np.random.default_rng(21)
        for _ in range(10):
            r1 = random_density_matrix(2, 2, rng)
            r2 = random_density_matrix(2, 2, rng)
            a = rng.uniform(0.1, 0.9)
            mix = DensityMatrix(a * r1.entries + (1 - a) * r2.entries)
            step = lambda r: meanfield_controlled_step(r, q, lambda z: 0.0, f, dt)
            deficit = trace_norm(step(mix).entries - a * step(r1).entries - (1 - a) * step(r2).entries)
            assert deficit <= 1e-14


@pytest.fixture(scope="module")
def vacuum_basis():
    return CoherentBasis.build(fock_cutoff=30, extent=6.0, spacing=0.25)


@pytest.fixture(scope="module")
def masked_basis_20():
    # disk mask keeps the grid away from corners the truncated space cannot hold
    return CoherentBasis.build(fock_cutoff=20, extent=6.5, spacing=0.25, mask_radius_sq=20.0)


class TestCoherentBasis:
    def test_vectors_normalized(self, vacuum_basis):
        norms = np.linalg.norm(vacuum_basis.vectors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_methods_agree_inside_validity(self):
        for alpha in (0.0, 0.7, 1.2 + 0.9j, -1.5j, 2.0 + 1.0j):
            v1 = coherent_vector(alpha, 40, "displacement")
            v2 = coherent_vector(alpha, 40, "analytic")
            assert np.max(np.abs(v1 - v2)) < 1e-8

    def test_cutoff_too_small_rejected(self):
        with pytest.raises(ValidationError):
            CoherentBasis.build(fock_cutoff=8, extent=6.0, spacing=0.5)


class TestHusimiAssign:
    def test_vacuum_raw_sum_near_one(self, vacuum_basis):
        ens = husimi_assign(DensityMatrix.basis_state(30, 0), vacuum_basis)
        assert abs(ens.raw_weight_sum - 1.0) < 1e-3
        assert abs(ens.weights().sum() - 1.0) < 1e-12

    def test_vacuum_peak_at_origin(self, vacuum_basis):
        ens = husimi_assign(DensityMatrix.basis_state(30, 0), vacuum_basis)
        peak = ens.entries[int(np.argmax(ens.weights()))].z
        # cell centers sit half a spacing off the axes; the peak cell touches (0,0)
        assert abs(peak[0]) <= vacuum_basis.dq and abs(peak[1]) <= vacuum_basis.dp

    def test_coherent_state_gaussian_center(self, vacuum_basis):
        q0, p0 = 1.0, 0.0
        alpha = (q0 + 1j * p0) / math.sqrt(2.0)
        rho = DensityMatrix.pure(coherent_vector(alpha, 30))
        ens = husimi_assign(rho, vacuum_basis)

        # oracle: direct overlap |<z|alpha>|^2 from independent analytic amplitudes
        pts = vacuum_basis.points
        a_grid = (pts[:, 0] + 1j * pts[:, 1]) / math.sqrt(2.0)
        target = np.array(
            [math.exp(-0.5 * abs(alpha) ** 2) * alpha**n / math.sqrt(math.factorial(n)) for n in range(30)]
        )
        target /= np.linalg.norm(target)
        overlaps = np.empty(len(pts))
        for i, az in enumerate(a_grid):
            zvec = np.array(
                [np.exp(-0.5 * abs(az) ** 2) * az**n / math.sqrt(math.factorial(n)) for n in range(30)]
            )
            zvec /= np.linalg.norm(zvec)
            overlaps[i] = abs(np.vdot(zvec, target)) ** 2
        oracle_w = overlaps * vacuum_basis.cell_measure
        oracle_w /= oracle_w.sum()
        np.testing.assert_allclose(ens.weights(), oracle_w, atol=1e-6)

        centroid = (ens.weights()[:, None] * pts).sum(axis=0)
        assert abs(centroid[0] - q0) < 0.05 and abs(centroid[1] - p0) < 0.05

    def test_small_grid_rejected(self):
        basis = CoherentBasis.build(fock_cutoff=16, extent=1.0, spacing=0.25)
        with pytest.raises(ValidationError):
            husimi_assign(DensityMatrix.basis_state(16, 0), basis)

    def test_top_level_mass_guard(self, vacuum_basis):
        with pytest.raises(ValidationError):
            husimi_assign(DensityMatrix.basis_state(30, 29), vacuum_basis)

    def test_raw_sum_monotone_ladder(self):
        vac_sums = []
        for cutoff, extent in ((12, 2.0), (20, 4.0), (30, 6.0)):
            basis = CoherentBasis.build(fock_cutoff=cutoff, extent=extent, spacing=0.25)
            ens = husimi_assign(DensityMatrix.basis_state(cutoff, 0), basis, min_raw_sum=0.5)
            vac_sums.append(ens.raw_weight_sum)
        assert vac_sums[0] < vac_sums[1] < vac_sums[2]
        assert abs(vac_sums[2] - 1.0) < 1e-3


class TestHusimiMaps:
    def test_identity_control_mixes(self, vacuum_basis):
        rho = DensityMatrix.pure(np.eye(30)[1])  # first excited Fock state
        out = husimi_controlled_average_map(rho, vacuum_basis, ControlPolicy.identity(30))
        assert out.purity() < rho.purity()

    def test_raw_map_exactly_linear(self, masked_basis_20):
        rng = np.random.default_rng(5)
        ctrl = ControlPolicy.from_gain(lambda z: 0.1 * z[0], Observable(np.diag(np.arange(20.0)).astype(complex)))
        worst = 0.0
        for _ in range(20):
            r1 = embedded_random_state(20, 3, rng)
            r2 = embedded_random_state(20, 3, rng)
            a = rng.uniform(0.1, 0.9)
            mix = a * r1.entries + (1 - a) * r2.entries
            lhs = husimi_raw_average(mix, masked_basis_20, ctrl)
            rhs = a * husimi_raw_average(r1.entries, masked_basis_20, ctrl) + (1 - a) * husimi_raw_average(
                r2.entries, masked_basis_20, ctrl
            )
            worst = max(worst, trace_norm(lhs - rhs))
        assert worst <= 1e-12

    def test_renormalized_map_linearity_grid_limited(self, masked_basis_20):
        rng = np.random.default_rng(6)
        ctrl = ControlPolicy.from_gain(lambda z: 0.1 * z[0], Observable(np.diag(np.arange(20.0)).astype(complex)))
        worst = 0.0
        for _ in range(50):
            r1 = embedded_random_state(20, 3, rng)
            r2 = embedded_random_state(20, 3, rng)
            a = rng.uniform(0.1, 0.9)
            mix = DensityMatrix(a * r1.entries + (1 - a) * r2.entries)
            lhs = husimi_controlled_average_map(mix, masked_basis_20, ctrl).entries
            rhs = (
                a * husimi_controlled_average_map(r1, masked_basis_20, ctrl).entries
                + (1 - a) * husimi_controlled_average_map(r2, masked_basis_20, ctrl).entries
            )
            worst = max(worst, trace_norm(lhs - rhs))
        assert worst <= 1e-6

    def test_fixed_displacement_moves_mean(self, vacuum_basis):
        beta = 0.4 + 0.15j
        a = annihilation_operator(30)
        disp = UnitaryOperator(expm(beta * a.conj().T - np.conj(beta) * a))
        ctrl = ControlPolicy.constant_unitary(disp)
        out = husimi_controlled_average_map(DensityMatrix.basis_state(30, 0), vacuum_basis, ctrl)
        q_mean = out.expectation(position_operator(30))
        assert abs(q_mean - math.sqrt(2.0) * beta.real) < 0.02


def test_outcome_ensemble_serialization():
    ens = projective_assign(DensityMatrix.maximally_mixed(2), SZ_SET)
    rows = ens.to_jsonable()
    assert rows[0]["z"] == 0 and rows[0]["weight"] == pytest.approx(0.5)
    assert "post_state" not in rows[0]
    rows_v = ens.to_jsonable(include_states=True)
    assert rows_v[0]["post_state"][0][0] == [1.0, 0.0]


def test_outcome_ensemble_rejects_bad_weights():
    rho = DensityMatrix.maximally_mixed(2)
    with pytest.raises(ValidationError):
        OutcomeEnsemble(((0, 0.4, rho), (1, 0.4, rho)))
