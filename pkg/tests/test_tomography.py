import json
from fractions import Fraction

import numpy as np
import pytest

from ququart.errors import InputError, InsufficientDataError
from ququart.hilbert import (BASIS_LABELS, DensityMatrix, density_from_state, mub_state,
                             ququart_product)
from ququart.tomography import (MUB_20, OPERATOR_ORDER, SEPARABLE_36, CountsRecord, NoiseModel,
                                OperatorBasis, apply_noise, born_probabilities,
                                count_budget_for_stderr, counts_to_expectations,
                                expected_counts, expectations, f_exp, f_exp_stderr, fidelity,
                                fit_noise_to_state, linear_entropy, linear_inversion,
                                mub_linear_estimate, mub_probabilities, mub_reconstruct,
                                negativity, project_physical, projector_set, purity,
                                random_density_matrix, separable_reconstruct, simulate_counts,
                                substream_seed, werner)

KET1 = mub_state("I", 1)
RHO1 = density_from_state(KET1)


def pure(b, k):
    return density_from_state(mub_state(b, k))


def perturbed(rng, scale=0.2):
    """Hermitian, unit-trace, usually indefinite."""
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = scale * (g + g.conj().T)
    h -= np.trace(h) / 4 * np.eye(4)
    return random_density_matrix(rng).entries + h


class TestOperatorBasis:
    def test_size_and_order(self):
        ob = OperatorBasis()
        assert len(ob) == 16
        assert ob.labels[2] == ("Z", "I") and ob.labels[15] == ("I", "I")

    def test_trace_orthogonal(self):
        ops = OperatorBasis().operators
        gram = np.einsum("aij,bji->ab", ops, ops)
        assert np.allclose(gram, 4 * np.eye(16), atol=1e-12)

    def test_hermitian_pm1_spectrum(self):
        for lab, op in zip(OPERATOR_ORDER, OperatorBasis().operators):
            assert np.allclose(op, op.conj().T)
            w = np.linalg.eigvalsh(op)
            expected = [1] * 4 if lab == ("I", "I") else [-1, -1, 1, 1]
            assert np.allclose(w, expected)


class TestProjectorSets:
    def test_counts(self):
        assert len(projector_set(SEPARABLE_36)) == 36
        assert len(projector_set(MUB_20)) == 20
        assert Fraction(20, 36) == Fraction(5, 9)

    def test_rank_one_projectors(self):
        for scheme in (SEPARABLE_36, MUB_20):
            for P in projector_set(scheme).projectors:
                assert np.allclose(P @ P, P, atol=1e-12)
                assert abs(np.trace(P) - 1) < 1e-12

    def test_separable_labels(self):
        labs = projector_set(SEPARABLE_36).labels
        assert "H,+2" in labs and "L,d" in labs and len(set(labs)) == 36

    def test_mub_set_matches_table(self):
        ps = projector_set(MUB_20)
        assert ps.labels[5] == "II.2"
        assert np.allclose(ps.vectors[5], mub_state("II", 2).ququart_coefficients())

    def test_unknown_scheme(self):
        with pytest.raises(InputError):
            projector_set("PAULI_81")


class TestExpectations:
    def test_maximally_mixed(self):
        r = expectations(DensityMatrix.maximally_mixed())
        assert np.allclose(r, [0] * 15 + [1], atol=1e-15)

    def test_ket1_zi(self):
        r = expectations(RHO1)
        assert r[2] == pytest.approx(1)
        assert r[11] == pytest.approx(1) and r[14] == pytest.approx(1)

    def test_bounds(self, rng):
        for _ in range(100):
            r = expectations(random_density_matrix(rng))
            assert np.all(np.abs(r) <= 1 + 1e-12) and r[15] == pytest.approx(1)


class TestLinearInversion:
    def test_round_trip(self, rng):
        for _ in range(200):
            rho = random_density_matrix(rng)
            assert np.max(np.abs(linear_inversion(expectations(rho)).entries - rho.entries)) <= 1e-12

    def test_identity_only(self):
        assert np.allclose(linear_inversion([0] * 15 + [1]).entries, np.eye(4) / 4)

    def test_perturbed_goes_negative(self):
        r = expectations(RHO1).copy()
        r[2] = 1.05
        raw = linear_inversion(r)
        # Oracle: the (V,-2) diagonal element is (1 - r3 - r12 + r15)/4.
        assert raw.entries[3, 3].real == pytest.approx((1 - 1.05 - 1 + 1) / 4)
        assert raw.eigenvalues().min() < 0

    def test_bad_identity(self):
        with pytest.raises(InputError):
            linear_inversion([0] * 15 + [0.9])
        with pytest.raises(InputError):
            linear_inversion([0] * 15)


class TestProjectPhysical:
    def test_fixed_point(self, rng):
        for _ in range(50):
            rho = random_density_matrix(rng)
            assert np.max(np.abs(project_physical(rho).entries - rho.entries)) <= 1e-12

    def test_example(self):
        out = project_physical(np.diag([1.1, -0.1, 0, 0]).astype(complex))
        assert np.allclose(out.entries, np.diag([1, 0, 0, 0]), atol=1e-15)

    def test_multi_step(self):
        # -0.3 spread over 0.5, 0.45, 0.35 -> 0.4, 0.35, 0.25 ; all positive.
        out = project_physical(np.diag([0.5, 0.45, 0.35, -0.3]).astype(complex))
        assert np.allclose(np.diag(out.entries).real, [0.4, 0.35, 0.25, 0], atol=1e-12)
        # -0.2 spread -> (0.7, 0.3, -0.1+... ) forces a second truncation
        out = project_physical(np.diag([0.8, 0.4, 0.0, -0.2]).astype(complex))
        assert np.allclose(np.diag(out.entries).real, [0.7, 0.3, 0, 0], atol=1e-12)

    def test_random_perturbed(self, rng):
        for _ in range(1000):
            out = project_physical(perturbed(rng))
            w = out.eigenvalues()
            assert w.min() >= -1e-12
            assert abs(w.sum() - 1) <= 1e-12

    def test_idempotent_and_not_worse_than_clipping(self, rng):
        for _ in range(200):
            m = perturbed(rng)
            out = project_physical(m)
            again = project_physical(out)
            assert np.max(np.abs(again.entries - out.entries)) <= 1e-12
            w, v = np.linalg.eigh(m)
            wc = np.clip(w, 0, None)
            clipped = (v * (wc / wc.sum())) @ v.conj().T
            assert np.linalg.norm(out.entries - m) <= np.linalg.norm(clipped - m) + 1e-12

    def test_non_hermitian(self):
        with pytest.raises(InputError):
            project_physical(np.triu(np.ones((4, 4))) / 4)


class TestSimulateCounts:
    def test_zero_mean(self):
        rec = simulate_counts(RHO1, SEPARABLE_36, 0, 1)
        assert set(rec.counts.values()) == {0}

    def test_deterministic(self):
        a = simulate_counts(pure("III", 2), MUB_20, 1e4, 7)
        b = simulate_counts(pure("III", 2), MUB_20, 1e4, 7)
        assert a == b
        c = simulate_counts(pure("III", 2), MUB_20, 1e4, 8)
        assert a != c

    def test_parallel_identical(self):
        a = simulate_counts(pure("V", 1), SEPARABLE_36, 1e4, 3)
        b = simulate_counts(pure("V", 1), SEPARABLE_36, 1e4, 3, workers=8)
        assert a == b

    def test_substreams_independent_of_order(self):
        assert substream_seed(1, MUB_20, "I.1") != substream_seed(1, MUB_20, "I.2")
        assert substream_seed(1, MUB_20, "I.1") == substream_seed(1, MUB_20, "I.1")

    def test_born_concentration(self):
        rec = simulate_counts(RHO1, SEPARABLE_36, 1e6, 11)
        assert abs(rec.counts["H,+2"] - 1e6) <= 4 * 1e3
        assert rec.counts["V,-2"] == 0

    def test_poisson_mean(self):
        rho = pure("II", 1)
        xs = [simulate_counts(rho, MUB_20, 1e3, s).counts["IV.1"] for s in range(200)]
        # mean 250, sd of the mean sqrt(250 / 200)
        assert abs(np.mean(xs) - 250) < 5 * np.sqrt(250 / 200)

    def test_negative_mean(self):
        with pytest.raises(InputError):
            simulate_counts(RHO1, MUB_20, -1, 0)

    def test_record_json_roundtrip(self):
        rec = simulate_counts(RHO1, MUB_20, 100, 5)
        assert CountsRecord.from_json(json.loads(json.dumps(rec.to_json()))) == rec

    def test_record_validation(self):
        with pytest.raises(InputError):
            CountsRecord(MUB_20, {"I.1": 3}, 10, 0)
        counts = {lab: 0 for lab in projector_set(MUB_20).labels}
        counts["I.1"] = -1
        with pytest.raises(InputError):
            CountsRecord(MUB_20, counts, 10, 0)


class TestCountsToExpectations:
    def test_maximally_mixed(self):
        r = counts_to_expectations(expected_counts(DensityMatrix.maximally_mixed(), SEPARABLE_36, 1.0))
        assert np.max(np.abs(r - np.r_[np.zeros(15), 1])) <= 1e-12

    def test_noiseless_identity(self):
        for b in BASIS_LABELS:
            for k in range(1, 5):
                rho = pure(b, k)
                r = counts_to_expectations(expected_counts(rho, SEPARABLE_36, 1.0))
                assert np.max(np.abs(r - expectations(rho))) <= 1e-12

    def test_noiseless_identity_mixed(self, rng):
        for _ in range(100):
            rho = random_density_matrix(rng)
            r = counts_to_expectations(expected_counts(rho, SEPARABLE_36, 1.0))
            assert np.max(np.abs(r - expectations(rho))) <= 1e-12

    def test_poisson_within_five_se(self):
        truth = expectations(RHO1)
        rs = np.array([counts_to_expectations(simulate_counts(RHO1, SEPARABLE_36, 1e4, s))
                       for s in range(100)])
        for j in range(16):
            se = rs[:, j].std(ddof=1)
            if se == 0:
                assert np.all(rs[:, j] == truth[j])
            else:
                assert np.all(np.abs(rs[:, j] - truth[j]) <= 5 * se + 1e-12), j

    def test_zero_counts(self):
        rec = simulate_counts(RHO1, SEPARABLE_36, 0, 0)
        with pytest.raises(InsufficientDataError):
            counts_to_expectations(rec)

    def test_wrong_scheme(self):
        with pytest.raises(InputError):
            counts_to_expectations(simulate_counts(RHO1, MUB_20, 10, 0))


class TestMubReconstruction:
    def test_identity(self, rng):
        for _ in range(200):
            rho = random_density_matrix(rng)
            est = mub_linear_estimate(expected_counts(rho, MUB_20, 1.0))
            assert np.max(np.abs(est.entries - rho.entries)) <= 1e-12

    def test_brute_force_sum(self, rng):
        rho = random_density_matrix(rng).entries
        acc = -np.eye(4, dtype=complex)
        for b in BASIS_LABELS:
            for k in range(1, 5):
                v = mub_state(b, k).ququart_coefficients()
                P = np.outer(v, v.conj())
                acc += np.trace(rho @ P).real * P
        assert np.max(np.abs(acc - rho)) <= 1e-12

    def test_unbiased_probabilities(self):
        p = mub_probabilities(expected_counts(pure("IV", 1), MUB_20, 1.0))
        assert np.allclose(p[3], [1, 0, 0, 0], atol=1e-15)
        for i in (0, 1, 2, 4):
            assert np.allclose(p[i], 0.25, atol=1e-15)

    def test_zero_basis(self):
        counts = {lab: 5 for lab in projector_set(MUB_20).labels}
        for k in range(1, 5):
            counts[f"III.{k}"] = 0
        with pytest.raises(InsufficientDataError):
            mub_reconstruct(CountsRecord(MUB_20, counts, 5, 0))

    def test_consistency_in_count_level(self):
        state = mub_state("IV", 2)
        rho = density_from_state(state)
        meds = []
        for mean in (1e3, 1e4, 1e5):
            meds.append(np.median([fidelity(mub_reconstruct(simulate_counts(rho, MUB_20, mean, s)), state)
                                   for s in range(100)]))
        assert meds[0] <= meds[1] <= meds[2]
        meds = []
        for mean in (1e3, 1e4, 1e5):
            meds.append(np.median([fidelity(separable_reconstruct(simulate_counts(rho, SEPARABLE_36, mean, s)),
                                            state) for s in range(100)]))
        assert meds[0] <= meds[1] <= meds[2]


class TestFExp:
    def _counts(self, basis, row):
        counts = {lab: 0 for lab in projector_set(MUB_20).labels}
        for k, n in enumerate(row, 1):
            counts[f"{basis}.{k}"] = n
        return counts

    def test_ideal_and_uniform(self):
        assert f_exp(self._counts("II", (1000, 0, 0, 0)), "II", 1) == 1.0
        assert f_exp(self._counts("II", (7, 7, 7, 7)), "II", 3) == 0.25

    def test_all_ideal_states(self):
        for b in BASIS_LABELS:
            for k in range(1, 5):
                c = expected_counts(pure(b, k), MUB_20, 1.0)
                assert f_exp(c, b, k) == pytest.approx(1.0, abs=1e-12)
                for other in BASIS_LABELS:
                    if other != b:
                        for j in range(1, 5):
                            assert f_exp(c, other, j) == pytest.approx(0.25, abs=1e-12)

    def test_depolarized_expectation(self):
        p = 0.2
        rho = apply_noise(pure("V", 3), NoiseModel(p, 0))
        assert f_exp(expected_counts(rho, MUB_20, 1.0), "V", 3) == pytest.approx(1 - p + p / 4, abs=1e-12)

    def test_zero_total(self):
        with pytest.raises(InsufficientDataError):
            f_exp(self._counts("I", (0, 0, 0, 0)), "I", 1)

    def test_bad_args(self):
        c = self._counts("I", (1, 0, 0, 0))
        with pytest.raises(InputError):
            f_exp(c, "VI", 1)
        with pytest.raises(InputError):
            f_exp(c, "I", 5)

    def test_stderr_and_budget(self):
        assert f_exp_stderr(0.5, 100) == pytest.approx(0.05)
        n = count_budget_for_stderr(0.95, 0.004)
        assert f_exp_stderr(0.95, n) == pytest.approx(0.004)


class TestMetrics:
    def test_pure(self):
        for b in BASIS_LABELS:
            rho = pure(b, 2)
            assert abs(fidelity(rho, mub_state(b, 2)) - 1) <= 1e-12
            assert abs(linear_entropy(rho)) <= 1e-12
            assert purity(rho) == pytest.approx(1)

    def test_maximally_mixed(self):
        mm = DensityMatrix.maximally_mixed()
        assert fidelity(mm, KET1) == pytest.approx(0.25, abs=1e-15)
        assert linear_entropy(mm) == pytest.approx(1, abs=1e-15)
        assert linear_entropy(mm, normalized=False) == pytest.approx(0.75, abs=1e-15)

    def test_werner(self):
        w = werner(mub_state("III", 4), 0.1)
        # Tr rho^2 = 0.81 + 2*0.9*0.025 + 0.0025 = 0.8575
        f_oracle = float(1 - Fraction(1, 10) + Fraction(1, 40))
        s_oracle = float(Fraction(4, 3) * (1 - Fraction(8575, 10000)))
        assert fidelity(w, mub_state("III", 4)) == pytest.approx(f_oracle, abs=1e-12)
        assert linear_entropy(w) == pytest.approx(s_oracle, abs=1e-12)
        assert s_oracle == pytest.approx(0.19)

    def test_negativity(self):
        assert negativity(np.diag([1.1, -0.1, 0, 0])) == pytest.approx(0.1)
        assert negativity(RHO1) == 0

    def test_fidelity_rejects_outside_target(self):
        from ququart.hilbert import StateVector
        with pytest.raises(InputError):
            fidelity(RHO1, StateVector.basis_ket("H", 0))


class TestNoise:
    def test_identity_channel(self):
        rho = pure("V", 2)
        assert np.allclose(apply_noise(rho, NoiseModel()).entries, rho.entries)

    def test_full_depolarization(self):
        assert np.allclose(apply_noise(pure("II", 3), NoiseModel(1, 0.3)).entries, np.eye(4) / 4)

    def test_depolarized_fidelity(self):
        for p in (0.05, 0.3):
            assert fidelity(apply_noise(pure("IV", 4), NoiseModel(p, 0)), mub_state("IV", 4)) == \
                pytest.approx(1 - 3 * p / 4, abs=1e-12)

    def test_cptp(self, rng):
        for _ in range(100):
            out = apply_noise(random_density_matrix(rng), NoiseModel(*rng.uniform(0, 1, 2)))
            assert out.is_physical(1e-12)
            assert np.trace(out.entries).real == pytest.approx(1, abs=1e-12)

    def test_dephasing_only_touches_cross_blocks(self):
        rho = pure("II", 1)
        out = apply_noise(rho, NoiseModel(0, 0.4)).entries
        assert np.allclose(out[:2, :2], rho.entries[:2, :2])
        assert np.allclose(out[:2, 2:], 0.6 * rho.entries[:2, 2:])

    def test_range(self):
        with pytest.raises(InputError):
            NoiseModel(1.2, 0)

    def test_fit_single_state(self):
        fit = fit_noise_to_state(ququart_product("H", "-2"), 0.985, 0.058)
        assert abs(fit.fidelity - 0.985) <= 0.01
        assert abs(fit.linear_entropy - 0.058) <= 0.01


def test_born_probabilities_sum_per_basis(rng):
    rho = random_density_matrix(rng)
    p = born_probabilities(rho, MUB_20).reshape(5, 4)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-12)
