from fractions import Fraction

import numpy as np
import pytest

from lightcone_lab import diffsys as ds
from lightcone_lab.spectral import frobenius_series, stable_root_check


class TestRationalMatrix:
    def test_identity_and_mul(self):
        I = ds.RationalMatrix4.identity()
        assert I @ I == I
        assert ds.BASIS_P @ ds.BASIS_P_INV == I

    def test_det_exact(self):
        assert ds.RationalMatrix4.identity().det() == 1
        assert (ds.COMPANION_D - ds.RationalMatrix4.identity()).det() == 0
        assert (ds.COMPANION_D - ds.RationalMatrix4.diagonal((-1, -1, -1, -1))).det() == 0

    def test_first_mismatch(self):
        I = ds.RationalMatrix4.identity()
        J = ds.JORDAN_J
        mism = I.first_mismatch(J)
        assert mism is not None
        assert I.first_mismatch(I) is None

    def test_assert_equal_raises_with_entry(self):
        with pytest.raises(ds.ExactCheckFailure, match=r"\(1,2\)"):
            ds._assert_equal(ds.RationalMatrix4.identity(), ds.JORDAN_J, "check")


class TestJordanVerify:
    def test_all_exact(self):
        rep = ds.jordan_verify()
        assert rep["all_exact"] is True
        assert rep["det_D_minus_I"] == 0.0

    def test_jordan_blocks(self):
        got = ds.BASIS_P_INV @ ds.COMPANION_D @ ds.BASIS_P
        assert got == ds.JORDAN_J


class TestWindowTransform:
    def test_n_equal_one(self):
        m = ds.window_transform(1)
        assert m == ds.RationalMatrix4.diagonal((1, 2, -1, -2))

    def test_n_equal_three(self):
        m = ds.window_transform(3)
        assert m == ds.RationalMatrix4.diagonal(
            (1, Fraction(4, 3), -1, Fraction(-4, 3)))

    def test_exact_through_fifty(self):
        for n in range(1, 51):
            m = ds.window_transform(n)
            assert m.rows[1][1] == 1 + Fraction(1, n)

    def test_domain(self):
        with pytest.raises(ValueError):
            ds.window_transform(0)


class TestCompanionStep:
    def test_zero_vector(self):
        s = ds.CompanionState(z=np.zeros(4, dtype=complex), n=0,
                              nu=complex(-1.0), kappa=0.95)
        out = ds.companion_step(s)
        assert np.all(out.z == 0.0)
        assert out.n == 1

    def test_shift_structure(self):
        s = ds.CompanionState(z=np.array([1.0, 2.0, 3.0, 4.0], dtype=complex),
                              n=0, nu=complex(-1.0), kappa=0.95)
        out = ds.companion_step(s)
        assert np.array_equal(out.z[:3], s.z[1:])

    def test_frozen_weights_constant_recurrence(self):
        # with the variable weights dropped, D alone encodes a_{n+4} = 2 a_{n+2} - a_n
        D = ds.COMPANION_D.to_complex()
        a = [1.0, 0.5, 0.25, 0.125]
        z = np.array(a, dtype=complex)
        for n in range(20):
            z = D @ z
            a.append(2 * a[n + 2] - a[n])
            assert z[3] == pytest.approx(a[-1], rel=1e-14)

    def test_matches_scalar_recurrence_exactly(self):
        (roots, _) = stable_root_check(0, 0.95)
        nu = roots[0]
        series = frobenius_series(nu, 0.95, seeds=(0.1, 0.2, 0.05), N=80)
        z = ds.CompanionState(
            z=np.array([series.coeff(i) for i in range(4)]), n=0, nu=nu, kappa=0.95)
        for i in range(60):
            z = ds.companion_step(z)
        # same arithmetic, same order of operations: bitwise equality
        assert z.z[0] == series.coeff(60)

    def test_companion_matrix_embeds_weights(self):
        from lightcone_lab.spectral import recurrence_weights
        nu, kappa, n = complex(-0.8, 0.2), 0.9, 5
        m = ds.companion_matrix(n, nu, kappa)
        p1, p2 = recurrence_weights(n, nu, kappa)
        assert m[3, 0] == -1.0 - p2
        assert m[3, 2] == 2.0 - p1


class TestTtilde:
    def test_zero_weights_give_zero_matrix(self):
        # rank-one closed form vanishes when both weights vanish
        col = np.array([5.0, -2.0, 5.0, -2.0], dtype=complex)
        row = np.zeros(4, dtype=complex)
        assert np.all(np.outer(col, row) == 0.0)

    def test_product_matches_closed_form(self):
        rng = np.random.Generator(np.random.PCG64(6))
        for _ in range(50):
            n = int(rng.integers(1, 300))
            nu = complex(rng.uniform(-5, 1), rng.uniform(-3, 3))
            kappa = rng.uniform(0.6, 0.999)
            rep = ds.ttilde_build(n, nu, kappa)
            assert rep["closed_form_rel_err"] <= 1e-10

    def test_legacy_entry_documented_discrepancy(self):
        (roots, _) = stable_root_check(0, 0.95)
        rep = ds.ttilde_build(7, roots[0], 0.95)
        assert rep["legacy_entry_11_agrees"] is False
        legacy = ds.ttilde_legacy_entry_11(7, roots[0], 0.95)
        assert rep["legacy_entry_11"] == legacy
        assert rep["matrix"][0, 0] != pytest.approx(legacy, rel=1e-3)

    def test_entries_stay_order_one(self):
        (roots, _) = stable_root_check(0, 0.95)
        nu = roots[0]
        for n in (10, 100, 1000, 10000):
            t = ds.ttilde_closed_form(n, nu, 0.95)
            assert np.max(np.abs(t)) < 10.0


class TestGrowthProfile:
    def test_diagonal_from_e2_telescopes(self):
        ns, logs = ds.growth_profile(0.0, 0.95, 1000, start=2, diagonal_only=True)
        norms = np.exp(logs)
        rel = np.abs(norms - ns) / ns
        assert np.max(rel) < 1e-9

    def test_diagonal_from_e1_constant(self):
        ns, logs = ds.growth_profile(0.0, 0.95, 200, start=1, diagonal_only=True)
        assert np.max(np.abs(logs)) == 0.0

    def test_full_iteration_unbounded(self):
        (roots, _) = stable_root_check(0, 0.95)
        ns, logs = ds.growth_profile(roots[0], 0.95, 10000, start=2)
        assert logs[-1] > logs[99] + 1.0  # net growth beyond the transient
        assert np.max(logs) == pytest.approx(logs[-1], abs=2.0)

    def test_all_unit_starts_profiled(self):
        (roots, _) = stable_root_check(0, 0.95)
        finals = []
        for start in (1, 2, 3, 4):
            ns, logs = ds.growth_profile(roots[0], 0.95, 500, start=start)
            finals.append(logs[-1])
            assert len(ns) == 500
        assert all(np.isfinite(finals))

    def test_domain(self):
        with pytest.raises(ValueError):
            ds.growth_profile(0.0, 0.95, 1)
        with pytest.raises(ValueError):
            ds.growth_profile(0.0, 0.95, 100, start=5)
