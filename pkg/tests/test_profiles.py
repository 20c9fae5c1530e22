import math

import numpy as np
import pytest

from lightcone_lab import profiles as P


@pytest.fixture
def frame():
    return P.SimilarityFrame(T=1.0, sigma=0.5, kappa=0.95)


class TestProfileValue:
    def test_values(self):
        p = P.SelfSimilarProfile(+1)
        assert P.profile_value(p, 0.0, 0) == 1.0
        assert P.profile_value(p, 1.0, 0) == 0.0
        assert P.profile_value(p, 0.6, 0) == pytest.approx(0.8, abs=1e-15)

    def test_sign_symmetry(self):
        plus, minus = P.SelfSimilarProfile(+1), P.SelfSimilarProfile(-1)
        for rho in (0.1, 0.5, 0.9):
            for k in (0, 1, 2):
                assert P.profile_value(plus, rho, k) == -P.profile_value(minus, rho, k)

    def test_lightlike_identity_on_rational_samples(self):
        # 1 - rho^2 - phi^2 vanishes; rho = k/64 is exactly representable
        p = P.SelfSimilarProfile(+1)
        for k in range(1, 64):
            rho = k / 64.0
            phi = P.profile_value(p, rho, 0)
            assert abs(1.0 - rho * rho - phi * phi) < 1e-14

    def test_domain_errors(self):
        p = P.SelfSimilarProfile(+1)
        with pytest.raises(P.DomainError):
            P.profile_value(p, 1.2, 0)
        with pytest.raises(P.DomainError):
            P.profile_value(p, -0.1, 0)
        with pytest.raises(P.DomainError):
            P.profile_value(p, 1.0, 1)

    def test_bad_sign(self):
        with pytest.raises(P.DomainError):
            P.SelfSimilarProfile(2)


class TestExplicitSolution:
    def test_values(self, frame):
        assert P.explicit_solution(frame, +1, 0.0, 0.0) == 1.0
        assert P.explicit_solution(frame, +1, 0.5, 0.3) == pytest.approx(0.4, abs=1e-15)
        assert P.explicit_solution(frame, +1, 0.2, 0.8) == 0.0  # lightcone edge

    def test_outside_lightcone(self, frame):
        with pytest.raises(P.DomainError):
            P.explicit_solution(frame, +1, 0.2, 0.81)
        with pytest.raises(P.DomainError):
            P.explicit_solution(frame, +1, 1.0, 0.0)


class TestOriginSecondDerivative:
    def test_values(self, frame):
        assert P.origin_second_derivative(frame, +1, 0.0) == 1.0
        assert P.origin_second_derivative(frame, +1, 0.9) == pytest.approx(10.0, rel=1e-14)
        assert P.origin_second_derivative(frame, -1, 0.9) == pytest.approx(-10.0, rel=1e-14)

    def test_blowup_rate_dyadic_times(self, frame):
        for k in range(1, 21):
            t = frame.T * (1.0 - 2.0 ** -k)
            got = P.origin_second_derivative(frame, +1, t)
            assert abs(got - 2.0 ** k) / 2.0 ** k < 1e-12

    def test_at_blowup_time(self, frame):
        with pytest.raises(P.DomainError):
            P.origin_second_derivative(frame, +1, 1.0)


class TestMembraneResidual:
    def test_constant_field(self):
        rep = P.membrane_residual(P.constant_field(3.7), [(0.1, 0.2), (0.5, 0.1)])
        assert rep.max_abs == 0.0

    def test_linear_in_time_field(self):
        # u = t: u_t = 1, all second derivatives vanish, terms cancel identically
        zero = lambda t, r: 0.0
        f = P.AnalyticField(lambda t, r: t, lambda t, r: 1.0, zero, zero, zero, zero)
        rep = P.membrane_residual(f, [(0.3, 0.4), (0.7, 0.05)])
        assert rep.max_abs == 0.0

    def test_explicit_solution_exact(self, frame):
        f = P.explicit_solution_field(frame, +1)
        rep = P.membrane_residual(f, [(0.3, 0.2)])
        assert rep.max_abs < 1e-10

    def test_interior_sweep_both_signs(self, frame):
        rng = np.random.Generator(np.random.PCG64(5))
        pts = []
        while len(pts) < 200:
            t = rng.uniform(0, 0.9)
            r = rng.uniform(1e-3, 0.9 * (1.0 - t))
            pts.append((t, r))
        for sign in (+1, -1):
            rep = P.membrane_residual(P.explicit_solution_field(frame, sign), pts)
            assert rep.max_abs < 1e-10

    def test_r_zero_rejected(self, frame):
        f = P.explicit_solution_field(frame, +1)
        with pytest.raises(P.DomainError):
            P.membrane_residual(f, [(0.1, 0.0)])

    def test_report_structure(self, frame):
        f = P.explicit_solution_field(frame, +1)
        rep = P.membrane_residual(f, [(0.1, 0.2), (0.2, 0.3)])
        assert len(rep.samples) == 2
        assert rep.at_point in [(0.1, 0.2), (0.2, 0.3)]
        assert rep.max_abs == max(abs(s[2]) for s in rep.samples)


class TestOdeResidual:
    def test_exact_profiles(self):
        for sign in (+1, -1):
            p = P.SelfSimilarProfile(sign)
            for rho in np.linspace(0.01, 0.99, 1000):
                assert abs(P.ode_residual(p, rho)) < 1e-12

    def test_non_solution_oracle(self):
        # phi(rho) = 1 - rho: direct substitution gives a nonzero value
        test = (lambda r: 1.0 - r, lambda r: -1.0, lambda r: 0.0)
        got = P.ode_residual(test, 0.5)
        rho, phi, d1, d2 = 0.5, 0.5, -1.0, 0.0
        expected = (rho * (1 - rho ** 2) * d2 + d1 - d1 * phi ** 2
                    + 2 * rho * phi * d1 ** 2 - rho * d2 * phi ** 2
                    + (1 - rho ** 2) * d1 ** 3)
        assert got == pytest.approx(expected, rel=1e-15)
        assert got != 0.0

    def test_domain(self):
        p = P.SelfSimilarProfile(+1)
        for bad in (0.0, 1.0):
            with pytest.raises(P.DomainError):
                P.ode_residual(p, bad)


class TestSimilarityMap:
    def test_forward_values(self, frame):
        assert P.similarity_map(frame, "forward", (0.0, 0.5)) == (0.0, 0.5)
        tau, rho = P.similarity_map(frame, "forward", (1 - math.exp(-1), 0.5 * math.exp(-1)))
        assert tau == pytest.approx(1.0, abs=1e-14)
        assert rho == pytest.approx(0.5, abs=1e-14)

    def test_roundtrip(self, frame):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(200):
            t = rng.uniform(0, 0.99)
            r = rng.uniform(0, 0.5 * (1 - t))
            t2, r2 = frame.backward(*frame.forward(t, r))
            assert abs(t2 - t) <= 1e-12 * max(1.0, abs(t))
            assert abs(r2 - r) <= 1e-12 * max(1.0, abs(r))

    def test_domain_and_direction(self, frame):
        with pytest.raises(P.DomainError):
            P.similarity_map(frame, "forward", (1.0, 0.1))
        with pytest.raises(ValueError):
            P.similarity_map(frame, "sideways", (0.1, 0.1))


class TestScalingApply:
    def test_identity(self, frame):
        f = P.explicit_solution_field(frame, +1)
        g = P.scaling_apply(f, 1.0)
        for t, r in [(0.2, 0.1), (0.5, 0.3)]:
            assert g.u(t, r) == f.u(t, r)

    def test_scaling_matches_rescaled_blowup_time(self):
        # lambda * u_1(t/lambda, r/lambda) = u_lambda pointwise
        f1 = P.explicit_solution_field(P.SimilarityFrame(T=1.0), +1)
        f2 = P.explicit_solution_field(P.SimilarityFrame(T=2.0), +1)
        g = P.scaling_apply(f1, 2.0)
        for t, r in [(0.1, 0.05), (0.5, 0.3), (1.2, 0.4)]:
            assert g.u(t, r) == pytest.approx(f2.u(t, r), rel=1e-14)

    def test_scaled_solution_still_solves(self, frame):
        g = P.scaling_apply(P.explicit_solution_field(frame, +1), 3.0)
        rep = P.membrane_residual(g, [(0.3, 0.2), (1.0, 1.2), (2.0, 0.5)])
        assert rep.max_abs < 1e-10

    def test_bad_lambda(self, frame):
        with pytest.raises(P.DomainError):
            P.scaling_apply(P.explicit_solution_field(frame, +1), 0.0)


class TestKappaThreshold:
    def test_zero_eps(self):
        assert P.kappa_threshold(1.0, 1.0, 0.5, 0.0) == 1.0

    def test_reference_value(self):
        assert P.kappa_threshold(1.0, 1.0, 0.5, 0.01) == pytest.approx(0.9945567, abs=1e-6)

    def test_monotone_in_eps(self):
        assert P.kappa_threshold(1.0, 1.0, 0.5, 0.02) < P.kappa_threshold(1.0, 1.0, 0.5, 0.01)

    def test_in_unit_interval_for_admissible_eps(self):
        T, t_star, sigma = 1.2, 1.5, 0.4
        x = sigma * T / t_star
        eps_max = (T * sigma) ** 0.5 * (1 + sigma + T * (1 - x * x)) / math.sqrt(1 - x * x)
        for eps in np.linspace(0, eps_max * 0.999, 50):
            val = P.kappa_threshold(T, t_star, sigma, eps)
            assert 0 < val <= 1

    def test_domain(self):
        with pytest.raises(P.DomainError):
            P.kappa_threshold(2.0, 1.0, 0.6, 0.01)  # sigma*T >= t_star


class TestFiniteDifferenceFallback:
    def test_matches_analytic(self, frame):
        exact = P.explicit_solution_field(frame, +1)
        approx = P.finite_difference_field(exact.u)
        t, r = 0.3, 0.2
        assert approx.u_t(t, r) == pytest.approx(exact.u_t(t, r), rel=1e-8)
        assert approx.u_r(t, r) == pytest.approx(exact.u_r(t, r), rel=1e-8)
        # second differences carry a rounding floor ~ eps/h^2 = 1e-6 absolute
        assert approx.u_tt(t, r) == pytest.approx(exact.u_tt(t, r), abs=1e-5)
        assert approx.u_rr(t, r) == pytest.approx(exact.u_rr(t, r), abs=1e-5)
        assert approx.u_tr(t, r) == pytest.approx(exact.u_tr(t, r), abs=1e-5)


class TestFrameValidation:
    def test_bad_parameters(self):
        with pytest.raises(P.DomainError):
            P.SimilarityFrame(T=-1.0)
        with pytest.raises(P.DomainError):
            P.SimilarityFrame(sigma=1.5)
        with pytest.raises(P.DomainError):
            P.SimilarityFrame(kappa=0.0)

    def test_t_star_defaults_to_T(self):
        fr = P.SimilarityFrame(T=2.0)
        assert fr.t_star == 2.0
