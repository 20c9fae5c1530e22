import numpy as np
import pytest

from lightcone_lab import evolution as evo


def smooth_state(grid, seed=0, amp=1.0, modes=5):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = grid.nodes / grid.sigma
    env = 16.0 * (x * (1 - x)) ** 2
    v = env * sum(c * np.sin((k + 1) * np.pi * x) for k, c in enumerate(rng.standard_normal(modes)))
    u = env * sum(c * np.sin((k + 1) * np.pi * x) for k, c in enumerate(rng.standard_normal(modes)))
    return evo.FieldState(amp * v, amp * u, 0.0)


class TestRadialGrid:
    def test_nodes_interior_shifted(self):
        g = evo.RadialGrid(0.5, 100)
        assert g.nodes[0] == pytest.approx(0.5 * g.h)
        assert g.nodes[0] > 0
        assert g.nodes[-1] == pytest.approx(g.sigma - 0.5 * g.h)
        spacing = np.diff(g.nodes)
        assert np.max(np.abs(spacing - g.h)) < 1e-14

    def test_derivatives_on_polynomial(self):
        # v = rho(sigma - rho) vanishes at both ends; centered stencils are
        # exact on quadratics away from the ghost closure
        g = evo.RadialGrid(0.5, 200)
        rho = g.nodes
        v = rho * (g.sigma - rho)
        d1, d2 = g.d1(v), g.d2(v)
        assert np.max(np.abs(d1[1:-1] - (g.sigma - 2 * rho[1:-1]))) < 1e-10
        assert np.max(np.abs(d2[1:-1] + 2.0)) < 1e-8

    def test_blend_weight(self):
        g = evo.RadialGrid(0.5, 100)
        b = g.blend_weight()
        assert b[0] == 1.0          # rho = h/2
        assert b[1] == 0.5          # rho = 3h/2
        assert np.all(b[2:] == 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            evo.RadialGrid(1.2, 100)
        with pytest.raises(ValueError):
            evo.RadialGrid(0.5, 2)


class TestAssembleCoeffs:
    def test_zero_background(self):
        g = evo.RadialGrid(0.5, 50)
        c = evo.assemble_coeffs(g, 0.95)
        for a in (c.a0, c.a1, c.a2, c.a3, c.a4, c.a5):
            assert np.all(a == 0.0)
        rho = g.nodes
        assert np.allclose(c.base0, 1 + (0.95 ** 2 - 1) * rho ** 2)
        assert np.allclose(c.base5, -4 * 0.95 ** 2)

    def test_constant_background(self):
        g = evo.RadialGrid(0.5, 50)
        cval = 0.3
        w = evo.BackgroundFields.zero(50)
        w.w = np.full(50, cval)
        c = evo.assemble_coeffs(g, 0.95, w)
        rho = g.nodes
        assert np.allclose(c.a0, 0.0)
        expected_a1 = 2 * 0.95 * np.sqrt(1 - rho ** 2) * cval - cval ** 2
        assert np.allclose(c.a1, expected_a1, atol=1e-14)

    def test_a3_vanishes_when_wtau_equals_w_and_wrho_zero(self):
        g = evo.RadialGrid(0.5, 50)
        w = evo.BackgroundFields.zero(50)
        w.w = np.linspace(0.1, 0.2, 50)
        w.w_tau = w.w.copy()
        c = evo.assemble_coeffs(g, 0.9, w)
        assert np.allclose(c.a3, 0.0, atol=1e-15)

    def test_hyperbolicity_margin(self):
        g = evo.RadialGrid(0.5, 50)
        c = evo.assemble_coeffs(g, 0.95)
        assert c.hyperbolicity_margin() >= 0.95 ** 2 - 1e-12
        # a violating background raises
        w = evo.BackgroundFields.zero(50)
        w.w_rho = np.full(50, 5.0)
        bad = evo.assemble_coeffs(g, 0.95, w)
        # a0 = w_rho^2 - 2 k rho (1-rho^2)^{-1/2} w_rho can only help for this sign
        assert bad.hyperbolicity_margin() > 0


class TestNonlinearForcing:
    def test_zero_background(self):
        g = evo.RadialGrid(0.5, 50)
        f = evo.nonlinear_forcing(g, 0.95)
        rho = g.nodes
        expected = -2 * 0.95 * (1 - 0.95 ** 2) / np.sqrt(1 - rho ** 2)
        assert np.allclose(f, expected, rtol=1e-14)

    def test_kappa_one_vanishes(self):
        g = evo.RadialGrid(0.5, 50)
        assert np.all(evo.nonlinear_forcing(g, 1.0) == 0.0)

    def test_reference_magnitude(self):
        # node exactly at rho = 0.5: sigma=0.8, n=4 puts node 2 there
        g = evo.RadialGrid(0.8, 4)
        assert g.nodes[2] == pytest.approx(0.5)
        f = evo.nonlinear_forcing(g, 0.99)
        assert abs(f[2]) == pytest.approx(0.045497, abs=1e-5)

    def test_affine_in_wtautau(self):
        g = evo.RadialGrid(0.5, 40)
        rng = np.random.Generator(np.random.PCG64(3))
        w = evo.BackgroundFields.zero(40)
        w.w = 0.01 * rng.standard_normal(40)
        w.w_rho = 0.01 * rng.standard_normal(40)
        w.w_tau = 0.01 * rng.standard_normal(40)
        f0, fc = evo._forcing_split(g, 0.95, w)
        w.w_tautau = np.full(40, 0.7)
        full = evo.nonlinear_forcing(g, 0.95, w)
        assert np.allclose(full, f0 + 0.7 * fc, rtol=1e-12)
        # the w_tautau coefficient is -(1-rho^2) a0(w)
        coeffs = evo.assemble_coeffs(g, 0.95, w)
        assert np.allclose(fc, -(1 - g.nodes ** 2) * coeffs.a0, rtol=1e-12)


class TestStepLinear:
    def test_zero_state_stays_zero(self):
        g = evo.RadialGrid(0.5, 50)
        c = evo.assemble_coeffs(g, 0.95)
        state = evo.zero_state(g)
        out = evo.step_linear(g, state, c, None, evo.stable_dt(g, c))
        assert np.all(out.v == 0.0)
        assert np.all(out.v_tau == 0.0)

    def test_cfl_violation(self):
        g = evo.RadialGrid(0.5, 50)
        c = evo.assemble_coeffs(g, 0.9)
        with pytest.raises(evo.CFLError):
            evo.step_linear(g, smooth_state(g), c, None, 10 * evo.stable_dt(g, c))

    def test_single_step_energy_decrease_at_stable_kappa(self):
        g = evo.RadialGrid(0.5, 100)
        c = evo.assemble_coeffs(g, 0.9)
        state = smooth_state(g, seed=2)
        dt = evo.stable_dt(g, c)
        e0 = evo.l2_energy(g, state)
        # allow the transient a few steps; energy must not blow up
        for _ in range(20):
            state = evo.step_linear(g, state, c, None, dt)
        assert evo.l2_energy(g, state) <= e0 * 1.5

    def test_kappa_one_reduces_to_pointwise_ode(self):
        # at kappa=1 every spatial coefficient vanishes: v_tt + 3 v_t - 4v = 0
        # nodewise, solution c1 e^t + c2 e^{-4t} from the initial data
        g = evo.RadialGrid(0.5, 30)
        c = evo.assemble_coeffs(g, 1.0)
        state = smooth_state(g, seed=4)
        v0, u0 = state.v.copy(), state.v_tau.copy()
        dt = 0.02
        n = 50
        for _ in range(n):
            state = evo.step_linear(g, state, c, None, dt)
        tau = n * dt
        c2 = (v0 - u0) / 5.0
        c1 = v0 - c2
        exact = c1 * np.exp(tau) + c2 * np.exp(-4 * tau)
        assert np.max(np.abs(state.v - exact)) < 1e-6

    def test_second_order_spatial_convergence(self):
        # even-in-rho data (the radial-regular class): pairwise Richardson
        # distances between successive grids scale like h^2
        kappa, tau_end = 0.9, 0.5
        sol = {}
        for n in (50, 100, 200, 400):
            g = evo.RadialGrid(0.5, n)
            x = g.nodes / g.sigma
            state = evo.FieldState((1 - x ** 2) ** 2, np.zeros(n), 0.0)
            coeffs = evo.assemble_coeffs(g, kappa)
            fine = evo.RadialGrid(0.5, 400)
            dt = evo.stable_dt(fine, evo.assemble_coeffs(fine, kappa))
            steps = int(round(tau_end / dt))
            for _ in range(steps):
                state = evo.step_linear(g, state, coeffs, None, dt)
            sol[n] = (g.nodes, state.v)

        def dist(n1, n2):
            nodes1, v1 = sol[n1]
            nodes2, v2 = sol[n2]
            vi = np.interp(nodes1, nodes2, v2)
            return np.sqrt(np.mean((v1 - vi) ** 2))

        r1 = dist(50, 100) / dist(100, 200)
        r2 = dist(100, 200) / dist(200, 400)
        assert 3.0 < r1 < 5.5
        assert 3.0 < r2 < 5.5


class TestEnergyFunctional:
    def test_zero_state(self):
        g = evo.RadialGrid(0.5, 50)
        c = evo.assemble_coeffs(g, 0.95)
        assert evo.energy_functional(g, evo.zero_state(g), c) == 0.0

    def test_matches_independent_quadrature(self):
        g = evo.RadialGrid(0.5, 80)
        kappa = 0.93
        c = evo.assemble_coeffs(g, kappa)
        state = smooth_state(g, seed=9)
        state.v_tau = state.v.copy()
        params = evo.EnergyParams(mu1=0.1, mu2=2.0)
        got = evo.energy_functional(g, state, c, params)
        # independent re-evaluation of the bracket density
        rho = g.nodes
        v, vt = state.v, state.v_tau
        vr = g.d1(v)
        m1, m2, k = params.mu1, params.mu2, kappa
        dens = (0.5 * (4 * (m2 - 1) * k ** 2 - m2 + m2 * (k - 1) ** 2 * rho ** 2) * v ** 2
                + (1 + (k ** 2 - 1) * rho ** 2) * (vt * (m2 * v - m1 * vr) + 0.5 * vt ** 2)
                + m2 * (2 * rho * (1 - k ** 2) * (1 - rho ** 2)) * vr * v
                + 0.5 * ((1 - k ** 2) * (1 - rho ** 2) * (1 - 2 * m1 * rho - rho ** 2)) * vr ** 2)
        oracle = np.trapezoid(dens, rho)
        assert got == pytest.approx(oracle, rel=1e-10)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            evo.EnergyParams(1.5, 2.0)
        with pytest.raises(ValueError):
            evo.EnergyParams(0.5, 0.9)


class TestSobolevNorm:
    def test_zero(self):
        g = evo.RadialGrid(0.5, 50)
        assert evo.sobolev_norm(np.zeros(50), g, 0) == 0.0

    def test_sine_l2(self):
        g = evo.RadialGrid(0.5, 4000)
        v = np.sin(np.pi * g.nodes / g.sigma)
        assert evo.sobolev_norm(v, g, 0) == pytest.approx(np.sqrt(g.sigma / 2), abs=1e-4)

    def test_homogeneity(self):
        g = evo.RadialGrid(0.5, 100)
        v = np.sin(np.pi * g.nodes / g.sigma)
        for level in (0, 1, 2):
            a = evo.sobolev_norm(3.5 * v, g, level)
            b = 3.5 * evo.sobolev_norm(v, g, level)
            assert a == pytest.approx(b, rel=1e-12)

    def test_bad_level(self):
        g = evo.RadialGrid(0.5, 50)
        with pytest.raises(ValueError):
            evo.sobolev_norm(np.zeros(50), g, 3)


class TestFitDecayRate:
    def test_exact_exponential(self):
        taus = np.linspace(0, 10, 100)
        rate, r2 = evo.fit_decay_rate(list(zip(taus, np.exp(-2 * taus))))
        assert rate == pytest.approx(-2.0, abs=1e-6)
        assert r2 > 0.999999

    def test_constant(self):
        taus = np.linspace(0, 10, 50)
        rate, _ = evo.fit_decay_rate([(t, 1.0) for t in taus])
        assert rate == pytest.approx(0.0, abs=1e-12)

    def test_perturbed(self):
        taus = np.linspace(0, 10, 200)
        energy = np.exp(-2 * taus) * (1 + 0.01 * np.sin(taus))
        rate, _ = evo.fit_decay_rate(list(zip(taus, energy)))
        assert rate == pytest.approx(-2.0, abs=0.02)

    def test_degenerate_inputs(self):
        with pytest.raises(evo.DegenerateFitError):
            evo.fit_decay_rate([(0, 1.0)] * 5)
        taus = np.linspace(0, 1, 20)
        with pytest.raises(evo.DegenerateFitError):
            evo.fit_decay_rate([(t, -1.0) for t in taus])
        with pytest.raises(evo.DegenerateFitError):
            evo.fit_decay_rate([(0.0, 1.0)] * 20)


class TestEvolve:
    def test_zero_data_zero_energy(self):
        g = evo.RadialGrid(0.5, 50)
        _, rep, trace = evo.evolve(g, evo.zero_state(g), 1.0, tau_max=1.0, n_records=20)
        assert all(row[1] == 0.0 for row in trace)

    def test_decay_at_stable_kappa(self):
        g = evo.RadialGrid(0.5, 100)
        _, rep, trace = evo.evolve(g, smooth_state(g, seed=1), 0.9, tau_max=20.0)
        assert rep.rate < 0
        assert rep.r_squared > 0.98

    def test_trace_schema(self):
        g = evo.RadialGrid(0.5, 50)
        _, _, trace = evo.evolve(g, smooth_state(g, seed=0), 0.9, tau_max=1.0, n_records=10)
        assert len(trace[0]) == 5  # tau, energy_L2, energy_bracket, h1, flux
        taus = [row[0] for row in trace]
        assert all(b > a for a, b in zip(taus, taus[1:]))


class TestEvolveNonlinear:
    def test_zero_data_kappa_one_stays_zero(self):
        g = evo.RadialGrid(0.5, 50)
        state, trace, rep, blowup = evo.evolve_nonlinear(g, evo.zero_state(g), 1.0,
                                                         tau_max=1.0)
        assert blowup is None
        assert np.max(np.abs(state.v)) == 0.0

    def test_zero_data_forced_response_honest_outcome(self):
        # the forced response stays O(eps0) until the state grazes the
        # characteristic degeneracy the lightlike attractor sits on; the run
        # must either survive the horizon or stop at the documented
        # hyperbolicity transition with the norm still O(eps0)
        g = evo.RadialGrid(0.5, 80)
        eps0 = 2 * 0.99 * (1 - 0.99 ** 2) / np.sqrt(1 - 0.5 ** 2)
        state, trace, rep, blowup = evo.evolve_nonlinear(g, evo.zero_state(g), 0.99,
                                                         tau_max=2.0)
        assert blowup is None or isinstance(blowup, evo.HyperbolicityError)
        assert all(h <= 20 * eps0 for _, h, _ in trace)

    def test_degeneracy_transition_reported(self):
        # at kappa near 1 the evolution exits the hyperbolic regime
        g = evo.RadialGrid(0.5, 80)
        state0 = smooth_state(g, seed=7, amp=1e-3)
        _, trace, _, blowup = evo.evolve_nonlinear(g, state0, 0.995, tau_max=5.0)
        assert isinstance(blowup, evo.HyperbolicityError)
        taus = [row[0] for row in trace]
        assert all(b > a for a, b in zip(taus, taus[1:]))

    def test_norm_ceiling_reported(self):
        # small data at a stable kappa, ceiling set below the forced response
        g = evo.RadialGrid(0.5, 60)
        state0 = smooth_state(g, seed=3, amp=1e-3)
        _, trace, _, blowup = evo.evolve_nonlinear(g, state0, 0.9, tau_max=2.0,
                                                   norm_ceiling=5e-3)
        assert isinstance(blowup, evo.BlowupDetected)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        g = evo.RadialGrid(0.4, 60)
        state = smooth_state(g, seed=11)
        state.tau = 2.5
        path = tmp_path / "state.lcl"
        evo.save_checkpoint(path, g, state, 0.93)
        g2, state2, kappa2 = evo.load_checkpoint(path)
        assert g2.sigma == g.sigma and g2.n_cells == g.n_cells
        assert kappa2 == 0.93
        assert state2.tau == 2.5
        assert np.array_equal(state2.v, state.v)
        assert np.array_equal(state2.v_tau, state.v_tau)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lcl"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(ValueError):
            evo.load_checkpoint(path)
