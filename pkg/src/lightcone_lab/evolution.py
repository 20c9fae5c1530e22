"""Linearized and nonlinear evolution in similarity coordinates on (0, sigma].

Method of lines: second-order centered differences in rho on a half-cell
shifted grid (no node at the 1/rho singularity), classical RK4 in tau with
CFL factor 0.4.  Dirichlet values at both ends are enforced through ghost
values; the boundary slope is tracked as a diagnostic only.  For nodes with
rho < 2h the singular coefficient rho^{-1} v_rho is blended into v_rhorho
(its limit at the origin for fields with vanishing slope there).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CFLError(RuntimeError):
    """Time step too large for the current wave speeds."""


class HyperbolicityError(RuntimeError):
    """Principal time coefficient dropped below the kappa^2/2 margin."""


class BlowupDetected(RuntimeError):
    """State norm exceeded the configured ceiling during nonlinear evolution."""


class DegenerateFitError(ValueError):
    """Decay-rate fit received nonpositive energies."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform cell-centered grid on (0, sigma]: node_j = (j + 1/2) h."""

    sigma: float = 0.5
    n_cells: int = 200

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError(f"sigma must lie in (0,1), got {self.sigma}")
        if self.n_cells < 4:
            raise ValueError("need at least 4 cells")

    @property
    def h(self) -> float:
        return self.sigma / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.h

    def d1(self, v: np.ndarray) -> np.ndarray:
        """Centered first derivative: even (regularity) ghost at 0, odd at sigma.

        The origin is a coordinate center, not a boundary: radial regularity
        means v_rho(0) = 0 with v(0) free, which is also the condition the
        near-origin limit replacement rho^{-1} d_rho -> d_rho^2 requires.  A
        Dirichlet ghost at 0 forces an O(1/h) slope layer that degrades the
        scheme to first order and, in the nonlinear equation, feeds the
        1/rho-weighted cubic terms.  Dirichlet (odd ghost) holds at sigma.
        """
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - v[:-2]) / (2 * self.h)
        out[0] = (v[1] - v[0]) / (2 * self.h)
        out[-1] = ((-v[-1]) - v[-2]) / (2 * self.h)
        return out

    def d2(self, v: np.ndarray) -> np.ndarray:
        """Centered second derivative with the same ghost closure as d1."""
        h2 = self.h * self.h
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h2
        out[0] = (v[1] - v[0]) / h2
        out[-1] = ((-v[-1]) - 2 * v[-1] + v[-2]) / h2
        return out

    def blend_weight(self) -> np.ndarray:
        """Weight b in [0,1] switching rho^{-1} d/drho -> d2/drho2 for rho < 2h."""
        rho = self.nodes
        return np.clip(2.0 - rho / self.h, 0.0, 1.0)

    def quad(self, values: np.ndarray) -> float:
        """Midpoint quadrature over (0, sigma]."""
        return float(self.h * np.sum(values))


@dataclass
class FieldState:
    """Evolving pair (v, v_tau) on the grid nodes at similarity time tau."""

    v: np.ndarray
    v_tau: np.ndarray
    tau: float = 0.0

    def copy(self) -> "FieldState":
        return FieldState(self.v.copy(), self.v_tau.copy(), self.tau)

    def boundary_slope(self, grid: RadialGrid):
        """Diagnostic slopes: one-sided v_rho near 0 and at the sigma end."""
        h = grid.h
        return ((self.v[1] - self.v[0]) / h, -self.v[-1] / (0.5 * h))


def zero_state(grid: RadialGrid, tau: float = 0.0) -> FieldState:
    return FieldState(np.zeros(grid.n_cells), np.zeros(grid.n_cells), tau)


@dataclass
class BackgroundFields:
    """Sampled background w and its derivatives on the grid nodes."""

    w: np.ndarray
    w_rho: np.ndarray
    w_rhorho: np.ndarray
    w_tau: np.ndarray
    w_taurho: np.ndarray
    w_tautau: np.ndarray

    @classmethod
    def zero(cls, n: int) -> "BackgroundFields":
        z = np.zeros(n)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def from_state(cls, grid: RadialGrid, state: FieldState,
                   w_tautau: np.ndarray | None = None) -> "BackgroundFields":
        """Spatial derivatives by centered differences; w_tautau from history if given."""
        if w_tautau is None:
            w_tautau = np.zeros(grid.n_cells)
        return cls(
            w=state.v, w_rho=grid.d1(state.v), w_rhorho=grid.d2(state.v),
            w_tau=state.v_tau, w_taurho=grid.d1(state.v_tau), w_tautau=w_tautau,
        )


@dataclass
class CoeffSet:
    """Principal coefficients of the linearized operator on the grid.

    base0..base5 are the kappa-dependent parts; a0..a5 the background
    corrections.  The operator reads

        (base0+a0) v_tautau - (base1+a1) v_rhorho + (base2+a2) v_tau
        + (base3+a3) v_taurho + (base4+a4) v_rho + (base5+a5) v,

    with base4 = -(1-kappa^2)(1-rho^2)/rho applied in blended form near the
    origin (`sing` carries (1-kappa^2)(1-rho^2), `blend` the switch weight).
    """

    kappa: float
    base0: np.ndarray
    base1: np.ndarray
    base2: np.ndarray
    base3: np.ndarray
    base4: np.ndarray
    base5: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    a5: np.ndarray
    sing: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    blend: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def hyperbolicity_margin(self) -> float:
        return float(np.min(self.base0 + self.a0))

    def check_hyperbolicity(self):
        margin = self.hyperbolicity_margin()
        if margin < 0.5 * self.kappa ** 2:
            raise HyperbolicityError(
                f"time coefficient min {margin:.3e} below kappa^2/2 = {0.5 * self.kappa**2:.3e}")

    def wave_speeds(self) -> np.ndarray:
        """Characteristic speeds of the principal part, both families."""
        a = self.base0 + self.a0
        b = self.base3 + self.a3
        d = -(self.base1 + self.a1)
        disc = np.maximum(b * b - 4 * a * d, 0.0)
        root = np.sqrt(disc)
        return np.maximum(np.abs((-b + root) / (2 * a)), np.abs((-b - root) / (2 * a)))


def assemble_coeffs(grid: RadialGrid, kappa: float,
                    w: BackgroundFields | None = None) -> CoeffSet:
    """Pointwise coefficients of the linearized operator around a background w."""
    rho = grid.nodes
    k2 = kappa * kappa
    one_m = 1.0 - rho * rho
    root = np.sqrt(one_m)          # (1-rho^2)^{1/2}
    inv_root = 1.0 / root          # (1-rho^2)^{-1/2}
    inv_rho = 1.0 / rho

    base0 = 1.0 + (k2 - 1.0) * rho ** 2
    base1 = (1.0 - k2) * one_m ** 2
    base2 = 4.0 * k2 - 1.0 + (kappa - 1.0) ** 2 * rho ** 2
    base3 = 2.0 * rho * (1.0 - k2) * one_m
    base4 = -(1.0 - k2) * one_m * inv_rho
    base5 = np.full_like(rho, -4.0 * k2)

    if w is None:
        z = np.zeros_like(rho)
        a = [z, z.copy(), z.copy(), z.copy(), z.copy(), z.copy()]
    else:
        W, Wr, Wrr = w.w, w.w_rho, w.w_rhorho
        Wt, Wtr, Wtt = w.w_tau, w.w_taurho, w.w_tautau
        a0 = -2.0 * kappa * rho * inv_root * Wr + Wr ** 2
        a1 = 2.0 * kappa * root * (W + Wt) - (W + Wt) ** 2
        a2 = (2.0 * (inv_rho * (Wt - W) - Wtr - kappa * (1.0 + 2.0 * inv_rho) * root) * Wr
              + 2.0 * (kappa * (2.0 - rho ** 2) * one_m ** -1.5 - Wrr) * (W - Wt)
              + Wr ** 2 - 2.0 * kappa * root * Wrr + 2.0 * kappa * rho * inv_root * Wtr)
        a3 = 2.0 * kappa * rho * inv_root * (Wt - W) - 2.0 * Wr * (Wt - W - kappa * root)
        a4 = (2.0 * kappa * inv_rho * inv_root
              * ((1.0 + rho ** 2) * W + 5.0 * rho * one_m * Wr - Wt - rho ** 2 * Wtt)
              - 2.0 * Wr * (Wtt + Wt - 2.0 * W) - 2.0 * Wtr * (Wt - W)
              + inv_rho * (Wt - W) ** 2 - 3.0 * inv_rho * one_m * Wr ** 2)
        a5 = (2.0 * kappa * inv_rho * inv_root
              * (rho ** 3 / one_m * (W - Wt) + (1.0 + rho ** 2) * Wr
                 - rho * Wrr - rho ** 2 * Wtr)
              - 2.0 * Wr ** 2 - 2.0 * Wrr * (W - Wt) + 2.0 * Wtr * Wr
              - 2.0 * inv_rho * Wr * (Wt - W))
        a = [a0, a1, a2, a3, a4, a5]

    return CoeffSet(kappa=kappa,
                    base0=base0, base1=base1, base2=base2,
                    base3=base3, base4=base4, base5=base5,
                    a0=a[0], a1=a[1], a2=a[2], a3=a[3], a4=a[4], a5=a[5],
                    sing=(1.0 - k2) * one_m, blend=grid.blend_weight())


def nonlinear_forcing(grid: RadialGrid, kappa: float,
                      w: BackgroundFields | None = None) -> np.ndarray:
    """Full forcing f(rho, w), non-autonomous term included."""
    rho = grid.nodes
    if w is None:
        w = BackgroundFields.zero(grid.n_cells)
    f0, fc = _forcing_split(grid, kappa, w)
    return f0 + fc * w.w_tautau


def _forcing_split(grid: RadialGrid, kappa: float, w: BackgroundFields):
    """Forcing as f = f0 + fc * w_tautau (f is affine in w_tautau)."""
    rho = grid.nodes
    k2 = kappa * kappa
    one_m = 1.0 - rho * rho
    root = np.sqrt(one_m)
    inv_root = 1.0 / root
    inv_rho = 1.0 / rho
    W, Wr, Wrr = w.w, w.w_rho, w.w_rhorho
    Wt, Wtr = w.w_tau, w.w_taurho
    d = W - Wt
    quad = d * d + 2.0 * kappa * root * d

    fc = -one_m * Wr * (Wr - 2.0 * kappa * rho * inv_root)
    f0 = (2.0 * kappa * one_m ** 1.5 * Wr ** 2
          - one_m * Wr * (Wt - 2.0 * W) * (Wr - 2.0 * kappa * rho * inv_root)
          + kappa * inv_root * d * d
          - one_m * Wrr * quad
          - 2.0 * kappa * rho * root * Wtr * (-d)
          - 2.0 * kappa * one_m ** 1.5 * Wr * Wtr
          + 2.0 * one_m * Wr * Wtr * (-d)
          - one_m * inv_rho * Wr * quad
          + kappa * root * d * d
          - (rho - inv_rho) * one_m * (Wr ** 3 - 3.0 * kappa * rho * inv_root * Wr ** 2)
          - 2.0 * kappa * (1.0 - k2) * inv_root)
    return f0, fc


def forcing_jacobian(grid: RadialGrid, kappa: float, bg: BackgroundFields):
    """Exact partial derivatives of the forcing f with respect to
    (w, w_rho, w_rhorho, w_tau, w_taurho, w_tautau), evaluated at bg.

    These are the Frechet-derivative coefficients of the lattice residual; the
    closed-form linearization coefficients a_0..a_5 of the evolution module
    differ from them by (1-rho^2) weights and (w +/- w_tau) sign slips, which
    would break the quadratic contraction if used here.
    """
    rho = grid.nodes
    m = 1.0 - rho ** 2
    s = np.sqrt(m)
    c = 1.0 / s
    inv_rho = 1.0 / rho
    W, Wr, Wrr = bg.w, bg.w_rho, bg.w_rhorho
    Wt, Wtr, Wtt = bg.w_tau, bg.w_taurho, bg.w_tautau
    d = W - Wt
    Q = d * d + 2.0 * kappa * s * d
    Qd = 2.0 * d + 2.0 * kappa * s          # dQ/dd
    G = Wtt + Wt - 2.0 * W
    P = Wr - 2.0 * kappa * rho * c

    df_w = (2.0 * m * Wr * P + 2.0 * kappa * c * d - m * Wrr * Qd
            + 2.0 * kappa * rho * s * Wtr - 2.0 * m * Wr * Wtr
            - m * inv_rho * Wr * Qd + 2.0 * kappa * s * d)
    df_wr = (4.0 * kappa * m ** 1.5 * Wr - m * G * (2.0 * Wr - 2.0 * kappa * rho * c)
             - 2.0 * kappa * m ** 1.5 * Wtr - 2.0 * m * Wtr * d
             - m * inv_rho * Q
             - (rho - inv_rho) * m * (3.0 * Wr ** 2 - 6.0 * kappa * rho * c * Wr))
    df_wrr = -m * Q
    df_wt = (-m * Wr * P - 2.0 * kappa * c * d + m * Wrr * Qd
             - 2.0 * kappa * rho * s * Wtr + 2.0 * m * Wr * Wtr
             + m * inv_rho * Wr * Qd - 2.0 * kappa * s * d)
    df_wtr = 2.0 * kappa * rho * s * d - 2.0 * kappa * m ** 1.5 * Wr - 2.0 * m * Wr * d
    df_wtt = -m * Wr * P
    return df_w, df_wr, df_wrr, df_wt, df_wtr, df_wtt



def apply_operator(grid: RadialGrid, coeffs: CoeffSet, v: np.ndarray,
                   v_tau: np.ndarray, v_tautau: np.ndarray) -> np.ndarray:
    """Evaluate the linearized operator on sampled (v, v_tau, v_tautau)."""
    d1v, d2v = grid.d1(v), grid.d2(v)
    d1u = grid.d1(v_tau)
    rho = grid.nodes
    b = coeffs.blend
    sing_term = -coeffs.sing * ((1.0 - b) / rho * d1v + b * d2v)
    return ((coeffs.base0 + coeffs.a0) * v_tautau
            - (coeffs.base1 + coeffs.a1) * d2v
            + (coeffs.base2 + coeffs.a2) * v_tau
            + (coeffs.base3 + coeffs.a3) * d1u
            + sing_term + coeffs.a4 * d1v
            + (coeffs.base5 + coeffs.a5) * v)


def _linear_rhs(grid: RadialGrid, coeffs: CoeffSet, v, u, forcing):
    """Right-hand side of the first-order system (v, u=v_tau)."""
    d1v, d2v = grid.d1(v), grid.d2(v)
    d1u = grid.d1(u)
    rho = grid.nodes
    b = coeffs.blend
    sing_term = coeffs.sing * ((1.0 - b) / rho * d1v + b * d2v)
    num = ((coeffs.base1 + coeffs.a1) * d2v
           - (coeffs.base2 + coeffs.a2) * u
           - (coeffs.base3 + coeffs.a3) * d1u
           + sing_term - coeffs.a4 * d1v
           - (coeffs.base5 + coeffs.a5) * v)
    if forcing is not None:
        num = num + forcing
    return u, num / (coeffs.base0 + coeffs.a0)


CFL_FACTOR = 0.4


def stable_dt(grid: RadialGrid, coeffs: CoeffSet, c_cfl: float = CFL_FACTOR) -> float:
    """CFL step c_cfl * h / max wave speed (damping-limited when speeds vanish)."""
    speed = float(np.max(coeffs.wave_speeds()))
    dt_wave = c_cfl * grid.h / speed if speed > 0 else np.inf
    damping = float(np.max(np.abs(coeffs.base2 + coeffs.a2))) + 4.0 * coeffs.kappa ** 2
    return min(dt_wave, 1.0 / damping)


def step_linear(grid: RadialGrid, state: FieldState, coeffs: CoeffSet,
                forcing: np.ndarray | None, dt: float) -> FieldState:
    """One classical RK4 step of the linear system; Dirichlet via ghosts."""
    if dt > stable_dt(grid, coeffs) * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:.3e} exceeds the stability bound {stable_dt(grid, coeffs):.3e}")
    coeffs.check_hyperbolicity()
    v, u = state.v, state.v_tau
    k1v, k1u = _linear_rhs(grid, coeffs, v, u, forcing)
    k2v, k2u = _linear_rhs(grid, coeffs, v + 0.5 * dt * k1v, u + 0.5 * dt * k1u, forcing)
    k3v, k3u = _linear_rhs(grid, coeffs, v + 0.5 * dt * k2v, u + 0.5 * dt * k2u, forcing)
    k4v, k4u = _linear_rhs(grid, coeffs, v + dt * k3v, u + dt * k3u, forcing)
    v_new = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    u_new = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(u_new))):
        raise HyperbolicityError("NaN/Inf during step: hyperbolicity or CFL lost")
    return FieldState(v_new, u_new, state.tau + dt)


def l2_energy(grid: RadialGrid, state: FieldState) -> float:
    """The decay diagnostic integral of v_tau^2 + v_rho^2 + v^2."""
    d1v = grid.d1(state.v)
    return grid.quad(state.v_tau ** 2 + d1v ** 2 + state.v ** 2)


@dataclass(frozen=True)
class EnergyParams:
    """Multipliers of the energy bracket; requires 0 < mu1 < 1 < mu2."""

    mu1: float = 0.5
    mu2: float = 2.0

    def __post_init__(self):
        if not 0 < self.mu1 < 1 < self.mu2:
            raise ValueError(f"need 0 < mu1 < 1 < mu2, got {self.mu1}, {self.mu2}")


def energy_functional(grid: RadialGrid, state: FieldState, coeffs: CoeffSet,
                      params: EnergyParams = EnergyParams()) -> float:
    """Trapezoidal quadrature of the Lyapunov bracket density."""
    m1, m2 = params.mu1, params.mu2
    k = coeffs.kappa
    rho = grid.nodes
    v, vt = state.v, state.v_tau
    vr = grid.d1(v)
    one_m = 1.0 - rho * rho
    dens = (0.5 * (4.0 * (m2 - 1.0) * k ** 2 - m2 + m2 * (k - 1.0) ** 2 * rho ** 2
                   + m2 * coeffs.a2 + coeffs.a5) * v ** 2
            + (coeffs.base0 + coeffs.a0) * (vt * (m2 * v - m1 * vr) + 0.5 * vt ** 2)
            + m2 * (coeffs.base3 + coeffs.a3) * vr * v
            + 0.5 * ((1.0 - k ** 2) * one_m * (1.0 - 2.0 * m1 * rho - rho ** 2)
                     + coeffs.a1 - m1 * coeffs.a3) * vr ** 2)
    return float(np.trapezoid(dens, rho))


def sobolev_norm(values: np.ndarray, grid: RadialGrid, level: int = 0) -> float:
    """Discrete H^level norm (level <= 2) by midpoint quadrature.

    Uses one-sided-aware differences (no boundary condition assumed), so it
    applies to arbitrary sampled arrays, not just Dirichlet fields.
    """
    if level not in (0, 1, 2):
        raise ValueError(f"level must be 0, 1 or 2, got {level}")
    total = grid.quad(np.asarray(values, dtype=float) ** 2)
    d = np.asarray(values, dtype=float)
    for _ in range(level):
        d = np.gradient(d, grid.h)
        total += grid.quad(d ** 2)
    return float(np.sqrt(total))


@dataclass
class DecayReport:
    """Fitted exponential rate of an energy trace."""

    rate: float
    r_squared: float
    series: list  # of (tau, energy)


def fit_decay_rate(series) -> tuple:
    """Least-squares slope of log(energy) vs tau over the second half."""
    series = list(series)
    if len(series) < 10:
        raise DegenerateFitError(f"need >= 10 samples, got {len(series)}")
    taus = np.array([s[0] for s in series])
    energies = np.array([s[1] for s in series])
    if np.any(np.diff(taus) <= 0):
        raise DegenerateFitError("tau samples must be strictly increasing")
    if np.any(energies <= 0):
        raise DegenerateFitError("all energies must be positive for a log fit")
    half = len(series) // 2
    x, y = taus[half:], np.log(energies[half:])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(slope), r2


def evolve(grid: RadialGrid, state0: FieldState, kappa: float,
           w_background: BackgroundFields | None = None,
           forcing: bool = False, tau_max: float = 20.0,
           dt: float | None = None, n_records: int = 200,
           energy_params: EnergyParams = EnergyParams()):
    """Run the linear evolution, recording energies; returns (state, DecayReport, trace).

    trace rows: (tau, energy_L2, energy_bracket, h1_norm, boundary_flux).
    """
    coeffs = assemble_coeffs(grid, kappa, w_background)
    force = nonlinear_forcing(grid, kappa, w_background) if forcing else None
    if dt is None:
        dt = stable_dt(grid, coeffs)
    state = state0.copy()
    record_every = max(1, int(round(tau_max / dt / n_records)))
    trace = []

    def record(s):
        slope0, slope1 = s.boundary_slope(grid)
        trace.append((s.tau, l2_energy(grid, s),
                      energy_functional(grid, s, coeffs, energy_params),
                      sobolev_norm(s.v, grid, 1), max(abs(slope0), abs(slope1))))

    record(state)
    n_steps = int(np.ceil(tau_max / dt))
    for i in range(n_steps):
        step = min(dt, tau_max - state.tau)
        if step <= 0:
            break
        state = step_linear(grid, state, coeffs, force, step)
        if (i + 1) % record_every == 0 or i == n_steps - 1:
            record(state)

    series = [(t, e) for t, e, *_ in trace if e > 0]
    if len(series) >= 10:
        rate, r2 = fit_decay_rate(series)
    else:
        rate, r2 = 0.0, 0.0
    return state, DecayReport(rate=rate, r_squared=r2, series=series), trace


def evolve_nonlinear(grid: RadialGrid, state0: FieldState, kappa: float,
                     tau_max: float = 5.0, dt: float | None = None,
                     n_records: int = 200, norm_ceiling: float = 10.0,
                     frame=None, profile_sign: int = +1):
    """Time-step the full quasilinear equation with forcing; returns (trace, report).

    Coefficients are re-assembled from the current state at every RK stage.
    trace rows: (tau, h1_norm, physical_ratio) where physical_ratio is the
    physical-coordinate H^1 distance to the explicit solution divided by
    (T - t), measured with the radial volume weight rho^2 drho (the natural
    Sobolev measure for radial fields on the 3-ball).  Raises BlowupDetected
    (after recording) when the H^1 norm exceeds norm_ceiling.
    """
    from .profiles import SimilarityFrame, profile_value, SelfSimilarProfile

    if frame is None:
        frame = SimilarityFrame(T=1.0, sigma=grid.sigma, kappa=min(kappa, 1.0))
    rho = grid.nodes
    prof = SelfSimilarProfile(profile_sign)
    phi = np.array([profile_value(prof, x, 0) for x in rho])
    phi_r = np.array([profile_value(prof, x, 1) for x in rho])

    def effective_principal(bg, coeffs):
        """Quasilinear principal coefficients with the state-dependent parts
        of the forcing collected; returns (a, b, d) of a c^2 + b c + d."""
        df_w, df_wr, df_wrr, df_wt, df_wtr, df_wtt = forcing_jacobian(grid, kappa, bg)
        a = coeffs.base0 - df_wtt
        b = coeffs.base3 - df_wtr
        d = -coeffs.base1 - df_wrr
        return a, b, d

    def check_and_speed(bg, coeffs):
        a, b, d = effective_principal(bg, coeffs)
        if np.min(a) < 0.5 * kappa ** 2:
            raise HyperbolicityError(
                f"effective time coefficient min {np.min(a):.3e} below kappa^2/2")
        disc = b * b - 4.0 * a * d
        # disc = 0 is the characteristic degeneracy the lightlike profile
        # itself sits on; only a strictly negative discriminant is elliptic
        if np.min(disc) < -1e-13:
            raise HyperbolicityError(
                "spatial principal coefficient changed sign (elliptic transition)")
        root = np.sqrt(np.maximum(disc, 0.0))
        return float(np.max(np.maximum(np.abs((-b + root) / (2 * a)),
                                       np.abs((-b - root) / (2 * a)))))

    def rhs(v, u):
        state = FieldState(v, u, 0.0)
        bg = BackgroundFields.from_state(grid, state)
        coeffs = assemble_coeffs(grid, kappa, bg)
        coeffs.check_hyperbolicity()
        f0, fc = _forcing_split(grid, kappa, bg)
        c_eff = coeffs.base0 - fc  # f is affine in w_tautau; collect it
        d1v, d2v = bg.w_rho, bg.w_rhorho
        d1u = bg.w_taurho
        b = coeffs.blend
        sing_term = coeffs.sing * ((1.0 - b) / rho * d1v + b * d2v)
        num = (coeffs.base1 * d2v - coeffs.base2 * u - coeffs.base3 * d1u
               + sing_term - coeffs.base5 * v + f0)
        return u, num / c_eff

    def physical_ratio(state):
        # u - u_T = (T-t) [ (kappa-1) phi + w ];  d/dr of it = (kappa-1)phi' + w_rho
        T_minus_t = frame.T * np.exp(-state.tau)
        G = (kappa - 1.0) * phi + state.v
        G_r = (kappa - 1.0) * phi_r + grid.d1(state.v)
        h1sq = grid.quad((T_minus_t ** 2 * G ** 2 + G_r ** 2) * rho ** 2)
        return float(np.sqrt(T_minus_t * h1sq))

    state = state0.copy()
    record_gap = tau_max / n_records
    next_record = record_gap
    trace = [(state.tau, sobolev_norm(state.v, grid, 1), physical_ratio(state))]
    blowup = None
    damping_cap = 1.0 / (np.max(np.abs(assemble_coeffs(grid, kappa).base2))
                         + 4.0 * kappa ** 2)
    max_steps = int(50 * n_records * max(1.0, tau_max)) * 100  # hard safety cap
    for i in range(max_steps):
        if state.tau >= tau_max - 1e-12:
            break
        v, u = state.v, state.v_tau
        try:
            # the wave speeds are state dependent (the base stiffness is
            # O(1-kappa^2) and the quadratic terms overtake it near kappa=1),
            # so the CFL step is re-evaluated from the current state
            bg_now = BackgroundFields.from_state(grid, state)
            coeffs_now = assemble_coeffs(grid, kappa, bg_now)
            speed = check_and_speed(bg_now, coeffs_now)
            step = CFL_FACTOR * grid.h / speed if speed > 0 else damping_cap
            step = min(step, damping_cap, tau_max - state.tau)
            if dt is not None:
                step = min(step, dt)
            k1v, k1u = rhs(v, u)
            k2v, k2u = rhs(v + 0.5 * step * k1v, u + 0.5 * step * k1u)
            k3v, k3u = rhs(v + 0.5 * step * k2v, u + 0.5 * step * k2u)
            k4v, k4u = rhs(v + step * k3v, u + step * k3u)
        except HyperbolicityError as exc:
            blowup = exc
            break
        state = FieldState(v + step / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
                           u + step / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
                           state.tau + step)
        if not np.all(np.isfinite(state.v)):
            blowup = HyperbolicityError("NaN during nonlinear step")
            break
        h1 = sobolev_norm(state.v, grid, 1)
        recorded = state.tau >= next_record or state.tau >= tau_max - 1e-12
        if recorded:
            trace.append((state.tau, h1, physical_ratio(state)))
            next_record += record_gap
        if h1 > norm_ceiling:
            blowup = BlowupDetected(f"H1 norm {h1:.3e} exceeded ceiling {norm_ceiling}")
            if not recorded:
                trace.append((state.tau, h1, physical_ratio(state)))
            break

    norms = [(t, n) for t, n, _ in trace if n > 0]
    try:
        rate, r2 = fit_decay_rate([(t, n ** 2) for t, n in norms])
    except DegenerateFitError:
        rate, r2 = 0.0, 0.0
    report = DecayReport(rate=rate, r_squared=r2, series=norms)
    return state, trace, report, blowup


CHECKPOINT_MAGIC = b"LCL1"


def save_checkpoint(path, grid: RadialGrid, state: FieldState, kappa: float):
    """Binary checkpoint: magic "LCL1", then little-endian float64
    (sigma, kappa, tau, n_cells) followed by v[...] and v_tau[...]."""
    header = np.array([grid.sigma, kappa, state.tau, float(grid.n_cells)], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.tobytes())
        fh.write(state.v.astype("<f8").tobytes())
        fh.write(state.v_tau.astype("<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (grid, state, kappa)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        header = np.frombuffer(fh.read(32), dtype="<f8")
        sigma, kappa, tau, n_cells = header
        n = int(n_cells)
        v = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        v_tau = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
    grid = RadialGrid(sigma=float(sigma), n_cells=n)
    return grid, FieldState(v, v_tau, float(tau)), float(kappa)
