"""Mode analysis: eigenvalue polynomials, power-series recurrence, ratio
diagnostics, Newton polygon, Routh-Hurwitz sweeps, and the discretized
first-order evolution operator (spectrum and dissipativity).
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvals

from .evolution import RadialGrid


class RecurrencePoleError(ZeroDivisionError):
    """The recurrence denominator vanished at some index."""

    def __init__(self, n, nu, kappa):
        super().__init__(f"recurrence weights have a pole at n={n} (nu={nu}, kappa={kappa})")
        self.n = n


# ---------------------------------------------------------------------------
# Quadratic eigenvalue polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticPoly:
    """a nu^2 + b nu + c with real coefficients, a != 0."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0:
            raise ValueError("leading coefficient must be nonzero")


def mode_roots(p: QuadraticPoly):
    """Numerically stable roots plus the mode-stability verdict (all Re < 0)."""
    a, b, c = p.a, p.b, p.c
    disc = complex(b * b - 4 * a * c)
    sq = cmath.sqrt(disc)
    if disc.real >= 0 and disc.imag == 0:
        # avoid cancellation: q = -(b + sign(b) sqrt) / 2
        if b >= 0:
            q = -(b + sq.real) / 2.0
        else:
            q = -(b - sq.real) / 2.0
        if q != 0:
            r1, r2 = complex(q / a), complex(c / q)
        else:
            r1 = r2 = complex(0.0)
    else:
        r1 = (-b + sq) / (2 * a)
        r2 = (-b - sq) / (2 * a)
    stable = r1.real < 0 and r2.real < 0
    return (r1, r2), stable


def mode_stability_report(kappa: float = 1.0) -> dict:
    """Roots of the unperturbed mode polynomial nu^2 + 3 nu - 4, with verdict.

    The commonly quoted eigenvalues {4, -1} for this equation do not solve
    the polynomial (its roots are {1, -4}); both sets contain a positive
    member, so the instability verdict is the same either way.  The report
    carries both and flags the mismatch.
    """
    poly = QuadraticPoly(1.0, 3.0, -4.0)
    (r1, r2), stable = mode_roots(poly)
    documented = [4.0, -1.0]
    computed = sorted([r1.real, r2.real], reverse=True)
    return {
        "polynomial": [poly.a, poly.b, poly.c],
        "computed_roots": computed,
        "documented_roots": documented,
        "documented_roots_agree": sorted(documented) == sorted(computed),
        "verdict": "mode stable" if stable else "mode unstable",
    }


# ---------------------------------------------------------------------------
# Recurrence weights and power series
# ---------------------------------------------------------------------------

def _kappa_ratio(kappa: float) -> float:
    return (1.0 - kappa) / (1.0 + kappa)

def recurrence_weights(n, nu: complex, kappa: float):
    """Rational weights (p1, p2) of the four-term coefficient recurrence."""
    c = _kappa_ratio(kappa)
    denom = n * n + (7.0 + 2.0 * nu) * n + nu * nu + (8.0 - c) * nu + 12.0
    if abs(denom) < 1e-9 * max(1.0, float(n) ** 2):
        raise RecurrencePoleError(n, nu, kappa)
    p1 = ((15.0 + 2.0 * nu) * n + 3.0 * nu * nu
          + (4.0 * kappa ** 2 - 2.0 * c + 15.0) * nu + 24.0 - 4.0 * kappa ** 2) / denom
    p2 = -((7.0 + 2.0 * nu) * n + nu * nu + (8.0 - c) * nu + 12.0) / denom
    return p1, p2


def reduction_polynomials(n, nu: complex, kappa: float):
    """(p3, p4, p5): the polynomial form of the ratio equation.

    p3 is the recurrence denominator, p4 = p3*(p1-2), p5 = p3*(1+p2) = n^2.
    """
    c = _kappa_ratio(kappa)
    p3 = (n + 4.0) * (n + 3.0 + 2.0 * nu) + nu * nu - c * nu
    p4 = nu * nu + nu * (4.0 * kappa ** 2 - 2.0 * n - 1.0) - n * (2.0 * n - 1.0) - 4.0 * kappa ** 2
    p5 = float(n) ** 2
    return p3, p4, p5


class ScaledSequence:
    """Complex sequence stored as mantissa * 2**exponent to dodge overflow."""

    __slots__ = ("mant", "expo")

    def __init__(self, mant: np.ndarray, expo: np.ndarray):
        self.mant = mant
        self.expo = expo

    def __len__(self):
        return len(self.mant)

    def abs(self) -> np.ndarray:
        """Magnitudes as floats where representable, inf otherwise."""
        with np.errstate(over="ignore"):
            return np.abs(self.mant) * np.exp2(self.expo.astype(float))

    def value(self, i: int) -> complex:
        return self.mant[i] * 2.0 ** float(self.expo[i])

    def ratio(self, i: int, j: int) -> complex:
        """Element i divided by element j, exponent-safe."""
        if self.mant[j] == 0:
            return complex(np.nan)
        return self.mant[i] / self.mant[j] * 2.0 ** float(self.expo[i] - self.expo[j])


def _normalize(z: complex):
    """Split z into (mantissa, exponent) with |mantissa| in [0.5, 2)."""
    m = max(abs(z.real), abs(z.imag))
    if m == 0.0 or not np.isfinite(m):
        return z, 0
    _, e = np.frexp(m)
    return z * 2.0 ** float(-e), int(e)


@dataclass
class FrobeniusSeries:
    """Power-series coefficients a_n of the mode equation at the origin.

    a_0 = 1; seeds (a_1, a_2, a_3) parameterize the remaining degrees of
    freedom of the four-term recurrence

        a_{n+4} + (-2 + p1(n)) a_{n+2} + (1 + p2(n)) a_n = 0.
    """

    nu: complex
    kappa: float
    seeds: tuple
    coeffs: ScaledSequence = field(repr=False)

    def __len__(self):
        return len(self.coeffs)

    def coeff(self, n: int) -> complex:
        return self.coeffs.value(n)

    def recurrence_residual(self, n: int) -> float:
        """|a_{n+4} + (-2+p1) a_{n+2} + (1+p2) a_n| relative to the largest term."""
        p1, p2 = recurrence_weights(n, self.nu, self.kappa)
        e_ref = int(max(self.coeffs.expo[n], self.coeffs.expo[n + 2], self.coeffs.expo[n + 4]))
        terms = [self.coeffs.mant[n + 4] * 2.0 ** float(self.coeffs.expo[n + 4] - e_ref),
                 (-2.0 + p1) * self.coeffs.mant[n + 2] * 2.0 ** float(self.coeffs.expo[n + 2] - e_ref),
                 (1.0 + p2) * self.coeffs.mant[n] * 2.0 ** float(self.coeffs.expo[n] - e_ref)]
        scale = max(abs(t) for t in terms)
        if scale == 0:
            return 0.0
        return abs(sum(terms)) / scale


OVERFLOW_GUARD = 1e300


def seed_from_ode(nu: complex, kappa: float) -> complex:
    """Independent low-order matching of a truncated series in the mode ODE.

    Substitutes sum_{k<=8} c_k rho^k into the singular mode equation
    (cleared of its 1/rho factor) and solves the lowest matching conditions
    with c_0 = 1.  Returns c_2; the odd conditions force c_1 = c_3 = 0.
    This route never touches the recurrence weights.
    """
    k2 = kappa * kappa
    c = _kappa_ratio(kappa)
    N = 9
    # rho * ODE acting on rho^k produces powers k-1 .. k+3; build the
    # coefficient matrix column by column from the exact monomial images.
    rows = N + 4
    M = np.zeros((rows, N), dtype=complex)
    lam0 = nu * nu + nu * (4.0 * k2 - 1.0) - 4.0 * k2      # constant part of the nu-bracket
    lam2 = nu * nu * (k2 - 1.0) + nu * (kappa - 1.0) ** 2  # rho^2 part
    for k in range(N):
        # (1-k^2)(1-rho^2)^2 * k(k-1) rho^{k-1} ... expanded in powers
        if k >= 2:
            M[k - 1, k] += (1.0 - k2) * k * (k - 1)
            M[k + 1, k] += -2.0 * (1.0 - k2) * k * (k - 1)
            M[k + 3, k] += (1.0 - k2) * k * (k - 1)
        # [(1-k^2)(1-rho^2) - 2 nu (1-k^2) rho^2 (1-rho^2)] * k rho^{k-1}
        if k >= 1:
            M[k - 1, k] += (1.0 - k2) * k
            M[k + 1, k] += -(1.0 - k2) * k - 2.0 * nu * (1.0 - k2) * k
            M[k + 3, k] += 2.0 * nu * (1.0 - k2) * k
        # -[lam0 + lam2 rho^2] rho^k, times rho from clearing the 1/rho
        M[k + 1, k] += -lam0
        M[k + 3, k] += -lam2
    # impose c_0 = 1; solve the first N-1 power equations for c_1..c_8
    rhs = -M[: N - 1, 0]
    sol = np.linalg.lstsq(M[: N - 1, 1:], rhs, rcond=None)[0]
    return complex(sol[1])  # c_2


def frobenius_series(nu: complex, kappa: float, seeds=None, N: int = 2000) -> FrobeniusSeries:
    """Generate a_0..a_N from the recurrence with a_0 = 1 and the given seeds.

    seeds default to (0, a2*, 0) with a2* from the independent ODE matching;
    magnitudes beyond 1e300 switch to a scaled mantissa/exponent store.
    """
    if seeds is None:
        seeds = (0.0, seed_from_ode(nu, kappa), 0.0)
    mant = np.zeros(N + 1, dtype=complex)
    expo = np.zeros(N + 1, dtype=np.int64)
    start = [1.0 + 0j, complex(seeds[0]), complex(seeds[1]), complex(seeds[2])]
    for i, z in enumerate(start):
        mant[i], expo[i] = z, 0
    for n in range(0, N - 3):
        p1, p2 = recurrence_weights(n, nu, kappa)
        e_ref = int(max(expo[n + 2], expo[n]))
        z = ((2.0 - p1) * mant[n + 2] * 2.0 ** float(expo[n + 2] - e_ref)
             - (1.0 + p2) * mant[n] * 2.0 ** float(expo[n] - e_ref))
        if abs(z) > OVERFLOW_GUARD or (z != 0 and abs(z) < 1.0 / OVERFLOW_GUARD):
            m, e = _normalize(z)
            mant[n + 4], expo[n + 4] = m, e + e_ref
        else:
            mant[n + 4], expo[n + 4] = z, e_ref
    return FrobeniusSeries(nu=nu, kappa=kappa, seeds=tuple(seeds),
                           coeffs=ScaledSequence(mant, expo))


def ratio_diagnostics(series: FrobeniusSeries, n_min: int = 0, n_max: int | None = None):
    """Sequences R_n = a_{n+2}/a_n, d_n = a_{n+1}/a_n, dtilde_n = n^{1/4} d_n.

    Indices whose denominator coefficient vanishes are masked with NaN.
    """
    n_total = len(series)
    if n_max is None:
        n_max = n_total - 2
    ns = np.arange(n_min, n_max)
    R = np.full(len(ns), np.nan, dtype=complex)
    d = np.full(len(ns), np.nan, dtype=complex)
    for i, n in enumerate(ns):
        if series.coeffs.mant[n] != 0:
            R[i] = series.coeffs.ratio(n + 2, n)
            d[i] = series.coeffs.ratio(n + 1, n)
    dtilde = ns.astype(float) ** 0.25 * d
    return ns, R, d, dtilde


# ---------------------------------------------------------------------------
# Newton polygon
# ---------------------------------------------------------------------------

@dataclass
class NewtonPolygon:
    """Lower-left hull of exponent/degree points with its negative-slope edges."""

    points: list              # of (alpha, beta)
    edges: list               # of dicts {from, to, slope}
    xbar: float | None        # -1/steepest slope, when a negative edge exists

    @property
    def steepest_slope(self) -> float | None:
        return self.edges[0]["slope"] if self.edges else None

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points],
                "edges": self.edges, "xbar": self.xbar}


def newton_polygon(points) -> NewtonPolygon:
    """Build the polygon: lower convex hull restricted to negative slopes.

    Every displaced positive quadrant p + R+^2 lies above the returned
    supporting lines; collinear interior points are absorbed into one edge.
    """
    pts = sorted(set((float(a), float(b)) for a, b in points))
    if not pts:
        raise ValueError("need at least one point")
    if not all(np.isfinite(a) and np.isfinite(b) for a, b in pts):
        raise ValueError("points must be finite")
    # lower convex hull by monotone chain (pts already sorted lexicographically)
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            cross = (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1)
            if cross <= 0:  # no left turn: drop the middle point
                hull.pop()
            else:
                break
        hull.append(p)
    edges = []
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        if x2 == x1:
            continue
        slope = (y2 - y1) / (x2 - x1)
        if slope < 0:
            edges.append({"from": [x1, y1], "to": [x2, y2], "slope": slope})
    xbar = -1.0 / edges[0]["slope"] if edges else None
    return NewtonPolygon(points=pts, edges=edges, xbar=xbar)


def newton_polygon_bruteforce(points) -> list:
    """All-pairs supporting-line oracle: maximal negative-slope hull edges."""
    pts = sorted(set((float(a), float(b)) for a, b in points))
    support = []
    for i in range(len(pts)):
        for j in range(len(pts)):
            (x1, y1), (x2, y2) = pts[i], pts[j]
            if x2 <= x1:
                continue
            s = (y2 - y1) / (x2 - x1)
            if s >= 0:
                continue
            if all(b >= y1 + s * (a - x1) - 1e-9 for a, b in pts):
                support.append((pts[i], pts[j], s))
    # keep only maximal segments: drop any contained in a longer collinear one
    edges = []
    for p, q, s in support:
        contained = False
        for p2, q2, s2 in support:
            if (p2, q2) == (p, q):
                continue
            if abs(s2 - s) < 1e-9 and p2[0] <= p[0] and q2[0] >= q[0] \
               and abs(q2[1] + s2 * (p[0] - q2[0]) - p[1]) < 1e-9:
                contained = True
                break
        if not contained:
            edges.append({"from": [p[0], p[1]], "to": [q[0], q[1]], "slope": s})
    edges.sort(key=lambda e: e["from"][0])
    return edges


# ---------------------------------------------------------------------------
# Routh-Hurwitz sweep
# ---------------------------------------------------------------------------

def asymptotic_mode_poly(n, kappa: float) -> QuadraticPoly:
    """The quadratic 2 nu^2 + (4k^2 - (1-k)/(1+k) + 7) nu + 8n + 12 - 4k^2."""
    c = _kappa_ratio(kappa)
    return QuadraticPoly(2.0, 4.0 * kappa ** 2 - c + 7.0, 8.0 * n + 12.0 - 4.0 * kappa ** 2)


def stable_root_check(n, kappa: float):
    """Roots of the asymptotic quadratic plus the coefficient-sign criterion.

    For a real quadratic, all roots lie in the open left half-plane iff all
    coefficients share the sign of the leading one (Routh-Hurwitz).  Returns
    (roots, all_stable) with the two routes cross-checked.
    """
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0,1), got {kappa}")
    poly = asymptotic_mode_poly(n, kappa)
    roots, stable_direct = mode_roots(poly)
    stable_rh = poly.a > 0 and poly.b > 0 and poly.c > 0
    if stable_rh != stable_direct:
        raise AssertionError(
            f"Routh-Hurwitz flag {stable_rh} disagrees with roots {roots} at n={n}, kappa={kappa}")
    return roots, stable_rh


# ---------------------------------------------------------------------------
# Discretized evolution operator
# ---------------------------------------------------------------------------

@dataclass
class OperatorMatrices:
    """Dense 2N x 2N first-order operator and its dissipative/compact split."""

    grid: RadialGrid
    kappa: float
    A: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    varpi1: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    varpi2: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    a_rho: np.ndarray = field(repr=False, default=None)   # type: ignore[assignment]
    b_rho: np.ndarray = field(repr=False, default=None)   # type: ignore[assignment]


def _derivative_matrices(grid: RadialGrid):
    """Dense D1, D2 with the same ghost closure as the stepper:
    even (regularity) at the origin, odd (Dirichlet) at sigma."""
    n, h = grid.n_cells, grid.h
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    for j in range(n):
        if j > 0:
            D1[j, j - 1] = -1.0 / (2 * h)
            D2[j, j - 1] = 1.0 / h ** 2
        if j < n - 1:
            D1[j, j + 1] = 1.0 / (2 * h)
            D2[j, j + 1] = 1.0 / h ** 2
        D2[j, j] = -2.0 / h ** 2
    D1[0, 0] += -1.0 / (2 * h)      # even ghost = +v[0]
    D2[0, 0] += 1.0 / h ** 2
    D1[-1, -1] += -1.0 / (2 * h)    # odd ghost = -v[-1]
    D2[-1, -1] += -1.0 / h ** 2
    return D1, D2


def assemble_operator(grid: RadialGrid, kappa: float) -> OperatorMatrices:
    """Dense 2N x 2N matrix of the first-order system, with the split A = A0 + A1.

    Uses the same stencils (ghosts and near-origin blend) as the time stepper.
    The damping coefficient carries the (kappa^2-1)^2 rho^2 correction used by
    the operator-form write-up (the evolution form uses (kappa-1)^2 rho^2; the
    two differ at O((1-kappa)^2 rho^2)).
    """
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0,1), got {kappa}")
    n = grid.n_cells
    rho = grid.nodes
    k2 = kappa * kappa
    one_m = 1.0 - rho ** 2
    denom = 1.0 + (k2 - 1.0) * rho ** 2
    D1, D2 = _derivative_matrices(grid)
    b = grid.blend_weight()

    # singular first-derivative operator with the near-origin blend
    sing_op = ((1.0 - b) / rho)[:, None] * D1 + b[:, None] * D2

    damping = 4.0 * k2 - 1.0 + (k2 - 1.0) ** 2 * rho ** 2
    L = (((1.0 - k2) * one_m ** 2 / denom)[:, None] * D2
         + ((1.0 - k2) * one_m / denom)[:, None] * sing_op
         + np.diag(4.0 * k2 / denom))
    M = (np.diag(-damping / denom)
         + (-2.0 * (1.0 - k2) * rho * one_m / denom)[:, None] * D1)

    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = L
    A[n:, n:] = M

    a_rho = -(rho ** 2 * (1.0 - k2) * one_m) / denom - rho ** 2
    b_rho = (-4.0 * rho * (1.0 - k2) * one_m / denom
             + 2.0 * rho * (1.0 - k2) ** 2 * one_m ** 2 / denom ** 2)

    varpi1 = (((1.0 - k2) * one_m ** 2 / denom)[:, None] * D2
              + ((1.0 - k2) * one_m / denom)[:, None] * sing_op
              + ((a_rho / rho + b_rho) / denom)[:, None] * D1
              - np.eye(n))
    varpi2 = M

    A0 = np.zeros((2 * n, 2 * n))
    A0[:n, n:] = np.eye(n)
    A0[n:, :n] = varpi1
    A0[n:, n:] = varpi2

    A1 = np.zeros((2 * n, 2 * n))
    A1[n:, :n] = (np.diag(4.0 * k2 / denom) + np.eye(n)
                  - ((a_rho / rho + b_rho) / denom)[:, None] * D1)

    return OperatorMatrices(grid=grid, kappa=kappa, A=A, A0=A0, A1=A1,
                            varpi1=varpi1, varpi2=varpi2, a_rho=a_rho, b_rho=b_rho)


def discrete_spectrum(m: OperatorMatrices, which: str = "A") -> np.ndarray:
    """All eigenvalues of the chosen block (dense QR solver), sorted by Re desc."""
    mat = {"A": m.A, "A0": m.A0, "A1": m.A1}[which]
    if mat.shape[0] > 1000:
        raise ValueError("dense eigensolver budget is dimension <= 1000")
    ev = eigvals(mat)
    return ev[np.argsort(-ev.real)]


def random_boundary_respecting_pair(grid: RadialGrid, rng) -> np.ndarray:
    """Random smooth (u1, u2) vanishing with first derivatives at both ends."""
    rho = grid.nodes
    x = rho / grid.sigma
    envelope = 16.0 * (x * (1.0 - x)) ** 2
    out = []
    for _ in range(2):
        coeff = rng.standard_normal(6)
        u = sum(c * np.sin((k + 1) * np.pi * x) for k, c in enumerate(coeff))
        out.append(envelope * u)
    return np.concatenate(out)


def weighted_inner(m: OperatorMatrices, u: np.ndarray) -> float:
    """Discrete Re(A0 u | u) in the rho^2/rho^4-weighted Sobolev pairing."""
    grid, n = m.grid, m.grid.n_cells
    rho = grid.nodes
    u1, u2 = u[:n], u[n:]
    au2 = (m.A0 @ u)[n:]
    return float(grid.quad(u2 * u1)
                 + grid.quad(rho ** 2 * grid.d1(u2) * grid.d1(u1))
                 + grid.quad(rho ** 4 * grid.d2(u2) * grid.d2(u1))
                 + grid.quad(au2 * u2)
                 + grid.quad(rho ** 2 * grid.d1(au2) * grid.d1(u2)))


def dissipativity_check(m: OperatorMatrices, trials: int = 100, seed: int = 0):
    """Worst discrete Re(A0 u | u) over random boundary-respecting trials.

    The inner product weights first and second derivatives by rho^2 and rho^4
    (the radial-ball Sobolev forms); quadrature is the midpoint rule.
    Returns (worst, values).
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    grid = m.grid
    rng = np.random.Generator(np.random.PCG64(seed))
    values = [weighted_inner(m, random_boundary_respecting_pair(grid, rng))
              for _ in range(trials)]
    return max(values), values
