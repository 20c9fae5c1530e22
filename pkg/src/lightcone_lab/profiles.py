"""Closed-form self-similar solutions of the radial membrane equation.

The quasilinear wave equation

    u_tt - u_rr - u_r/r + u_tt u_r^2 + u_rr u_t^2 - 2 u_t u_r u_tr
        + u_r u_t^2 / r - u_r^3 / r = 0

admits the explicit lightlike solutions u_T(t,r) = +/-(T-t) sqrt(1-(r/(T-t))^2)
inside the backward lightcone r <= T-t.  This module provides the profile
phi(rho) = +/-sqrt(1-rho^2), the (t,r) <-> (tau,rho) similarity maps, the
scaling action, and residual oracles that substitute a field (with analytic
or finite-difference derivatives) into the PDE and the profile ODE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class DomainError(ValueError):
    """Input outside the domain of a closed-form expression."""


@dataclass(frozen=True)
class SimilarityFrame:
    """Blowup frame: time T, lightcone fraction sigma, perturbation size kappa.

    Owns the similarity coordinate maps
        tau = -log(T-t) + log T,   rho = r / (T-t)
    and their inverses.  t_star is the reference blowup time used by the
    perturbation-threshold formula; it defaults to T.
    """

    T: float = 1.0
    sigma: float = 0.5
    kappa: float = 0.95
    t_star: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.t_star is None:
            object.__setattr__(self, "t_star", self.T)
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")
        if not 0 < self.sigma < 1:
            raise DomainError(f"sigma must lie in (0,1), got {self.sigma}")
        if not 0 < self.kappa <= 1:
            raise DomainError(f"kappa must lie in (0,1], got {self.kappa}")
        if not self.t_star > 0:
            raise DomainError(f"t_star must be positive, got {self.t_star}")

    def forward(self, t, r):
        """Map physical (t, r) to similarity (tau, rho)."""
        if t >= self.T:
            raise DomainError(f"t={t} is not before the blowup time T={self.T}")
        tau = -math.log(self.T - t) + math.log(self.T)
        rho = r / (self.T - t)
        return tau, rho

    def backward(self, tau, rho):
        """Map similarity (tau, rho) back to physical (t, r)."""
        t = self.T * (1.0 - math.exp(-tau))
        r = self.T * rho * math.exp(-tau)
        return t, r


def similarity_map(frame: SimilarityFrame, direction: str, point):
    """Apply the forward or backward similarity coordinate map to a point."""
    if direction == "forward":
        return frame.forward(*point)
    if direction == "backward":
        return frame.backward(*point)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


@dataclass(frozen=True)
class SelfSimilarProfile:
    """The lightlike profile phi(rho) = sign * sqrt(1 - rho^2) on [0, 1]."""

    sign: int = 1

    def __post_init__(self):
        if self.sign not in (+1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")


def profile_value(p: SelfSimilarProfile, rho: float, deriv_order: int = 0) -> float:
    """Evaluate phi, phi' or phi'' analytically at rho in [0, 1].

    First and second derivatives are singular at rho = 1 and are refused there.
    """
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho={rho} outside [0, 1]")
    if deriv_order >= 1 and rho == 1.0:
        raise DomainError("profile derivative is singular at rho = 1")
    s = p.sign
    q = 1.0 - rho * rho
    if deriv_order == 0:
        return s * math.sqrt(q)
    if deriv_order == 1:
        return -s * rho / math.sqrt(q)
    if deriv_order == 2:
        return -s * q ** (-1.5)
    raise ValueError(f"deriv_order must be 0, 1 or 2, got {deriv_order}")


def explicit_solution(frame: SimilarityFrame, sign: int, t: float, r: float) -> float:
    """The explicit blowup solution sign*(T-t)*sqrt(1-(r/(T-t))^2)."""
    if not 0 <= t < frame.T:
        raise DomainError(f"t={t} outside [0, T)")
    s = T_minus_t = frame.T - t
    if r > T_minus_t:
        raise DomainError(f"r={r} outside the backward lightcone r <= T-t = {T_minus_t}")
    rho = r / T_minus_t
    return sign * T_minus_t * math.sqrt(max(1.0 - rho * rho, 0.0))


def origin_second_derivative(frame: SimilarityFrame, sign: int, t: float) -> float:
    """Blowup rate sign/(T-t) of the second radial derivative at the origin.

    This is the published closed form; its magnitude 1/(T-t) diverges as
    t -> T.  (Direct differentiation of the explicit solution gives the
    opposite sign, -sign/(T-t); the quoted form is kept as the contract and
    the mismatch is a documented discrepancy.)
    """
    if not 0 <= t < frame.T:
        raise DomainError(f"t={t} outside [0, T)")
    return sign / (frame.T - t)


def kappa_threshold(T: float, t_star: float, sigma: float, eps: float) -> float:
    """Lower admissible bound for the perturbation parameter kappa.

    Returns 1 - (T sigma)^{-1/2} (1-(sigma T/T*)^2)^{1/2}
              [1 + sigma + T(1-(sigma T/T*)^2)]^{-1} eps.
    """
    if T <= 0 or t_star <= 0:
        raise DomainError("T and t_star must be positive")
    if not 0 < sigma < 1:
        raise DomainError(f"sigma must lie in (0,1), got {sigma}")
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps}")
    x = sigma * T / t_star
    if x >= 1:
        raise DomainError("sigma*T must be below t_star")
    one_minus = 1.0 - x * x
    return 1.0 - (T * sigma) ** -0.5 * math.sqrt(one_minus) / (1.0 + sigma + T * one_minus) * eps


# ---------------------------------------------------------------------------
# Field callbacks and residual oracles
# ---------------------------------------------------------------------------

class AnalyticField:
    """A spacetime field u(t, r) with analytic first and second derivatives.

    The six callables take (t, r) and return floats.  Fields without known
    derivatives can be wrapped with `finite_difference_field`.
    """

    def __init__(self, u, u_t, u_r, u_tt, u_rr, u_tr):
        self.u = u
        self.u_t = u_t
        self.u_r = u_r
        self.u_tt = u_tt
        self.u_rr = u_rr
        self.u_tr = u_tr


def constant_field(c: float) -> AnalyticField:
    zero = lambda t, r: 0.0
    return AnalyticField(lambda t, r: c, zero, zero, zero, zero, zero)


def explicit_solution_field(frame: SimilarityFrame, sign: int) -> AnalyticField:
    """The explicit solution as an AnalyticField with closed-form derivatives.

    With Q = (T-t)^2 - r^2 the solution is s sqrt(Q); derivatives follow from
    the chain rule and stay finite for r < T-t.
    """
    T, s = frame.T, float(sign)

    def Q(t, r):
        q = (T - t) ** 2 - r * r
        if q <= 0:
            raise DomainError(f"point (t={t}, r={r}) outside the open lightcone")
        return q

    return AnalyticField(
        u=lambda t, r: s * math.sqrt(Q(t, r)),
        u_t=lambda t, r: -s * (T - t) / math.sqrt(Q(t, r)),
        u_r=lambda t, r: -s * r / math.sqrt(Q(t, r)),
        u_tt=lambda t, r: -s * r * r * Q(t, r) ** -1.5,
        u_rr=lambda t, r: -s * (T - t) ** 2 * Q(t, r) ** -1.5,
        u_tr=lambda t, r: -s * r * (T - t) * Q(t, r) ** -1.5,
    )


def finite_difference_field(u, scale: float = 1.0) -> AnalyticField:
    """Wrap a bare callable u(t, r) with 5-point centered difference derivatives.

    Step h = 1e-5 * scale.  Residual oracles for exact solutions should use
    analytic fields instead; differencing error pollutes residuals near 1e-10.
    """
    h = 1e-5 * scale

    def d1(f, x):  # 5-point first derivative
        return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)

    def d2(f, x):  # 5-point second derivative
        return (-f(x - 2 * h) + 16 * f(x - h) - 30 * f(x) + 16 * f(x + h) - f(x + 2 * h)) / (12 * h * h)

    return AnalyticField(
        u=u,
        u_t=lambda t, r: d1(lambda x: u(x, r), t),
        u_r=lambda t, r: d1(lambda x: u(t, x), r),
        u_tt=lambda t, r: d2(lambda x: u(x, r), t),
        u_rr=lambda t, r: d2(lambda x: u(t, x), r),
        u_tr=lambda t, r: d1(lambda x: d1(lambda y: u(x, y), r), t),
    )


def scaling_apply(f: AnalyticField, lam: float) -> AnalyticField:
    """Scaled field u_lambda(t,r) = lambda * u(t/lambda, r/lambda), chain-ruled."""
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    return AnalyticField(
        u=lambda t, r: lam * f.u(t / lam, r / lam),
        u_t=lambda t, r: f.u_t(t / lam, r / lam),
        u_r=lambda t, r: f.u_r(t / lam, r / lam),
        u_tt=lambda t, r: f.u_tt(t / lam, r / lam) / lam,
        u_rr=lambda t, r: f.u_rr(t / lam, r / lam) / lam,
        u_tr=lambda t, r: f.u_tr(t / lam, r / lam) / lam,
    )


@dataclass
class ResidualReport:
    """Pointwise PDE residuals with the worst offender singled out."""

    max_abs: float
    at_point: tuple
    samples: list  # of (t, r, residual)

    def rows(self):
        """CSV rows (t, r, residual)."""
        return [(t, r, res) for t, r, res in self.samples]


def membrane_residual(f: AnalyticField, points) -> ResidualReport:
    """Substitute the field into the membrane equation at the given (t, r) points.

    All points must have r > 0 because of the 1/r terms.
    """
    samples = []
    max_abs, argmax = -1.0, None
    for t, r in points:
        if r <= 0:
            raise DomainError(f"membrane residual undefined at r={r} <= 0")
        ut, ur = f.u_t(t, r), f.u_r(t, r)
        utt, urr, utr = f.u_tt(t, r), f.u_rr(t, r), f.u_tr(t, r)
        res = (utt - urr - ur / r
               + utt * ur ** 2 + urr * ut ** 2 - 2 * ut * ur * utr
               + ur * ut ** 2 / r - ur ** 3 / r)
        samples.append((t, r, res))
        if abs(res) > max_abs:
            max_abs, argmax = abs(res), (t, r)
    return ResidualReport(max_abs=max_abs, at_point=argmax, samples=samples)


def ode_residual(p, rho: float) -> float:
    """Substitute a profile into the self-similar ODE at rho in (0, 1).

    Accepts a SelfSimilarProfile or any (value, d1, d2) triple of callables,
    which is the oracle path for test profiles.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho={rho} outside (0, 1)")
    if isinstance(p, SelfSimilarProfile):
        phi = profile_value(p, rho, 0)
        d1 = profile_value(p, rho, 1)
        d2 = profile_value(p, rho, 2)
    else:
        value, deriv1, deriv2 = p
        phi, d1, d2 = value(rho), deriv1(rho), deriv2(rho)
    one_m = 1.0 - rho * rho
    return (rho * one_m * d2 + d1 - d1 * phi ** 2
            + 2 * rho * phi * d1 ** 2 - rho * d2 * phi ** 2
            + one_m * d1 ** 3)
