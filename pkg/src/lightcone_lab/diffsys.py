"""Exact verification of the four-term recurrence's companion-system transforms.

The recurrence a_{n+4} + (-2+p1(n)) a_{n+2} + (1+p2(n)) a_n = 0 is written as
z_{n+1} = (D + T(n)) z_n with a constant companion matrix D (eigenvalues 1 and
-1, both double).  A fixed Jordan basis P and two n-dependent window matrices
M1(n), M2(n) turn the principal part into the diagonal
diag(1, 1+1/n, -1, -(1+1/n)).  All n-independent identities are checked in
exact rational arithmetic; nu-dependent objects are complex floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .spectral import recurrence_weights


class ExactCheckFailure(AssertionError):
    """An identity that must hold exactly in rational arithmetic failed."""


@dataclass(frozen=True)
class RationalMatrix4:
    """Immutable 4x4 matrix over the rationals; arithmetic is exact."""

    rows: tuple

    def __post_init__(self):
        rows = tuple(tuple(Fraction(x) for x in row) for row in self.rows)
        if len(rows) != 4 or any(len(r) != 4 for r in rows):
            raise ValueError("need a 4x4 array of rationals")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def identity(cls) -> "RationalMatrix4":
        return cls(tuple(tuple(1 if i == j else 0 for j in range(4)) for i in range(4)))

    @classmethod
    def diagonal(cls, d) -> "RationalMatrix4":
        return cls(tuple(tuple(d[i] if i == j else 0 for j in range(4)) for i in range(4)))

    def __matmul__(self, other: "RationalMatrix4") -> "RationalMatrix4":
        rows = tuple(
            tuple(sum(self.rows[i][k] * other.rows[k][j] for k in range(4)) for j in range(4))
            for i in range(4))
        return RationalMatrix4(rows)

    def __sub__(self, other: "RationalMatrix4") -> "RationalMatrix4":
        return RationalMatrix4(tuple(
            tuple(self.rows[i][j] - other.rows[i][j] for j in range(4)) for i in range(4)))

    def __eq__(self, other) -> bool:
        return isinstance(other, RationalMatrix4) and self.rows == other.rows

    def det(self) -> Fraction:
        """Determinant by fraction-free Gaussian elimination (exact)."""
        m = [list(r) for r in self.rows]
        det = Fraction(1)
        for col in range(4):
            pivot = next((r for r in range(col, 4) if m[r][col] != 0), None)
            if pivot is None:
                return Fraction(0)
            if pivot != col:
                m[col], m[pivot] = m[pivot], m[col]
                det = -det
            det *= m[col][col]
            inv = Fraction(1) / m[col][col]
            for r in range(col + 1, 4):
                factor = m[r][col] * inv
                for c in range(col, 4):
                    m[r][c] -= factor * m[col][c]
        return det

    def first_mismatch(self, other: "RationalMatrix4"):
        for i in range(4):
            for j in range(4):
                if self.rows[i][j] != other.rows[i][j]:
                    return (i, j, self.rows[i][j], other.rows[i][j])
        return None

    def to_complex(self) -> np.ndarray:
        return np.array([[complex(x) for x in row] for row in self.rows])


# Companion matrix, Jordan basis, and the window factors
COMPANION_D = RationalMatrix4(((0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1), (-1, 0, 2, 0)))
JORDAN_J = RationalMatrix4(((1, 1, 0, 0), (0, 1, 0, 0), (0, 0, -1, 1), (0, 0, 0, -1)))
BASIS_P = RationalMatrix4(((1, 0, 1, 0), (1, 1, -1, 1), (1, 2, 1, -2), (1, 3, -1, 3)))
BASIS_P_INV = RationalMatrix4((
    (Fraction(1, 2), Fraction(3, 4), 0, Fraction(-1, 4)),
    (Fraction(-1, 4), Fraction(-1, 4), Fraction(1, 4), Fraction(1, 4)),
    (Fraction(1, 2), Fraction(-3, 4), 0, Fraction(1, 4)),
    (Fraction(1, 4), Fraction(-1, 4), Fraction(-1, 4), Fraction(1, 4))))

WINDOW_P1 = RationalMatrix4(((1, 2, 0, 0), (1, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)))
WINDOW_P1_INV = RationalMatrix4(((-1, 2, 0, 0), (1, -1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)))
WINDOW_P2 = RationalMatrix4(((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, -1, -2), (0, 0, 1, 1)))
WINDOW_P2_INV = RationalMatrix4(((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 2), (0, 0, -1, -1)))


def window_p3(n) -> RationalMatrix4:
    q = Fraction(1, 1) + Fraction(1, n)
    return RationalMatrix4(((1, 1, 0, 0), (-1, -q, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)))


def window_p3_inv_next(n) -> RationalMatrix4:
    # inverse of window_p3 evaluated at n+1, in closed form
    return RationalMatrix4(((n + 2, n + 1, 0, 0), (-(n + 1), -(n + 1), 0, 0),
                            (0, 0, 1, 0), (0, 0, 0, 1)))


def window_p4(n) -> RationalMatrix4:
    q = Fraction(1, 1) + Fraction(1, n)
    return RationalMatrix4(((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 1), (0, 0, -1, -q)))


def window_p4_inv_next(n) -> RationalMatrix4:
    return RationalMatrix4(((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, n + 2, n + 1),
                            (0, 0, -(n + 1), -(n + 1))))


def window_m1(n) -> RationalMatrix4:
    return window_p4_inv_next(n) @ window_p3_inv_next(n) @ WINDOW_P2_INV @ WINDOW_P1_INV


def window_m2(n) -> RationalMatrix4:
    return WINDOW_P1 @ WINDOW_P2 @ window_p3(n) @ window_p4(n)


def _assert_equal(lhs: RationalMatrix4, rhs: RationalMatrix4, what: str):
    mismatch = lhs.first_mismatch(rhs)
    if mismatch is not None:
        i, j, a, b = mismatch
        raise ExactCheckFailure(f"{what}: entry ({i+1},{j+1}) is {a}, expected {b}")


def jordan_verify() -> dict:
    """Exact checks: P P^-1 = I, P^-1 D P = J, det(D -+ I) = 0."""
    _assert_equal(BASIS_P @ BASIS_P_INV, RationalMatrix4.identity(), "P * P^-1")
    _assert_equal(BASIS_P_INV @ BASIS_P, RationalMatrix4.identity(), "P^-1 * P")
    _assert_equal(BASIS_P_INV @ COMPANION_D @ BASIS_P, JORDAN_J, "P^-1 D P")
    det_minus = (COMPANION_D - RationalMatrix4.identity()).det()
    det_plus = (COMPANION_D - RationalMatrix4.diagonal((-1, -1, -1, -1))).det()
    if det_minus != 0 or det_plus != 0:
        raise ExactCheckFailure(f"det(D-I)={det_minus}, det(D+I)={det_plus}; both must vanish")
    # the printed closed-form inverses of the n-dependent window factors
    for n in (1, 2, 5, 17):
        _assert_equal(window_p3(n + 1) @ window_p3_inv_next(n), RationalMatrix4.identity(),
                      f"P3(n+1) P3^-1(n+1) at n={n}")
        _assert_equal(window_p4(n + 1) @ window_p4_inv_next(n), RationalMatrix4.identity(),
                      f"P4(n+1) P4^-1(n+1) at n={n}")
    return {"jordan_form": [[float(x) for x in row] for row in JORDAN_J.rows],
            "det_D_minus_I": 0.0, "det_D_plus_I": 0.0, "all_exact": True}


def window_transform(n: int) -> RationalMatrix4:
    """M1(n) J M2(n), asserted equal to diag(1, 1+1/n, -1, -(1+1/n)) exactly."""
    if n < 1:
        raise ValueError("window transform is defined for n >= 1")
    product = window_m1(n) @ JORDAN_J @ window_m2(n)
    q = Fraction(1, 1) + Fraction(1, n)
    expected = RationalMatrix4.diagonal((1, q, -1, -q))
    _assert_equal(product, expected, f"M1({n}) J M2({n})")
    return product


# ---------------------------------------------------------------------------
# nu-dependent objects (complex floating point)
# ---------------------------------------------------------------------------

@dataclass
class CompanionState:
    """Window vector z_n = (a_n, a_{n+1}, a_{n+2}, a_{n+3}) of the recurrence."""

    z: np.ndarray
    n: int
    nu: complex
    kappa: float


def companion_step(s: CompanionState) -> CompanionState:
    """Advance z by D + T(n); the last component applies the scalar recurrence."""
    p1, p2 = recurrence_weights(s.n, s.nu, s.kappa)
    z = s.z
    new = np.empty(4, dtype=complex)
    new[:3] = z[1:]
    new[3] = (2.0 - p1) * z[2] - (1.0 + p2) * z[0]
    return CompanionState(z=new, n=s.n + 1, nu=s.nu, kappa=s.kappa)


def companion_matrix(n, nu: complex, kappa: float) -> np.ndarray:
    """D + T(n) as a complex matrix."""
    p1, p2 = recurrence_weights(n, nu, kappa)
    m = COMPANION_D.to_complex()
    m[3, 0] += -p2
    m[3, 2] += -p1
    return m


def ttilde_closed_form(n, nu: complex, kappa: float) -> np.ndarray:
    """Verified closed form of the transformed off-diagonal part.

    The product M1(n) P^-1 T(n) P M2(n) has rank one:
        rows scale as (n+4, -(n+1), n+4, -(n+1)),
        columns as (A, B, -A, -B) with A = (p1+p2)/4 and
        B = A + (2 p1 + p2)/(2n).
    """
    p1, p2 = recurrence_weights(n, nu, kappa)
    A = (p1 + p2) / 4.0
    B = A + (2.0 * p1 + p2) / (2.0 * n)
    col = np.array([n + 4.0, -(n + 1.0), n + 4.0, -(n + 1.0)], dtype=complex)
    row = np.array([A, B, -A, -B], dtype=complex)
    return np.outer(col, row)


def ttilde_legacy_entry_11(n, nu: complex, kappa: float) -> complex:
    """Top-left entry as quoted in the source write-up: (n+4)(2 p1 + p2)/4.

    Does not match the matrix product (whose (1,1) entry is (n+4)(p1+p2)/4);
    kept for the documented-discrepancy report.
    """
    p1, p2 = recurrence_weights(n, nu, kappa)
    return (n + 4.0) * (2.0 * p1 + p2) / 4.0


def ttilde_build(n, nu: complex, kappa: float, check_tol: float = 1e-10) -> dict:
    """T~(n) = M1(n) P^-1 T(n) P M2(n) by matrix products, cross-checked.

    The product is compared entrywise against the verified rank-one closed
    form; the report also carries the quoted-at-source (1,1) value and a flag
    recording that it disagrees with the product.
    """
    p1, p2 = recurrence_weights(n, nu, kappa)
    T = np.zeros((4, 4), dtype=complex)
    T[3, 0] = -p2
    T[3, 2] = -p1
    m1 = window_m1(n).to_complex()
    m2 = window_m2(n).to_complex()
    product = m1 @ BASIS_P_INV.to_complex() @ T @ BASIS_P.to_complex() @ m2
    closed = ttilde_closed_form(n, nu, kappa)
    scale = max(np.max(np.abs(product)), 1.0)
    err = np.max(np.abs(product - closed)) / scale
    if err > check_tol:
        i, j = np.unravel_index(np.argmax(np.abs(product - closed)), (4, 4))
        raise ExactCheckFailure(
            f"T~({n}) product vs closed form differ by {err:.2e} at entry ({i+1},{j+1})")
    legacy = ttilde_legacy_entry_11(n, nu, kappa)
    return {
        "matrix": product,
        "closed_form_rel_err": float(err),
        "legacy_entry_11": legacy,
        "legacy_entry_11_agrees": bool(abs(product[0, 0] - legacy) <= check_tol * scale),
    }


def dtilde_diagonal(n) -> np.ndarray:
    q = 1.0 + 1.0 / n
    return np.array([1.0, q, -1.0, -q])


def growth_profile(nu: complex, kappa: float, n_max: int,
                   start: int = 2, diagonal_only: bool = False):
    """Iterate y_{n+1} = (D~(n) + T~(n)) y_n from a unit vector e_start.

    Norms are tracked in log space (the vector is renormalized each step), so
    unbounded growth never overflows.  Returns (ns, log_norms).
    """
    if n_max < 2:
        raise ValueError("need n_max >= 2")
    if start not in (1, 2, 3, 4):
        raise ValueError("start selects a unit vector e_1..e_4")
    y = np.zeros(4, dtype=complex)
    y[start - 1] = 1.0
    log_norm = 0.0
    ns = [1]
    logs = [0.0]
    for n in range(1, n_max):
        step = np.diag(dtilde_diagonal(n)).astype(complex)
        if not diagonal_only:
            # the closed form equals the exact matrix product (cross-checked
            # in ttilde_build); it avoids per-step rational matrix algebra
            step = step + ttilde_closed_form(n, nu, kappa)
        y = step @ y
        scale = np.linalg.norm(y)
        if scale == 0.0:
            log_norm = -np.inf
        else:
            log_norm += np.log(scale)
            y = y / scale
        ns.append(n + 1)
        logs.append(log_norm)
    return np.array(ns), np.array(logs)
