"""Semi-analytical dual-media radial well test model.

Solves the dimensionless two-continuum (fracture/matrix) radial diffusivity
system with pseudo-steady-state cross-flow, wellbore storage and skin, in
Laplace space, and inverts numerically with the Stehfest algorithm. Serves
as the pressure-behavior reference the grid simulator is checked against.

All pressures here are dimensionless drawdowns; the outer boundary is
infinite acting and the initial condition is zero everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import k0e, k1e

# Below this matrix mobility fraction the two-mode solve is numerically
# meaningless and the single-continuum (storage-only matrix) closed form
# applies.
KM0_CLOSED_FORM = 1e-12


class DomainError(ValueError):
    """Parameters left the model's admissible domain."""


@dataclass(frozen=True)
class DimensionlessParams:
    """Dimensionless parameter set of the dual-media radial model.

    omega_f/omega_m: storage coefficients (sum to 1); lambda_ip: cross-flow
    (interporosity) coefficient; kf0/km0: mobility fractions (sum to 1);
    cd: wellbore storage coefficient; skin: mechanical skin factor.
    """

    omega_f: float
    omega_m: float
    lambda_ip: float
    kf0: float
    km0: float
    cd: float = 0.0
    skin: float = 0.0

    def __post_init__(self):
        if abs(self.omega_f + self.omega_m - 1.0) > 1e-12:
            raise DomainError("omega_f + omega_m must equal 1")
        if abs(self.kf0 + self.km0 - 1.0) > 1e-12:
            raise DomainError("kf0 + km0 must equal 1")
        for name in ("omega_f", "omega_m", "kf0"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise DomainError(f"{name}={v} must lie in (0, 1]")
        if not (0.0 <= self.km0 < 1.0):
            raise DomainError(f"km0={self.km0} must lie in [0, 1)")
        if self.lambda_ip <= 0.0:
            raise DomainError("lambda_ip must be positive")
        if self.cd < 0.0:
            raise DomainError("cd must be non-negative")

    @classmethod
    def from_fractions(cls, omega_f: float, lambda_ip: float, kf0: float = 1.0,
                       cd: float = 0.0, skin: float = 0.0) -> "DimensionlessParams":
        """Build with the complementary fractions filled in automatically."""
        return cls(omega_f, 1.0 - omega_f, lambda_ip, kf0, 1.0 - kf0, cd, skin)


def _pwd_single_mode(s: float, q: DimensionlessParams) -> float:
    """Matrix acts as storage only (km0 = 0): classical closed form.

    f(s) folds the cross-flow into an apparent storativity; storage and
    skin compose through the standard Laplace-space wellbore identity.
    """
    om = q.omega_f
    fs = (om * (1.0 - om) * s + q.lambda_ip) / ((1.0 - om) * s + q.lambda_ip)
    x = math.sqrt(s * fs)
    # exponentially scaled Bessel ratio: the e^x factors cancel
    p_sf = k0e(x) / (s * x * k1e(x))
    num = s * p_sf + q.skin
    return num / (s * (1.0 + q.cd * s * num))


def _pwd_two_mode(s: float, q: DimensionlessParams) -> float:
    """Both continua flow (km0 > 0): two-eigenmode Bessel solution.

    Radial substitution P_Dj = A_j*K0(sqrt(sigma)*r_D) turns the coupled
    system into a 2x2 eigenproblem in sigma; the mode amplitudes and the
    wellbore pressure follow from a 3x3 linear system expressing the
    rate balance with storage and the per-continuum skin conditions.
    Columns are rescaled by e^-sqrt(sigma) (scaled Bessel functions) so
    large Laplace arguments cannot underflow.
    """
    lam = q.lambda_ip
    m11 = (q.omega_f * s + lam) / q.kf0
    m12 = -lam / q.kf0
    m21 = -lam / q.km0
    m22 = (q.omega_m * s + lam) / q.km0
    disc = (m11 - m22) ** 2 + 4.0 * m12 * m21
    if disc < 0.0 or not math.isfinite(disc):
        raise DomainError(f"mode splitting failed at s={s}")
    root = math.sqrt(disc)
    det = m11 * m22 - m12 * m21
    sigma_big = 0.5 * (m11 + m22 + root)
    # small eigenvalue via the product identity: the difference form
    # cancels catastrophically when the modes are far apart (km0 -> 0)
    sigmas = (det / sigma_big, sigma_big)
    if sigmas[0] <= 0.0:
        raise DomainError(f"non-positive mode eigenvalue at s={s}")

    a = np.zeros((3, 3))
    rhs = np.array([1.0 / s, 0.0, 0.0])
    for k, sig in enumerate(sigmas):
        x = math.sqrt(sig)
        b0 = k0e(x)
        grad = -x * k1e(x)  # d/dr_D of the scaled mode at r_D = 1
        c = q.kf0 * (m11 - sig) / lam  # matrix/fracture amplitude ratio
        sand = b0 - q.skin * grad  # sandface pressure incl. skin
        a[0, k] = -(q.kf0 + q.km0 * c) * grad
        a[1, k] = -sand
        a[2, k] = -c * sand
    a[0, 2] = q.cd * s
    a[1, 2] = 1.0
    a[2, 2] = 1.0
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"wellbore system singular at s={s}") from exc
    return float(sol[2])


def laplace_pwd(s: float, params: DimensionlessParams) -> float:
    """Laplace transform of the dimensionless wellbore pressure at real s > 0."""
    if s <= 0.0:
        raise DomainError("Laplace variable must be positive")
    if params.km0 < KM0_CLOSED_FORM:
        return _pwd_single_mode(s, params)
    return _pwd_two_mode(s, params)


@lru_cache(maxsize=None)
def stehfest_coefficients(n_terms: int) -> tuple[float, ...]:
    """Stehfest weights V_1..V_N, computed in exact rational arithmetic."""
    if n_terms % 2 != 0:
        raise ValueError("Stehfest term count must be even")
    if not (4 <= n_terms <= 20):
        raise ValueError("Stehfest term count must lie in [4, 20]")
    half = n_terms // 2
    weights = []
    for i in range(1, n_terms + 1):
        acc = Fraction(0)
        for k in range((i + 1) // 2, min(i, half) + 1):
            num = Fraction(k ** half) * math.factorial(2 * k)
            den = (
                math.factorial(half - k)
                * math.factorial(k)
                * math.factorial(k - 1)
                * math.factorial(i - k)
                * math.factorial(2 * k - i)
            )
            acc += num / den
        sign = -1 if (half + i) % 2 else 1
        weights.append(float(sign * acc))
    return tuple(weights)


def stehfest_invert(transform, t: float, n_terms: int = 12) -> float:
    """Invert a Laplace transform at time t > 0 by Stehfest summation.

    transform: callable F(s) evaluated on the real axis. Accurate for
    smooth, non-oscillatory originals such as drawdown responses.
    """
    if t <= 0.0:
        raise ValueError("time must be positive")
    weights = stehfest_coefficients(n_terms)
    ln2_t = math.log(2.0) / t
    total = 0.0
    for i, v in enumerate(weights, start=1):
        total += v * transform(i * ln2_t)
    return ln2_t * total


def type_curve(params: DimensionlessParams, t_d, n_terms: int = 12) -> np.ndarray:
    """Pressure and log-derivative curves at the given dimensionless times.

    Returns an array of rows (t_D, p_wD, t_D*dp_wD/dt_D); the derivative
    uses central differences in ln t_D (one-sided at the ends).
    """
    t_d = np.asarray(t_d, dtype=float)
    if t_d.ndim != 1 or len(t_d) < 2:
        raise ValueError("need at least 2 ascending times")
    if np.any(t_d <= 0.0) or np.any(np.diff(t_d) <= 0.0):
        raise ValueError("times must be positive and strictly ascending")
    pwd = np.array([stehfest_invert(lambda s: laplace_pwd(s, params), t, n_terms)
                    for t in t_d])
    ln_t = np.log(t_d)
    deriv = np.gradient(pwd, ln_t)
    return np.column_stack([t_d, pwd, deriv])
