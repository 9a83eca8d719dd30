"""Renormalization constants, free-field variance and Wick powers."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import digamma

from .spectral import SpectralField, to_physical

RESIDUAL_TOL = 1e-10
MAX_BISECTIONS = 200


class Flavor(enum.Enum):
    """Which linear operator the noise and the shifted equation use.

    STRONG_NOISE: A = Laplacian - (C_eps - 1) with C_eps = 3 D_eps^2 solved self-consistently.
    WEAK_NOISE:   A = Laplacian - 1, D_eps^2 taken from the plain free field.
    """

    STRONG_NOISE = "strong"
    WEAK_NOISE = "weak"


class RenormError(RuntimeError):
    pass


def radius_sq(R: float) -> int:
    """Integer bound on |k|^2 for the disc |k| <= R, forgiving float round-off in R."""
    return int(math.floor(R * R * (1.0 + 1e-12)))


def _row_sums(b: np.ndarray, m: np.ndarray) -> np.ndarray:
    """sum_{n=-m}^{m} 1/(b + n^2) via the digamma closed form of the one-sided tail."""
    y = np.sqrt(b)
    head = digamma(1.0 + 1j * y).imag
    tail = digamma(m + 1.0 + 1j * y).imag
    return 1.0 / b + 2.0 * (head - tail) / y


@lru_cache(maxsize=4096)
def _lattice_sum(a: float, r2: int) -> float:
    if r2 < 0:
        return 0.0
    k1 = np.arange(0, math.isqrt(r2) + 1, dtype=np.int64)
    rest = r2 - k1 * k1
    m = np.floor(np.sqrt(rest.astype(float))).astype(np.int64)
    m -= m * m > rest
    m += (m + 1) * (m + 1) <= rest
    rows = _row_sums(a + (k1 * k1).astype(float), m.astype(float))
    rows[1:] *= 2.0
    return math.fsum(rows)


def lattice_sum(a: float, R: float) -> float:
    """sum over k in Z^2 with |k| <= R of 1/(a + |k|^2), for a, R >= 1.

    Each row k_1 is summed in closed form, so the cost is O(R).
    """
    if not (a >= 1.0 and R >= 1.0):
        raise ValueError(f"lattice_sum needs a >= 1 and R >= 1, got a={a}, R={R}")
    return _lattice_sum(float(a), radius_sq(R))


def direct_lattice_sum(a: float, R: float) -> float:
    """Brute-force enumeration of the same sum; O(R^2), for cross-checks only."""
    r2 = radius_sq(R)
    kmax = math.isqrt(r2)
    k = np.arange(-kmax, kmax + 1)
    total = []
    for k1 in k:
        k2 = k[k1 * k1 + k * k <= r2]
        total.append(math.fsum(1.0 / (a + k1 * k1 + k2 * k2)))
    return math.fsum(total)


@dataclass(frozen=True)
class LatticeSumReport:
    a: float
    R: float
    sum_value: float
    integral_value: float
    discrepancy: float
    bound_rhs_shape: float

    @property
    def ratio(self) -> float:
        return self.discrepancy / self.bound_rhs_shape


def lattice_report(a: float, R: float) -> LatticeSumReport:
    s = lattice_sum(a, R)
    integral = math.pi * math.log1p(R * R / a)
    shape = min(1.0, R / math.sqrt(a)) / math.sqrt(a)
    return LatticeSumReport(a, R, s, integral, abs(s - integral), shape)


def check_log_bound(pairs) -> tuple[list[LatticeSumReport], float]:
    """Reports for every (a, R) and the empirical constant max(discrepancy / shape)."""
    reports = [lattice_report(a, R) for a, R in pairs]
    return reports, max((rep.ratio for rep in reports), default=0.0)


@dataclass(frozen=True)
class RenormState:
    epsilon: float
    sigma: float
    flavor: Flavor
    c_eps: float | None
    d_eps_sq: float
    mass: float

    @property
    def cutoff(self) -> float:
        return 1.0 / self.epsilon

    @property
    def radius_sq(self) -> int:
        return radius_sq(self.cutoff)


def _validate(epsilon: float, sigma: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")


def fixed_point_residual(c: float, epsilon: float, sigma: float) -> float:
    """C - (3 sigma^2 / 8 pi^2) sum_{|k|<=1/eps} 1/(C - 1 + |k|^2)."""
    return c - 3.0 * sigma**2 / (8.0 * math.pi**2) * _lattice_sum(c - 1.0, radius_sq(1.0 / epsilon))


def solve_renorm_constant(epsilon: float, sigma: float) -> RenormState:
    """Unique root C > 1 of C = 3 D^2(C), by bisection on (1, upper]."""
    _validate(epsilon, sigma)
    if sigma == 0.0:
        raise RenormError("no renormalization constant C > 1 exists for sigma = 0")
    r2 = radius_sq(1.0 / epsilon)
    pref = 3.0 * sigma**2 / (8.0 * math.pi**2)
    lo = 1.0
    hi = max(2.0, pref * _lattice_sum(1.0, r2) + 1.0)
    if fixed_point_residual(hi, epsilon, sigma) < 0:
        raise RenormError(f"could not bracket the fixed point below {hi}")
    c = hi
    for _ in range(MAX_BISECTIONS):
        c = 0.5 * (lo + hi)
        if c <= lo or c >= hi:
            break
        res = fixed_point_residual(c, epsilon, sigma)
        if abs(res) < 0.1 * RESIDUAL_TOL * c:
            break
        if res < 0:
            lo = c
        else:
            hi = c
    if not c > 1.0 or abs(fixed_point_residual(c, epsilon, sigma)) >= RESIDUAL_TOL * c:
        raise RenormError(f"bisection failed to converge for epsilon={epsilon}, sigma={sigma}")
    return RenormState(epsilon, sigma, Flavor.STRONG_NOISE, c, c / 3.0, c - 1.0)


def free_field_variance(epsilon: float, sigma: float, flavor: Flavor, c_eps: float | None = None) -> float:
    """Pointwise variance D^2 of the stationary free field."""
    _validate(epsilon, sigma)
    if flavor is Flavor.STRONG_NOISE:
        if c_eps is None:
            raise ValueError("strong-noise variance needs the solved constant c_eps")
        return c_eps / 3.0
    if sigma == 0.0:
        return 0.0
    return sigma**2 / (8.0 * math.pi**2) * _lattice_sum(1.0, radius_sq(1.0 / epsilon))


def weak_noise_state(epsilon: float, sigma: float) -> RenormState:
    """State for A = Laplacian - 1: no renormalization constant, mass 1."""
    return RenormState(epsilon, sigma, Flavor.WEAK_NOISE, None,
                       free_field_variance(epsilon, sigma, Flavor.WEAK_NOISE), 1.0)


def renorm_state(epsilon: float, sigma: float, flavor: Flavor) -> RenormState:
    if flavor is Flavor.STRONG_NOISE:
        return solve_renorm_constant(epsilon, sigma)
    return weak_noise_state(epsilon, sigma)


def asymptotic_c_eps(epsilon: float, sigma: float) -> float:
    """Leading-order growth (3 / 4 pi) sigma^2 log(1/eps) of the renormalization constant."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return 3.0 / (4.0 * math.pi) * sigma**2 * math.log(1.0 / epsilon)


def hermite_wick(x, n: int, d_sq: float):
    """:x^n: for n <= 3 with respect to a centred Gaussian of variance d_sq."""
    if n == 1:
        return x
    if n == 2:
        return x * x - d_sq
    if n == 3:
        return x * x * x - 3.0 * d_sq * x
    raise ValueError(f"Wick powers are implemented for n in {{1, 2, 3}}, got {n}")


def wick_power(f: SpectralField, n: int, d_sq: float) -> SpectralField:
    if n not in (1, 2, 3):
        raise ValueError(f"Wick powers are implemented for n in {{1, 2, 3}}, got {n}")
    if d_sq < 0:
        raise ValueError(f"variance must be >= 0, got {d_sq}")
    if n == 1:
        return f
    u = to_physical(f)
    return f.with_coeffs(f.grid.analyze(hermite_wick(u, n, d_sq), dealias=True))
