"""Truncated cylindrical Wiener noise and the stationary stochastic convolution.

Modes are indexed by the disc ``|k| <= 1/eps`` inside the field lattice and
carried as coefficients against the orthonormal basis ``e_k``.  Only the half
lattice ``k_1 > 0 or (k_1 == 0 and k_2 > 0)`` plus ``k = 0`` is ever drawn;
the rest follows from ``z(-k) = conj z(k)``.

Complex Brownian motions have ``E|beta_k(t)|^2 = t`` (real and imaginary
parts of variance t/2 each); ``beta_0`` is real with variance t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import exprel

from .renorm import RenormState, hermite_wick, radius_sq, wick_power
from .spectral import BASIS_SCALE, SpectralField, TorusGrid

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Per-realization seed: splitmix64 of (master seed + realization index) mod 2^64."""
    return splitmix64((int(master_seed) + int(index)) & _MASK64)


def make_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Innovation stream and companion stream for one realization."""
    a, b = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


@dataclass(frozen=True, eq=False)
class NoiseLattice:
    """Index bookkeeping for the noise disc inside a field lattice."""

    grid: TorusGrid
    r2: int
    half: tuple[np.ndarray, np.ndarray]
    mirror: tuple[np.ndarray, np.ndarray]
    center: tuple[int, int]
    ksq_half: np.ndarray

    @property
    def n_modes(self) -> int:
        return 2 * len(self.ksq_half) + 1

    @property
    def disc(self) -> np.ndarray:
        return self.grid.ksq <= self.r2


@lru_cache(maxsize=64)
def noise_lattice(grid: TorusGrid, r2: int) -> NoiseLattice:
    if r2 < 0 or math.isqrt(r2) > grid.k_max:
        raise ValueError(f"noise disc |k|^2 <= {r2} does not fit inside k_max={grid.k_max}")
    k1, k2 = grid.wavenumbers
    K = grid.k_max
    sel = ((k1 > 0) | ((k1 == 0) & (k2 > 0))) & (grid.ksq <= r2)
    i1, i2 = np.nonzero(sel)
    return NoiseLattice(grid, r2, (i1, i2), (2 * K - i1, 2 * K - i2), (K, K), grid.ksq[sel].astype(float))


def _draw(lat: NoiseLattice, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Standard complex normals on the half lattice and a real normal at k = 0."""
    g = rng.standard_normal(2 * len(lat.ksq_half) + 1)
    half = (g[1::2] + 1j * g[2::2]) * math.sqrt(0.5)
    return float(g[0]), half


def _assemble(lat: NoiseLattice, zero: float, half: np.ndarray) -> np.ndarray:
    out = np.zeros(lat.grid.shape, dtype=complex)
    out[lat.half] = half
    out[lat.mirror] = np.conj(half)
    out[lat.center] = zero
    return out


def _gauss_var(rate, h):
    """int_0^h exp(-2 rate s) ds with rate possibly zero or negative: h * exprel(-2 rate h)."""
    return h * exprel(-2.0 * np.asarray(rate, dtype=float) * h)


def _cross_var(r1, r2, h):
    return h * exprel(-(np.asarray(r1, dtype=float) + r2) * h)


@dataclass(frozen=True, eq=False)
class NoiseState:
    """Current stochastic convolution z_eps plus its random streams.

    ``modes`` holds e_k-basis coefficients; the streams are shared with the
    state returned by each step, so a state should be stepped only once.
    """

    modes: np.ndarray
    renorm: RenormState
    grid: TorusGrid
    seed: int
    rng: np.random.Generator
    companion_rng: np.random.Generator
    time: float = 0.0

    @property
    def lattice(self) -> NoiseLattice:
        return noise_lattice(self.grid, self.renorm.radius_sq)

    @property
    def rates(self) -> tuple[float, np.ndarray]:
        """mu_k = mass + |k|^2 at k = 0 and on the half lattice."""
        m = self.renorm.mass
        return m, m + self.lattice.ksq_half

    def as_field(self) -> SpectralField:
        return SpectralField.from_basis(self.modes, self.grid)


def sample_stationary(renorm: RenormState, grid: TorusGrid, seed: int) -> NoiseState:
    """Draw z_eps(0) from the invariant Gaussian law of dz = A z dt + sigma dW_eps."""
    if renorm.mass <= 0:
        raise ValueError(f"stationary law needs a positive mass, got {renorm.mass}")
    rng, comp = make_streams(seed)
    lat = noise_lattice(grid, renorm.radius_sq)
    g0, gh = _draw(lat, rng)
    m = renorm.mass
    sd0 = renorm.sigma * math.sqrt(0.5 / m)
    sdh = renorm.sigma * np.sqrt(0.5 / (m + lat.ksq_half))
    modes = _assemble(lat, sd0 * g0, sdh * gh)
    return NoiseState(modes, renorm, grid, int(seed), rng, comp, 0.0)


@dataclass(frozen=True, eq=False)
class OUCoefficients:
    """Per-mode decay and innovation scale of the exact OU update over one step h."""

    h: float
    decay0: float
    decay: np.ndarray
    scale0: float
    scale: np.ndarray

    @classmethod
    def build(cls, state: NoiseState, h: float) -> "OUCoefficients":
        m0, mh = state.rates
        s = state.renorm.sigma
        return cls(h, math.exp(-m0 * h), np.exp(-mh * h),
                   s * math.sqrt(float(_gauss_var(m0, h))), s * np.sqrt(_gauss_var(mh, h)))


@dataclass(frozen=True, eq=False)
class CompanionCoefficients:
    """Joint law of the OU innovation at rates mu_k and a second rate nu_k on one Brownian path.

    With xi the standard normal driving z, the companion innovation is
    sigma * (loading * xi + spread * eta) for an independent eta.
    """

    loading0: float
    loading: np.ndarray
    spread0: float
    spread: np.ndarray

    @classmethod
    def build(cls, state: NoiseState, h: float, nu0: float, nu: np.ndarray) -> "CompanionCoefficients":
        m0, mh = state.rates
        s = state.renorm.sigma

        def pair(mu, nu_):
            vz = _gauss_var(mu, h)
            vu = _gauss_var(nu_, h)
            cov = _cross_var(mu, nu_, h)
            load = cov / np.sqrt(vz)
            spread = np.sqrt(np.maximum(vu - load * load, 0.0))
            return s * load, s * spread

        l0, s0 = pair(m0, nu0)
        lh, sh = pair(mh, nu)
        return cls(float(l0), lh, float(s0), sh)


def ou_step(state: NoiseState, h: float, coeffs: OUCoefficients | None = None,
            companion: CompanionCoefficients | None = None):
    """Exact-in-law OU update of every noise mode over a step h.

    Without ``companion`` returns the new state.  With it, also returns the
    e_k-basis increment int exp(-nu (t+h-s)) sigma dbeta_k(s) of a linear
    equation with rates nu_k driven by the same Brownian path.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    coeffs = coeffs or OUCoefficients.build(state, h)
    lat = state.lattice
    g0, gh = _draw(lat, state.rng)
    z = state.modes
    new0 = coeffs.decay0 * z[lat.center].real + coeffs.scale0 * g0
    newh = coeffs.decay * z[lat.half] + coeffs.scale * gh
    new_state = replace(state, modes=_assemble(lat, new0, newh), time=state.time + h)
    if companion is None:
        return new_state
    e0, eh = _draw(lat, state.companion_rng)
    inc = _assemble(lat, companion.loading0 * g0 + companion.spread0 * e0,
                    companion.loading * gh + companion.spread * eh)
    return new_state, inc


def wiener_increment(epsilon: float, sigma: float, h: float, seed, grid: TorusGrid | None = None) -> SpectralField:
    """sigma * (W_eps(t+h) - W_eps(t)) as a field: variance h per mode against e_k."""
    if not h > 0:
        raise ValueError(f"increment length must be positive, got {h}")
    r2 = radius_sq(1.0 / epsilon)
    grid = grid or TorusGrid.for_cubic(math.isqrt(r2))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lat = noise_lattice(grid, r2)
    g0, gh = _draw(lat, rng)
    amp = sigma * math.sqrt(h)
    return SpectralField.from_basis(_assemble(lat, amp * g0, amp * gh), grid)


def wick_z_powers(state: NoiseState, n: int) -> SpectralField:
    """:z^n: of the current convolution with respect to the state's D^2."""
    return wick_power(state.as_field(), n, state.renorm.d_eps_sq)


def stationary_variance(renorm: RenormState, ksq) -> np.ndarray:
    """E|z_k|^2 = sigma^2 / (2 (mass + |k|^2))."""
    return renorm.sigma**2 / (2.0 * (renorm.mass + np.asarray(ksq, dtype=float)))


def pointwise_moments(state: NoiseState) -> np.ndarray:
    """Spatial means of :z:, :z^2:, :z^3: evaluated on the collocation grid."""
    z = state.grid.synthesize(state.modes / BASIS_SCALE)
    d = state.renorm.d_eps_sq
    return np.array([np.mean(hermite_wick(z, n, d)) for n in (1, 2, 3)])
