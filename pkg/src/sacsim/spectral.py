"""Truncated Fourier fields on the 2D torus [0, 2*pi)^2.

Storage convention: a field is kept as its plain Fourier coefficients
``c_k`` with ``f(x) = sum_k c_k exp(i k.x)`` on the square lattice
``|k_1|, |k_2| <= K``.  The orthonormal basis ``e_k = exp(i k.x) / (2 pi)``
is only used at the boundaries (noise amplitudes, ``from_basis`` /
``basis_coefficients``); the factor between the two is ``BASIS_SCALE``.

Transforms go through ``scipy.fft.rfft2`` on an ``N x N`` collocation grid,
so only the ``k_2 >= 0`` half of the lattice is handed to the FFT.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import fft as sfft

BASIS_SCALE = 2.0 * math.pi  # (e_k, f) = BASIS_SCALE * c_k
AREA = 4.0 * math.pi**2
HERMITIAN_TOL = 1e-10


class HermitianError(ValueError):
    """Raised when a coefficient array does not describe a real field."""


@dataclass(frozen=True)
class TorusGrid:
    """Mode lattice ``|k_i| <= k_max`` plus an ``n x n`` collocation grid."""

    k_max: int
    n: int

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if self.n < 2 * self.k_max + 2:
            raise ValueError(f"grid size n={self.n} too small for k_max={self.k_max} (need n >= 2*k_max+2)")

    @classmethod
    def for_cubic(cls, k_max: int) -> "TorusGrid":
        """Smallest FFT-friendly even grid on which the cube is alias-free."""
        n = sfft.next_fast_len(4 * k_max + 2, real=True)
        if n % 2:
            n += 1
        return cls(k_max, max(n, 2 * k_max + 2))

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.k_max + 1, 2 * self.k_max + 1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(-self.k_max, self.k_max + 1)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        return k1, k2

    @cached_property
    def ksq(self) -> np.ndarray:
        """Integer |k|^2 on the lattice."""
        k1, k2 = self.wavenumbers
        return k1 * k1 + k2 * k2

    @cached_property
    def dealias_cut(self) -> int:
        return self.n // 3

    @cached_property
    def _rows(self) -> np.ndarray:
        # row index in the FFT layout for k_1 = -K..K
        return np.arange(-self.k_max, self.k_max + 1) % self.n

    @cached_property
    def _keep(self) -> int:
        # 2/3 rule: modes with |k_i| > n // 3 are dropped after a product
        return min(self.k_max, self.dealias_cut)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        x = 2.0 * math.pi * np.arange(self.n) / self.n
        return np.meshgrid(x, x, indexing="ij")

    # --- array-level transforms, no validation -------------------------------
    def to_half(self, coeffs: np.ndarray) -> np.ndarray:
        """Scatter square-lattice coefficients into an rfft2 half spectrum."""
        K = self.k_max
        lead = coeffs.shape[:-2]
        half = np.zeros(lead + (self.n, self.n // 2 + 1), dtype=complex)
        half[..., self._rows, : K + 1] = coeffs[..., :, K:]
        return half

    def from_half(self, half: np.ndarray, keep: int | None = None) -> np.ndarray:
        """Gather the square lattice back out of an rfft2 half spectrum."""
        K = self.k_max
        keep = K if keep is None else keep
        out = np.empty(half.shape[:-2] + self.shape, dtype=complex)
        pos = half[..., self._rows, : K + 1]
        out[..., :, K:] = pos
        # c(k1, -k2) = conj c(-k1, k2)
        out[..., :, :K] = np.conj(pos[..., ::-1, K:0:-1])
        if keep < K:
            k1, k2 = self.wavenumbers
            out[..., (np.abs(k1) > keep) | (np.abs(k2) > keep)] = 0.0
        return out

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Physical values on the collocation grid (batched over leading axes)."""
        n = self.n
        return sfft.irfft2(self.to_half(coeffs), s=(n, n), workers=-1) * (n * n)

    def analyze(self, values: np.ndarray, dealias: bool = False) -> np.ndarray:
        n = self.n
        half = sfft.rfft2(values, workers=-1) / (n * n)
        return self.from_half(half, keep=self._keep if dealias else None)

    # --- Littlewood-Paley bookkeeping ----------------------------------------
    @cached_property
    def n_blocks(self) -> int:
        """Number of dyadic blocks touching the lattice (q = 0 .. n_blocks-1)."""
        top = 2 * self.k_max * self.k_max
        q = 0
        while top >= 4 ** q:  # block q+1 starts at |k|^2 = 4^q
            q += 1
        return q + 1

    @cached_property
    def block_index(self) -> np.ndarray:
        """Block number of every lattice mode: 2^(q-1) <= |k| < 2^q, q=0 for k=0."""
        ksq = self.ksq
        q = np.zeros(ksq.shape, dtype=int)
        nz = ksq > 0
        # |k|^2 in [4^(q-1), 4^q)  <=>  q = floor(log4 |k|^2) + 1, done in integers
        qs = np.zeros(ksq[nz].shape, dtype=int)
        v = ksq[nz].copy()
        while np.any(v >= 1):
            qs += v >= 1
            v //= 4
        q[nz] = qs
        return q


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real scalar field on the torus stored by plain Fourier coefficients."""

    coeffs: np.ndarray
    grid: TorusGrid = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match lattice {self.grid.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def k_max(self) -> int:
        return self.grid.k_max

    @property
    def grid_size(self) -> int:
        return self.grid.n

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralField":
        return cls(np.zeros(grid.shape, dtype=complex), grid)

    @classmethod
    def from_basis(cls, basis_coeffs: np.ndarray, grid: TorusGrid) -> "SpectralField":
        """Build from coefficients against the orthonormal basis e_k."""
        return cls(np.asarray(basis_coeffs) / BASIS_SCALE, grid)

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: TorusGrid) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.n):
            raise ValueError(f"expected {(grid.n, grid.n)} samples, got {values.shape}")
        return cls(grid.analyze(values), grid)

    @classmethod
    def from_function(cls, func, grid: TorusGrid) -> "SpectralField":
        x1, x2 = grid.points()
        return cls.from_physical(np.broadcast_to(func(x1, x2), x1.shape), grid)

    @classmethod
    def random(cls, grid: TorusGrid, rng: np.random.Generator, decay: float = 0.0) -> "SpectralField":
        """Gaussian field with independent modes of standard deviation (1+|k|^2)^(-decay/2)."""
        w = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        w *= (1.0 + grid.ksq) ** (-decay / 2.0)
        w = 0.5 * (w + np.conj(w[::-1, ::-1]))
        return cls(w, grid)

    @property
    def basis_coefficients(self) -> np.ndarray:
        return self.coeffs * BASIS_SCALE

    def hermitian_defect(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(c - np.conj(c[::-1, ::-1]))))

    def check_hermitian(self, tol: float = HERMITIAN_TOL) -> None:
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        defect = self.hermitian_defect()
        if defect > tol * scale:
            raise HermitianError(f"field is not real-valued: Hermitian defect {defect:.3e}")

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(coeffs, self.grid)

    def resample(self, grid: TorusGrid) -> "SpectralField":
        """Pad or truncate onto another lattice (modes outside are dropped)."""
        out = np.zeros(grid.shape, dtype=complex)
        m = min(self.k_max, grid.k_max)
        src = self.coeffs[self.k_max - m: self.k_max + m + 1, self.k_max - m: self.k_max + m + 1]
        out[grid.k_max - m: grid.k_max + m + 1, grid.k_max - m: grid.k_max + m + 1] = src
        return SpectralField(out, grid)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class BesovParams:
    """Exponents (p, r, s) of B^s_{p,r}; ``s_bar = 2 s + 2 / p``."""

    p: float
    r: float
    s: float
    paper_regime: bool = False

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p, self.r, self.s)):
            raise ValueError(f"Besov exponents must be finite, got {(self.p, self.r, self.s)}")
        if self.p < 1 or self.r < 1:
            raise ValueError(f"need p, r >= 1, got p={self.p}, r={self.r}")
        if self.paper_regime:
            if self.p < 4:
                raise ValueError(f"observable regime needs p >= 4, got {self.p}")
            if not (-2.0 / (7.0 * self.p) < self.s < 0.0):
                raise ValueError(f"observable regime needs -2/(7p) < s < 0, got s={self.s}")

    @property
    def s_bar(self) -> float:
        return 2.0 * self.s + 2.0 / self.p

    def with_s(self, s: float) -> "BesovParams":
        return BesovParams(self.p, self.r, s)


@dataclass(frozen=True)
class TrajectoryNorm:
    """Sup over [delta, T] of the B^s norm and the L^p-in-time B^{s_bar} norm."""

    sup_besov: float
    lp_time_besov: float
    sample_times: list


# --- operations ---------------------------------------------------------------

def to_physical(f: SpectralField) -> np.ndarray:
    f.check_hermitian()
    return f.grid.synthesize(f.coeffs)


def from_physical(values: np.ndarray, grid: TorusGrid) -> SpectralField:
    return SpectralField.from_physical(values, grid)


def lp_block(f: SpectralField, q: int) -> SpectralField:
    """Littlewood-Paley block: modes with 2^(q-1) <= |k| < 2^q (only k = 0 for q = 0)."""
    if q < 0:
        raise ValueError(f"block index must be >= 0, got {q}")
    return f.with_coeffs(np.where(f.grid.block_index == q, f.coeffs, 0.0))


def _lp(values: np.ndarray, p: float, n: int) -> np.ndarray:
    w = AREA / (n * n)
    a = np.abs(values)
    if p == 2:
        s = np.einsum("...ij,...ij->...", a, a)
    elif p == 4:
        a2 = a * a
        s = np.einsum("...ij,...ij->...", a2, a2)
    else:
        s = np.sum(a ** p, axis=(-2, -1))
    return (w * s) ** (1.0 / p)


def lp_norm(f: SpectralField, p: float) -> float:
    """L^p(T^2) norm by collocation quadrature on the field's grid."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(_lp(to_physical(f), p, f.grid.n))


def block_lp_norms(coeffs: np.ndarray, grid: TorusGrid, p: float) -> np.ndarray:
    """||Delta_q f||_{L^p} for every block q touching the lattice."""
    blocks = np.zeros((grid.n_blocks,) + grid.shape, dtype=complex)
    idx = grid.block_index
    for q in range(grid.n_blocks):
        sel = idx == q
        blocks[q][sel] = coeffs[sel]
    return _lp(grid.synthesize(blocks), p, grid.n)


def besov_from_blocks(block_norms: np.ndarray, r: float, s: float) -> float:
    q = np.arange(len(block_norms))
    terms = 2.0 ** (q * r * s) * block_norms ** r
    return float(np.sum(terms) ** (1.0 / r))


def besov_norm(f: SpectralField, params: BesovParams) -> float:
    """(sum_q 2^(q r s) ||Delta_q f||_{L^p}^r)^(1/r), truncated at the last nonempty block."""
    f.check_hermitian()
    return besov_from_blocks(block_lp_norms(f.coeffs, f.grid, params.p), params.r, params.s)


def pointwise_cube(f: SpectralField) -> SpectralField:
    """Galerkin cube: cube on the grid, transform back, 2/3-rule truncation.

    Exact on the retained lattice when ``n > 4 k_max`` (see ``TorusGrid.for_cubic``).
    """
    u = to_physical(f)
    return f.with_coeffs(f.grid.analyze(u * u * u, dealias=True))


def semigroup_apply(f: SpectralField, t: float, mass: float) -> SpectralField:
    """exp(t (Laplacian - mass)) applied mode by mode."""
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    return f.with_coeffs(f.coeffs * np.exp(-t * (mass + f.grid.ksq)))


@dataclass
class SmoothingReport:
    sup_ratio: float
    slope: float
    passed: bool
    times: np.ndarray
    ratios: np.ndarray


def check_smoothing_estimate(params_lo: BesovParams, params_hi: BesovParams, trials: int,
                             grid: TorusGrid | None = None, seed: int = 0,
                             fields: list[SpectralField] | None = None,
                             n_times: int = 25) -> SmoothingReport:
    """Empirical constant in ||e^{t Lap} x||_{B^s} <= C t^{(s_lo - s)/2} ||x||_{B^{s_lo}}.

    Sweeps t over a log grid in [1e-4, 1]; the report fails when the worst
    ratio keeps growing as t -> 0 (log-log slope against 1/t above 0.05 on
    the small-t half of the grid).
    """
    s_lo, s_hi = params_lo.s, params_hi.s
    if s_lo >= s_hi:
        raise ValueError(f"need s_lo < s_hi, got {s_lo} >= {s_hi}")
    if (params_lo.p, params_lo.r) != (params_hi.p, params_hi.r):
        raise ValueError("smoothing check needs matching p and r")
    if fields is None:
        grid = grid or TorusGrid.for_cubic(32)
        rng = np.random.default_rng(seed)
        fields = [SpectralField.random(grid, rng) for _ in range(trials)]
    times = np.logspace(-4, 0, n_times)
    ratios = np.zeros_like(times)
    for f in fields:
        denom = besov_norm(f, params_lo)
        if denom == 0.0:
            continue
        for i, t in enumerate(times):
            num = besov_norm(semigroup_apply(f, t, 0.0), params_hi)
            ratios[i] = max(ratios[i], num * t ** ((s_hi - s_lo) / 2.0) / denom)
    half = slice(0, n_times // 2 + 1)
    pos = ratios[half] > 0
    if pos.sum() >= 2:
        slope = -float(np.polyfit(np.log(times[half][pos]), np.log(ratios[half][pos]), 1)[0])
    else:
        slope = -math.inf
    sup = float(ratios.max())
    return SmoothingReport(sup, slope, bool(math.isfinite(sup) and slope <= 0.05), times, ratios)


# --- serialization --------------------------------------------------------------

def field_to_bytes(f: SpectralField) -> bytes:
    """Header (k_max, n) as little-endian int64, then interleaved (re, im) float64, row-major k."""
    head = struct.pack("<qq", f.k_max, f.grid.n)
    body = np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes()
    return head + body


def field_from_bytes(data: bytes) -> SpectralField:
    k_max, n = struct.unpack_from("<qq", data, 0)
    grid = TorusGrid(k_max, n)
    c = np.frombuffer(data, dtype="<c16", offset=16)
    if c.size != grid.shape[0] * grid.shape[1]:
        raise ValueError(f"payload holds {c.size} coefficients, expected {grid.shape[0] * grid.shape[1]}")
    return SpectralField(c.reshape(grid.shape).copy(), grid)


def write_field(f: SpectralField, path: str | Path) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path: str | Path) -> SpectralField:
    return field_from_bytes(Path(path).read_bytes())


def write_physical_csv(f: SpectralField, path: str | Path) -> None:
    x1, x2 = f.grid.points()
    u = to_physical(f)
    with open(path, "w") as fh:
        fh.write("x1,x2,value\n")
        for a, b, v in zip(x1.ravel(), x2.ravel(), u.ravel()):
            fh.write(f"{float(a)!r},{float(b)!r},{float(v)!r}\n")
