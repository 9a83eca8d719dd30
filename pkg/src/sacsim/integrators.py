"""Exponential integrators for the regularized, shifted and limiting equations.

All three equations are integrated in mild form: the diagonal linear part
exp(L dt) is applied exactly per mode, the polynomial drift is frozen over the
step and weighted by dt * phi_1(L dt).  Noise enters through the exact OU
increment of the same linear part (see ``noise.ou_step``).
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import exprel

from .noise import CompanionCoefficients, NoiseState, OUCoefficients, ou_step, sample_stationary
from .renorm import Flavor, RenormState
from .spectral import (AREA, BASIS_SCALE, BesovParams, SpectralField, TorusGrid, TrajectoryNorm, besov_from_blocks,
                       block_lp_norms)

BLOWUP_GUARD = 1e12
RECORD_SPACING = 0.01


class Equation(enum.Enum):
    PHI_EPS = "phi_eps"  # du = (Lap u + u - u^3) dt + sigma dW_eps
    AUX = "aux"  # v = u - z, drift written with Wick powers of z
    PSI_LAMBDA = "psi_lambda"  # dw/dt = Lap w + a_lambda w - w^3


class Scheme(enum.Enum):
    EXPONENTIAL_EULER = "exponential_euler"
    ETD2 = "etd2"  # Cox-Matthews ETD2RK; deterministic equations only


class BlowUpError(RuntimeError):
    def __init__(self, time: float, record: "TrajectoryRecord | None" = None):
        super().__init__(f"spectral magnitude exceeded {BLOWUP_GUARD:g} at t={time:.6g}")
        self.time = time
        self.record = record


def damped_growth_rate(lambda_sq: float) -> float:
    """a_lambda = 1 - 3 lambda^2 / (8 pi): net linear growth of the limit equation."""
    return 1.0 - 3.0 * lambda_sq / (8.0 * math.pi)


@dataclass
class IntegratorConfig:
    dt: float
    t_end: float
    warmup_delta: float | None = None
    scheme: Scheme = Scheme.EXPONENTIAL_EULER
    record_times: list[float] | None = None
    equation: Equation = Equation.PHI_EPS
    lambda_sq: float = 0.0

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.equation = Equation(self.equation)
        if not 0 < self.dt <= self.t_end:
            raise ValueError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        if self.warmup_delta is None:
            self.warmup_delta = 0.1 * self.t_end
        if not 0 < self.warmup_delta < self.t_end:
            raise ValueError(f"warm-up delta must lie in (0, t_end), got {self.warmup_delta}")
        if self.lambda_sq < 0:
            raise ValueError(f"lambda^2 must be >= 0, got {self.lambda_sq}")
        if self.record_times is not None:
            ts = [float(t) for t in self.record_times]
            if any(t < 0 or t > self.t_end * (1 + 1e-12) for t in ts):
                raise ValueError("record times must lie in [0, t_end]")
            self.record_times = ts

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        return n

    def record_steps(self) -> list[int]:
        if self.record_times is None:
            every = max(1, int(math.floor(RECORD_SPACING / self.dt + 1e-9)))
            steps = list(range(0, self.n_steps + 1, every))
            if steps[-1] != self.n_steps:
                steps.append(self.n_steps)
            return steps
        out = set()
        for t in self.record_times:
            i = int(round(t / self.dt))
            if abs(i * self.dt - t) > 1e-9 * max(1.0, t):
                raise ValueError(f"record time {t} is not on the time grid (dt={self.dt})")
            out.add(i)
        return sorted(out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["equation"] = self.equation.value
        return d


# --- drift and linear symbols ------------------------------------------------------

def _phi2(z: np.ndarray) -> np.ndarray:
    """(e^z - 1 - z) / z^2, with a series near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    out = (np.expm1(zs) - zs) / (zs * zs)
    series = 0.5 + z / 6.0 + z * z / 24.0 + z**3 / 120.0
    return np.where(small, series, out)


def linear_symbol(equation: Equation, grid: TorusGrid, renorm: RenormState | None = None,
                  lambda_sq: float = 0.0) -> np.ndarray:
    ksq = grid.ksq.astype(float)
    if equation is Equation.PHI_EPS:
        return 1.0 - ksq
    if equation is Equation.PSI_LAMBDA:
        return damped_growth_rate(lambda_sq) - ksq
    return -renorm.mass - ksq


def _shifted_drift(v: np.ndarray, z: np.ndarray, renorm: RenormState) -> np.ndarray:
    """Physical-space drift of v = u - z beyond the exactly integrated mass term."""
    d = renorm.d_eps_sq
    z2 = z * z - d
    z3 = z * z * z - 3.0 * d * z
    wick = v * v * v + 3.0 * v * v * z + 3.0 * v * z2 + z3
    if renorm.flavor is Flavor.STRONG_NOISE:
        return -wick
    return (2.0 - 3.0 * d) * (v + z) - wick


@dataclass(eq=False)
class _Stepper:
    """Precomputed per-mode factors for one (equation, grid, dt)."""

    equation: Equation
    grid: TorusGrid
    dt: float
    renorm: RenormState | None
    lambda_sq: float = 0.0
    scheme: Scheme = Scheme.EXPONENTIAL_EULER
    noise_coeffs: OUCoefficients | None = None
    companion: CompanionCoefficients | None = None

    def __post_init__(self):
        lin = linear_symbol(self.equation, self.grid, self.renorm, self.lambda_sq) * self.dt
        self.decay = np.exp(lin)
        self.phi1 = self.dt * exprel(lin)
        if self.scheme is Scheme.ETD2:
            if self.equation is not Equation.PSI_LAMBDA:
                raise ValueError("the ETD2 scheme is only available for the deterministic limit equation")
            self.phi2 = self.dt * _phi2(lin)

    def prepare_noise(self, noise: NoiseState) -> None:
        self.noise_coeffs = OUCoefficients.build(noise, self.dt)
        if self.equation is Equation.PHI_EPS:
            lat = noise.lattice
            nu = -linear_symbol(Equation.PHI_EPS, self.grid)
            self.companion = CompanionCoefficients.build(noise, self.dt, float(nu[lat.center]), nu[lat.half])

    def drift(self, c: np.ndarray, zc: np.ndarray | None = None) -> np.ndarray:
        g = self.grid
        if self.equation is Equation.AUX:
            v, z = g.synthesize(np.stack([c, zc]))
            return g.analyze(_shifted_drift(v, z, self.renorm), dealias=True)
        u = g.synthesize(c)
        return g.analyze(-(u * u * u), dealias=True)

    def deterministic(self, c: np.ndarray, zc: np.ndarray | None = None) -> np.ndarray:
        n0 = self.drift(c, zc)
        out = self.decay * c + self.phi1 * n0
        if self.scheme is Scheme.ETD2:
            out = out + self.phi2 * (self.drift(out) - n0)
        return out

    def step(self, c: np.ndarray, noise: NoiseState | None):
        if self.equation is Equation.PSI_LAMBDA:
            return self.deterministic(c), noise
        if self.noise_coeffs is None:
            self.prepare_noise(noise)
        if self.equation is Equation.AUX:
            new = self.deterministic(c, noise.modes / BASIS_SCALE)
            return new, ou_step(noise, self.dt, self.noise_coeffs)
        new_noise, inc = ou_step(noise, self.dt, self.noise_coeffs, self.companion)
        return self.deterministic(c) + inc / BASIS_SCALE, new_noise


def _check(c: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(c)) or np.max(np.abs(c)) > BLOWUP_GUARD:
        raise BlowUpError(t)


def step_phi_eps(u: SpectralField, noise: NoiseState, renorm: RenormState, dt: float):
    """One exponential-Euler step of du = (Lap u + u - u^3) dt + sigma dW_eps."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    st = _Stepper(Equation.PHI_EPS, u.grid, dt, renorm)
    c, noise = st.step(u.coeffs, noise)
    _check(c, noise.time)
    return u.with_coeffs(c), noise


def step_aux(v: SpectralField, noise: NoiseState, renorm: RenormState, dt: float):
    """One step of the equation for v = u - z; z advances by its exact OU law."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    st = _Stepper(Equation.AUX, v.grid, dt, renorm)
    c, noise = st.step(v.coeffs, noise)
    _check(c, noise.time)
    return v.with_coeffs(c), noise


# --- trajectories ---------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    times: np.ndarray
    besov: np.ndarray
    besov_bar: np.ndarray
    l2: np.ndarray
    max_abs: np.ndarray
    delta: float
    p: float
    final: SpectralField | None = None
    fields: list[SpectralField] | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sup_besov(self) -> float:
        """max over sampled t in [delta, T] of the B^s norm."""
        sel = self.times >= self.delta - 1e-12
        return float(np.max(self.besov[sel])) if np.any(sel) else float("nan")

    @property
    def lp_time_besov(self) -> float:
        """(int_0^T ||x(t)||_{B^{s_bar}}^p dt)^(1/p) by the trapezoid rule on the samples."""
        if len(self.times) < 2:
            return 0.0
        return float(np.trapezoid(self.besov_bar ** self.p, self.times) ** (1.0 / self.p))

    def norm(self) -> TrajectoryNorm:
        return TrajectoryNorm(self.sup_besov, self.lp_time_besov, list(self.times[self.times >= self.delta - 1e-12]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("time,besov_norm,l2_norm,max_abs\n")
            for row in zip(self.times, self.besov, self.l2, self.max_abs):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    def write(self, stem: str | Path, config: dict | None = None) -> None:
        """CSV of sampled norms plus a JSON sidecar with provenance."""
        stem = Path(stem)
        self.to_csv(stem.with_suffix(".csv"))
        side = {"seed": self.seed, "delta": self.delta, "sup_besov": self.sup_besov,
                "lp_time_besov": self.lp_time_besov, **self.meta, **(config or {})}
        stem.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=str))


def _observe(c: np.ndarray, grid: TorusGrid, besov: BesovParams):
    blocks = block_lp_norms(c, grid, besov.p)
    u = grid.synthesize(c)
    l2 = math.sqrt(AREA * float(np.sum(np.abs(c) ** 2)))
    return (besov_from_blocks(blocks, besov.r, besov.s), besov_from_blocks(blocks, besov.r, besov.s_bar),
            l2, float(np.max(np.abs(u))))


def integrate_path(equation: Equation, u0: SpectralField, renorm: RenormState | None, cfg: IntegratorConfig,
                   seed: int | None, besov: BesovParams, reference: TrajectoryRecord | None = None,
                   keep_fields: bool = False) -> TrajectoryRecord:
    """Integrate one realization from u0 to t_end, sampling norms at the record times.

    With ``reference`` (a record kept with ``keep_fields``), norms are taken of
    the difference between the solution and the reference at each record time.
    For the shifted equation the recorded field is v + z.
    """
    equation = Equation(equation)
    grid = u0.grid
    u0.check_hermitian()
    st = _Stepper(equation, grid, cfg.dt, renorm, cfg.lambda_sq,
                  cfg.scheme if equation is Equation.PSI_LAMBDA else Scheme.EXPONENTIAL_EULER)
    noise = None
    c = u0.coeffs.copy()
    if equation is not Equation.PSI_LAMBDA:
        if renorm is None or seed is None:
            raise ValueError("stochastic equations need a renorm state and a seed")
        noise = sample_stationary(renorm, grid, seed)
        if equation is Equation.AUX:
            c = c - noise.modes / BASIS_SCALE

    rec_steps = cfg.record_steps()
    if reference is not None and len(reference.fields or []) != len(rec_steps):
        raise ValueError("reference record must hold one field per record time")
    times, rows, fields = [], [], []

    def observed():
        return c + noise.modes / BASIS_SCALE if equation is Equation.AUX else c

    def record(i_rec, t):
        obs = observed()
        if keep_fields:
            fields.append(SpectralField(obs, grid))
        if reference is not None:
            obs = obs - reference.fields[i_rec].resample(grid).coeffs
        times.append(t)
        rows.append(_observe(obs, grid, besov))

    def build():
        arr = np.array(rows) if rows else np.zeros((0, 4))
        return TrajectoryRecord(np.array(times), arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], cfg.warmup_delta,
                                besov.p, SpectralField(observed(), grid), fields if keep_fields else None, seed,
                                {"equation": equation.value})

    i_rec = 0
    if rec_steps and rec_steps[0] == 0:
        record(0, 0.0)
        i_rec = 1
    for n in range(1, cfg.n_steps + 1):
        c, noise = st.step(c, noise)
        t = n * cfg.dt
        try:
            _check(c, t)
        except BlowUpError as err:
            err.record = build()
            raise
        if i_rec < len(rec_steps) and rec_steps[i_rec] == n:
            record(i_rec, t)
            i_rec += 1
    return build()


def integrate_deterministic(u0: SpectralField, lambda_sq: float, cfg: IntegratorConfig, besov: BesovParams,
                            keep_fields: bool = False) -> TrajectoryRecord:
    """Solve dw/dt = Lap w + (1 - 3 lambda^2 / 8 pi) w - w^3 from u0."""
    if lambda_sq < 0:
        raise ValueError(f"lambda^2 must be >= 0, got {lambda_sq}")
    cfg = IntegratorConfig(**{**cfg.to_dict(), "lambda_sq": lambda_sq, "equation": Equation.PSI_LAMBDA})
    return integrate_path(Equation.PSI_LAMBDA, u0, None, cfg, None, besov, keep_fields=keep_fields)


def allen_cahn_energy(w: SpectralField, growth: float) -> float:
    """int 1/2 |grad w|^2 - (growth/2) w^2 + 1/4 w^4 over the torus."""
    c = w.coeffs
    grad = AREA * float(np.sum(w.grid.ksq * np.abs(c) ** 2))
    mass = AREA * float(np.sum(np.abs(c) ** 2))
    u = w.grid.synthesize(c)
    quartic = AREA / w.grid.n**2 * float(np.sum(u**4))
    return 0.5 * grad - 0.5 * growth * mass + 0.25 * quartic


def scalar_allen_cahn(c0: float, growth: float, t: float) -> float:
    """Exact solution of w' = growth * w - w^3, w(0) = c0."""
    if growth == 0.0:
        return c0 / math.sqrt(1.0 + 2.0 * c0 * c0 * t)
    e = math.exp(2.0 * growth * t)
    return c0 * math.exp(growth * t) / math.sqrt(1.0 + c0 * c0 * (e - 1.0) / growth)
