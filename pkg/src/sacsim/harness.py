"""Epsilon sweeps with Monte-Carlo replication, and their on-disk reports."""
from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .integrators import (BlowUpError, Equation, IntegratorConfig, TrajectoryRecord, integrate_deterministic,
                          integrate_path)
from .noise import derive_seed
from .renorm import Flavor, RenormError, RenormState, renorm_state
from .spectral import BesovParams, SpectralField, TorusGrid

MIN_EPSILON = 2.0**-9
DEFAULT_BESOV = BesovParams(4.0, 2.0, -1.0 / 16.0, paper_regime=True)
DELTA_FRACTIONS = (0.05, 0.1, 0.2)
SWEEP_COLUMNS = ["eps", "sigma", "c_eps", "d_eps_sq", "mean_norm", "stderr", "n", "failed"]


class ScheduleKind(enum.Enum):
    CONSTANT = "constant"
    CRITICAL = "critical"
    POWER = "power"


@dataclass(frozen=True)
class NoiseSchedule:
    """sigma(eps) = sigma0, lambda / sqrt(log 1/eps), or eps^tau."""

    kind: ScheduleKind
    value: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.kind is ScheduleKind.POWER and not self.value > 0:
            raise ValueError(f"power-law exponent must be > 0, got {self.value}")
        if self.value < 0 or not math.isfinite(self.value):
            raise ValueError(f"schedule parameter must be finite and >= 0, got {self.value}")

    @classmethod
    def constant(cls, sigma0: float) -> "NoiseSchedule":
        return cls(ScheduleKind.CONSTANT, sigma0)

    @classmethod
    def critical(cls, lam: float) -> "NoiseSchedule":
        return cls(ScheduleKind.CRITICAL, lam)

    @classmethod
    def power(cls, tau: float) -> "NoiseSchedule":
        return cls(ScheduleKind.POWER, tau)

    def sigma(self, eps: float) -> float:
        if not 0 < eps < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
        if self.kind is ScheduleKind.CONSTANT:
            return self.value
        if self.kind is ScheduleKind.CRITICAL:
            return self.value / math.sqrt(math.log(1.0 / eps))
        return eps**self.value

    @property
    def lambda_sq(self) -> float:
        """lim sigma^2 log(1/eps); infinite for a positive constant."""
        if self.kind is ScheduleKind.CONSTANT:
            return math.inf if self.value > 0 else 0.0
        if self.kind is ScheduleKind.CRITICAL:
            return self.value**2
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        kind = ScheduleKind(d["kind"])
        if "value" in d:
            return cls(kind, float(d["value"]))
        if kind is ScheduleKind.CONSTANT:
            return cls(kind, float(d["sigma0"]))
        if kind is ScheduleKind.CRITICAL:
            return cls(kind, math.sqrt(float(d["lambda_sq"])) if "lambda_sq" in d else float(d["lambda"]))
        return cls(kind, float(d["tau"]))


def damping_coefficient(lambda_sq: float) -> float:
    """3 lambda^2 / (8 pi) - 1, the linear damping of the limit equation."""
    if lambda_sq < 0:
        raise ValueError(f"lambda^2 must be >= 0, got {lambda_sq}")
    return 3.0 * lambda_sq / (8.0 * math.pi) - 1.0


def grid_for_epsilon(eps: float) -> TorusGrid:
    """Lattice K = ceil(1/eps) with an alias-free grid for the cubic term."""
    if eps < MIN_EPSILON:
        raise ValueError(f"epsilon={eps} below the supported minimum 2^-9; the grid would not fit in memory")
    return TorusGrid.for_cubic(max(1, math.ceil(1.0 / eps - 1e-9)))


def initial_condition(spec: dict, grid: TorusGrid) -> SpectralField:
    kind = spec.get("kind", "cosine")
    if kind == "cosine":
        amp = float(spec.get("amplitude", 1.0))
        m1, m2 = spec.get("mode", [1, 0])
        return SpectralField.from_function(lambda x1, x2: amp * np.cos(m1 * x1 + m2 * x2), grid)
    if kind == "constant":
        return SpectralField.from_function(lambda x1, x2: float(spec["value"]) + 0.0 * x1, grid)
    raise ValueError(f"unknown initial condition kind {kind!r}")


@dataclass
class CellResult:
    eps: float
    realization: int
    seed: int
    sup_norm: float = math.nan
    lp_time_norm: float = math.nan
    sup_by_delta: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""


@dataclass
class SweepRow:
    eps: float
    sigma: float
    c_eps: float | None
    d_eps_sq: float | None
    mean_norm: float
    stderr: float
    p90: float
    n: int
    failed: int


@dataclass
class SweepResult:
    regime: str
    rows: list[SweepRow]
    cells: list[CellResult]
    config: dict
    trend_ok: bool = True
    trend_pairs: list[dict] = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.array([r.mean_norm for r in self.rows])


@dataclass
class _CellTask:
    eps: float
    realization: int
    seed: int
    renorm: RenormState
    u0: SpectralField
    cfg: IntegratorConfig
    besov: BesovParams
    deltas: tuple
    reference: TrajectoryRecord | None


def _run_cell(task: _CellTask) -> CellResult:
    out = CellResult(task.eps, task.realization, task.seed)
    try:
        rec = integrate_path(Equation.PHI_EPS, task.u0, task.renorm, task.cfg, task.seed, task.besov,
                             reference=task.reference)
    except (BlowUpError, FloatingPointError, ValueError) as err:
        out.failed, out.error = True, str(err)
        return out
    out.sup_norm = rec.sup_besov
    out.lp_time_norm = rec.lp_time_besov
    for d in task.deltas:
        sel = rec.times >= d - 1e-12
        out.sup_by_delta[repr(d)] = float(np.max(rec.besov[sel]))
    return out


def _trim_reference(rec: TrajectoryRecord, tol: float = 1e-17) -> TrajectoryRecord:
    """Drop the reference's outer modes where every sample is below tol (keeps worker payloads small)."""
    K = rec.fields[0].k_max
    peak = np.zeros(K + 1)
    for f in rec.fields:
        a = np.abs(f.coeffs)
        k1, k2 = f.grid.wavenumbers
        ring = np.maximum(np.abs(k1), np.abs(k2))
        peak = np.maximum(peak, np.array([a[ring == m].max() for m in range(K + 1)]))
    keep = max(1, int(np.nonzero(peak > tol)[0].max()) if np.any(peak > tol) else 1)
    grid = TorusGrid(keep, 2 * keep + 2)
    return TrajectoryRecord(rec.times, rec.besov, rec.besov_bar, rec.l2, rec.max_abs, rec.delta, rec.p, None,
                            [f.resample(grid) for f in rec.fields], rec.seed, rec.meta)


def _pooled_trend(rows: list[SweepRow], n_se: float = 2.0) -> tuple[bool, list[dict]]:
    pairs, ok = [], True
    for a, b in zip(rows, rows[1:]):
        pooled = math.sqrt(a.stderr**2 + b.stderr**2)
        good = bool(b.mean_norm <= a.mean_norm + n_se * pooled)
        ok &= good
        pairs.append({"eps_from": a.eps, "eps_to": b.eps, "delta_mean": b.mean_norm - a.mean_norm,
                      "pooled_stderr": pooled, "ok": good})
    return ok, pairs


def _sweep(regime: str, schedule: NoiseSchedule, eps_list, u0_spec: dict, besov: BesovParams,
           cfg: IntegratorConfig, n_realizations: int, master_seed: int, threads: int,
           flavor: Flavor, reference_lambda_sq: float | None) -> SweepResult:
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if not besov.paper_regime:
        raise ValueError("sweeps need admissible exponents: p >= 4, r >= 1, -2/(7p) < s < 0 (paper_regime=True)")
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    grids = [grid_for_epsilon(e) for e in eps_list]
    deltas = tuple(f * cfg.t_end for f in DELTA_FRACTIONS)
    seeds = [derive_seed(master_seed, i) for i in range(n_realizations)]

    reference = None
    if reference_lambda_sq is not None and eps_list:
        ref_grid = max(grids, key=lambda g: g.k_max)
        # same step and scheme as the stochastic runs, on the finest grid, so the
        # difference isolates the noise rather than the time discretization
        reference = _trim_reference(integrate_deterministic(initial_condition(u0_spec, ref_grid),
                                                            reference_lambda_sq, cfg, besov, keep_fields=True))

    renorms: dict[float, RenormState | None] = {}
    tasks, pre_failed = [], []
    for eps, grid in zip(eps_list, grids):
        sigma = schedule.sigma(eps)
        try:
            rn = renorm_state(eps, sigma, flavor)
        except (RenormError, ValueError) as err:
            renorms[eps] = None
            pre_failed += [CellResult(eps, i, s, failed=True, error=str(err)) for i, s in enumerate(seeds)]
            continue
        renorms[eps] = rn
        u0 = initial_condition(u0_spec, grid)
        tasks += [_CellTask(eps, i, s, rn, u0, cfg, besov, deltas, reference) for i, s in enumerate(seeds)]

    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        cells = [_run_cell(t) for t in tasks]
    order = {e: i for i, e in enumerate(eps_list)}
    cells = sorted(cells + pre_failed, key=lambda c: (order[c.eps], c.realization))

    rows = []
    for eps in eps_list:
        mine = [c for c in cells if c.eps == eps]
        vals = np.array([c.sup_norm for c in mine if not c.failed])
        n = len(vals)
        mean = float(np.mean(vals)) if n else math.nan
        se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else (0.0 if n == 1 else math.nan)
        p90 = float(np.percentile(vals, 90)) if n else math.nan
        rn = renorms[eps]
        rows.append(SweepRow(eps, schedule.sigma(eps), rn.c_eps if rn else None, rn.d_eps_sq if rn else None,
                             mean, se, p90, n, len(mine) - n))
    trend_ok, pairs = _pooled_trend(rows)
    config = {
        "regime": regime,
        "eps_list": eps_list,
        "schedule": schedule.to_dict(),
        "besov": {"p": besov.p, "r": besov.r, "s": besov.s},
        "integrator": cfg.to_dict(),
        "n_realizations": n_realizations,
        "master_seed": master_seed,
        "seeds": seeds,
        "initial_condition": u0_spec,
        "grids": [{"eps": e, "k_max": g.k_max, "n": g.n} for e, g in zip(eps_list, grids)],
        "deltas": list(deltas),
        "flavor": flavor.value,
        "reference_lambda_sq": reference_lambda_sq,
    }
    return SweepResult(regime, rows, cells, config, trend_ok, pairs)


def run_triviality_sweep(schedule: NoiseSchedule, eps_list, u0_spec: dict, besov: BesovParams,
                         cfg: IntegratorConfig, n_realizations: int, master_seed: int,
                         threads: int = 1) -> SweepResult:
    """Monte-Carlo sup_{[delta,T]} B^s norms of u_eps for sigma^2 log(1/eps) -> infinity."""
    if schedule.lambda_sq != math.inf:
        raise ValueError("triviality sweep needs a schedule with sigma^2 log(1/eps) -> infinity")
    return _sweep("trivial", schedule, eps_list, u0_spec, besov, cfg, n_realizations, master_seed, threads,
                  Flavor.STRONG_NOISE, None)


def run_limit_sweep(schedule: NoiseSchedule, eps_list, u0_spec: dict, besov: BesovParams,
                    cfg: IntegratorConfig, n_realizations: int, master_seed: int,
                    threads: int = 1, reference_lambda_sq: float | None = None) -> SweepResult:
    """Monte-Carlo sup_{[delta,T]} B^s distance between u_eps and the deterministic limit w_lambda.

    ``reference_lambda_sq`` overrides the lambda^2 of the reference solution
    (default: the schedule's own); used for diagnostics only.
    """
    if schedule.kind is ScheduleKind.CONSTANT:
        raise ValueError("limit sweep needs a critical or power-law schedule")
    ref = schedule.lambda_sq if reference_lambda_sq is None else reference_lambda_sq
    return _sweep("limit", schedule, eps_list, u0_spec, besov, cfg, n_realizations, master_seed, threads,
                  Flavor.WEAK_NOISE, ref)


# --- reports -------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as err:
        raise OSError(f"could not write {path}: {err}") from err


def emit_report(result: SweepResult, out_dir: str | Path) -> list[Path]:
    """Write sweep.csv, config.json and plotdata_*.csv; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"could not create output directory {out}: {err}") from err
    paths = [out / "sweep.csv", out / "config.json", out / "plotdata_norm_vs_eps.csv",
             out / "plotdata_cells.csv", out / "plotdata_delta.csv"]
    _write_csv(paths[0], SWEEP_COLUMNS,
               ([r.eps, r.sigma, r.c_eps, r.d_eps_sq, r.mean_norm, r.stderr, r.n, r.failed] for r in result.rows))
    try:
        paths[1].write_text(json.dumps({**result.config, "trend_ok": result.trend_ok,
                                        "trend_pairs": result.trend_pairs}, indent=2, sort_keys=True) + "\n")
    except OSError as err:
        raise OSError(f"could not write {paths[1]}: {err}") from err
    _write_csv(paths[2], ["eps", "mean_norm", "stderr", "p90", "n"],
               ([r.eps, r.mean_norm, r.stderr, r.p90, r.n] for r in result.rows))
    _write_csv(paths[3], ["eps", "realization", "seed", "sup_norm", "lp_time_norm", "failed", "error"],
               ([c.eps, c.realization, c.seed, c.sup_norm, c.lp_time_norm, c.failed, c.error] for c in result.cells))
    deltas = [repr(d) for d in result.config.get("deltas", [])]
    _write_csv(paths[4], ["eps", "realization"] + [f"sup_delta_{d}" for d in deltas],
               ([c.eps, c.realization] + [c.sup_by_delta.get(d) for d in deltas] for c in result.cells))
    return paths


# --- configuration files ------------------------------------------------------------

@dataclass
class SweepConfig:
    regime: str
    eps_list: list[float]
    schedule: NoiseSchedule
    besov: BesovParams
    integrator: IntegratorConfig
    n_realizations: int
    initial_condition: dict
    master_seed: int = 0
    reference_lambda_sq: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        b = d.get("besov", {})
        besov = BesovParams(float(b.get("p", 4.0)), float(b.get("r", 2.0)), float(b.get("s", -1.0 / 16.0)),
                            paper_regime=True)
        integ = dict(d.get("integrator", {}))
        unknown = set(integ) - {f.name for f in fields(IntegratorConfig)}
        if unknown:
            raise ValueError(f"unknown integrator keys {sorted(unknown)}")
        return cls(d.get("regime", "trivial"), [float(e) for e in d["eps_list"]],
                   NoiseSchedule.from_dict(d["schedule"]), besov, IntegratorConfig(**integ),
                   int(d.get("n_realizations", 1)), d.get("initial_condition", {"kind": "cosine"}),
                   int(d.get("master_seed", 0)), d.get("reference_lambda_sq"))

    @classmethod
    def load(cls, path: str | Path) -> "SweepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def run(self, threads: int = 1, master_seed: int | None = None) -> SweepResult:
        seed = self.master_seed if master_seed is None else master_seed
        args = (self.schedule, self.eps_list, self.initial_condition, self.besov, self.integrator,
                self.n_realizations, seed, threads)
        if self.regime == "trivial":
            return run_triviality_sweep(*args)
        if self.regime == "limit":
            return run_limit_sweep(*args, reference_lambda_sq=self.reference_lambda_sq)
        raise ValueError(f"unknown regime {self.regime!r}")

    def to_dict(self) -> dict:
        return {"regime": self.regime, "eps_list": self.eps_list, "schedule": self.schedule.to_dict(),
                "besov": {"p": self.besov.p, "r": self.besov.r, "s": self.besov.s},
                "integrator": self.integrator.to_dict(), "n_realizations": self.n_realizations,
                "initial_condition": self.initial_condition, "master_seed": self.master_seed,
                "reference_lambda_sq": self.reference_lambda_sq}

