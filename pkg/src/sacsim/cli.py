"""Command-line entry point: ``sacsim <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .harness import DEFAULT_BESOV, SweepConfig, emit_report, grid_for_epsilon, initial_condition
from .integrators import Equation, IntegratorConfig, Scheme, integrate_deterministic, integrate_path
from .renorm import Flavor, asymptotic_c_eps, check_log_bound, renorm_state
from .spectral import BesovParams, TorusGrid, write_field


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _besov(args) -> BesovParams:
    return BesovParams(args.p, args.r, args.s, paper_regime=True)


def _writer(out: str | None):
    if out is None:
        return sys.stdout, False
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    return open(out, "w", newline=""), True


def cmd_renorm(args) -> int:
    fh, close = _writer(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epsilon", "sigma", "c_eps", "d_eps_sq", "asymptotic", "ratio"])
    for eps in _floats(args.eps):
        st = renorm_state(eps, args.sigma, Flavor.STRONG_NOISE)
        asym = asymptotic_c_eps(eps, args.sigma)
        w.writerow([repr(eps), repr(args.sigma), repr(st.c_eps), repr(st.d_eps_sq), repr(asym),
                    repr(st.c_eps / asym)])
    if close:
        fh.close()
    return 0


def cmd_check_bounds(args) -> int:
    pairs = [(a, R) for a in _floats(args.a) for R in _floats(args.R)]
    reports, const = check_log_bound(pairs)
    fh, close = _writer(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["a", "R", "sum_value", "integral_value", "discrepancy", "bound_rhs_shape", "ratio"])
    for rep in reports:
        w.writerow([repr(x) for x in (rep.a, rep.R, rep.sum_value, rep.integral_value, rep.discrepancy,
                                      rep.bound_rhs_shape, rep.ratio)])
    if close:
        fh.close()
    print(f"empirical constant: {const!r}", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    grid = grid_for_epsilon(args.eps)
    u0 = initial_condition({"kind": "cosine", "amplitude": args.amplitude}, grid)
    flavor = Flavor(args.flavor)
    rn = renorm_state(args.eps, args.sigma, flavor)
    cfg = IntegratorConfig(dt=args.dt, t_end=args.t_end, warmup_delta=args.delta)
    rec = integrate_path(Equation(args.equation), u0, rn, cfg, args.seed or 0, _besov(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec.write(out / "trajectory", {"config": cfg.to_dict(), "epsilon": args.eps, "sigma": args.sigma,
                                   "flavor": flavor.value, "c_eps": rn.c_eps, "d_eps_sq": rn.d_eps_sq,
                                   "k_max": grid.k_max, "n": grid.n})
    write_field(rec.final, out / "final.bin")
    print(f"sup norm on [delta, T]: {rec.sup_besov!r}")
    return 0


def cmd_deterministic(args) -> int:
    grid = TorusGrid.for_cubic(args.k_max)
    if args.constant is not None:
        u0 = initial_condition({"kind": "constant", "value": args.constant}, grid)
    else:
        u0 = initial_condition({"kind": "cosine", "amplitude": args.amplitude}, grid)
    cfg = IntegratorConfig(dt=args.dt, t_end=args.t_end, warmup_delta=args.delta, scheme=Scheme(args.scheme))
    rec = integrate_deterministic(u0, args.lambda_sq, cfg, _besov(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec.write(out / "trajectory", {"config": cfg.to_dict(), "lambda_sq": args.lambda_sq, "k_max": grid.k_max})
    print(f"max |w(T)|: {float(np.max(rec.max_abs[-1:]))!r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = SweepConfig.load(args.config)
    if args.regime is not None:
        cfg.regime = args.regime
    result = cfg.run(threads=args.threads, master_seed=args.seed)
    emit_report(result, args.out)
    for row in result.rows:
        print(f"eps={row.eps!r} mean={row.mean_norm!r} stderr={row.stderr!r} n={row.n} failed={row.failed}")
    print(f"trend within 2 pooled standard errors: {result.trend_ok}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sacsim", description="Spectral simulations of the regularized "
                                 "stochastic Allen-Cahn equation on the 2D torus.")
    ap.add_argument("--seed", type=int, default=None, help="master seed")
    ap.add_argument("--out", default=None, help="output file or directory")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    sub = ap.add_subparsers(dest="command", required=True)

    def besov_args(p):
        p.add_argument("--p", type=float, default=DEFAULT_BESOV.p)
        p.add_argument("--r", type=float, default=DEFAULT_BESOV.r)
        p.add_argument("--s", type=float, default=DEFAULT_BESOV.s)

    p = sub.add_parser("renorm", help="solve C_eps over a list of epsilons (CSV)")
    p.add_argument("--eps", default="1e-2,1e-3,1e-4,1e-5,1e-6")
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_renorm)

    p = sub.add_parser("check-bounds", help="lattice sum versus integral over an (a, R) grid (CSV)")
    p.add_argument("--a", default="1,10,100,1000")
    p.add_argument("--R", default="1,10,100,1000")
    p.set_defaults(func=cmd_check_bounds)

    p = sub.add_parser("simulate", help="one trajectory of the regularized equation")
    p.add_argument("--eps", type=float, default=2.0**-4)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--flavor", choices=[f.value for f in Flavor], default=Flavor.STRONG_NOISE.value)
    p.add_argument("--equation", choices=[Equation.PHI_EPS.value, Equation.AUX.value], default=Equation.PHI_EPS.value)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--amplitude", type=float, default=1.0)
    besov_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("deterministic", help="integrate the deterministic limit equation")
    p.add_argument("--lambda-sq", type=float, default=0.0)
    p.add_argument("--k-max", type=int, default=16)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.EXPONENTIAL_EULER.value)
    p.add_argument("--constant", type=float, default=None, help="constant initial value instead of cos(x1)")
    p.add_argument("--amplitude", type=float, default=1.0)
    besov_args(p)
    p.set_defaults(func=cmd_deterministic)

    p = sub.add_parser("sweep", help="Monte-Carlo epsilon sweep from a JSON config")
    p.add_argument("--regime", choices=["trivial", "limit"], default=None)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None and args.command in ("simulate", "deterministic", "sweep"):
        args.out = "sacsim_out"
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
