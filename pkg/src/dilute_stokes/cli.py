"""Command line front end: gen, check, solve, visc, sweep.

gen draws ball centers from one of the point processes and writes a
configuration JSON.  check runs the structural audits on configurations.
solve computes the rigid-ball flow for a named forcing and writes sampled
fields plus a JSON summary.  visc estimates the effective viscosity ratio
of a configuration.  sweep runs a plan file (TOML or JSON) across
(lambda, n, seed) cells and writes the record table.

The environment variable DILUTE_STOKES_THREADS caps the FFT worker count.
All randomness is counter-based and keyed by explicit seeds, so every
command is reproducible bit for bit; sweep omits wall times unless
--timings is given so that repeated runs emit identical artifacts.
"""

import argparse
import json
import math
import sys

import numpy as np

from .audit import audit_report
from .config import BallConfiguration, Box, DensityField, radius_for_fraction, volume_fraction
from .experiments import load_plan, median_metric, report, run_sweep, select_eta
from .fields import FORCING_FAMILIES, make_forcing
from .point_process import KINDS, ProcessSpec, sample
from .solver import (
    ConvergenceError,
    EinsteinModel,
    effective_viscosity_estimate,
    solve_einstein,
    stokes_flow,
    suspension_flow,
)

_SHEAR = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def _g17(x):
    return "%.17g" % x


def _write_json(data, path):
    text = json.dumps(data, indent=2, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load_config(path):
    return BallConfiguration.load(path)


def _load_density(path, box):
    if path is None:
        return DensityField.uniform(box)
    return DensityField.load(path)


def _forcing_from_args(args):
    params = json.loads(args.forcing_params) if args.forcing_params else {}
    return make_forcing(args.forcing, **params)


def _add_common(p):
    p.add_argument("--mu", type=float, default=1.0, help="fluid viscosity")
    p.add_argument("--tol", type=float, default=1e-8, help="sweep residual tolerance")
    p.add_argument("--seed", type=int, default=0)


def cmd_gen(args):
    if (args.lam is None) == (args.radius is None):
        raise SystemExit("gen: give exactly one of --lambda or --radius")
    box = Box(np.zeros(3), np.full(3, args.box))
    intensity = args.n / box.volume
    exclusion = 0.0
    if args.process == "hardcore_poisson":
        r_plan = (
            args.radius if args.radius is not None else radius_for_fraction(args.n, args.lam)
        )
        exclusion = args.separation * r_plan
    spec = ProcessSpec(
        args.process,
        intensity,
        exclusion=exclusion,
        window=box,
        seed=args.seed,
        pair_fraction=args.pair_fraction,
        pair_gap=args.pair_gap,
    )
    centers = sample(spec)
    if len(centers) == 0:
        raise SystemExit("gen: no centers survive thinning; relax the parameters")
    if args.radius is not None:
        radius = args.radius
    else:
        # recompute from the realized count so lambda is exact
        radius = radius_for_fraction(len(centers), args.lam)
    config = BallConfiguration(centers, radius, box)
    if args.out in (None, "-"):
        print(config.to_json())
    else:
        config.save(args.out)
    print(
        f"gen: {config.n} balls, radius {radius:.6g}, "
        f"lambda {volume_fraction(config.n, radius):.6g}, min gap {config.min_gap():.6g}",
        file=sys.stderr,
    )
    return 0


def cmd_check(args):
    configs = [_load_config(p) for p in args.config]
    rho = _load_density(args.density, configs[0].box)
    out = audit_report(configs, rho=rho, factor=args.factor)
    _write_json(out, args.out)
    return 0


def cmd_solve(args):
    config = _load_config(args.config)
    lam = volume_fraction(config.n, config.radius)
    if args.lam is not None and abs(args.lam - lam) > 1e-12:
        raise SystemExit(
            f"solve: --lambda {args.lam} disagrees with the configuration ({lam:.17g})"
        )
    eta = args.eta if args.eta is not None else select_eta(lam, args.theta)
    rho = _load_density(args.density, config.box)
    f = _forcing_from_args(args)

    u0 = stokes_flow(f, mu=args.mu, grid=args.grid, box=config.box)
    u_e = solve_einstein(
        f, EinsteinModel(args.mu, lam, rho), grid=args.grid, tol=args.tol, box=config.box
    )
    u_n, state = suspension_flow(config, u0, mu=args.mu, tol=args.tol)

    k = args.sample_grid
    ax = [
        config.box.lo[d] + config.box.extent[d] * (np.arange(k) + 0.5) / k
        for d in range(3)
    ]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    vel = u_n.velocity(pts)
    lines = ["x,y,z,ux,uy,uz"]
    for p, v in zip(pts, vel):
        lines.append(",".join(_g17(t) for t in (*p, *v)))
    with open(args.fields_out, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    vcell = config.box.volume / len(pts)
    summary = {
        "n": config.n,
        "lambda": lam,
        "eta": eta,
        "theta": args.theta,
        "mu": args.mu,
        "grid": args.grid,
        "seed": args.seed,
        "sweeps": state.sweeps,
        "converged": bool(state.converged),
        "residuals": [float(r) for r in state.residuals],
        "norms": {
            "background_l2": math.sqrt(vcell * float(np.sum(u0.velocity(pts) ** 2))),
            "homogenized_l2": math.sqrt(vcell * float(np.sum(u_e.velocity(pts) ** 2))),
            "composite_l2": math.sqrt(vcell * float(np.sum(vel**2))),
        },
        "fields_csv": args.fields_out,
    }
    _write_json(summary, args.out)
    return 0


def cmd_visc(args):
    config = _load_config(args.config)
    lam = volume_fraction(config.n, config.radius)
    try:
        ratio, state = effective_viscosity_estimate(
            config, args.mu, _SHEAR, tol=args.tol
        )
    except ConvergenceError as exc:
        print(f"visc: {exc}", file=sys.stderr)
        return 1
    _write_json(
        {
            "mu_eff_over_mu": ratio,
            "lambda": lam,
            "n": config.n,
            "seed": args.seed,
            "sweeps": state.sweeps,
        },
        args.out,
    )
    return 0


def cmd_sweep(args):
    plan = load_plan(args.plan)
    records = run_sweep(plan, timings=args.timings)
    base = args.out
    csv_path = base if base.endswith(".csv") else base + ".csv"
    report(records, csv_path, fmt="csv")
    if args.json_mirror:
        report(records, csv_path[: -len(".csv")] + ".json", fmt="json")
    clean = [r for r in records if r.ok]
    skipped = [r for r in records if r.skipped]
    failed = [r for r in records if not r.ok and not r.skipped]
    for (lam,), med in median_metric(clean, "err_einstein").items():
        nmed = median_metric(clean, "err_naive")[(lam,)]
        print(f"lambda {lam:g}: median err_einstein {med:.6e}, err_naive {nmed:.6e}")
    print(
        f"sweep: {len(clean)} cells ok, {len(skipped)} skipped infeasible, "
        f"{len(failed)} failed -> {csv_path}"
    )
    for r in failed:
        print(f"  failed cell lambda={r.lam:g} n={r.n} seed={r.seed}: {r.error}")
    return 0 if not failed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dilute-stokes",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="draw ball centers and write a configuration JSON")
    p.add_argument("--process", choices=KINDS, default="hardcore_poisson")
    p.add_argument("--n", type=int, required=True, help="target ball count")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="volume fraction; sets the radius from the realized count")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--separation", type=float, default=4.0,
                   help="hard minimum center distance in ball radii")
    p.add_argument("--box", type=float, default=1.0, help="cubic domain side")
    p.add_argument("--pair-fraction", type=float, default=0.0)
    p.add_argument("--pair-gap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("check", help="run the structural audits on configurations")
    p.add_argument("config", nargs="+", help="configuration JSON paths")
    p.add_argument("--density", default=None, help="density JSON (default uniform)")
    p.add_argument("--factor", type=float, default=4.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="solve the rigid-ball flow and sample the fields")
    p.add_argument("--config", required=True)
    p.add_argument("--density", default=None)
    p.add_argument("--forcing", choices=FORCING_FAMILIES, default="solenoidal_bump")
    p.add_argument("--forcing-params", default=None,
                   help="JSON object of forcing keyword arguments")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="cross-check against the configuration's volume fraction")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--theta", type=float, default=0.15)
    p.add_argument("--grid", type=int, default=48)
    p.add_argument("--sample-grid", type=int, default=8,
                   help="fields are sampled on this many cells per axis")
    p.add_argument("--fields-out", default="fields.csv")
    p.add_argument("--out", default=None, help="summary JSON path (default stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("visc", help="effective viscosity ratio of a configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_visc)

    p = sub.add_parser("sweep", help="run a sweep plan and write the record table")
    p.add_argument("--plan", required=True, help="TOML or JSON plan file")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--timings", action="store_true",
                   help="record wall times (breaks bit-identical reruns)")
    p.add_argument("--json-mirror", action="store_true",
                   help="also write the records as JSON next to the CSV")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
