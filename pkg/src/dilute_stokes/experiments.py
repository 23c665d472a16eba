"""Ensemble sweeps over (volume fraction, count, seed) cells.

One cell = draw centers, solve the rigid-ball flow for a fixed forcing,
and compare it against the homogenized flow and against the plain flow
without inclusions on a shared family of probe cells.  Each probe is the
mean velocity over one stratum cell rather than a point value: right next
to a ball the two fields differ by the local disturbance no matter how
dilute the suspension is, so pointwise probes measure the nearest ball
instead of the model, while cell means compare the fields on the scale
where the homogenized description applies.  Records are plain rows;
report() writes them as CSV or JSON with enough digits that a write/read
cycle is lossless.  Everything here is deterministic for a fixed plan:
samplers run on counter-based streams keyed by the cell seed, probe
points come from a stream keyed by the plan, and wall times are left
blank unless explicitly requested, so repeated runs produce bit-identical
artifacts.
"""

import json
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .audit import crowding_profile, default_test_functions, empirical_measure_discrepancy
from .config import (
    BallConfiguration,
    Box,
    DensityField,
    min_center_gap,
    radius_for_fraction,
    unit_box,
)
from .fields import FORCING_FAMILIES, make_forcing
from .point_process import KINDS, ProcessSpec, sample
from .quadrature import stratified_points
from .solver import (
    ConvergenceError,
    EinsteinModel,
    effective_viscosity_estimate,
    solve_einstein,
    stokes_flow,
    suspension_flow,
)

# Serialized column order.  "lambda" is a keyword, so the attribute is lam;
# everything else matches the attribute name.
COLUMNS = (
    "n",
    "lambda",
    "eta",
    "theta",
    "seed",
    "process",
    "mu_eff_over_mu",
    "err_einstein",
    "err_naive",
    "a0_discrepancy",
    "b2_max_ratio",
    "sweeps",
    "wall_time_s",
    "error",
)

_ATTRS = tuple(c if c != "lambda" else "lam" for c in COLUMNS)

# Unit shear used for the per-cell viscosity probe; the estimate is
# amplitude independent, so any fixed nonzero strain works.
_PROBE_STRAIN = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def select_eta(lam, theta=0.15):
    """Interaction cutoff scale eta = lam**theta, with 0 < theta < 1/3.

    The upper bound keeps eta large against the mean inter-ball spacing
    (which scales like lam**(1/3) at fixed count); lam = 0 maps to 0.
    """
    if not 0.0 < theta < 1.0 / 3.0:
        raise ValueError("theta must lie strictly between 0 and 1/3")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return 0.0
    return float(lam**theta)


@dataclass(frozen=True)
class SweepRecord:
    """One cell of a sweep.

    n is the realized ball count (the thinned kind keeps fewer points than
    the target), and the ball radius used in the run is (3 lam / (4 pi n))
    ** (1/3), so lam = (4 pi / 3) n r^3 holds exactly.  err_einstein and
    err_naive are L2 norms over the same probe-cell means of the
    difference between the rigid-ball flow and, respectively, the
    homogenized flow and the flow without inclusions.  error is "" for
    clean cells, a
    "skipped-infeasible: ..." tag for cells whose parameters force
    overlaps, and a failure tag otherwise; failed metrics are nan.
    """

    n: int
    lam: float
    eta: float
    theta: float
    seed: int
    process: str
    mu_eff_over_mu: float
    err_einstein: float
    err_naive: float
    a0_discrepancy: float
    b2_max_ratio: float
    sweeps: int
    wall_time_s: float = None
    error: str = ""

    def __post_init__(self):
        if self.process not in KINDS:
            raise ValueError(f"unknown process kind {self.process!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "error", _clean_tag(self.error))

    @property
    def ball_radius(self):
        if self.lam == 0 or self.n == 0:
            return 0.0
        return (3.0 * self.lam / (4.0 * math.pi * self.n)) ** (1.0 / 3.0)

    @property
    def ok(self):
        return self.error == ""

    @property
    def skipped(self):
        return self.error.startswith("skipped-infeasible")

    def as_row(self):
        return {col: getattr(self, attr) for col, attr in zip(COLUMNS, _ATTRS)}


def _clean_tag(text):
    # keep the CSV single-line and comma-splittable
    return str(text).replace(",", ";").replace("\n", " ").strip()


def _g17(x):
    """17 significant digits: lossless for binary64."""
    return "%.17g" % x


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _g17(float(value))


def _json_cell(value):
    if value is None:
        return "null"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "NaN"
    return _g17(v)


def report(records, path, fmt=None):
    """Write records to path as CSV or JSON (fmt inferred from the suffix).

    Floats are printed with 17 significant digits, so read_records(path)
    reproduces the records exactly.  Refuses an empty record list.
    """
    records = list(records)
    if not records:
        raise ValueError("refusing to write an empty report")
    if fmt is None:
        fmt = "json" if str(path).endswith(".json") else "csv"
    if fmt == "csv":
        lines = [",".join(COLUMNS)]
        for rec in records:
            row = rec.as_row()
            lines.append(",".join(_csv_cell(row[c]) for c in COLUMNS))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        entries = []
        for rec in records:
            row = rec.as_row()
            body = ", ".join(f"{json.dumps(c)}: {_json_cell(row[c])}" for c in COLUMNS)
            entries.append("  {" + body + "}")
        text = "[\n" + ",\n".join(entries) + "\n]\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def read_records(path):
    """Inverse of report() for both formats."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        rows = json.loads(text)  # accepts the NaN literals report() writes
        return [_record_from_row(row) for row in rows]
    lines = text.splitlines()
    if not lines or lines[0] != ",".join(COLUMNS):
        raise ValueError("unrecognized report header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"malformed row: {line!r}")
        row = dict(zip(COLUMNS, parts))
        out.append(
            _record_from_row(
                {
                    **row,
                    "n": int(row["n"]),
                    "seed": int(row["seed"]),
                    "sweeps": int(row["sweeps"]),
                    "lambda": float(row["lambda"]),
                    "eta": float(row["eta"]),
                    "theta": float(row["theta"]),
                    "mu_eff_over_mu": float(row["mu_eff_over_mu"]),
                    "err_einstein": float(row["err_einstein"]),
                    "err_naive": float(row["err_naive"]),
                    "a0_discrepancy": float(row["a0_discrepancy"]),
                    "b2_max_ratio": float(row["b2_max_ratio"]),
                    "wall_time_s": None if row["wall_time_s"] == "" else float(row["wall_time_s"]),
                }
            )
        )
    return out


def _record_from_row(row):
    kw = {}
    for col, attr in zip(COLUMNS, _ATTRS):
        v = row[col]
        if col == "wall_time_s" and v is None:
            kw[attr] = None
        elif col == "error":
            kw[attr] = "" if v is None else str(v)
        elif v is None:
            kw[attr] = float("nan")
        else:
            kw[attr] = v
    return SweepRecord(**kw)


@dataclass(frozen=True)
class RateFit:
    """Least squares power law err ~ C * lambda**slope on log-log axes."""

    slope: float
    intercept: float
    r_squared: float
    count: int


def fit_rate(points):
    """Fit a power law to (lambda, err) pairs.

    Pairs with a nonpositive entry carry no log information and are
    dropped; at least three positive pairs must remain.  Points are sorted
    before the fit, so the result is independent of input order.
    """
    pairs = sorted((float(l), float(e)) for l, e in points)
    pairs = [(l, e) for l, e in pairs if l > 0 and e > 0 and math.isfinite(l) and math.isfinite(e)]
    if len(pairs) < 3:
        raise ValueError("need at least three positive (lambda, err) pairs")
    xs = np.log([p[0] for p in pairs])
    ys = np.log([p[1] for p in pairs])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_res = float(resid @ resid)
    dev = ys - ys.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RateFit(float(slope), float(intercept), float(r2), len(pairs))


def median_metric(records, metric, by=("lam",)):
    """Median of a record attribute over clean cells, grouped by key fields."""
    groups = {}
    for rec in records:
        if not rec.ok:
            continue
        key = tuple(getattr(rec, k) for k in by)
        groups.setdefault(key, []).append(getattr(rec, metric))
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


@dataclass(frozen=True)
class SweepPlan:
    """Cartesian sweep description.

    lambdas, ns and seeds define the cell grid; process picks the center
    generator; separation is the hard minimum center distance in units of
    the ball radius (thinned kind only).  probe_strata and probe_samples
    set the probe-cell grid and the number of jittered draws averaged per
    cell.  forcing names one of the analytic families plus its keyword
    arguments.
    """

    lambdas: tuple
    ns: tuple
    seeds: tuple
    process: str = "hardcore_poisson"
    separation: float = 4.0
    theta: float = 0.15
    mu: float = 1.0
    tol: float = 1e-8
    max_sweeps: int = 60
    grid: int = 48
    density_cells: int = 24
    probe_strata: int = 5
    probe_seed: int = 2024
    probe_samples: int = 32
    pair_fraction: float = 0.0
    pair_gap: float = 0.0
    forcing: tuple = (("name", "solenoidal_bump"),)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "ns", tuple(int(v) for v in self.ns))
        object.__setattr__(self, "seeds", tuple(int(v) for v in self.seeds))
        if isinstance(self.forcing, dict):
            object.__setattr__(self, "forcing", tuple(sorted(self.forcing.items())))
        if not self.lambdas or any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be a nonempty list of nonnegative values")
        if not self.ns or any(v < 1 for v in self.ns):
            raise ValueError("ns must be a nonempty list of positive counts")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.process not in KINDS:
            raise ValueError(f"unknown process kind {self.process!r}")
        if not 0.0 < self.theta < 1.0 / 3.0:
            raise ValueError("theta must lie strictly between 0 and 1/3")
        if self.separation < 2.0:
            raise ValueError("separation below 2 radii would allow overlap")
        if self.mu <= 0 or self.tol <= 0:
            raise ValueError("mu and tol must be positive")
        if self.grid < 8:
            raise ValueError("grid must be at least 8")
        if self.probe_strata < 1 or self.probe_samples < 1:
            raise ValueError("probe_strata and probe_samples must be positive")
        name = dict(self.forcing).get("name")
        if name not in FORCING_FAMILIES:
            raise ValueError(f"unknown forcing family {name!r}")

    def forcing_field(self):
        kw = dict(self.forcing)
        return make_forcing(kw.pop("name"), **kw)

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown plan keys: {sorted(extra)}")
        return cls(**data)


def load_plan(path):
    """Read a plan from a TOML or JSON file (by suffix, TOML for .toml)."""
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text.decode())
    else:
        data = json.loads(text.decode())
    return SweepPlan.from_mapping(data)


def run_sweep(plan, timings=False, progress=None):
    """Run every cell of the plan and return sorted SweepRecords.

    Infeasible cells (parameters that force overlapping balls, or thinning
    so aggressive nothing survives) are recorded with a skipped-infeasible
    tag; solver failures are recorded with a failure tag and nan metrics.
    Nothing is dropped.  With timings=False (the default) the wall time
    column is left blank so repeated runs are bit-identical.
    """
    box = unit_box()
    f = plan.forcing_field()
    rho = DensityField.uniform(box, cells=plan.density_cells)
    tests = default_test_functions()
    center = box.center()
    probe_box = Box(center - box.extent / 4.0, center + box.extent / 4.0)
    probe_rng = np.random.Generator(np.random.Philox(key=plan.probe_seed))
    # Each probe is the mean of a stratum cell, estimated from
    # probe_samples jittered draws; blocks from the same stream keep the
    # cell ordering aligned so the averages pair up across fields.
    blocks = [
        stratified_points(probe_box, plan.probe_strata, probe_rng)
        for _ in range(plan.probe_samples)
    ]
    probe_pts = np.concatenate([pts for pts, _ in blocks], axis=0)
    probe_vcell = blocks[0][1]
    n_cells = plan.probe_strata**3

    u0 = stokes_flow(f, mu=plan.mu, grid=plan.grid, box=box)
    einstein_cache = {}

    def homogenized(lam):
        if lam not in einstein_cache:
            model = EinsteinModel(plan.mu, lam, rho)
            einstein_cache[lam] = solve_einstein(
                f, model, grid=plan.grid, tol=plan.tol, box=box
            )
        return einstein_cache[lam]

    def probe_norm(a, b):
        d = a.velocity(probe_pts) - b.velocity(probe_pts)
        d = d.reshape(plan.probe_samples, n_cells, 3).mean(axis=0)
        return float(math.sqrt(probe_vcell * float(np.sum(d * d))))

    records = []
    for lam in plan.lambdas:
        for n_target in plan.ns:
            for seed in plan.seeds:
                t0 = time.perf_counter()
                rec = _run_cell(
                    plan, box, f, rho, tests, u0, homogenized, probe_norm,
                    lam, n_target, seed,
                )
                if timings:
                    rec = replace(rec, wall_time_s=time.perf_counter() - t0)
                records.append(rec)
                if progress is not None:
                    progress(rec)
    records.sort(key=lambda r: (r.lam, r.n, r.seed, r.process))
    return records


def _skip(lam, eta, theta, seed, process, reason, n=0):
    nan = float("nan")
    return SweepRecord(
        n=n, lam=lam, eta=eta, theta=theta, seed=seed, process=process,
        mu_eff_over_mu=nan, err_einstein=nan, err_naive=nan,
        a0_discrepancy=nan, b2_max_ratio=nan, sweeps=0,
        error="skipped-infeasible: " + reason,
    )


def _run_cell(plan, box, f, rho, tests, u0, homogenized, probe_norm, lam, n_target, seed):
    eta = select_eta(lam, plan.theta)
    kind = plan.process
    intensity = n_target / box.volume

    if lam == 0.0:
        # no inclusions: the rigid-ball flow and the homogenized flow both
        # collapse to the plain flow, so the paired probes agree exactly
        spec = ProcessSpec(kind, intensity, window=box, seed=seed,
                           pair_fraction=plan.pair_fraction, pair_gap=plan.pair_gap)
        centers = sample(spec)
        if len(centers):
            a0 = empirical_measure_discrepancy(_CenterShim(centers, box), rho, tests)
        else:
            a0 = float("nan")
        b2 = crowding_profile(centers).max_ratio() if len(centers) >= 2 else 0.0
        return SweepRecord(
            n=len(centers), lam=0.0, eta=eta, theta=plan.theta, seed=seed,
            process=kind, mu_eff_over_mu=1.0, err_einstein=0.0, err_naive=0.0,
            a0_discrepancy=a0, b2_max_ratio=b2, sweeps=0,
        )

    r_plan = radius_for_fraction(n_target, lam)
    try:
        spec = ProcessSpec(
            kind, intensity,
            exclusion=plan.separation * r_plan if kind == "hardcore_poisson" else 0.0,
            window=box, seed=seed,
            pair_fraction=plan.pair_fraction, pair_gap=plan.pair_gap,
        )
    except ValueError as exc:
        return _skip(lam, eta, plan.theta, seed, kind, str(exc))
    centers = sample(spec)
    if len(centers) == 0:
        return _skip(lam, eta, plan.theta, seed, kind, "no centers survive thinning")

    n = len(centers)
    radius = radius_for_fraction(n, lam)
    if min_center_gap(centers) < 2.0 * radius:
        return _skip(
            lam, eta, plan.theta, seed, kind,
            f"min center gap {min_center_gap(centers):.3g} below ball diameter", n=n,
        )

    config = BallConfiguration(centers, radius, box)
    a0 = empirical_measure_discrepancy(config, rho, tests)
    b2 = crowding_profile(config).max_ratio()
    nan = float("nan")
    try:
        u_n, state = suspension_flow(config, u0, mu=plan.mu, tol=plan.tol,
                                     max_sweeps=plan.max_sweeps)
        ratio, _ = effective_viscosity_estimate(config, plan.mu, _PROBE_STRAIN,
                                                tol=plan.tol, max_sweeps=plan.max_sweeps)
    except ConvergenceError as exc:
        return SweepRecord(
            n=n, lam=lam, eta=eta, theta=plan.theta, seed=seed, process=kind,
            mu_eff_over_mu=nan, err_einstein=nan, err_naive=nan,
            a0_discrepancy=a0, b2_max_ratio=b2, sweeps=plan.max_sweeps,
            error=f"convergence failure: {exc}",
        )
    u_e = homogenized(lam)
    return SweepRecord(
        n=n, lam=lam, eta=eta, theta=plan.theta, seed=seed, process=kind,
        mu_eff_over_mu=float(ratio),
        err_einstein=probe_norm(u_n, u_e),
        err_naive=probe_norm(u_n, u0),
        a0_discrepancy=a0, b2_max_ratio=b2, sweeps=state.sweeps,
    )


class _CenterShim:
    """Duck-typed stand-in for zero-radius point clouds in the audits."""

    def __init__(self, centers, box):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        self.box = box
        self.radius = 0.0
        self.n = len(self.centers)
        self.fraction = 0.0
