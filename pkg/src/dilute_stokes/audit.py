"""Quantitative audits of suspension configurations.

Checks the structural hypotheses the solvers lean on: a hard lower bound on
center separation, the profile of close pairs across scales, agreement of
the empirical center measure with a target density, a coarse-graining
residual for gradient-weighted ball averages, and a pair-correlation
estimate across an ensemble of samples.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import DensityField, nearest_neighbor_distances, unit_box
from .fields import ScalarBump, TrigProduct


@dataclass(frozen=True)
class SeparationCheck:
    passed: bool
    min_gap: float
    factor: float


def check_separation(config, factor):
    """Does every center pair sit at least factor * radius apart?

    factor must exceed 2 (at 2 the balls touch).  Configurations with fewer
    than two balls pass vacuously with an infinite gap.
    """
    if factor <= 2.0:
        raise ValueError("separation factor must exceed 2")
    gap = config.min_gap()
    return SeparationCheck(gap >= factor * config.radius, gap, float(factor))


@dataclass(frozen=True)
class CrowdingProfile:
    """Count of centers with a neighbor within eta * n^(-1/3), per eta.

    ratio is count / (eta^3 n); for uniformly spread clouds it stays bounded
    as eta shrinks, while planted close pairs blow it up.
    """

    eta: np.ndarray
    count: np.ndarray
    ratio: np.ndarray
    n: int

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        count = np.asarray(self.count, dtype=int)
        if np.any(eta <= 0) or np.any(np.diff(eta) <= 0):
            raise ValueError("eta values must be positive and increasing")
        if np.any(np.diff(count) < 0):
            raise ValueError("counts must be nondecreasing in eta")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "ratio", count / (eta**3 * self.n))

    def max_ratio(self):
        return float(self.ratio.max())


def default_etas(lo=0.05, hi=4.0, num=25):
    return np.geomspace(lo, hi, num)


def crowding_profile(config_or_centers, etas=None):
    """Exact close-pair counts at thresholds eta * n^(-1/3).

    Computed from nearest-neighbor distances, which gives results identical
    to the exhaustive pair scan: a center has some neighbor within d exactly
    when its nearest neighbor is.
    """
    centers = getattr(config_or_centers, "centers", None)
    if centers is None:
        centers = np.asarray(config_or_centers, dtype=float)
    etas = default_etas() if etas is None else np.asarray(etas, dtype=float)
    n = len(centers)
    nn = nearest_neighbor_distances(centers)
    thresholds = etas * n ** (-1.0 / 3.0)
    counts = (nn[:, None] <= thresholds[None, :]).sum(axis=0)
    return CrowdingProfile(eta=etas, count=counts, ratio=None, n=n)


def _sup_norm(g, probe):
    sup = getattr(g, "sup_norm", 0.0)
    if sup and sup > 0:
        return sup
    vals = np.abs(np.asarray(g.value(probe)))
    m = float(vals.max())
    if m == 0:
        raise ValueError("test function vanishes on the probe grid")
    return m


def empirical_measure_discrepancy(config, rho, tests):
    """Worst normalized gap between center averages and density integrals.

    max over tests g of |mean_i g(x_i) - integral(g rho)| / sup|g|, with the
    density integral via midpoint quadrature on its own grid.
    """
    if not tests:
        raise ValueError("need at least one test function")
    cc = rho.cell_centers()
    cv = rho.cell_values()
    h3 = rho.spacing**3
    worst = 0.0
    for g in tests:
        emp = float(np.mean(g.value(config.centers)))
        ref = float((g.value(cc) * cv).sum() * h3)
        worst = max(worst, abs(emp - ref) / _sup_norm(g, cc))
    return worst


def default_test_functions(seed=0, bumps=10, degree=3):
    """Trig products up to the given total frequency plus seeded radial bumps."""
    fams = TrigProduct.family(degree)
    rng = np.random.Generator(np.random.Philox(key=seed))
    for _ in range(bumps):
        c = 0.2 + 0.6 * rng.random(3)
        w = rng.uniform(0.1, 0.25)
        fams.append(ScalarBump(c, w, amplitude=1.0))
    return fams


def ball_integrals(g, centers, radius):
    """Integral of g over each ball: volume x (center value + r^2/10 laplacian).

    Error O(r^4) for smooth g; the correction uses the solid-ball average of
    the second-order Taylor term.
    """
    vol = (4.0 * math.pi / 3.0) * radius**3
    vals = np.asarray(g.value(centers), dtype=float)
    lap = np.asarray(g.laplacian(centers), dtype=float)
    return vol * (vals + radius**2 / 10.0 * lap)


def coarse_graining_residual(config, rho, phi, g):
    """Residual of gradient-weighted ball sums against the density average.

    Compares sum_i grad(phi)(x_i) * integral_{ball i} g with
    fraction * integral(rho grad(phi) g); returns the Frobenius norm of the
    matrix difference.  Small residuals mean the discrete suspension already
    behaves like its continuum limit for this pair of observables.
    """
    grads = phi.gradient(config.centers)
    ints = ball_integrals(g, config.centers, config.radius)
    lhs = np.einsum("m,mij->ij", ints, grads)
    cc = rho.cell_centers()
    cv = rho.cell_values()
    h3 = rho.spacing**3
    gv = np.asarray(g.value(cc), dtype=float)
    rhs = config.fraction * np.einsum("m,mij->ij", cv * gv * h3, phi.gradient(cc))
    return float(np.linalg.norm(lhs - rhs))


@dataclass(frozen=True)
class PairCorrelationEstimate:
    """Distance-histogram estimate of the two-point density of an ensemble.

    estimate[k] approximates the ordered-pair density over bin k; ratio is
    estimate / intensity^2, which is 1 for an ideal Poisson cloud.  Bins with
    no pairs are flagged empty rather than smoothed over.
    """

    edges: np.ndarray
    counts: np.ndarray
    estimate: np.ndarray
    ratio: np.ndarray
    intensity: float
    samples: int

    def __post_init__(self):
        if np.any(self.estimate < 0):
            raise ValueError("pair density estimates cannot be negative")

    @property
    def empty(self):
        return self.counts == 0

    def rows(self):
        out = []
        for k in range(len(self.counts)):
            out.append(
                {
                    "lo": float(self.edges[k]),
                    "hi": float(self.edges[k + 1]),
                    "count": int(self.counts[k]),
                    "estimate": float(self.estimate[k]),
                    "ratio": float(self.ratio[k]),
                }
            )
        return out


def pair_correlation_estimate(samples, edges, window=None, intensity=None, min_samples=20):
    """Estimate the ordered-pair density per distance bin from many samples.

    First points are restricted to the window eroded by the largest bin edge
    so every counted shell lies fully inside the window; this removes edge
    bias without correction factors.  Cumulative neighbor counts at the bin
    edges difference into per-bin counts (coincident self pairs cancel).
    """
    window = window or unit_box()
    edges = np.asarray(edges, dtype=float)
    if len(samples) < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    if edges.ndim != 1 or len(edges) < 2 or edges[0] <= 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be increasing and start above zero")
    eroded = window.shrunk(edges[-1])
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    total_points = 0
    for pts in samples:
        pts = np.asarray(pts, dtype=float)
        total_points += len(pts)
        inner = pts[eroded.contains(pts)]
        if len(inner) == 0 or len(pts) == 0:
            continue
        cum = cKDTree(inner).count_neighbors(cKDTree(pts), edges)
        counts += np.diff(cum).astype(np.int64)
    shells = (4.0 * math.pi / 3.0) * np.diff(edges**3)
    estimate = counts / (len(samples) * eroded.volume * shells)
    if intensity is None:
        intensity = total_points / (len(samples) * window.volume)
    ratio = estimate / intensity**2 if intensity > 0 else np.full_like(estimate, np.nan)
    return PairCorrelationEstimate(
        edges=edges,
        counts=counts,
        estimate=estimate,
        ratio=ratio,
        intensity=float(intensity),
        samples=len(samples),
    )


def audit_report(configs, rho=None, factor=4.0, etas=None, tests=None, edges=None):
    """Bundle all audits of an ensemble into one JSON-ready dictionary.

    configs: one or more ball configurations sharing radius and box.  The
    separation, crowding, and measure audits run on the first configuration;
    the pair correlation pools every sample (single samples allowed, with
    the obvious loss of statistical power).
    """
    if not configs:
        raise ValueError("need at least one configuration")
    head = configs[0]
    rho = rho or DensityField.uniform(head.box)
    tests = tests or default_test_functions()
    sep = check_separation(head, factor)
    profile = crowding_profile(head, etas)
    a0 = empirical_measure_discrepancy(head, rho, tests)
    if edges is None:
        lo = max(2.0 * head.radius, 1e-3)
        edges = np.geomspace(lo, min(0.3, 10 * lo), 9)
    pc = pair_correlation_estimate(
        [c.centers for c in configs], edges, head.box, min_samples=1
    )
    return {
        "b1": {"pass": bool(sep.passed), "min_gap": sep.min_gap, "factor": sep.factor},
        "b2_profile": [
            {"eta": float(e), "count": int(c), "ratio": float(r)}
            for e, c, r in zip(profile.eta, profile.count, profile.ratio)
        ],
        "a0": {"discrepancy": a0, "tests": len(tests)},
        "pair_correlation": pc.rows(),
    }
