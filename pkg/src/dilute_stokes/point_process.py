"""Center generators for ball suspensions.

Three kinds: a hard thinning of a Poisson cloud (both members of any pair
closer than the exclusion distance are deleted), a cubic lattice, and a
lattice with deliberately planted close pairs used to stress the separation
audits.  Random sampling runs on a counter-based Philox stream keyed on the
spec seed, one fresh stream per call, so output is reproducible bit for bit.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import Box, unit_box

KINDS = ("hardcore_poisson", "lattice", "clustered")

# Thinning load delta * (4 pi / 3) (R/2)^3 above which the survivor set of
# the hard thinning collapses toward empty; refuse specs in that regime.
JAMMING_LOAD = 0.2


@dataclass(frozen=True)
class ProcessSpec:
    """Parameters of one center-generating process.

    intensity is the target number of points per unit volume, exclusion the
    hard minimum pairwise distance (thinned kind only).  pair_fraction and
    pair_gap configure the planted close pairs of the clustered kind.
    """

    kind: str
    intensity: float
    exclusion: float = 0.0
    window: Box = None
    seed: int = 0
    pair_fraction: float = 0.0
    pair_gap: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if not (math.isfinite(self.intensity) and self.intensity > 0):
            raise ValueError("intensity must be positive")
        if self.exclusion < 0:
            raise ValueError("exclusion distance must be nonnegative")
        if self.window is None:
            object.__setattr__(self, "window", unit_box())
        if self.kind == "hardcore_poisson":
            load = self.intensity * (4.0 * math.pi / 3.0) * (self.exclusion / 2.0) ** 3
            if load >= JAMMING_LOAD:
                raise ValueError(
                    f"thinning load {load:.3g} >= {JAMMING_LOAD}; "
                    "intensity/exclusion combination is too crowded"
                )
        if self.kind == "clustered":
            if not 0.0 <= self.pair_fraction <= 1.0:
                raise ValueError("pair_fraction must lie in [0, 1]")
            if self.pair_fraction > 0 and self.pair_gap <= 0:
                raise ValueError("pair_gap must be positive (zero gap overlaps)")

    def stream(self):
        return np.random.Generator(np.random.Philox(key=self.seed))


def sample_hardcore_poisson(spec):
    """Draw a Poisson cloud and keep only points without a close neighbor.

    Parents are sampled on the window padded by the exclusion distance so
    that thinning near the boundary sees the same neighborhood it would in
    a window-free process; survivors are then restricted to the window.
    Deletion is symmetric: every point with any parent closer than the
    exclusion distance is removed, both members of a close pair included.
    """
    if spec.kind != "hardcore_poisson":
        raise ValueError("spec.kind must be 'hardcore_poisson'")
    rng = spec.stream()
    padded = spec.window.padded(spec.exclusion) if spec.exclusion > 0 else spec.window
    count = rng.poisson(spec.intensity * padded.volume)
    parents = padded.lo + padded.extent * rng.random((count, 3))
    if spec.exclusion > 0 and count > 1:
        pairs = cKDTree(parents).query_pairs(spec.exclusion, output_type="ndarray")
        if len(pairs):
            # query_pairs uses <=; the deletion rule is strictly 'closer than'
            diff = parents[pairs[:, 0]] - parents[pairs[:, 1]]
            close = np.linalg.norm(diff, axis=1) < spec.exclusion
            kill = np.zeros(count, dtype=bool)
            kill[pairs[close].ravel()] = True
            parents = parents[~kill]
    return parents[spec.window.contains(parents)]


def sample_lattice(spec):
    """Cell-centered cubic lattice with ceil(intensity * volume) points."""
    if spec.kind != "lattice":
        raise ValueError("spec.kind must be 'lattice'")
    m = math.ceil(spec.intensity * spec.window.volume)
    k = math.ceil(m ** (1.0 / 3.0))
    while k**3 < m:  # guard against round-off in the cube root
        k += 1
    idx = np.arange(k**3)
    ijk = np.stack([idx % k, (idx // k) % k, idx // k**2], axis=1)
    pts = spec.window.lo + spec.window.extent * (ijk + 0.5) / k
    return pts[:m]


def sample_clustered(spec):
    """Lattice plus a twin at distance pair_gap for a fraction of the points.

    The twin direction is drawn from the spec stream; twins that would leave
    the window are reflected to the opposite direction.  With a small gap the
    output concentrates close pairs far in excess of what any uniformly
    separated cloud can show, which is exactly what the audits should flag.
    """
    if spec.kind != "clustered":
        raise ValueError("spec.kind must be 'clustered'")
    base = sample_lattice(
        ProcessSpec("lattice", spec.intensity, window=spec.window, seed=spec.seed)
    )
    m = len(base)
    t = int(round(spec.pair_fraction * m))
    if t == 0:
        return base
    rng = spec.stream()
    chosen = rng.choice(m, size=t, replace=False)
    u = rng.normal(size=(t, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    twins = base[chosen] + spec.pair_gap * u
    outside = ~spec.window.contains(twins)
    twins[outside] = base[chosen[outside]] - spec.pair_gap * u[outside]
    return np.concatenate([base, twins], axis=0)


_SAMPLERS = {
    "hardcore_poisson": sample_hardcore_poisson,
    "lattice": sample_lattice,
    "clustered": sample_clustered,
}


def sample(spec):
    """Dispatch to the sampler for spec.kind."""
    return _SAMPLERS[spec.kind](spec)
