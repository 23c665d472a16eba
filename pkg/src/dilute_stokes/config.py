"""Ball configurations, density fields, and center-separation bookkeeping.

Everything downstream (kernels, solvers, audits) consumes the types in this
module.  Centers are plain (n, 3) float arrays, boxes are axis-aligned.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

# Above this size pairwise distance work switches from the exhaustive
# O(n^2) routine to a tree/cell-based one.
EXHAUSTIVE_PAIR_CUTOFF = 10_000


def volume_fraction(n, radius):
    """Total ball volume n * (4 pi / 3) r^3 for n balls of the given radius."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    return (4.0 * math.pi / 3.0) * n * radius**3


def radius_for_fraction(n, lam):
    """Radius giving n balls a combined volume fraction lam (unit domain)."""
    if n <= 0:
        raise ValueError("n must be positive")
    if lam <= 0:
        raise ValueError("volume fraction must be positive")
    return (3.0 * lam / (4.0 * math.pi * n)) ** (1.0 / 3.0)


def neighbor_cutoff(lam, theta):
    """Dimensionless separation cutoff lam**theta for the isolated/crowded split.

    theta must lie strictly inside (0, 1/3); outside that range the crowded
    set either swallows everything or the cutoff decays too slowly to matter.
    """
    if not 0.0 < theta < 1.0 / 3.0:
        raise ValueError("theta must lie in (0, 1/3)")
    if lam <= 0.0:
        raise ValueError("volume fraction must be positive")
    return lam**theta


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by opposite corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.extent))

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def padded(self, margin):
        return Box(self.lo - margin, self.hi + margin)

    def shrunk(self, margin):
        lo, hi = self.lo + margin, self.hi - margin
        if np.any(hi <= lo):
            raise ValueError("margin swallows the box")
        return Box(lo, hi)

    def center(self):
        return 0.5 * (self.lo + self.hi)


def unit_box():
    return Box(np.zeros(3), np.ones(3))


def min_center_gap(centers):
    """Smallest pairwise distance.  Returns +inf for fewer than two points."""
    pts = np.asarray(centers, dtype=float)
    n = len(pts)
    if n < 2:
        return math.inf
    if n <= EXHAUSTIVE_PAIR_CUTOFF:
        return float(pdist(pts).min())
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def nearest_neighbor_distances(centers):
    """Distance from each point to its nearest other point."""
    pts = np.asarray(centers, dtype=float)
    n = len(pts)
    if n < 2:
        return np.full(n, math.inf)
    if n <= EXHAUSTIVE_PAIR_CUTOFF:
        from scipy.spatial.distance import squareform

        dm = squareform(pdist(pts))
        np.fill_diagonal(dm, math.inf)
        return dm.min(axis=1)
    d, _ = cKDTree(pts).query(pts, k=2)
    return d[:, 1]


@dataclass(frozen=True)
class BallConfiguration:
    """n disjoint closed balls of common radius inside a domain box."""

    centers: np.ndarray
    radius: float
    box: Box = field(default_factory=unit_box)

    def __post_init__(self):
        pts = np.asarray(self.centers, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("centers must have shape (n, 3)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("centers must be finite")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError("radius must be a positive finite number")
        if not np.all(self.box.contains(pts)):
            raise ValueError("every center must lie inside the domain box")
        if min_center_gap(pts) < 2.0 * self.radius:
            raise ValueError("balls overlap: a center pair is closer than 2r")
        object.__setattr__(self, "centers", pts)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def n(self):
        return len(self.centers)

    @property
    def fraction(self):
        """Volume fraction of the balls relative to a unit reference volume."""
        return volume_fraction(self.n, self.radius)

    @property
    def ball_volume(self):
        return (4.0 * math.pi / 3.0) * self.radius**3

    def min_gap(self):
        return min_center_gap(self.centers)

    def to_json(self):
        return json.dumps(
            {
                "centers": self.centers.tolist(),
                "radius": self.radius,
                "domain": {"min": self.box.lo.tolist(), "max": self.box.hi.tolist()},
            }
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        box = Box(np.asarray(data["domain"]["min"]), np.asarray(data["domain"]["max"]))
        return cls(np.asarray(data["centers"], dtype=float), float(data["radius"]), box)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class DensityField:
    """Piecewise-constant nonnegative density on a regular grid over its box.

    values has shape (nx, ny, nz); cell (i, j, k) covers
    origin + spacing * [i, i+1] x [j, j+1] x [k, k+1].  The field is zero
    outside the grid.  The grid integral must equal 1 within 1e-3.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise ValueError("values must be a 3d array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError("spacing must be positive")
        total = vals.sum() * self.spacing**3
        if abs(total - 1.0) > 1e-3:
            raise ValueError(f"density must integrate to 1 within 1e-3, got {total}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", vals)

    @property
    def dims(self):
        return self.values.shape

    @property
    def box(self):
        return Box(self.origin, self.origin + self.spacing * np.asarray(self.dims))

    def integral(self):
        return float(self.values.sum() * self.spacing**3)

    def cell_centers(self):
        """Centers of all cells, shape (nx*ny*nz, 3), x index fastest."""
        nx, ny, nz = self.dims
        ax = [self.origin[d] + self.spacing * (np.arange(self.dims[d]) + 0.5) for d in range(3)]
        X, Y, Z = np.meshgrid(ax[0], ax[1], ax[2], indexing="ij")
        return np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)

    def cell_values(self):
        """Values matching cell_centers() ordering."""
        return self.values.ravel(order="F")

    def value_at(self, points):
        """Piecewise-constant lookup; zero outside the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((pts - self.origin) / self.spacing).astype(int)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        out = np.zeros(len(pts))
        ii = idx[inside]
        out[inside] = self.values[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out

    @classmethod
    def uniform(cls, box=None, cells=24):
        """Constant density on the box, normalized so the grid sum is exactly 1."""
        box = box or unit_box()
        ext = box.extent
        if abs(ext[0] - ext[1]) > 1e-12 or abs(ext[0] - ext[2]) > 1e-12:
            raise ValueError("uniform() expects a cubic box")
        spacing = ext[0] / cells
        vals = np.ones((cells, cells, cells))
        vals /= vals.sum() * spacing**3
        return cls(box.lo, spacing, vals)

    @classmethod
    def from_samples(cls, box, cells, weight_fn):
        """Density proportional to weight_fn at cell centers, grid-normalized."""
        ext = box.extent
        spacing = ext[0] / cells
        draft = cls.uniform(box, cells)
        w = np.asarray(weight_fn(draft.cell_centers()), dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        vals = w.reshape((cells, cells, cells), order="F").astype(float)
        s = vals.sum() * spacing**3
        if s <= 0:
            raise ValueError("weights sum to zero")
        return cls(box.lo, spacing, vals / s)

    def to_json(self):
        nx, ny, nz = self.dims
        return json.dumps(
            {
                "dims": [nx, ny, nz],
                "spacing": self.spacing,
                "origin": self.origin.tolist(),
                # flat list with the x index varying fastest
                "values": self.values.ravel(order="F").tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        dims = tuple(int(d) for d in data["dims"])
        vals = np.asarray(data["values"], dtype=float).reshape(dims, order="F")
        return cls(np.asarray(data["origin"], dtype=float), float(data["spacing"]), vals)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class TracelessSymmetricMatrix:
    """Symmetric 3x3 matrix with zero trace (a strain amplitude)."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("expected a 3x3 matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("entries must be finite")
        scale = np.linalg.norm(m)
        if scale > 0 and np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("matrix must be symmetric")
        if scale > 0 and abs(np.trace(m)) > 1e-12 * scale:
            raise ValueError("matrix must be trace-free")
        object.__setattr__(self, "mat", 0.5 * (m + m.T))

    @classmethod
    def deviatoric(cls, m):
        """Project an arbitrary 3x3 matrix onto its traceless symmetric part."""
        m = np.asarray(m, dtype=float)
        sym = 0.5 * (m + m.T)
        return cls(sym - np.trace(sym) / 3.0 * np.eye(3))

    @classmethod
    def random(cls, rng, scale=1.0):
        return cls.deviatoric(scale * rng.normal(size=(3, 3)))

    @property
    def frobenius(self):
        return float(np.linalg.norm(self.mat))


def as_strain(s):
    """Coerce a strain argument (matrix-like or wrapper) to a validated array."""
    if isinstance(s, TracelessSymmetricMatrix):
        return s.mat
    return TracelessSymmetricMatrix(np.asarray(s, dtype=float)).mat


@dataclass(frozen=True)
class RigidMotion:
    """Translation and angular velocity of one rigid ball."""

    velocity: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        w = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("rigid motion must be finite")
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "angular", w)

    def at(self, points, center):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.velocity + np.cross(self.angular, pts - center)


@dataclass(frozen=True)
class SeparationPartition:
    """Split of center indices by nearest-neighbor distance.

    isolated: all other centers at least cutoff * n^(-1/3) away.
    crowded:  some other center strictly closer than that.
    """

    cutoff: float
    isolated: np.ndarray
    crowded: np.ndarray
    n: int

    def __post_init__(self):
        good = np.asarray(self.isolated, dtype=int)
        bad = np.asarray(self.crowded, dtype=int)
        merged = np.sort(np.concatenate([good, bad]))
        if len(merged) != self.n or np.any(merged != np.arange(self.n)):
            raise ValueError("partition must cover indices 0..n-1 exactly once")
        object.__setattr__(self, "isolated", good)
        object.__setattr__(self, "crowded", bad)


def partition_by_separation(config_or_centers, cutoff):
    """Partition centers by whether the nearest neighbor is closer than
    cutoff * n^(-1/3)."""
    if isinstance(config_or_centers, BallConfiguration):
        centers = config_or_centers.centers
    else:
        centers = np.asarray(config_or_centers, dtype=float)
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    n = len(centers)
    threshold = cutoff * n ** (-1.0 / 3.0) if n else 0.0
    nn = nearest_neighbor_distances(centers)
    crowded = np.flatnonzero(nn < threshold)
    isolated = np.flatnonzero(nn >= threshold)
    return SeparationPartition(cutoff=float(cutoff), isolated=isolated, crowded=crowded, n=n)
