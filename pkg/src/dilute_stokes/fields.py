"""Analytic test fields, forcing families, and grid-sampled vector fields.

Gradient conventions: scalar fields return gradients of shape (m, 3) and
Hessians (m, 3, 3); vector fields return gradients (m, 3, 3) indexed
[point, i, j] = d_j u_i, matching the kernel module.
"""

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .config import unit_box


def _pts2d(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts), single


class ScalarBump:
    """Smooth radial bump vanishing identically outside |x - c| = width.

    Profile exp(-1 / (1 - t)) in t = |x - c|^2 / width^2; all derivatives
    vanish at the support boundary.  Contributions with 1 - t below a small
    floor are dropped; they sit under 1e-200 and would otherwise overflow
    the inverse powers.
    """

    _FLOOR = 2e-3

    def __init__(self, center=(0.5, 0.5, 0.5), width=0.35, amplitude=1.0):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.width = float(width)
        self.amplitude = float(amplitude)
        if self.width <= 0:
            raise ValueError("width must be positive")
        # peak value, attained at the center
        self.sup_norm = abs(self.amplitude) * math.exp(-1.0)

    def _core(self, x):
        pts, single = _pts2d(x)
        y = pts - self.center
        t = (y**2).sum(axis=1) / self.width**2
        u = 1.0 - t
        mask = u > self._FLOOR
        f = np.zeros(len(pts))
        f[mask] = self.amplitude * np.exp(-1.0 / u[mask])
        return pts, single, y, u, mask, f

    def value(self, x):
        _, single, _, _, _, f = self._core(x)
        return f[0] if single else f

    def gradient(self, x):
        pts, single, y, u, mask, f = self._core(x)
        g = np.zeros((len(pts), 3))
        fp = np.zeros(len(pts))
        fp[mask] = -f[mask] / u[mask] ** 2
        g = fp[:, None] * 2.0 * y / self.width**2
        return g[0] if single else g

    def hessian(self, x):
        pts, single, y, u, mask, f = self._core(x)
        fp = np.zeros(len(pts))
        fpp = np.zeros(len(pts))
        fp[mask] = -f[mask] / u[mask] ** 2
        fpp[mask] = f[mask] * (1.0 / u[mask] ** 4 - 2.0 / u[mask] ** 3)
        w2 = self.width**2
        h = (4.0 / w2**2) * fpp[:, None, None] * y[:, :, None] * y[:, None, :]
        h += (2.0 / w2) * fp[:, None, None] * np.eye(3)
        return h[0] if single else h

    def laplacian(self, x):
        h = self.hessian(x)
        return np.trace(h, axis1=-2, axis2=-1)


class GaussianProfile:
    """Isotropic Gaussian scalar profile, effectively supported near its center."""

    def __init__(self, center=(0.5, 0.5, 0.5), width=0.12, amplitude=1.0):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.width = float(width)
        self.amplitude = float(amplitude)
        if self.width <= 0:
            raise ValueError("width must be positive")
        self.sup_norm = abs(self.amplitude)

    def value(self, x):
        pts, single = _pts2d(x)
        y = pts - self.center
        f = self.amplitude * np.exp(-(y**2).sum(axis=1) / (2.0 * self.width**2))
        return f[0] if single else f

    def gradient(self, x):
        pts, single = _pts2d(x)
        y = pts - self.center
        f = self.amplitude * np.exp(-(y**2).sum(axis=1) / (2.0 * self.width**2))
        g = -f[:, None] * y / self.width**2
        return g[0] if single else g

    def hessian(self, x):
        pts, single = _pts2d(x)
        y = pts - self.center
        w2 = self.width**2
        f = self.amplitude * np.exp(-(y**2).sum(axis=1) / (2.0 * w2))
        h = f[:, None, None] * (y[:, :, None] * y[:, None, :] / w2**2 - np.eye(3) / w2)
        return h[0] if single else h

    def laplacian(self, x):
        h = self.hessian(x)
        return np.trace(h, axis1=-2, axis2=-1)


class TrigProduct:
    """Product of one cosine or sine per axis on the unit box.

    Eigenfunction of the Laplacian: lap g = -(2 pi)^2 (j1^2+j2^2+j3^2) g,
    which makes ball-integral corrections exact to the stated order.
    """

    def __init__(self, freqs, kinds=("cos", "cos", "cos")):
        self.freqs = tuple(int(j) for j in freqs)
        self.kinds = tuple(kinds)
        if len(self.freqs) != 3 or len(self.kinds) != 3:
            raise ValueError("need one frequency and one kind per axis")
        for j, k in zip(self.freqs, self.kinds):
            if k not in ("cos", "sin"):
                raise ValueError("kind must be 'cos' or 'sin'")
            if k == "sin" and j == 0:
                raise ValueError("sin with frequency 0 is identically zero")
        self.sup_norm = 1.0

    def _factors(self, pts):
        out = []
        for d in range(3):
            a = 2.0 * math.pi * self.freqs[d] * pts[:, d]
            out.append(np.cos(a) if self.kinds[d] == "cos" else np.sin(a))
        return out

    def value(self, x):
        pts, single = _pts2d(x)
        f = self._factors(pts)
        v = f[0] * f[1] * f[2]
        return v[0] if single else v

    def gradient(self, x):
        pts, single = _pts2d(x)
        f = self._factors(pts)
        g = np.empty((len(pts), 3))
        for d in range(3):
            a = 2.0 * math.pi * self.freqs[d] * pts[:, d]
            w = 2.0 * math.pi * self.freqs[d]
            df = -w * np.sin(a) if self.kinds[d] == "cos" else w * np.cos(a)
            g[:, d] = df * f[(d + 1) % 3] * f[(d + 2) % 3]
        return g[0] if single else g

    def laplacian(self, x):
        k2 = (2.0 * math.pi) ** 2 * sum(j * j for j in self.freqs)
        return -k2 * self.value(x)

    @classmethod
    def family(cls, degree=3):
        """All products with total frequency <= degree, both phases per axis."""
        out = []
        for j1 in range(degree + 1):
            for j2 in range(degree + 1 - j1):
                for j3 in range(degree + 1 - j1 - j2):
                    kinds_axis = [("cos",) if j == 0 else ("cos", "sin") for j in (j1, j2, j3)]
                    for k1 in kinds_axis[0]:
                        for k2 in kinds_axis[1]:
                            for k3 in kinds_axis[2]:
                                out.append(cls((j1, j2, j3), (k1, k2, k3)))
        return out


class SolenoidalField:
    """Divergence-free vector field grad(chi) x c for a scalar profile chi.

    The curl construction makes the divergence vanish identically, so these
    serve both as admissible test fields and as default forcings.
    """

    def __init__(self, profile, direction=(0.0, 0.0, 1.0)):
        self.profile = profile
        self.direction = np.asarray(direction, dtype=float).reshape(3)

    def value(self, x):
        pts, single = _pts2d(x)
        v = np.cross(self.profile.gradient(pts), self.direction)
        return v[0] if single else v

    def gradient(self, x):
        # d_j psi_i = eps_{ikl} (d_j d_k chi) c_l
        pts, single = _pts2d(x)
        h = self.profile.hessian(pts)
        eps = _levi_civita()
        g = np.einsum("ikl,mjk,l->mij", eps, h, self.direction)
        return g[0] if single else g

    def strain(self, x):
        g = self.gradient(x)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    @classmethod
    def random_bump(cls, rng, box=None, width_range=(0.15, 0.3)):
        """Seeded compactly supported instance, support inside the box."""
        box = box or unit_box()
        w = rng.uniform(*width_range)
        lo = box.lo + w
        hi = box.hi - w
        if np.any(hi <= lo):
            raise ValueError("box too small for the requested width")
        c = lo + (hi - lo) * rng.random(3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        return cls(ScalarBump(c, w, amplitude=1.0), d)


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[1, 0, 2] = eps[2, 1, 0] = -1.0
    return eps


class ShearForcing:
    """Linear shear S (x - c) multiplied by a smooth compact window."""

    def __init__(self, strain, center=(0.5, 0.5, 0.5), width=0.35):
        self.strain = np.asarray(strain, dtype=float).reshape(3, 3)
        self.window = ScalarBump(center, width)
        self.center = self.window.center

    def value(self, x):
        pts, single = _pts2d(x)
        v = self.window.value(pts)[:, None] * (pts - self.center) @ self.strain.T
        return v[0] if single else v


class DirectionalBump:
    """Constant direction times a narrow scalar bump: a smoothed point force."""

    def __init__(self, direction=(0.0, 0.0, 1.0), center=(0.5, 0.5, 0.5), width=0.08):
        self.direction = np.asarray(direction, dtype=float).reshape(3)
        self.bump = ScalarBump(center, width)

    def value(self, x):
        pts, single = _pts2d(x)
        v = self.bump.value(pts)[:, None] * self.direction
        return v[0] if single else v


def make_forcing(name, **kw):
    """Named analytic forcing families used by the command line tools."""
    if name == "gaussian_bump":
        center = kw.get("center", (0.5, 0.5, 0.5))
        width = kw.get("width", 0.12)
        direction = kw.get("direction", (0.0, 0.0, 1.0))
        strength = kw.get("strength", 1.0)
        return SolenoidalField(GaussianProfile(center, width, strength), direction)
    if name == "shear":
        strain = kw.get("strain")
        if strain is None:
            strain = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        return ShearForcing(strain, kw.get("center", (0.5, 0.5, 0.5)), kw.get("width", 0.35))
    if name == "point_smoothed":
        return DirectionalBump(
            kw.get("direction", (0.0, 0.0, 1.0)),
            kw.get("center", (0.5, 0.5, 0.5)),
            kw.get("width", 0.08),
        )
    if name == "solenoidal_bump":
        center = kw.get("center", (0.5, 0.5, 0.5))
        width = kw.get("width", 0.35)
        direction = kw.get("direction", (0.0, 0.0, 1.0))
        strength = kw.get("strength", 1.0)
        return SolenoidalField(ScalarBump(center, width, strength), direction)
    raise ValueError(f"unknown forcing family {name!r}")


FORCING_FAMILIES = ("gaussian_bump", "shear", "point_smoothed", "solenoidal_bump")


class GridSampledField:
    """Vector field known at the cell centers of a regular grid.

    Values are trilinearly interpolated between centers; gradients come from
    central differences on the grid, interpolated the same way, so probe
    evaluations carry the usual O(h^2) discretization error.
    """

    def __init__(self, origin, spacing, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 4 or values.shape[3] != 3:
            raise ValueError("values must have shape (nx, ny, nz, 3)")
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.spacing = float(spacing)
        self.values = values
        axes = [
            self.origin[d] + self.spacing * (np.arange(values.shape[d]) + 0.5)
            for d in range(3)
        ]
        self._interp = RegularGridInterpolator(
            axes, values, method="linear", bounds_error=False, fill_value=None
        )
        self._grad_interp = None
        self._axes = axes

    def value(self, x):
        pts, single = _pts2d(x)
        v = self._interp(pts)
        return v[0] if single else v

    def gradient(self, x):
        if self._grad_interp is None:
            parts = np.gradient(self.values, self.spacing, axis=(0, 1, 2))
            # stack as [i, j] = d_j u_i
            g = np.stack(parts, axis=-1)
            self._grad_interp = RegularGridInterpolator(
                self._axes, g, method="linear", bounds_error=False, fill_value=None
            )
        pts, single = _pts2d(x)
        g = self._grad_interp(pts)
        return g[0] if single else g
