"""Flow solvers for dilute ball suspensions.

Contents: the method-of-reflections sweep for per-ball strain amplitudes,
singularity-sum flow fields, grid-based free-space Stokes solves through
cached FFT kernel tables, the homogenized variable-viscosity model, field
norms, and exterior Dirichlet energies.

Sign conventions.  A converged reflections state with per-ball data E_i
produces the field sum_j r V[S_j]((x - x_j)/r) whose strain at ball i equals
E_i; to cancel an ambient strain (rigid suspended balls) feed the sweep the
negated ambient strain.
"""

import math
import os
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.fft
from scipy.spatial import cKDTree

from .config import Box, partition_by_separation, unit_box
from .fields import GridSampledField
from .kernels import (
    isolated_stresslet_strength,
    stresslet_pressure,
    stresslet_strain_split,
    stresslet_velocity,
    stresslet_velocity_gradient,
    stresslet_velocity_gradient_paired,
)
from .quadrature import shell_rule, sphere_rule, stratified_points

_PROBE_CHUNK = 8192


def _workers():
    try:
        return max(1, int(os.environ.get("DILUTE_STOKES_THREADS", "1")))
    except ValueError:
        return 1


class ConvergenceError(RuntimeError):
    """Iteration failed to contract; carries the residual history."""

    def __init__(self, message, history=None, ratio=None):
        super().__init__(message)
        self.history = list(history or [])
        self.ratio = ratio


def _as_points(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts), single


class FlowField:
    """Velocity field with optional gradient and pressure evaluators.

    gradient(x) returns (m, 3, 3) indexed [point, i, j] = d_j u_i; when no
    analytic gradient closure is available it falls back to central finite
    differences of the velocity.
    """

    _FD_STEP = 1e-5

    def __init__(self, velocity, gradient=None, pressure=None, tag="field", meta=None):
        self._velocity = velocity
        self._gradient = gradient
        self._pressure = pressure
        self.tag = tag
        self.meta = dict(meta or {})

    def velocity(self, x):
        pts, single = _as_points(x)
        v = np.asarray(self._velocity(pts), dtype=float)
        return v[0] if single else v

    def gradient(self, x):
        pts, single = _as_points(x)
        if self._gradient is not None:
            g = np.asarray(self._gradient(pts), dtype=float)
        else:
            h = self._FD_STEP
            g = np.empty((len(pts), 3, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                g[:, :, j] = (self._velocity(pts + e) - self._velocity(pts - e)) / (2 * h)
        return g[0] if single else g

    def strain(self, x):
        g = self.gradient(x)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def pressure(self, x):
        if self._pressure is None:
            raise NotImplementedError(f"field {self.tag!r} carries no pressure")
        pts, single = _as_points(x)
        p = np.asarray(self._pressure(pts), dtype=float)
        return p[0] if single else p

    def __add__(self, other):
        grad = None
        if self._gradient is not None and other._gradient is not None:
            grad = lambda pts: self._gradient(pts) + other._gradient(pts)
        pres = None
        if self._pressure is not None and other._pressure is not None:
            pres = lambda pts: self._pressure(pts) + other._pressure(pts)
        return FlowField(
            lambda pts: self._velocity(pts) + other._velocity(pts),
            gradient=grad,
            pressure=pres,
            tag=f"{self.tag}+{other.tag}",
        )

    def __neg__(self):
        grad = None if self._gradient is None else (lambda pts: -self._gradient(pts))
        pres = None if self._pressure is None else (lambda pts: -self._pressure(pts))
        return FlowField(lambda pts: -self._velocity(pts), grad, pres, tag=f"-{self.tag}")

    def __sub__(self, other):
        return self + (-other)

    @classmethod
    def zero(cls):
        return cls(
            lambda pts: np.zeros((len(pts), 3)),
            gradient=lambda pts: np.zeros((len(pts), 3, 3)),
            pressure=lambda pts: np.zeros(len(pts)),
            tag="zero",
        )

    @classmethod
    def from_grid(cls, grid, tag="grid", meta=None):
        return cls(grid.value, gradient=grid.gradient, tag=tag, meta=meta)

    @classmethod
    def from_analytic(cls, obj, tag="analytic"):
        """Wrap an object exposing value/gradient (the analytic field classes)."""
        grad = getattr(obj, "gradient", None)
        return cls(obj.value, gradient=grad, tag=tag)


def linear_flow(grad):
    """Flow with constant velocity gradient, u(x) = G x."""
    G = np.asarray(grad, dtype=float).reshape(3, 3)
    return FlowField(
        lambda pts: pts @ G.T,
        gradient=lambda pts: np.broadcast_to(G, (len(pts), 3, 3)),
        tag="linear",
    )


def _deviatoric_batch(mats):
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    tr = np.trace(sym, axis1=-2, axis2=-1)
    return sym - tr[:, None, None] / 3.0 * np.eye(3)


def _ambient_to_data(ambient, centers):
    """Normalize ambient strain input to per-ball deviatoric (n, 3, 3) data."""
    n = len(centers)
    if hasattr(ambient, "strain"):
        mats = np.asarray(ambient.strain(centers), dtype=float)
    elif callable(ambient):
        mats = np.asarray(ambient(centers), dtype=float)
    else:
        mats = np.asarray(ambient, dtype=float)
        if mats.shape == (3, 3):
            mats = np.broadcast_to(mats, (n, 3, 3)).copy()
    if mats.shape != (n, 3, 3):
        raise ValueError("ambient strain must give one 3x3 matrix per ball")
    return _deviatoric_batch(mats)


def interaction_strains(centers, strains, radius):
    """T_i = sum over j != i of the strain ball j's field induces at x_i."""
    n = len(centers)
    T = np.zeros((n, 3, 3))
    for j in range(n):
        y = (centers - centers[j]) / radius
        keep = np.arange(n) != j
        g = stresslet_velocity_gradient(strains[j], y[keep])
        T[keep] += 0.5 * (g + np.swapaxes(g, -1, -2))
    return T


@dataclass
class StressletState:
    """Converged (or initial) per-ball strain amplitudes of a reflections run."""

    centers: np.ndarray
    radius: float
    mu: float
    data: np.ndarray
    strains: np.ndarray
    residuals: list = dataclass_field(default_factory=list)
    sweeps: int = 0
    converged: bool = True
    scheme: str = "jacobi"

    @property
    def n(self):
        return len(self.centers)

    def strengths(self):
        """Symmetric force-moment amplitude per ball, 5 mu vol(B) S_i."""
        coef = 5.0 * self.mu * (4.0 * math.pi / 3.0) * self.radius**3
        return coef * self.strains

    def field(self):
        return stresslet_sum_field(self.centers, self.strains, self.radius, self.mu)

    def ball_strains(self):
        """Strain of the state's own field at the ball centers."""
        own = self.strains
        return own + interaction_strains(self.centers, self.strains, self.radius)


def stresslet_sum_field(centers, strains, radius, mu=1.0):
    """Flow field of many rescaled strain responses, one per ball."""
    centers = np.asarray(centers, dtype=float)
    strains = np.asarray(strains, dtype=float)

    def velocity(pts):
        out = np.zeros((len(pts), 3))
        for lo in range(0, len(pts), _PROBE_CHUNK):
            sl = slice(lo, lo + _PROBE_CHUNK)
            acc = np.zeros((pts[sl].shape[0], 3))
            for j in range(len(centers)):
                y = (pts[sl] - centers[j]) / radius
                acc += radius * stresslet_velocity(strains[j], y)
            out[sl] = acc
        return out

    def gradient(pts):
        out = np.zeros((len(pts), 3, 3))
        for lo in range(0, len(pts), _PROBE_CHUNK):
            sl = slice(lo, lo + _PROBE_CHUNK)
            acc = np.zeros((pts[sl].shape[0], 3, 3))
            for j in range(len(centers)):
                y = (pts[sl] - centers[j]) / radius
                acc += stresslet_velocity_gradient(strains[j], y)
            out[sl] = acc
        return out

    def pressure(pts):
        out = np.zeros(len(pts))
        for j in range(len(centers)):
            y = (pts - centers[j]) / radius
            out += mu * stresslet_pressure(strains[j], y)
        return out

    return FlowField(velocity, gradient=gradient, pressure=pressure, tag="stresslets")


def zeroth_reflection(config, ambient, mu=1.0):
    """One-shot superposition: every ball answers its own data, no coupling."""
    data = _ambient_to_data(ambient, config.centers)
    return StressletState(
        centers=config.centers,
        radius=config.radius,
        mu=mu,
        data=data,
        strains=data.copy(),
        residuals=[],
        sweeps=0,
        converged=True,
    )


def reflections_solve(config, ambient, mu=1.0, tol=1e-8, max_sweeps=60, scheme="jacobi"):
    """Iterate per-ball strain corrections until the update norm drops below tol.

    Jacobi sweeps (default) update every ball from the previous sweep's
    state, which keeps runs bitwise reproducible under any execution order;
    gauss_seidel uses updates immediately and usually converges a bit
    faster.  Raises ConvergenceError when the update norm fails to decrease
    strictly or the sweep budget runs out; the exception carries the
    residual history.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scheme not in ("jacobi", "gauss_seidel"):
        raise ValueError("scheme must be 'jacobi' or 'gauss_seidel'")
    centers = config.centers
    radius = config.radius
    n = len(centers)
    data = _ambient_to_data(ambient, centers)
    S = data.copy()
    history = []
    for sweep in range(1, max_sweeps + 1):
        if scheme == "jacobi":
            S_new = data - interaction_strains(centers, S, radius)
            resid = float(np.sqrt(((S_new - S) ** 2).sum(axis=(1, 2))).max()) if n else 0.0
            S = S_new
        else:
            resid = 0.0
            for i in range(n):
                y = (centers[i] - centers) / radius
                g = stresslet_velocity_gradient_paired(S, y)
                g[i] = 0.0
                T = 0.5 * (g + np.swapaxes(g, -1, -2)).sum(axis=0)
                new_i = data[i] - T
                resid = max(resid, float(np.linalg.norm(new_i - S[i])))
                S[i] = new_i
        history.append(resid)
        if resid <= tol:
            return StressletState(
                centers=centers,
                radius=radius,
                mu=mu,
                data=data,
                strains=S,
                residuals=history,
                sweeps=sweep,
                converged=True,
                scheme=scheme,
            )
        if len(history) >= 2 and resid >= history[-2]:
            raise ConvergenceError(
                f"update norm stopped decreasing at sweep {sweep} "
                f"({history[-2]:.3e} -> {resid:.3e}); balls too close",
                history=history,
                ratio=resid / history[-2],
            )
    raise ConvergenceError(
        f"no convergence to {tol:.1e} within {max_sweeps} sweeps "
        f"(last update {history[-1]:.3e})",
        history=history,
    )


def effective_viscosity_estimate(config, mu, ambient_strain, tol=1e-8, max_sweeps=60):
    """Viscosity ratio of the suspension under a constant ambient strain.

    Solves the reflections fixed point with the given strain data and closes
    the volume-averaged stress: ratio = 1 + 5 vol(B) sum_i (S_i : E) /
    (2 |domain| E : E).  Independent of the strain amplitude and of mu.
    """
    from .config import as_strain

    E = as_strain(ambient_strain)
    if np.linalg.norm(E) == 0:
        raise ValueError("ambient strain must be nonzero")
    state = reflections_solve(config, E, mu=mu, tol=tol, max_sweeps=max_sweeps)
    num = 5.0 * config.ball_volume * np.einsum("mij,ij->", state.strains, E)
    den = 2.0 * config.box.volume * np.einsum("ij,ij->", E, E)
    return 1.0 + num / den, state


def suspension_flow(config, background, mu=1.0, tol=1e-8, max_sweeps=60):
    """Background flow plus rigid-ball disturbances.

    The disturbance must cancel the background strain inside every ball, so
    the sweep runs on the negated background strain; the returned composite
    has (to solver tolerance) zero strain at each center.
    """
    data = -_deviatoric_batch(background.strain(config.centers))
    state = reflections_solve(config, data, mu=mu, tol=tol, max_sweeps=max_sweeps)
    return background + state.field(), state


# ---------------------------------------------------------------------------
# grid convolution solvers

_SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_SYM_WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])

_KITS = {}


class _ConvolutionKit:
    """Cached FFT kernel tables for free-space sums on an N^3 cell grid.

    Offsets are laid out in wraparound order on a 2N grid (linear, not
    circular, convolution); the plane at index N is zeroed.  The singular
    zero offset uses the equal-volume ball average of the point response;
    the gradient kernel's average there vanishes by parity.
    """

    def __init__(self, N, h):
        self.N = N
        self.h = h
        w = _workers()
        c = np.empty(2 * N)
        c[:N] = np.arange(N)
        c[N] = N
        c[N + 1 :] = np.arange(-(N - 1), 0)
        c *= h
        X = c[:, None, None]
        Y = c[None, :, None]
        Z = c[None, None, :]
        r2 = X**2 + Y**2 + Z**2
        r2[0, 0, 0] = 1.0  # patched after evaluation
        r = np.sqrt(r2)
        r3 = r2 * r
        r5 = r3 * r2
        coords = (X, Y, Z)
        a_reg = h * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
        dead = np.zeros(2 * N, dtype=bool)
        dead[N] = True

        def _cleanup(K, center):
            K[0, 0, 0] = center
            K[dead, :, :] = 0.0
            K[:, dead, :] = 0.0
            K[:, :, dead] = 0.0
            return scipy.fft.rfftn(K, workers=w)

        pref = 1.0 / (8.0 * math.pi)
        self.point_hat = {}
        for i in range(3):
            for j in range(i, 3):
                K = pref * (coords[i] * coords[j] / r3 + (i == j) / r)
                self.point_hat[(i, j)] = _cleanup(
                    K, (i == j) / (4.0 * math.pi * a_reg)
                )
        self.grad_hat = {}
        for i in range(3):
            xi = coords[i]
            for p, (j, k) in enumerate(_SYM_PAIRS):
                K = pref * ((j == k) * xi / r3 - 3.0 * xi * coords[j] * coords[k] / r5)
                self.grad_hat[(i, p)] = _cleanup(K, 0.0)

    def _conv(self, hat_table, comps):
        w = _workers()
        s = (2 * self.N,) * 3
        hats = [scipy.fft.rfftn(f, s=s, workers=w) for f in comps]
        out = np.empty((self.N, self.N, self.N, 3))
        for i in range(3):
            acc = None
            for m, fh in enumerate(hats):
                term = hat_table(i, m) * fh
                acc = term if acc is None else acc + term
            out[..., i] = scipy.fft.irfftn(acc, s=s, workers=w)[
                : self.N, : self.N, : self.N
            ]
        return out * self.h**3

    def point_response(self, f):
        """(point-force kernel) * f for f of shape (N, N, N, 3)."""
        comps = [f[..., j] for j in range(3)]
        return self._conv(
            lambda i, j: self.point_hat[(min(i, j), max(i, j))], comps
        )

    def strain_source_response(self, G):
        """Divergence-form response for a symmetric source G (N, N, N, 3, 3).

        Computes the convolution of the kernel gradient against G, which is
        the weak form of (point kernel) * div G for cellwise-constant G.
        """
        comps = [
            _SYM_WEIGHTS[p] * G[..., j, k] for p, (j, k) in enumerate(_SYM_PAIRS)
        ]
        return self._conv(lambda i, p: self.grad_hat[(i, p)], comps)


def _kit(N, h):
    key = (N, round(h, 15))
    if key not in _KITS:
        _KITS[key] = _ConvolutionKit(N, h)
    return _KITS[key]


def _cell_grid(box, N):
    h = box.extent[0] / N
    if abs(box.extent[1] - box.extent[0]) > 1e-12 or abs(box.extent[2] - box.extent[0]) > 1e-12:
        raise ValueError("grid solves expect a cubic box")
    ax = [box.lo[d] + h * (np.arange(N) + 0.5) for d in range(3)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    return h, np.stack([X, Y, Z], axis=-1)


def _forcing_values(f, pts):
    if hasattr(f, "velocity"):
        return f.velocity(pts)
    if hasattr(f, "value"):
        return f.value(pts)
    return f(pts)


@dataclass(frozen=True)
class EinsteinModel:
    """Homogenized medium with viscosity mu (1 + 5/2 fraction density)."""

    mu: float
    fraction: float
    rho: object = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("viscosity must be positive")
        if self.fraction < 0:
            raise ValueError("volume fraction must be nonnegative")
        if self.fraction > 0 and self.rho is None:
            raise ValueError("a density is required at positive volume fraction")

    def viscosity_ratio(self, pts):
        """mu_eff / mu at the given points; 1 outside the density support."""
        if self.fraction == 0 or self.rho is None:
            return np.ones(len(np.atleast_2d(pts)))
        return 1.0 + 2.5 * self.fraction * self.rho.value_at(pts)


def solve_einstein(f, model, grid=64, tol=1e-8, max_iter=40, box=None):
    """Velocity of the homogenized model by fixed-point grid iteration.

    u0 = (point kernel) * f / mu, then u <- u0 + (kernel gradient) *
    (5 fraction rho D(u)) until the max-norm increment drops below tol.
    At zero volume fraction this returns the plain free-space solution after
    one pass.  A non-decreasing increment aborts with the measured ratio,
    the signature of a fraction outside the contraction regime.
    """
    box = box or (model.rho.box if model.rho is not None else unit_box())
    h, cells = _cell_grid(box, grid)
    kit = _kit(grid, h)
    fv = np.asarray(_forcing_values(f, cells.reshape(-1, 3))).reshape(grid, grid, grid, 3)
    u0 = kit.point_response(fv) / model.mu
    lam = model.fraction
    if lam > 0:
        rho_c = model.rho.value_at(cells.reshape(-1, 3)).reshape(grid, grid, grid)
    u = u0
    increments = []
    for it in range(1, max_iter + 1):
        if lam == 0:
            increments.append(0.0)
            break
        du = np.gradient(u, h, axis=(0, 1, 2))
        D = np.empty(u.shape + (3,))
        for jidx in range(3):
            for kidx in range(3):
                D[..., jidx, kidx] = 0.5 * (du[kidx][..., jidx] + du[jidx][..., kidx])
        G = 5.0 * lam * rho_c[..., None, None] * D
        u_new = u0 + kit.strain_source_response(G)
        inc = float(np.abs(u_new - u).max())
        increments.append(inc)
        if len(increments) >= 2 and increments[-2] > 0 and inc >= increments[-2]:
            raise ConvergenceError(
                f"grid iteration stopped contracting at step {it}",
                history=increments,
                ratio=inc / increments[-2],
            )
        u = u_new
        if inc <= tol:
            break
    else:
        raise ConvergenceError(
            f"grid iteration missed tol {tol:.1e} in {max_iter} steps",
            history=increments,
        )
    gf = GridSampledField(box.lo, h, u)
    return FlowField.from_grid(
        gf,
        tag="einstein" if lam > 0 else "stokes",
        meta={"iterations": len(increments), "increments": increments, "grid": grid},
    )


def stokes_flow(f, mu=1.0, grid=64, box=None):
    """Plain free-space solve, the zero-fraction special case."""
    return solve_einstein(f, EinsteinModel(mu, 0.0), grid=grid, box=box)


# ---------------------------------------------------------------------------
# density-coupled background flow and composite approximations

def bulk_stress_flow(phi, rho, fraction, mu=1.0, method="grid"):
    """Smooth flow driven by the coarse-grained suspension stress.

    Solves the free-space problem with source div(5 fraction rho D(phi)) by
    integrating the kernel gradient against the cellwise source, either on
    the density grid (FFT, interpolated evaluations) or by direct summation
    per probe point (slow, for cross-checks; no gradient closure).
    """
    if fraction < 0:
        raise ValueError("volume fraction must be nonnegative")
    if fraction == 0:
        return FlowField.zero()
    cc = rho.cell_centers()
    strain = _deviatoric_batch(np.asarray(phi.gradient(cc), dtype=float))
    Fc = 5.0 * fraction * rho.cell_values()[:, None, None] * strain
    N = rho.dims[0]
    h = rho.spacing
    if method == "grid":
        if rho.dims[1] != N or rho.dims[2] != N:
            raise ValueError("grid method expects a cubic density grid")
        kit = _kit(N, h)
        G = Fc.reshape(N, N, N, 3, 3, order="F")
        u = kit.strain_source_response(G)
        gf = GridSampledField(rho.origin, h, u)
        return FlowField.from_grid(gf, tag="bulk-stress")
    if method != "direct":
        raise ValueError("method must be 'grid' or 'direct'")
    a_reg = h * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    w = h**3
    trF = np.trace(Fc, axis1=1, axis2=2)

    def velocity(pts):
        out = np.zeros((len(pts), 3))
        cell_chunk = 4096
        for plo in range(0, len(pts), 256):
            psl = slice(plo, plo + 256)
            p = pts[psl]
            acc = np.zeros((len(p), 3))
            for clo in range(0, len(cc), cell_chunk):
                csl = slice(clo, clo + cell_chunk)
                d = p[:, None, :] - cc[None, csl, :]
                r2 = (d**2).sum(axis=2)
                r = np.sqrt(r2)
                keep = r >= a_reg
                inv3 = np.where(keep, 1.0 / np.where(keep, r, 1.0) ** 3, 0.0)
                inv5 = np.where(keep, 1.0 / np.where(keep, r, 1.0) ** 5, 0.0)
                dFd = np.einsum("pci,cij,pcj->pc", d, Fc[csl], d)
                acc += (w / (8.0 * math.pi)) * (
                    np.einsum("pc,pci->pi", trF[csl] * inv3 - 3.0 * dFd * inv5, d)
                )
            out[psl] = acc
        return out

    return FlowField(velocity, tag="bulk-stress-direct")


def superposition_approximation(config, cutoff, phi, rho, fraction, mu=1.0, base=None):
    """Bulk stress flow plus one strain response per well-separated ball.

    Crowded balls (nearest neighbor under cutoff * n^(-1/3)) contribute no
    singularity; their effect stays in the smooth part only.
    """
    part = partition_by_separation(config, cutoff)
    if base is None:
        base = bulk_stress_flow(phi, rho, fraction, mu)
    idx = part.isolated
    if len(idx) == 0:
        out = base
    else:
        strains = _deviatoric_batch(np.asarray(phi.gradient(config.centers[idx])))
        out = base + stresslet_sum_field(config.centers[idx], strains, config.radius, mu)
    out.meta["isolated"] = part.isolated
    out.meta["crowded"] = part.crowded
    return out


def solve_suspension_correction(
    config, cutoff, phi, rho, fraction, mu=1.0, tol=1e-8, max_sweeps=60
):
    """Composite field matching the prescribed ball strains D(phi)(x_i).

    Assembles the superposition approximation, then lets the reflections
    sweep supply whatever strain the approximation still misses at each
    center.  The composite's strain at every center agrees with D(phi) to
    solver tolerance plus sampling error.
    """
    app = superposition_approximation(config, cutoff, phi, rho, fraction, mu)
    target = _deviatoric_batch(np.asarray(phi.gradient(config.centers)))
    have = _deviatoric_batch(np.asarray(app.strain(config.centers)))
    state = reflections_solve(
        config, target - have, mu=mu, tol=tol, max_sweeps=max_sweeps
    )
    out = app + state.field()
    out.meta.update(app.meta)
    out.meta["sweeps"] = state.sweeps
    return out, state


# ---------------------------------------------------------------------------
# norms and energies

def field_norm(field, region, exclude=None, p=2, kind="value", strata=64, seed=0):
    """Stratified Monte-Carlo L^p norm of a field over a box region.

    One sample per stratum cell; samples inside excluded balls are dropped
    and their cells contribute nothing, which is the volume-reweighted
    estimate of the integral over region minus balls.  p = inf gives the
    sampled max.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if kind not in ("value", "gradient"):
        raise ValueError("kind must be 'value' or 'gradient'")
    rng = np.random.Generator(np.random.Philox(key=seed))
    pts, vcell = stratified_points(region, strata, rng)
    if exclude is not None:
        d, _ = cKDTree(exclude.centers).query(pts, k=1)
        pts = pts[d > exclude.radius]
    if len(pts) == 0:
        raise ValueError("every sample fell inside an excluded ball")
    if kind == "value":
        vals = field.velocity(pts)
        mag = np.linalg.norm(vals, axis=1)
    else:
        g = field.gradient(pts)
        mag = np.sqrt((g**2).sum(axis=(1, 2)))
    if math.isinf(p):
        return float(mag.max())
    return float((np.sum(mag**p) * vcell) ** (1.0 / p))


def _energy_terms(states, outer_radius, strata, seed, center, shell_order):
    """Near/mid/tail energy pieces for states sharing centers and radius.

    All states are integrated on the same quadrature nodes so differences
    between them carry no independent sampling noise.  Returns per-state
    (near, mid, tail) triples plus the kept mid samples of each state's
    dissipation for error estimates.
    """
    first = states[0]
    centers = first.centers
    radius = first.radius
    for st in states[1:]:
        if not (np.array_equal(st.centers, centers) and st.radius == radius):
            raise ValueError("states must share ball geometry")
    n = len(centers)
    if center is None:
        center = centers.mean(axis=0)
    span = np.linalg.norm(centers - center, axis=1).max() if n else 0.0
    if outer_radius <= span + 2 * radius:
        raise ValueError("outer radius must enclose every ball with margin")
    from .config import nearest_neighbor_distances

    nn = nearest_neighbor_distances(centers)
    room = outer_radius - np.linalg.norm(centers - center, axis=1)
    caps = np.minimum(0.4999 * nn, room)
    caps = np.maximum(caps, radius * (1.0 + 1e-9))
    fields = [st.field() for st in states]

    def dissipation(fld, mu, pts):
        D = fld.strain(pts)
        return 2.0 * mu * (D**2).sum(axis=(1, 2))

    nears = np.zeros(len(states))
    for i in range(n):
        # geometric panels keep the power-law decay resolved at any cap/radius
        edges = [radius]
        while 2.0 * edges[-1] < caps[i]:
            edges.append(2.0 * edges[-1])
        edges.append(caps[i])
        for lo, hi in zip(edges[:-1], edges[1:]):
            qp, qw = shell_rule(lo, hi, shell_order)
            for k, (fld, st) in enumerate(zip(fields, states)):
                nears[k] += float(qw @ dissipation(fld, st.mu, centers[i] + qp))
    region = Box(center - outer_radius, center + outer_radius)
    rng = np.random.Generator(np.random.Philox(key=seed))
    pts, vcell = stratified_points(region, strata, rng)
    keep = np.linalg.norm(pts - center, axis=1) <= outer_radius
    # drop samples inside any quadrature shell
    for i in range(n):
        keep &= np.linalg.norm(pts - centers[i], axis=1) > caps[i]
    pts = pts[keep]
    samples = [
        dissipation(fld, st.mu, pts) if len(pts) else np.zeros(0)
        for fld, st in zip(fields, states)
    ]
    mids = [float(s.sum() * vcell) for s in samples]
    # far-field tail through the combined moment: the strain beyond the outer
    # radius decays as slow (a/s)^3 + fast (a/s)^5, so the radial integrals
    # close in powers of a/R
    sph, wq = sphere_rule(24)
    a, R = radius, outer_radius
    tails = []
    for st in states:
        T = _deviatoric_batch(st.strains.sum(axis=0)[None])[0]
        slow, fast = stresslet_strain_split(T, sph, radius=1.0)
        i33 = float((wq * (slow * slow).sum(axis=(1, 2))).sum()) * a**6 / (3.0 * R**3)
        i35 = float((wq * (slow * fast).sum(axis=(1, 2))).sum()) * 2.0 * a**8 / (5.0 * R**5)
        i55 = float((wq * (fast * fast).sum(axis=(1, 2))).sum()) * a**10 / (7.0 * R**7)
        tails.append(2.0 * st.mu * (i33 + i35 + i55))
    return nears, mids, tails, samples, vcell, span


def exterior_energy(
    state, outer_radius=3.0, strata=32, seed=0, center=None, shell_order=12
):
    """Dirichlet energy 2 mu int |D u|^2 of a stresslet sum outside the balls.

    The energy concentrates in thin neighborhoods of the balls, so each ball
    gets a spherical-shell quadrature out to half its nearest-neighbor
    distance; the smooth remainder over the enclosing ball is stratified
    Monte-Carlo, and the slowly decaying far field beyond the outer radius
    is added analytically through the combined moment.
    """
    nears, mids, tails, _, _, _ = _energy_terms(
        [state], outer_radius, strata, seed, center, shell_order
    )
    return nears[0] + mids[0] + tails[0]


def exterior_energy_pair(
    state_a, state_b, outer_radius=3.0, strata=32, seed=0, center=None, shell_order=12
):
    """Energies of two states on shared nodes, with a difference tolerance.

    Returns (e_a, e_b, tol) where tol bounds the quadrature error of the
    difference e_a - e_b: three standard errors of the paired Monte-Carlo
    samples plus a bound on the combined-moment tail model error.
    """
    nears, mids, tails, samples, vcell, span = _energy_terms(
        [state_a, state_b], outer_radius, strata, seed, center, shell_order
    )
    e_a = nears[0] + mids[0] + tails[0]
    e_b = nears[1] + mids[1] + tails[1]
    diff = samples[0] - samples[1]
    se = float(diff.std(ddof=1) * vcell * np.sqrt(len(diff))) if len(diff) > 1 else 0.0
    a, R = state_a.radius, outer_radius
    tail_err = ((span + a) / R + (a / R) ** 2) * (abs(tails[0]) + abs(tails[1]))
    return e_a, e_b, 3.0 * se + tail_err
