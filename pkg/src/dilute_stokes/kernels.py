"""Singularity kernels for Stokes flow around a unit ball.

The building blocks are the free-space mobility tensor (point-force
response) and the velocity/pressure pair induced by a rigid ball immersed
in a linear straining background.  The strain kernel is normalized to the
unit ball: it equals S x on and inside |x| = 1, decays like |x|^-2, and
solves the homogeneous Stokes equations outside.  Fields around a ball of
radius r centered at c are obtained by the rescaling r * V[S]((x - c)/r),
which leaves the velocity gradient a function of (x - c)/r alone.

All formulas are closed-form and vectorized over trailing point axes.
Viscosity enters only through stress and pressure scaling.
"""

import math

import numpy as np

from .config import as_strain
from .quadrature import ball_rule, shell_rule, sphere_rule


# Points within this distance of the unit sphere are treated as exterior
# limits, so surface quadrature nodes never fall into the interior branch.
_BOUNDARY_TOL = 1e-12


def _prep(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=1)
    return pts, r, single


def oseen_tensor(x):
    """Free-space point-force velocity response, (1/8 pi)(I/r + xx/r^3).

    Input: points, shape (..., 3).  Output: (..., 3, 3).
    """
    pts, r, single = _prep(x)
    if np.any(r == 0):
        raise ValueError("singular at the origin")
    I = np.eye(3)
    out = (I / r[:, None, None] + pts[:, :, None] * pts[:, None, :] / r[:, None, None] ** 3) / (
        8.0 * math.pi
    )
    return out[0] if single else out


def oseen_tensor_gradient(x):
    """Gradient d_k U_ij of the point-force response; output (..., 3, 3, 3)
    indexed [i, j, k]."""
    pts, r, single = _prep(x)
    if np.any(r == 0):
        raise ValueError("singular at the origin")
    I = np.eye(3)
    r3 = r[:, None, None, None] ** 3
    r5 = r[:, None, None, None] ** 5
    xi = pts[:, :, None, None]
    xj = pts[:, None, :, None]
    xk = pts[:, None, None, :]
    g = (
        -I[None, :, :, None] * xk + I[None, :, None, :] * xj + I[None, None, :, :] * xi
    ) / r3 - 3.0 * xi * xj * xk / r5
    g /= 8.0 * math.pi
    return g[0] if single else g


def oseen_tensor_hessian(x):
    """Second derivatives d_l d_k U_ij; output (..., 3, 3, 3, 3) indexed
    [i, j, k, l].  Not locally integrable; only evaluated away from sources."""
    pts, r, single = _prep(x)
    if np.any(r == 0):
        raise ValueError("singular at the origin")
    I = np.eye(3)
    r3 = r[:, None, None, None, None] ** 3
    r5 = r[:, None, None, None, None] ** 5
    r7 = r[:, None, None, None, None] ** 7
    xi = pts[:, :, None, None, None]
    xj = pts[:, None, :, None, None]
    xk = pts[:, None, None, :, None]
    xl = pts[:, None, None, None, :]
    d_ij = I[None, :, :, None, None]
    d_ik = I[None, :, None, :, None]
    d_jk = I[None, None, :, :, None]
    d_il = I[None, :, None, None, :]
    d_jl = I[None, None, :, None, :]
    d_kl = I[None, None, None, :, :]
    g = (
        (-d_ij * d_kl + d_ik * d_jl + d_jk * d_il) / r3
        - 3.0 * (-d_ij * xk + d_ik * xj + d_jk * xi) * xl / r5
        - 3.0 * (d_il * xj * xk + d_jl * xi * xk + d_kl * xi * xj) / r5
        + 15.0 * xi * xj * xk * xl / r7
    )
    g /= 8.0 * math.pi
    return g[0] if single else g


def oseen_cell_average(h):
    """Average of the point-force response over a ball of the same volume as
    a cube cell of side h.  Used to regularize the singular cell in grid
    convolutions; the gradient's average over such a ball vanishes by parity.
    """
    a = h * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    return np.eye(3) / (4.0 * math.pi * a)


def stresslet_velocity(S, x):
    """Velocity of a rigid unit ball responding to strain S.

    Equals S x inside and on the unit sphere, solves Stokes outside, and
    decays like |x|^-2.  Input points (..., 3), output (..., 3).
    """
    S = as_strain(S)
    pts, r, single = _prep(x)
    out = pts @ S.T
    ext = r >= 1.0 - _BOUNDARY_TOL
    if np.any(ext):
        p, rr = pts[ext], r[ext]
        Sx = p @ S.T
        a = np.einsum("ij,ij->i", p, Sx)
        out[ext] = (
            2.5 * a[:, None] * p * (rr[:, None] ** -5 - rr[:, None] ** -7)
            + Sx * rr[:, None] ** -5
        )
    return out[0] if single else out


def stresslet_pressure(S, x):
    """Pressure kernel paired with stresslet_velocity at unit viscosity:
    5 (x . S x)/|x|^5 outside the ball, 0 inside (constant chosen zero).

    Multiply by the viscosity to get the physical pressure.
    """
    S = as_strain(S)
    pts, r, single = _prep(x)
    out = np.zeros(len(pts))
    ext = r >= 1.0 - _BOUNDARY_TOL
    if np.any(ext):
        p, rr = pts[ext], r[ext]
        a = np.einsum("ij,ij->i", p, p @ S.T)
        out[ext] = 5.0 * a * rr**-5
    return out[0] if single else out


def stresslet_velocity_gradient(S, x):
    """Full gradient d_j V_i of the strain response; (..., 3, 3).

    Inside the ball the field is linear, so the gradient is S itself.
    """
    S = as_strain(S)
    pts, r, single = _prep(x)
    out = np.broadcast_to(S, (len(pts), 3, 3)).copy()
    ext = r >= 1.0 - _BOUNDARY_TOL
    if np.any(ext):
        p, rr = pts[ext], r[ext]
        out[ext] = _grad_exterior(S, p, rr)
    return out[0] if single else out


def stresslet_velocity_gradient_paired(S, x):
    """Gradient d_j V_i with one strain per point: S (m, 3, 3), x (m, 3).

    Same algebra as stresslet_velocity_gradient but the strain varies along
    the batch; used by sweeps that accumulate many source balls at once.
    """
    S = np.asarray(S, dtype=float)
    pts = np.asarray(x, dtype=float)
    r = np.linalg.norm(pts, axis=1)
    out = S.copy()
    ext = r >= 1.0 - _BOUNDARY_TOL
    if np.any(ext):
        p, rr, Se = pts[ext], r[ext], S[ext]
        Sx = np.einsum("mij,mj->mi", Se, p)
        a = np.einsum("mi,mi->m", p, Sx)[:, None, None]
        I = np.eye(3)[None]
        r5 = rr[:, None, None] ** -5
        r7 = rr[:, None, None] ** -7
        r9 = rr[:, None, None] ** -9
        xo = p[:, :, None] * p[:, None, :]
        x_Sx = p[:, :, None] * Sx[:, None, :]
        Sx_x = Sx[:, :, None] * p[:, None, :]
        out[ext] = (
            5.0 * x_Sx * r5
            + 2.5 * a * I * r5
            - 12.5 * a * xo * r7
            + Se * r5
            - 5.0 * (Sx_x + x_Sx) * r7
            - 2.5 * a * I * r7
            + 17.5 * a * xo * r9
        )
    return out


def _grad_exterior(S, pts, r):
    Sx = pts @ S.T
    a = np.einsum("ij,ij->i", pts, Sx)[:, None, None]
    I = np.eye(3)[None]
    r5 = r[:, None, None] ** -5
    r7 = r[:, None, None] ** -7
    r9 = r[:, None, None] ** -9
    xo = pts[:, :, None] * pts[:, None, :]
    x_Sx = pts[:, :, None] * Sx[:, None, :]  # x_i (Sx)_j
    Sx_x = Sx[:, :, None] * pts[:, None, :]  # (Sx)_i x_j
    return (
        5.0 * x_Sx * r5
        + 2.5 * a * I * r5
        - 12.5 * a * xo * r7
        + S[None] * r5
        - 5.0 * (Sx_x + x_Sx) * r7
        - 2.5 * a * I * r7
        + 17.5 * a * xo * r9
    )


def stresslet_strain_split(S, x, radius=1.0):
    """Split of the strain of the rescaled field radius * V[S](x / radius)
    into its slowly decaying and fast parts.

    Returns (slow, fast): slow is homogeneous of degree -3 in x (so it picks
    up a radius^3 factor), fast decays like |x|^-5 with a radius^5 factor.
    Their sum is the symmetric velocity gradient at x.  Points must lie
    outside the ball, |x| >= radius.
    """
    S = as_strain(S)
    pts, rr, single = _prep(x)
    y = pts / radius
    r = rr / radius
    if np.any(r < 1.0 - _BOUNDARY_TOL):
        raise ValueError("strain split is defined outside the ball only")
    Sx = y @ S.T
    a = np.einsum("ij,ij->i", y, Sx)[:, None, None]
    I = np.eye(3)[None]
    Q = Sx[:, :, None] * y[:, None, :] + y[:, :, None] * Sx[:, None, :]
    r5 = r[:, None, None] ** -5
    r7 = r[:, None, None] ** -7
    r9 = r[:, None, None] ** -9
    yo = y[:, :, None] * y[:, None, :]
    slow = 2.5 * (Q + a * I) * r5 - 12.5 * a * yo * r7
    fast = S[None] * r5 - 5.0 * Q * r7 - 2.5 * a * I * r7 + 17.5 * a * yo * r9
    if single:
        return slow[0], fast[0]
    return slow, fast


def stresslet_stress(S, x, mu=1.0):
    """Newtonian stress 2 mu sym(grad V) - mu P I of the strain response.

    Outside the ball this uses the exterior velocity/pressure pair; inside,
    the linear extension with zero pressure, giving the constant 2 mu S.
    """
    S = as_strain(S)
    pts, r, single = _prep(x)
    g = stresslet_velocity_gradient(S, pts)
    sym = 0.5 * (g + np.swapaxes(g, 1, 2))
    p = np.atleast_1d(stresslet_pressure(S, pts))
    out = 2.0 * mu * sym - mu * p[:, None, None] * np.eye(3)[None]
    return out[0] if single else out


def surface_traction(S, x, mu=1.0):
    """Exterior-limit traction (stress times outward normal) on |x| = const."""
    pts, r, single = _prep(x)
    if np.any(r == 0):
        raise ValueError("traction needs a nonzero radius")
    sig = stresslet_stress(S, pts, mu)
    nrm = pts / r[:, None]
    t = np.einsum("mij,mj->mi", sig, nrm)
    return t[0] if single else t


def surface_force_and_torque(S, mu=1.0, radius=1.0, order=24):
    """Net force and torque of the rescaled strain response through the
    sphere |x| = radius, by surface quadrature.  Both vanish analytically."""
    pts, w = sphere_rule(order)
    t = surface_traction(S, radius * pts, mu)
    scale = radius**2  # surface element on |x| = radius
    force = scale * np.einsum("m,mi->i", w, t)
    torque = scale * np.einsum("m,mi->i", w, np.cross(radius * pts, t))
    return force, torque


def isolated_stresslet_strength(radius, strain, mu=1.0):
    """Symmetric first moment of the interfacial force density of one ball
    held in strain `strain`: 5 mu (4 pi / 3) radius^3 times the strain."""
    E = as_strain(strain)
    if radius <= 0:
        raise ValueError("radius must be positive")
    return 5.0 * mu * (4.0 * math.pi / 3.0) * radius**3 * E


def stresslet_strength_quadrature(radius, strain, mu=1.0, order=24):
    """Quadrature route to the stresslet strength: integrate the jump of the
    traction across the ball surface against the position.

    Interior traction uses the linear extension with zero pressure.
    """
    E = as_strain(strain)
    pts, w = sphere_rule(order)
    # tractions of the rescaled field at |x| = radius equal the unit-ball
    # tractions at x / radius; radius enters through area and moment arm
    t_ext = surface_traction(E, pts, mu)
    t_int = 2.0 * mu * pts @ E.T  # sigma_int = 2 mu E, normal = pts
    jump = t_int - t_ext
    moment = radius**3 * np.einsum("m,mi,mj->ij", w, jump, pts)
    return 0.5 * (moment + moment.T)


def stresslet_forcing_residual(S, grad_psi, mu=1.0, outer_radius=4.0, order=32):
    """Residual of the identity equating the stress divergence of the strain
    response to the divergence of a constant tensor supported on the ball.

    grad_psi maps points (m, 3) to gradients (m, 3, 3) of a smooth
    divergence-free test field; outer_radius must cover its support.
    Integrates sigma : grad(psi) over the exterior shell and the ball, and
    subtracts the ball integral of 5 mu S : grad(psi).  Returns |scalar|.
    """
    S = as_strain(S)
    pts, w = shell_rule(1.0, outer_radius, order)
    sig = stresslet_stress(S, pts, mu)
    g = np.asarray(grad_psi(pts), dtype=float)
    lhs_ext = np.einsum("m,mij,mij->", w, sig, g)
    bpts, bw = ball_rule(order)
    gb = np.asarray(grad_psi(bpts), dtype=float)
    ball_term = np.einsum("m,ij,mij->", bw, S, gb)
    # interior stress contributes 2 mu S, the forcing 5 mu S
    return abs(lhs_ext + 2.0 * mu * ball_term - 5.0 * mu * ball_term)
