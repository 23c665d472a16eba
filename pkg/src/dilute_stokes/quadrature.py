"""Deterministic quadrature rules used throughout: sphere, ball, shell,
and stratified sampling of boxes."""

import numpy as np


def gauss_legendre(order, a=-1.0, b=1.0):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def sphere_rule(order=24):
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta) times
    a uniform azimuthal grid with 2*order points.

    Returns (points, weights) with weights summing to 4 pi.  Exact for
    spherical harmonics up to degree 2*order - 1.
    """
    ct, wt = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = 2.0 * np.pi * (np.arange(nphi) + 0.5) / nphi
    st = np.sqrt(1.0 - ct**2)
    X = np.outer(st, np.cos(phi))
    Y = np.outer(st, np.sin(phi))
    Z = np.outer(ct, np.ones(nphi))
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    w = np.outer(wt, np.full(nphi, 2.0 * np.pi / nphi)).ravel()
    return pts, w


def shell_rule(r_inner, r_outer, order=24):
    """Rule for integrals over the spherical shell r_inner <= |x| <= r_outer.

    Radial Gauss-Legendre with the r^2 volume factor folded into the weights.
    """
    if not 0.0 <= r_inner < r_outer:
        raise ValueError("need 0 <= r_inner < r_outer")
    r, wr = gauss_legendre(order, r_inner, r_outer)
    sp, ws = sphere_rule(order)
    pts = (r[:, None, None] * sp[None, :, :]).reshape(-1, 3)
    w = (wr[:, None] * r[:, None] ** 2 * ws[None, :]).ravel()
    return pts, w


def ball_rule(order=24):
    """Rule for integrals over the closed unit ball."""
    return shell_rule(0.0, 1.0, order)


def stratified_points(box, strata, rng):
    """One uniform point per cell of a strata^3 partition of the box.

    Returns (points, cell_volume).  Mean of f over the points times the box
    volume is a stratified estimator of the integral of f.
    """
    if strata < 1:
        raise ValueError("strata must be >= 1")
    ext = box.extent
    h = ext / strata
    ii = np.indices((strata, strata, strata)).reshape(3, -1).T
    u = rng.random((len(ii), 3))
    pts = box.lo + (ii + u) * h
    return pts, float(np.prod(h))
