import math

import numpy as np
import pytest

from dilute_stokes.config import (
    BallConfiguration,
    DensityField,
    TracelessSymmetricMatrix,
    radius_for_fraction,
    unit_box,
)
from dilute_stokes.fields import GaussianProfile, SolenoidalField
from dilute_stokes.kernels import (
    isolated_stresslet_strength,
    stresslet_strain_split,
    stresslet_velocity,
    stresslet_velocity_gradient,
)
from dilute_stokes.point_process import ProcessSpec, sample
from dilute_stokes.quadrature import sphere_rule
from dilute_stokes.solver import (
    ConvergenceError,
    EinsteinModel,
    FlowField,
    StressletState,
    bulk_stress_flow,
    effective_viscosity_estimate,
    exterior_energy,
    exterior_energy_pair,
    field_norm,
    interaction_strains,
    linear_flow,
    reflections_solve,
    solve_einstein,
    solve_suspension_correction,
    stokes_flow,
    stresslet_sum_field,
    superposition_approximation,
    suspension_flow,
    zeroth_reflection,
)

SHEAR = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def random_strain(key, scale=1.0):
    rng = np.random.Generator(np.random.Philox(key=key))
    return TracelessSymmetricMatrix.random(rng, scale).mat


def separated_config(seed=5, radius=0.02):
    pts = sample(ProcessSpec("hardcore_poisson", intensity=30.0, exclusion=0.1, seed=seed))
    return BallConfiguration(pts, radius)


def single_ball_state(radius, strain, mu=1.0):
    c = np.array([[0.5, 0.5, 0.5]])
    S = np.asarray(strain)[None]
    return StressletState(centers=c, radius=radius, mu=mu, data=S.copy(), strains=S.copy())


# ---------------------------------------------------------------------------
# FlowField basics


def test_linear_flow_and_algebra():
    G = np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, -1.0]])
    f = linear_flow(G)
    pts = np.array([[0.3, 0.4, 0.5], [1.0, -1.0, 2.0]])
    assert np.allclose(f.velocity(pts), pts @ G.T, atol=1e-15)
    assert np.allclose(f.gradient(pts), G, atol=1e-15)
    g = linear_flow(-0.5 * G)
    s = f + g
    assert np.allclose(s.velocity(pts), 0.5 * pts @ G.T, atol=1e-15)
    d = f - f
    assert np.allclose(d.velocity(pts), 0.0, atol=1e-15)
    z = FlowField.zero()
    assert np.allclose(z.velocity(pts), 0.0) and np.allclose(z.pressure(pts), 0.0)
    with pytest.raises(NotImplementedError):
        f.pressure(pts)


def test_flowfield_fd_gradient_fallback():
    G = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    f = FlowField(lambda pts: pts @ G.T)  # no analytic gradient
    pts = np.array([[0.2, 0.7, 0.4]])
    assert np.abs(f.gradient(pts) - G).max() < 1e-9
    assert np.allclose(f.strain(pts), G, atol=1e-9)


# ---------------------------------------------------------------------------
# reflections fixed point


def test_single_ball_viscosity_ratio_is_einstein():
    for lam in (1e-3, 1e-2, 1e-1):
        r = radius_for_fraction(1, lam)
        cfg = BallConfiguration(np.array([[0.5, 0.5, 0.5]]), r)
        ratio, state = effective_viscosity_estimate(cfg, 1.0, SHEAR)
        assert abs(ratio - (1.0 + 2.5 * lam)) < 1e-8
        assert state.sweeps == 1 and state.converged


def test_two_ball_state_matches_dense_linear_solve():
    # full 12x12 system in the plain symmetric basis, deviatoric projection
    # applied inside the coupling operator
    r = 0.01
    centers = np.array([[0.4, 0.5, 0.5], [0.6, 0.53, 0.48]])
    cfg = BallConfiguration(centers, r)
    E = random_strain(21)

    basis = []
    for a, b in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
        B = np.zeros((3, 3))
        B[a, b] = 1.0
        B[b, a] = 1.0
        basis.append(B)

    def coeffs(M):
        return np.array([M[0, 0], M[1, 1], M[2, 2], M[0, 1], M[0, 2], M[1, 2]])

    def dev(M):
        sym = 0.5 * (M + M.T)
        return sym - np.trace(sym) / 3.0 * np.eye(3)

    A = np.zeros((12, 12))
    for j in range(2):
        for k in range(6):
            Sj = dev(basis[k])
            col = np.zeros(12)
            for i in range(2):
                if i == j:
                    continue
                y = (centers[i] - centers[j]) / r
                g = stresslet_velocity_gradient(Sj, y[None])[0]
                col[6 * i : 6 * i + 6] = coeffs(0.5 * (g + g.T))
            A[:, 6 * j + k] = col
    d = np.concatenate([coeffs(dev(E)), coeffs(dev(E))])
    s = np.linalg.solve(np.eye(12) + A, d)

    state = reflections_solve(cfg, E, tol=1e-13)
    for i in range(2):
        M = np.array(
            [
                [s[6 * i + 0], s[6 * i + 3], s[6 * i + 4]],
                [s[6 * i + 3], s[6 * i + 1], s[6 * i + 5]],
                [s[6 * i + 4], s[6 * i + 5], s[6 * i + 2]],
            ]
        )
        assert np.abs(state.strains[i] - M).max() < 1e-8


def test_reflections_residuals_strictly_decrease():
    cfg = separated_config(seed=7)
    state = reflections_solve(cfg, SHEAR, tol=1e-10)
    assert state.converged
    h = state.residuals
    assert all(b < a for a, b in zip(h, h[1:]))
    # converged state reproduces its data at every center
    defect = np.abs(state.ball_strains() - state.data).max()
    assert defect < 1e-9


def test_reflections_scaling_linearity():
    cfg = separated_config(seed=9)
    E = random_strain(22)
    s1 = reflections_solve(cfg, E, tol=1e-13).strains
    s3 = reflections_solve(cfg, 3.0 * E, tol=1e-13).strains
    assert np.abs(s3 - 3.0 * s1).max() < 1e-10


def test_reflections_rotation_equivariance():
    cfg = separated_config(seed=11)
    E = random_strain(23)
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    c0 = np.array([0.5, 0.5, 0.5])
    rot_centers = c0 + (cfg.centers - c0) @ R.T
    cfg_rot = BallConfiguration(rot_centers, cfg.radius)
    s = reflections_solve(cfg, E, tol=1e-13).strains
    s_rot = reflections_solve(cfg_rot, R @ E @ R.T, tol=1e-13).strains
    assert np.abs(s_rot - np.einsum("ab,mbc,dc->mad", R, s, R)).max() < 1e-12


def test_reflections_ambient_forms_agree():
    cfg = separated_config(seed=13)
    E = random_strain(24)
    s_mat = reflections_solve(cfg, E, tol=1e-12).strains
    s_flow = reflections_solve(cfg, linear_flow(E), tol=1e-12).strains
    s_call = reflections_solve(
        cfg, lambda pts: np.broadcast_to(E, (len(pts), 3, 3)), tol=1e-12
    ).strains
    assert np.abs(s_mat - s_flow).max() < 1e-14
    assert np.abs(s_mat - s_call).max() < 1e-14


def test_reflections_strains_stay_deviatoric():
    cfg = separated_config(seed=15)
    state = reflections_solve(cfg, SHEAR, tol=1e-12)
    tr = np.trace(state.strains, axis1=1, axis2=2)
    assert np.abs(tr).max() < 1e-13
    asym = state.strains - np.swapaxes(state.strains, 1, 2)
    assert np.abs(asym).max() < 1e-13


def test_gauss_seidel_agrees_with_jacobi():
    cfg = separated_config(seed=17)
    sj = reflections_solve(cfg, SHEAR, tol=1e-12, scheme="jacobi").strains
    sg = reflections_solve(cfg, SHEAR, tol=1e-12, scheme="gauss_seidel").strains
    assert np.abs(sj - sg).max() < 1e-9


def test_reflections_validation_and_budget():
    cfg = separated_config(seed=19)
    with pytest.raises(ValueError):
        reflections_solve(cfg, SHEAR, tol=0.0)
    with pytest.raises(ValueError):
        reflections_solve(cfg, SHEAR, scheme="sor")
    with pytest.raises(ConvergenceError) as err:
        reflections_solve(cfg, SHEAR, tol=1e-300, max_sweeps=3)
    assert len(err.value.history) == 3


def test_interaction_strains_match_pairwise_sum():
    cfg = separated_config(seed=25)
    n = cfg.n
    strains = np.stack([random_strain(100 + i, 0.7) for i in range(n)])
    T = interaction_strains(cfg.centers, strains, cfg.radius)
    brute = np.zeros_like(T)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            y = (cfg.centers[i] - cfg.centers[j]) / cfg.radius
            g = stresslet_velocity_gradient(strains[j], y[None])[0]
            brute[i] += 0.5 * (g + g.T)
    assert np.abs(T - brute).max() < 1e-13


def test_suspension_flow_cancels_strain_at_centers():
    cfg = separated_config(seed=27)
    flow, state = suspension_flow(cfg, linear_flow(SHEAR), tol=1e-10)
    D = flow.strain(cfg.centers)
    assert np.abs(D).max() < 1e-8
    assert state.converged


def test_zeroth_reflection_single_ball_is_exact():
    r = 0.05
    cfg = BallConfiguration(np.array([[0.5, 0.5, 0.5]]), r)
    E = random_strain(31)
    z = zeroth_reflection(cfg, E)
    full = reflections_solve(cfg, E, tol=1e-12)
    assert np.abs(z.strains - full.strains).max() < 1e-15
    # strengths match the isolated closed form
    want = isolated_stresslet_strength(r, z.strains[0], 1.0)
    assert np.abs(z.strengths()[0] - want).max() < 1e-15


def test_effective_viscosity_invariances():
    cfg = separated_config(seed=33)
    E = random_strain(35)
    r1, _ = effective_viscosity_estimate(cfg, 1.0, E)
    r2, _ = effective_viscosity_estimate(cfg, 7.0, E)
    r3, _ = effective_viscosity_estimate(cfg, 1.0, 3.0 * E)
    assert r1 == pytest.approx(r2, abs=1e-13)
    assert r1 == pytest.approx(r3, abs=1e-10)
    with pytest.raises(ValueError):
        effective_viscosity_estimate(cfg, 1.0, np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# stresslet sums


def test_stresslet_sum_field_is_additive():
    r = 0.02
    centers = np.array([[0.35, 0.5, 0.5], [0.65, 0.5, 0.5]])
    strains = np.stack([random_strain(41), random_strain(42)])
    total = stresslet_sum_field(centers, strains, r, mu=1.5)
    pts = np.array([[0.5, 0.62, 0.4], [0.1, 0.2, 0.8], [0.5, 0.5, 0.56]])
    v = np.zeros((3, 3))
    p = np.zeros(3)
    for j in range(2):
        y = (pts - centers[j]) / r
        v += r * stresslet_velocity(strains[j], y)
    assert np.abs(total.velocity(pts) - v).max() < 1e-15
    single = [stresslet_sum_field(centers[j : j + 1], strains[j : j + 1], r, 1.5) for j in range(2)]
    p = single[0].pressure(pts) + single[1].pressure(pts)
    assert np.abs(total.pressure(pts) - p).max() < 1e-12 * max(1.0, np.abs(p).max())


# ---------------------------------------------------------------------------
# grid solvers


def test_stokes_flow_matches_direct_cell_sum():
    from dilute_stokes.fields import DirectionalBump

    N = 16
    f = DirectionalBump((0.0, 0.0, 1.0), (0.5, 0.5, 0.5), 0.18)
    flow = stokes_flow(f, mu=1.0, grid=N)
    h = 1.0 / N
    ax = h * (np.arange(N) + 0.5)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    cells = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    fv = f.value(cells)
    a_reg = h * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    probes = cells[[1000, 2184, 2600]]
    for p in probes:
        d = p - cells
        r2 = (d**2).sum(axis=1)
        r = np.sqrt(r2)
        self_cell = r < 1e-12
        r_safe = np.where(self_cell, 1.0, r)
        U = (
            d[:, :, None] * d[:, None, :] / r_safe[:, None, None] ** 3
            + np.eye(3) / r_safe[:, None, None]
        ) / (8.0 * math.pi)
        U[self_cell] = np.eye(3) / (4.0 * math.pi * a_reg)
        want = np.einsum("mij,mj->i", U, fv) * h**3
        got = flow.velocity(p)
        assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())


def test_solve_einstein_zero_fraction_is_stokes():
    f = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.15), (0.0, 0.0, 1.0))
    a = solve_einstein(f, EinsteinModel(1.0, 0.0), grid=16)
    b = stokes_flow(f, mu=1.0, grid=16)
    pts = np.random.Generator(np.random.Philox(key=51)).random((20, 3))
    assert np.array_equal(a.velocity(pts), b.velocity(pts))
    assert a.meta["iterations"] == 1


def test_solve_einstein_contracts_and_scales_inverse_mu():
    f = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.15), (0.0, 0.0, 1.0))
    rho = DensityField.uniform(cells=16)
    flow = solve_einstein(f, EinsteinModel(1.0, 0.02, rho), grid=16, tol=1e-10)
    incs = flow.meta["increments"]
    assert all(b < a for a, b in zip(incs, incs[1:]))
    # doubling mu halves the velocity of the linear problem
    flow2 = solve_einstein(f, EinsteinModel(2.0, 0.02, rho), grid=16, tol=1e-10)
    pts = 0.25 + 0.5 * np.random.Generator(np.random.Philox(key=52)).random((10, 3))
    assert np.abs(flow2.velocity(pts) - 0.5 * flow.velocity(pts)).max() < 1e-8


def test_solve_einstein_rejects_expanding_fraction():
    f = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.15), (0.0, 0.0, 1.0))
    rho = DensityField.uniform(cells=16)
    with pytest.raises(ConvergenceError):
        solve_einstein(f, EinsteinModel(1.0, 5.0, rho), grid=16)


def test_einstein_model_validation():
    rho = DensityField.uniform(cells=8)
    with pytest.raises(ValueError):
        EinsteinModel(0.0, 0.0)
    with pytest.raises(ValueError):
        EinsteinModel(1.0, -0.1)
    with pytest.raises(ValueError):
        EinsteinModel(1.0, 0.1)  # positive fraction needs a density
    m = EinsteinModel(1.0, 0.1, rho)
    pts = np.array([[0.5, 0.5, 0.5], [5.0, 5.0, 5.0]])
    ratios = m.viscosity_ratio(pts)
    assert ratios[0] == pytest.approx(1.0 + 0.25, rel=1e-12)
    assert ratios[1] == 1.0  # outside the density support


def test_bulk_stress_flow_grid_matches_direct():
    phi = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.2), (0.1, 0.8, -0.5))
    rho = DensityField.uniform(cells=16)
    g = bulk_stress_flow(phi, rho, 0.01, method="grid")
    d = bulk_stress_flow(phi, rho, 0.01, method="direct")
    probes = rho.cell_centers()[[600, 2048, 3000, 3500]]
    vg = g.velocity(probes)
    vd = d.velocity(probes)
    assert np.abs(vg - vd).max() < 1e-12 * max(1.0, np.abs(vd).max())
    z = bulk_stress_flow(phi, rho, 0.0)
    assert np.allclose(z.velocity(probes), 0.0)
    with pytest.raises(ValueError):
        bulk_stress_flow(phi, rho, -0.1)
    with pytest.raises(ValueError):
        bulk_stress_flow(phi, rho, 0.1, method="magic")


def test_superposition_crowded_balls_keep_no_singularity():
    cfg = separated_config(seed=61)
    phi = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.2), (0.0, 0.0, 1.0))
    rho = DensityField.uniform(cells=16)
    base = bulk_stress_flow(phi, rho, 0.01)
    # cutoff so large every ball counts as crowded: the approximation is the base
    app = superposition_approximation(cfg, 50.0, phi, rho, 0.01, base=base)
    assert len(app.meta["isolated"]) == 0
    pts = np.array([[0.2, 0.3, 0.4], [0.7, 0.6, 0.5]])
    assert np.array_equal(app.velocity(pts), base.velocity(pts))
    # tiny cutoff: every ball isolated, base plus one response each
    app2 = superposition_approximation(cfg, 1e-6, phi, rho, 0.01, base=base)
    assert len(app2.meta["crowded"]) == 0


def test_solve_suspension_correction_matches_target_strain():
    cfg = separated_config(seed=63)
    phi = SolenoidalField(GaussianProfile((0.5, 0.5, 0.5), 0.25), (0.2, -0.4, 0.9))
    rho = DensityField.uniform(cells=16)
    out, state = solve_suspension_correction(cfg, 0.5, phi, rho, 0.01, tol=1e-10)
    got = out.strain(cfg.centers)
    got = 0.5 * (got + np.swapaxes(got, 1, 2))
    got -= np.trace(got, axis1=1, axis2=2)[:, None, None] / 3.0 * np.eye(3)
    want = phi.strain(cfg.centers)
    want -= np.trace(want, axis1=1, axis2=2)[:, None, None] / 3.0 * np.eye(3)
    assert np.abs(got - want).max() < 1e-7
    assert state.converged


# ---------------------------------------------------------------------------
# norms and energies


def test_field_norm_constant_field():
    const = FlowField(lambda pts: np.tile([1.0, 2.0, 2.0], (len(pts), 1)))
    assert field_norm(const, unit_box()) == pytest.approx(3.0, rel=1e-12)
    assert field_norm(const, unit_box(), p=math.inf) == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(ValueError):
        field_norm(const, unit_box(), p=0.5)
    with pytest.raises(ValueError):
        field_norm(const, unit_box(), kind="curl")


def test_field_norm_gradient_kind_and_exclusion():
    G = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    f = linear_flow(G)
    got = field_norm(f, unit_box(), kind="gradient")
    assert got == pytest.approx(math.sqrt(2.0), rel=1e-12)
    cfg = BallConfiguration(np.array([[0.5, 0.5, 0.5]]), 0.2)
    const = FlowField(lambda pts: np.tile([3.0, 0.0, 0.0], (len(pts), 1)))
    trimmed = field_norm(const, unit_box(), exclude=cfg, strata=20, seed=3)
    ball = (4.0 * math.pi / 3.0) * 0.2**3
    assert trimmed == pytest.approx(3.0 * math.sqrt(1.0 - ball), rel=0.05)
    assert trimmed < 3.0


def test_exterior_energy_single_ball_oracle():
    a = 0.05
    S = random_strain(71)
    st = single_ball_state(a, S, mu=1.3)
    got = exterior_energy(st, outer_radius=3.0, shell_order=12)
    pts, w = sphere_rule(48)
    slow, fast = stresslet_strain_split(S, pts, radius=1.0)
    dens = (
        (slow**2).sum(axis=(1, 2)) / 3.0
        + 2.0 * (slow * fast).sum(axis=(1, 2)) / 5.0
        + (fast**2).sum(axis=(1, 2)) / 7.0
    )
    want = 2.0 * 1.3 * a**3 * float(w @ dens)
    assert got == pytest.approx(want, rel=1e-9)


def test_exterior_energy_scales_with_strain_and_mu():
    a = 0.04
    S = random_strain(73)
    e1 = exterior_energy(single_ball_state(a, S, mu=1.0), outer_radius=2.0)
    e2 = exterior_energy(single_ball_state(a, 2.0 * S, mu=1.0), outer_radius=2.0)
    e3 = exterior_energy(single_ball_state(a, S, mu=4.0), outer_radius=2.0)
    assert e2 == pytest.approx(4.0 * e1, rel=1e-12)
    assert e3 == pytest.approx(4.0 * e1, rel=1e-12)


def test_exterior_energy_pair_same_state_margin_zero():
    cfg = separated_config(seed=75)
    state = reflections_solve(cfg, SHEAR, tol=1e-10)
    e_a, e_b, tol = exterior_energy_pair(state, state, outer_radius=2.0, strata=16, shell_order=8)
    assert e_a == e_b
    assert tol >= 0.0
    assert e_a > 0.0


def test_exterior_energy_pair_rejects_mismatched_geometry():
    a = single_ball_state(0.05, random_strain(77))
    b = single_ball_state(0.04, random_strain(78))
    with pytest.raises(ValueError):
        exterior_energy_pair(a, b, outer_radius=2.0)


def test_exterior_energy_outer_radius_guard():
    st = single_ball_state(0.05, SHEAR)
    with pytest.raises(ValueError):
        exterior_energy(st, outer_radius=0.05)
