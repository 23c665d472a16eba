"""Dilute rigid-sphere suspensions in Stokes flow.

Singularity kernels for rigid spheres, a method-of-reflections solver for
many-ball configurations, grid solvers for the forced and homogenized
flows, point-process generators with structural audits, and ensemble
experiments measuring how fast the homogenized model overtakes the naive
no-inclusion baseline as the volume fraction shrinks.
"""

from .audit import (
    CrowdingProfile,
    SeparationCheck,
    audit_report,
    check_separation,
    coarse_graining_residual,
    crowding_profile,
    empirical_measure_discrepancy,
    pair_correlation_estimate,
)
from .config import (
    BallConfiguration,
    Box,
    DensityField,
    RigidMotion,
    SeparationPartition,
    TracelessSymmetricMatrix,
    as_strain,
    min_center_gap,
    nearest_neighbor_distances,
    partition_by_separation,
    radius_for_fraction,
    unit_box,
    volume_fraction,
)
from .experiments import (
    RateFit,
    SweepPlan,
    SweepRecord,
    fit_rate,
    load_plan,
    median_metric,
    read_records,
    report,
    run_sweep,
    select_eta,
)
from .fields import FORCING_FAMILIES, make_forcing
from .kernels import (
    isolated_stresslet_strength,
    oseen_tensor,
    stresslet_pressure,
    stresslet_strain_split,
    stresslet_velocity,
    stresslet_velocity_gradient,
    surface_traction,
)
from .point_process import KINDS, ProcessSpec, sample
from .solver import (
    ConvergenceError,
    EinsteinModel,
    FlowField,
    StressletState,
    effective_viscosity_estimate,
    exterior_energy,
    exterior_energy_pair,
    field_norm,
    bulk_stress_flow,
    reflections_solve,
    solve_einstein,
    solve_suspension_correction,
    stokes_flow,
    stresslet_sum_field,
    superposition_approximation,
    suspension_flow,
    zeroth_reflection,
)

__version__ = "0.1.0"
