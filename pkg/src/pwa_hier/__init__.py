"""Hierarchical tracking control of piecewise-affine systems with certified
output-error bounds: relation solving, interface synthesis, Lyapunov-like
certificate verification, and closed-loop hybrid simulation."""

from .certificate import (
    Certificate,
    Gains,
    LmiReport,
    ModeCertificate,
    compute_gains,
    error_bound,
    sim_fn_derivative,
    sim_fn_value,
    synthesize_certificate,
    verify_all,
    verify_lmi,
)
from .linalg import (
    SymEigen,
    kron_solve_least_squares,
    matrix_sqrt_psd,
    spectral_norm,
    sym_eigen,
)
from .polytope import (
    AFFINE,
    CONIC,
    CellBounding,
    ContinuityMatrix,
    Partition,
    Polyhedron,
    abstraction_cell_estimate,
    cell_bounding,
    classify_cell,
    contains_mapped,
    identity_continuity,
    joint_partition_linear,
    joint_partition_pwa,
    locate_mode,
    vertices_2d,
)
from .relation import (
    Interface,
    JointMode,
    JointSystem,
    RelationMaps,
    assemble_joint_linear,
    assemble_joint_pwa,
    build_interface,
    default_R,
    interface_linear,
    interface_pwa,
    solve_relation,
    solve_relation_pairing,
    solve_system_relation,
)
from .simulator import (
    ReferenceSchedule,
    Scenario,
    Trajectory,
    export_trajectory,
    reference_schedule,
    run_scenario,
    step_rk4,
)
from .systems import (
    AbstractionMode,
    DisturbanceSignal,
    LinearAbstraction,
    PwaAbstraction,
    PwaMode,
    PwaSystem,
    transformed_abstraction_matrix,
)

__version__ = "0.1.0"
