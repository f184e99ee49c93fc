"""Locally invariant Ricci flow on twisted abelian bundles, reduced to the base."""
from .curvature import CurvaturePackage, curvature_package, total_riemann
from .experiments import (
    ExperimentReport,
    run_blowdown,
    run_monotonicity,
    run_oracle_sweep,
    run_soliton_tracking,
    run_stability,
)
from .flow import (
    StepControl,
    Tangent,
    Trajectory,
    blowdown_rescale,
    integrate,
    rhs_coupled,
    rhs_reduced,
    step_rk4,
)
from .functionals import (
    dissipation,
    f_functional,
    jensen_bound,
    solve_f_backward,
    w_functional,
    wplus_functional,
)
from .grid import BaseDomain, DomainError
from .oracle import total_space_oracle
from .solitons import (
    SolitonSpec,
    harmonic_einstein_residual,
    make_soliton,
    perturb,
    soliton_distance,
)
from .state import BundleState, DensityField, load_checkpoint, save_checkpoint, validate

__version__ = "0.1.0"
