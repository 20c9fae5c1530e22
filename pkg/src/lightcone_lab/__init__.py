"""Numerical laboratory for lightlike self-similar blowup of the radial membrane equation."""

__version__ = "0.1.0"

from .profiles import (  # noqa: F401
    AnalyticField,
    DomainError,
    ResidualReport,
    SelfSimilarProfile,
    SimilarityFrame,
    explicit_solution,
    explicit_solution_field,
    kappa_threshold,
    membrane_residual,
    ode_residual,
    origin_second_derivative,
    profile_value,
    scaling_apply,
    similarity_map,
)
from .evolution import (  # noqa: F401
    BackgroundFields,
    CoeffSet,
    DecayReport,
    EnergyParams,
    FieldState,
    RadialGrid,
    assemble_coeffs,
    energy_functional,
    evolve,
    evolve_nonlinear,
    fit_decay_rate,
    nonlinear_forcing,
    sobolev_norm,
    step_linear,
)
from .spectral import (  # noqa: F401
    FrobeniusSeries,
    NewtonPolygon,
    OperatorMatrices,
    QuadraticPoly,
    assemble_operator,
    discrete_spectrum,
    dissipativity_check,
    frobenius_series,
    mode_roots,
    newton_polygon,
    ratio_diagnostics,
    recurrence_weights,
    reduction_polynomials,
    stable_root_check,
)
from .diffsys import (  # noqa: F401
    CompanionState,
    RationalMatrix4,
    companion_step,
    growth_profile,
    jordan_verify,
    ttilde_build,
    window_transform,
)
from .nashmoser import (  # noqa: F401
    IterationState,
    ScheduleParams,
    SmoothingOp,
    Trajectory,
    approx_residual,
    error_bound_check,
    newton_step,
    run_iteration,
    shift_initial_data,
    smoothing_apply,
)
