"""Structure-preserving integration of a stochastically forced
double-well phase field on the periodic torus, with a Monte Carlo
harness for strong/weak convergence-rate studies."""

from .energy import EnergyReport, energy, energy_gradient, nonlinearity_f
from .integrator import (
    InequalityViolated,
    SchemeConfig,
    TrajectoryRecord,
    energy_ledger_check,
    initial_field,
    run,
    step_implicit,
    step_transformed_additive,
)
from .noise import (
    FactorMismatch,
    NoiseSpec,
    WienerPath,
    apply_diffusion,
    coarsen,
    hs_norm_l2,
    read_path,
    sample_path,
    write_path,
)
from .rates import (
    DegenerateTable,
    ErrorTable,
    ExperimentSpec,
    MomentReport,
    RateFit,
    UnknownFunctional,
    eval_functional,
    fit_rate,
    moment_study,
    strong_error_study,
    weak_error_study,
)
from .solver import NoConvergence, SolverConfig, apply_dt_tau, residual, solve_t_tau
from .spectral import (
    GridSpec,
    NegativePowerOnConstantMode,
    ScalarField,
    SpectralCoeffs,
    apply_fractional_power,
    forward_transform,
    heat_semigroup,
    inverse_transform,
    l2_inner,
    l2_norm,
    laplacian,
    resolvent_s_tau,
    sobolev_norm,
)

__version__ = "0.1.0"
