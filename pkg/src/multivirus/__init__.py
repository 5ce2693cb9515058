"""Competing SIS epidemics on static and time-varying networks.

Set ``MULTIVIRUS_DISABLE_NUMBA=1`` before import to run the pure numpy kernels.
"""
from .control import (
    Allocation,
    ControlConfig,
    ControlPolicy,
    algorithm1,
    control_policy,
    gershgorin_excess,
    l0_objective,
    solve_problem1,
    solve_problem2,
)
from .equilibria import (
    EquilibriumPoint,
    ParallelEquilibrium,
    ThresholdClassification,
    classify,
    detect_parallel_equilibrium,
    ndfe_for_virus,
    solve_single_virus_ndfe,
)
from .errors import (
    ConvergenceError,
    DimensionError,
    IntegrationBlowupError,
    MultivirusError,
    NoEpidemicEquilibriumError,
    PreconditionError,
    ReducibleMatrixError,
    ScenarioError,
    StepSizeWarning,
)
from .integrator import IntegratorConfig, Trajectory, simulate, step
from .mobility import BetaPerturbation, MobilityConfig, MobilityModel, beta_matrix, perturb_beta
from .model import InfectionState, SystemSpec, VirusSpec, derivative
from .spectral import (
    average_abscissa_monitor,
    is_strongly_connected,
    lambda_max_symmetric,
    spectral_abscissa,
)

__version__ = "0.1.0"
