"""Cloud-size dynamics of a trapped ideal Bose gas under center-of-mass feedback."""

from .criteria import (
    CriterionReport,
    QuadratureHarmonics,
    asymptotic_cloud_size,
    classical_schwarz_check,
    evaluate_criteria,
    quadrature_harmonics,
    schwarz_identity_check,
    sigma_q_sq,
)
from .driver import RunConfig, breathing_curve, cli_main, scan_eta
from .errors import ConfigError, NonConvergence, ToolkitError, TruncationLeak
from .fock import (
    FockState,
    OneBodyOperator,
    OrbitalBasis,
    StateEnsemble,
    basis_state,
    condensate_state,
    displaced_orbital,
    squeezed_orbital,
    thermal_ensemble,
)
from .loop import LoopConfig, LoopTrajectory, run_ensemble, stationary_discrete
from .moments import (
    JointMoments,
    build_generators,
    cloud_size,
    evolve,
    init_moments,
    stationary_cm,
)
from .oracle import DensityMatrix, OracleTrajectory, compare_with_moments, integrate
from .scales import (
    DerivedScales,
    FeedbackConfig,
    RegimeClass,
    RegimeKind,
    TrapConfig,
    classify_regime,
    continuous_limit_params,
    derive_scales,
)
from .search import SearchSpec, search_state

__all__ = [
    "ConfigError",
    "CriterionReport",
    "DensityMatrix",
    "DerivedScales",
    "FeedbackConfig",
    "FockState",
    "JointMoments",
    "LoopConfig",
    "LoopTrajectory",
    "NonConvergence",
    "OneBodyOperator",
    "OracleTrajectory",
    "OrbitalBasis",
    "QuadratureHarmonics",
    "RegimeClass",
    "RegimeKind",
    "RunConfig",
    "SearchSpec",
    "StateEnsemble",
    "ToolkitError",
    "TrapConfig",
    "TruncationLeak",
    "asymptotic_cloud_size",
    "basis_state",
    "breathing_curve",
    "classical_schwarz_check",
    "classify_regime",
    "cli_main",
    "cloud_size",
    "compare_with_moments",
    "condensate_state",
    "continuous_limit_params",
    "build_generators",
    "derive_scales",
    "displaced_orbital",
    "evaluate_criteria",
    "evolve",
    "init_moments",
    "integrate",
    "quadrature_harmonics",
    "run_ensemble",
    "scan_eta",
    "schwarz_identity_check",
    "search_state",
    "sigma_q_sq",
    "squeezed_orbital",
    "stationary_cm",
    "stationary_discrete",
    "thermal_ensemble",
]

__version__ = "0.1.0"
