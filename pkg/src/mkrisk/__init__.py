"""Center-outward quantiles, superquantiles, expected shortfalls and vector risk measures.

Maps are estimated by entropic optimal transport from a reference measure on
the unit ball to an empirical point cloud.
"""

from .analytic import (
    GammaModel,
    UnivariateSample,
    gamma_mk_distribution,
    gamma_mk_expected_shortfall,
    gamma_mk_quantile,
    gamma_mk_superquantile,
    gamma_radial_cdf,
    gamma_radial_quantile,
    reg_lower_incomplete_gamma,
    sample_gamma_model,
    univariate_expected_shortfall,
    univariate_quantile,
    univariate_superquantile,
)
from .errors import DataError, MKRiskError, NumericalError, ParameterError
from .io import load_csv, load_potential, save_potential
from .maps import (
    AnalyticMap,
    Contour,
    ContourKind,
    RankSign,
    entropic_potential,
    entropic_quantile,
    identity_map,
    quantile_contour,
    rank_sign,
    sign_curve,
)
from .reference import (
    DirectionGrid,
    ReferenceKind,
    ReferenceSpec,
    direction_grid,
    lp_sphere_sample,
    radial_grid,
    sample_reference,
)
from .risk import (
    RiskReport,
    ScenarioKind,
    ScenarioSpec,
    conditional_vector_at_risk,
    generate_scenario,
    rho_q,
    rho_s,
    risk_report,
    vector_at_risk,
)
from .solver import (
    FittedPotential,
    PointCloud,
    SolveLog,
    SolveOptions,
    SolverMethod,
    semidual_objective,
    smooth_c_transform,
    solve_semidual,
)
from .tails import (
    TailEvalOptions,
    averaged_sign_curve,
    decomposition_residual,
    expected_shortfall,
    superquantile,
    tail_contour,
)

__version__ = "0.1.0"
