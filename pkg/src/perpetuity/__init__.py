"""Tails of row-independent random perpetuities Y = sum_n X_n1 ... X_nn."""

__version__ = "0.1.0"

from .cramer import CramerSolution, ConditionReport, check_conditions, solve_alpha  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .factor_models import (  # noqa: E402
    TWO_POINT_FIXTURE,
    FactorModel,
    GammaFactor,
    LogGamma,
    LogNormal,
    MomentReport,
    SignedMixture,
    TwoPoint,
    model_from_dict,
    moment_report,
)
from .tail import (  # noqa: E402
    TailCurve,
    TruncationHorizon,
    horizon,
    kesten_ratio,
    leading_tail,
    normal_approx_tail,
    renewal_tail,
    tail_curve,
    tilted_exact_tail,
)
from .montecarlo import (  # noqa: E402
    Adaptive,
    SimulationConfig,
    TiltedEstimate,
    brute_force_p,
    ev_normalizer,
    goldie_constant,
    is_tail_p,
    is_tail_pn,
    sample_stopped_chain,
    simulate_lindley,
    simulate_ruin,
    simulate_Y,
)
from .multivariate import (  # noqa: E402
    MatrixEnsemble,
    MultivariateCramer,
    ensemble_from_dict,
    estimate_h,
    estimate_lyapunov,
    mv_tail_estimates,
    solve_alpha_mv,
)
