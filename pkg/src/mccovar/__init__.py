"""Monte-Carlo estimation of CoVaR: batching and IS-inspired estimators,
delta-gamma loss models, closed-form test portfolios and an experiment harness."""

from .analytic import (LinearPortfolioSpec, NonlinearPortfolioSpec, linear_covar, nonlinear_covar,
                       qre_covar, qre_fit, rho_star, sample_linear, sample_nonlinear)
from .dgmodel import (NORMAL, LossSample, RawDeltaGamma, SimplifiedDeltaGamma, TailKind, TailSpec,
                      generate_raw_params, load_model, loss_from_z, published_fixture,
                      sample_losses, save_model, simplify)
from .errors import (ConvergenceError, CovarError, CurvatureError, DegenerateISError,
                     EmptyBandError, InfeasibleCIError, InfiniteQuantileError,
                     InvalidParameterError, MissingTruthError, NotPositiveDefiniteError)
from .estimators import (BatchConfig, EstimateReport, IsConfig, RootWeights, band_conditional_cdf,
                         batching_ci, batching_estimate, batching_report,
                         conditional_root_weights, is_conditional_cdf, is_estimate,
                         is_scenarios, sectioning_ci, var_order_stat, weighted_quantile)
from .numerics import RngStream, chi_squared, cholesky, inv_norm_cdf, norm_pdf, std_normal, sym_eigen, uniform01

__version__ = "0.1.0"
