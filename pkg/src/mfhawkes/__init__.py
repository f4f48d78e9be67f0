"""Mean-field nonlinear Hawkes processes: simulation, limit solvers,
large-deviation rate functionals, and rare-event estimation."""

from .grids import NumericsError, uniform_grid
from .model import (AffineClippedRate, AssumptionError, ConstantRate,
                    ExponentialKernel, KernelSpec, ModelSpec,
                    PiecewiseLinearKernel, RateSpec, SigmoidalRate,
                    eval_kernel, kernel_l1, model_from_config, validate_model)
from .tilt import TiltField
from .meanfield import (MeanPath, MeasureFlow, flux_balance_residual, lawbar,
                        mean_field_law, solve_mean_limit, solve_perturbed_law)
from .simulate import (EventPaths, ExplosionSuspectedError,
                       LimitParticleSampler, MajorantError, SimConfig,
                       empirical_measure, exp_martingale_weight, mean_process,
                       rng_stream, simulate, simulate_mckean_vlasov_tilted,
                       simulate_tilted)
from .rate import (AbsContinuityError, EndpointMinimum, GField, RateReport,
                   compute_G, ell, minimize_rate_endpoint, rate_I,
                   rate_mean_process, recover_tilt, variational_J)
from .estimator import (DegenerateEstimateError, Estimate, EventSpec,
                        MeanExceeds, W1Ball, cramer_tilt, decay_rate_fit,
                        estimate_importance, estimate_naive, event_hit,
                        lln_study, w1_discrete, w1_flow_sup)

__version__ = "0.1.0"
