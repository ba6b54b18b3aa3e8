"""cpslab: consistent price systems and face-lifting under transaction costs.

A numerical laboratory that builds shadow martingales inside the bid-ask
band of simulated positive price processes (geometric Brownian and
fractional Brownian models among them) and squeezes the superreplication
price of European claims between a static-hedge upper bound and a
dual-measure lower bound onto the concave envelope of the payoff.
"""

__version__ = "0.1.0"

from .cps import (ConsistentPriceSystem, MartingaleCertificate, build_cps_1d,
                  build_cps_multi, input_eps_for_target, verify_sandwich)
from .errors import (ConvergenceError, CpsLabError, DegenerateCloudError,
                     FactorizationError, InteriorError, InvariantViolation,
                     LadderOverflowError, NumericalError, SandwichViolation,
                     ValidationError)
from .esscher import (EsscherResult, IncrementCloud, check_interior,
                      esscher_minimize, esscher_weights)
from .facelift import (DualLowerBound, EnvelopeResult, PayoffCurve, PriceReport,
                       StaticUpperBound, Strategy, concave_envelope,
                       dual_lower_price, squeeze_report, static_upper_price,
                       wealth)
from .cfs_check import (HullAuditReport, MarkTable, TubeEstimate, TubeQuery,
                        interior_hull_audit, mark_positivity, tube_probability)
from .models import GbmModel, GfbmModel, IntegratedModel, model_from_config
from .paths import (FbmSpec, GaussianConditioning, SamplePath, TimeGrid,
                    condition_gaussian, extend_gfbm, fbm_covariance,
                    fbm_covariance_matrix, integrate_path, sample_gbm,
                    sample_gfbm, sample_integrated)
from .skeleton import LadderSkeleton, extract_ladder, ladder_increments
from .walk import (ConstantSchedule, ExactTree, IntegrabilitySchedule,
                   RetiredWalk, RetirementSchedule, StepMeasure,
                   TwoPointMeasure, TwoPointSchedule, density_increment,
                   empirical_mark_weights, enumerate_tree,
                   integrability_schedule, simulate_walk, step_measure,
                   two_point_measure, two_point_terminal_law,
                   verify_density_normalizes)
