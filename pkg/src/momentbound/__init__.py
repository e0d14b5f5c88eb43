"""Robust bounds on output quantities under moment-class input uncertainty.

Inputs of a black-box model are specified only through support bounds,
moment constraints, and optionally a mode (unimodality).  Every quantity of
interest is then bounded over all input laws compatible with that
information.  A reduction theorem makes the search finite-dimensional: the
optimum is attained on products of finite mixtures of Dirac masses (moment
classes) or of uniforms anchored at the mode (unimodal classes), which a
seeded differential-evolution search explores through canonical-moment and
simplex parameterizations.
"""

from .bayes import (DegeneratePosteriorError, bayesian_failure_probability,
                    joint_flow_posterior, posterior_pushforward,
                    predictive_cdf, predictive_quantile,
                    synthetic_flow_record)
from .canonical import (CanonicalSeq, InfeasibleMomentsError,
                        canonical_to_moments, dirac_from_canonical,
                        moments_to_canonical, moments_to_quadrature)
from .distributions import Gumbel, TruncatedNormal, UniformDist, gumbel_loglik
from .expressions import (ExpressionError, compile_expression,
                          compile_joint_expression)
from .measures import (Constraint, DiracMixture, EvaluationError, Interval,
                       MarginalClass, ProductMeasure, UniformMixture,
                       cdf, class_violation, constraint_residuals,
                       expectation, is_feasible, measure_from_dict,
                       measure_to_dict, mix, ppf, product_sample, raw_moment,
                       support_nodes)
from .models import (ExternalCommandModel, ExternalTableModel,
                     HydraulicHeightModel, HydraulicLevelModel,
                     ModelDomainError, ModelFailureError,
                     conditional_failure_prob, hydraulic_height)
from .optimize import (BoundResult, DEConfig, JointConstraint, Problem,
                       bound_qoi, cdf_envelope, golden_sweep,
                       linearized_variance_bound, optimize)
from .parameterize import (DecodeResult, ParamLayout, layout_for_class,
                           simplex_map, vector_to_extreme)
from .problems import ProblemFormatError, load_problem, problem_from_dict
from .quantities import (DirectionError, OutputDistribution, QoISpec,
                         SobolUndefinedError, direction_allowed,
                         evaluate_qoi, expectation_qoi, input_grid,
                         pushforward, sobol_first, sobol_total, variance_qoi)
from .reference import (dominance_test, jensen_extremal_check, mc_reference,
                        probit, quantile_se, random_extreme, random_feasible,
                        sample_inputs)
from .sobol import (ConditionalTable, conditional_table, first_order_ratio,
                    nominal_first_order, sobol_bound)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
