"""Built-in flood benchmark: classes, nominal laws, and problem builders.

A river section is described by four independent inputs: annual maximal flow
rate J, Manning-Strickler roughness Ks, downstream bed level Zv, upstream
bed level Zm.  The output of interest is the water height over the river
bed.  Each input is known only through support bounds and one or two raw
moments (Ks additionally through a most-plausible value, making its class
unimodal), which is exactly the setting the solver optimizes over.  The
"nominal" single distributions are kept alongside for Monte Carlo baselines
and Sobol conditioning.
"""

from __future__ import annotations

from typing import Optional

from .distributions import Gumbel, TruncatedNormal, UniformDist
from .measures import Constraint, Interval, MarginalClass
from .models import HydraulicHeightModel
from .optimize import Problem
from .quantities import QoISpec
from .reference import (gumbel_sampler, truncated_normal_sampler,
                        uniform_sampler)

J_SUPPORT = Interval(160.0, 3580.0)
KS_SUPPORT = Interval(12.55, 47.45)
ZV_SUPPORT = Interval(49.0, 51.0)
ZM_SUPPORT = Interval(54.0, 55.0)
KS_MODE = 30.0

RHO_SUPPORT = Interval(550.0, 700.0)
BETA_SUPPORT = Interval(150.0, 250.0)
RHO_MEAN = 626.14  # flow-record maximum-likelihood location
BETA_MEAN = 190.0

# published reference values of the flood benchmark, with the tolerances
# the acceptance tests check them at
REFERENCE_TARGETS = {
    "nominal_q95": (2.75, 0.05),
    "robust_q95": (3.05, 0.10),
    "sobol_J_lower": (0.39, 0.05),
    "sobol_Ks_upper": (0.55, 0.05),
    "bayes_q95": (3.19, None),  # not reproducible: the flow record is unpublished
}


def flood_classes():
    j = MarginalClass(
        name="J", support=J_SUPPORT,
        constraints=(Constraint.raw_moment(1, 736.0),
                     Constraint.raw_moment(2, 602043.0)))
    ks = MarginalClass(
        name="Ks", support=KS_SUPPORT, mode=KS_MODE,
        constraints=(Constraint.raw_moment(1, 30.0),
                     Constraint.raw_moment(2, 949.0)))
    zv = MarginalClass(name="Zv", support=ZV_SUPPORT,
                       constraints=(Constraint.raw_moment(1, 50.0),))
    zm = MarginalClass(name="Zm", support=ZM_SUPPORT,
                       constraints=(Constraint.raw_moment(1, 54.5),))
    return j, ks, zv, zm


def nominal_laws():
    return (Gumbel(626.0, 190.0),
            TruncatedNormal(30.0, 7.5, KS_SUPPORT.lo, KS_SUPPORT.hi),
            UniformDist(49.0, 51.0),
            UniformDist(54.0, 55.0))


def oracle_samplers():
    """Inverse-CDF samplers of the nominal laws for the Monte Carlo oracle."""
    return (gumbel_sampler(626.0, 190.0),
            truncated_normal_sampler(30.0, 7.5, KS_SUPPORT.lo, KS_SUPPORT.hi),
            uniform_sampler(49.0, 51.0),
            uniform_sampler(54.0, 55.0))


def quantile_problem(p: float = 0.95, direction: str = "sup") -> Problem:
    return Problem(classes=flood_classes(), model=HydraulicHeightModel(),
                   spec=QoISpec(kind="lower_quantile", direction=direction,
                                p=p),
                   nominals=nominal_laws())


def failure_problem(h: float, direction: str = "inf") -> Problem:
    return Problem(classes=flood_classes(), model=HydraulicHeightModel(),
                   spec=QoISpec(kind="failure_prob", direction=direction,
                                h=h),
                   nominals=nominal_laws())


def expectation_problem(direction: str = "sup") -> Problem:
    return Problem(classes=flood_classes(), model=HydraulicHeightModel(),
                   spec=QoISpec(kind="expectation", direction=direction),
                   nominals=nominal_laws())


def sobol_problem(index: int, which: str = "first",
                  direction: str = "sup") -> Problem:
    kind = "sobol_first" if which == "first" else "sobol_total"
    return Problem(classes=flood_classes(), model=HydraulicHeightModel(),
                   spec=QoISpec(kind=kind, direction=direction, index=index),
                   nominals=nominal_laws())


def prior_classes():
    rho = MarginalClass(name="rho", support=RHO_SUPPORT,
                        constraints=(Constraint.raw_moment(1, RHO_MEAN),))
    beta = MarginalClass(name="beta", support=BETA_SUPPORT,
                         constraints=(Constraint.raw_moment(1, BETA_MEAN),))
    return rho, beta


def bayes_problem(data, p: float = 0.95, direction: str = "sup",
                  convention: str = "height",
                  h: Optional[float] = None) -> Problem:
    """Robust Bayesian problem over (rho, beta, Ks, Zv, Zm) classes.

    With ``h`` set the QoI is the predictive probability of staying below h;
    otherwise the predictive p-quantile.
    """
    rho, beta = prior_classes()
    _, ks, zv, zm = flood_classes()
    if h is not None:
        spec = QoISpec(kind="bayes_failure_prob", direction=direction, h=h,
                       data=tuple(data), convention=convention)
    else:
        spec = QoISpec(kind="bayes_quantile", direction=direction, p=p,
                       data=tuple(data), convention=convention)
    return Problem(classes=(rho, beta, ks, zv, zm),
                   model=HydraulicHeightModel(), spec=spec)
