"""Bayesian posterior functionals and their robust bounds.

The prior over the flow-distribution parameters (rho, beta) is itself only
known through moment classes, so the robust Bayesian quantities optimize the
posterior functional over extreme priors (and over the hydraulic input
classes at the same time).  Posterior updating of a finite-mixture prior is
exact: atoms are reweighted by their likelihood; uniform prior components
are first discretized on Gauss-Legendre nodes.

The predictive CDF factorizes because the likelihood only involves (rho,
beta): conditioning on every posterior atom pair and every quadrature node
of the hydraulic inputs gives a closed-form Gumbel probability, and the
predictive value is the double weighted sum.  Quantiles follow by bisection
in h, which is sound since the conditional probability is nondecreasing in
h.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import Gumbel, gumbel_loglik
from .measures import (DiracMixture, ProductMeasure, UniformMixture,
                       class_violation, support_nodes)
from .models import conditional_failure_prob
from .optimize import BoundResult, DEConfig, optimize
from .parameterize import layout_for_class, vector_to_extreme
from .sobol import nominal_nodes


class DegeneratePosteriorError(ValueError):
    """The likelihood vanishes on the whole prior support."""


def _atomize(measure, order: int = 64):
    """Weighted atoms (x, w) of a finite mixture; uniforms via quadrature."""
    if isinstance(measure, DiracMixture):
        w, x = measure.arrays()
        return x, w
    return support_nodes(measure, order=order)


def posterior_pushforward(prior, likelihood: Callable, data) -> DiracMixture:
    """Exact Bayes update of a finite-mixture prior.

    ``likelihood(theta, data)`` must be vectorized over theta and return
    plain (not log) likelihood values.  Dirac priors are reweighted atom by
    atom; uniform components are reweighted on quadrature nodes, so the
    result is always a Dirac mixture.
    """
    x, w = _atomize(prior)
    lik = np.asarray(likelihood(x, data), dtype=float)
    if np.any(lik < 0.0) or not np.all(np.isfinite(lik)):
        raise ValueError("likelihood values must be finite and nonnegative")
    wl = w * lik
    total = wl.sum()
    if total <= 0.0:
        raise DegeneratePosteriorError("likelihood vanishes on the prior "
                                       "support; posterior undefined")
    return DiracMixture(weights=tuple(wl / total), locations=tuple(x))


def joint_flow_posterior(prior_rho, prior_beta, data):
    """Posterior over (rho, beta) atom pairs under the Gumbel flow model.

    Returns (rho_atoms, beta_atoms, W) with W[j, k] the posterior weight of
    the pair; computed in log space so 47-observation likelihoods cannot
    underflow.  ``data`` None or empty keeps the prior weights.
    """
    xr, wr = _atomize(prior_rho)
    xb, wb = _atomize(prior_beta)
    if np.any(xb <= 0.0):
        raise ValueError("beta prior atoms must be positive")
    if data is None or len(data) == 0:
        return xr, xb, np.outer(wr, wb)
    R, B = np.meshgrid(xr, xb, indexing="ij")
    ll = gumbel_loglik(data, R.ravel(), B.ravel()).reshape(R.shape)
    logw = np.log(np.outer(wr, wb)) + ll
    m = logw.max()
    if not np.isfinite(m):
        raise DegeneratePosteriorError("posterior mass underflowed to zero")
    W = np.exp(logw - m)
    return xr, xb, W / W.sum()


def _hydraulic_nodes(others, order: int = 24):
    """Tensor nodes/weights of the (Ks, Zv, Zm) laws."""
    if len(others) != 3:
        raise ValueError("expected exactly the (Ks, Zv, Zm) inputs, got "
                         f"{len(others)}")
    packs = [nominal_nodes(m) if not isinstance(m, (DiracMixture, UniformMixture))
             else support_nodes(m, order=order) for m in others]
    grids = np.meshgrid(*[p[0] for p in packs], indexing="ij")
    ks, zv, zm = (g.ravel() for g in grids)
    w = np.ones(ks.size)
    for g in np.meshgrid(*[p[1] for p in packs], indexing="ij"):
        w = w * g.ravel()
    return ks, zv, zm, w / w.sum()


def predictive_cdf(priors, others, data, convention: str = "height",
                   order: int = 24) -> Callable:
    """h -> posterior-predictive P[output <= h].

    ``priors`` is the (rho, beta) pair of finite-mixture priors, ``others``
    the (Ks, Zv, Zm) laws (mixtures or nominal distributions).
    """
    prior_rho, prior_beta = priors
    xr, xb, W = joint_flow_posterior(prior_rho, prior_beta, data)
    ks, zv, zm, wn = _hydraulic_nodes(others, order=order)
    R, B = np.meshgrid(xr, xb, indexing="ij")
    rho_c = R.ravel()[:, None]
    beta_c = B.ravel()[:, None]
    w_c = W.ravel()

    def cdf(h: float) -> float:
        with np.errstate(all="ignore"):
            M = conditional_failure_prob(rho_c, beta_c, ks[None, :],
                                         zv[None, :], zm[None, :], h,
                                         convention=convention)
        return float(w_c @ (M @ wn))

    return cdf


def bayesian_failure_probability(priors, others, h: float, data=None,
                                 convention: str = "height") -> float:
    """Posterior-predictive probability that the output stays below h."""
    return predictive_cdf(priors, others, data, convention=convention)(h)


def predictive_quantile(priors, others, p: float, data=None,
                        convention: str = "height", tol: float = 1e-9,
                        h_max: float = 1e3) -> float:
    """p-quantile of the posterior-predictive output law, by bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile order must lie in (0, 1)")
    cdf = predictive_cdf(priors, others, data, convention=convention)
    lo = 0.0
    if convention == "level":
        _, zv, _, _ = _hydraulic_nodes(others)
        lo = float(zv.min())
    hi = max(lo + 1.0, 8.0)
    while cdf(hi) < p and hi < h_max:
        hi = 2.0 * hi
    for _ in range(80):
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if cdf(mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def synthetic_flow_record(n: int = 47, seed: int = 1789,
                          rho: float = 626.14, beta: float = 190.0):
    """Reproducible stand-in for an unpublished annual-flow record."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random(n)
    return tuple(float(v) for v in Gumbel(rho, beta).ppf(u))


def bayes_bound(problem, config: Optional[DEConfig] = None) -> BoundResult:
    """Robust bound of a posterior-predictive QoI.

    The problem must carry exactly five classes in the order (rho, beta, Ks,
    Zv, Zm); all five vary over their classes.  The QoI is either the
    predictive probability of staying below spec.h or the predictive
    p-quantile, per spec.kind.
    """
    config = config or DEConfig()
    spec = problem.spec
    classes = problem.classes
    if len(classes) != 5:
        raise ValueError("Bayesian bounds need the five classes "
                         "(rho, beta, Ks, Zv, Zm) in order")
    data = spec.data
    if data is None:
        raise ValueError("Bayesian QoIs need observed data on the spec")
    convention = spec.convention
    layouts = [layout_for_class(mc.with_joint_budget(0)) for mc in classes]
    dims = sum(l.dims for l in layouts)
    maximize = spec.direction == "sup"
    sign = 1.0 if maximize else -1.0

    def decode(theta):
        off = 0
        ms = []
        viol = 0.0
        for lay in layouts:
            res = vector_to_extreme(theta[off:off + lay.dims], lay)
            off += lay.dims
            viol += res.violation
            if res.measure is None:
                return None, viol
            ms.append(res.measure)
        return ms, viol

    def value_of(ms, fast: bool) -> float:
        priors = (ms[0], ms[1])
        others = ms[2:]
        if spec.kind == "bayes_failure_prob":
            return bayesian_failure_probability(priors, others, spec.h,
                                                data=data,
                                                convention=convention)
        tol = 1e-6 if fast else 1e-10
        return predictive_quantile(priors, others, spec.p, data=data,
                                   convention=convention, tol=tol)

    def objective(thetas):
        out = np.empty(thetas.shape[0])
        for k, theta in enumerate(thetas):
            ms, viol = decode(theta)
            if ms is None or viol > 1e-9:
                out[k] = -sign * 1e6 * (1.0 + viol)
                continue
            out[k] = value_of(ms, fast=True)
        return out

    theta, _, trace = optimize(objective, dims, config, maximize=maximize)
    ms, viol = decode(theta)
    if ms is None:
        raise RuntimeError("optimizer terminated on an infeasible decode "
                           f"(violation {viol:.3g})")
    value = value_of(ms, fast=False)
    pm = ProductMeasure(tuple(ms))
    per = [{"name": mc.name, "violation": float(class_violation(m, mc))}
           for m, mc in zip(ms, classes)]
    report = {"marginals": per, "joint": [],
              "max_violation": max(p["violation"] for p in per)}
    return BoundResult(value=float(value), argmax=pm, trace=trace,
                       feasibility=report, seed=config.seed, spec=spec,
                       extra={"convention": convention,
                              "n_observations": len(data)})
