"""Independent references: Monte Carlo baselines and brute-force checks.

Everything here deliberately avoids the solver's own code paths.  Sampling
is plain inverse-CDF Monte Carlo with a hand-rolled probit (Acklam's
rational approximation, |error| < 1.15e-9, against math.erfc for the CDF),
so agreement between a Monte Carlo number and a solver number is evidence,
not circularity.  The dominance and Jensen checks probe the finite-mixture
reduction from the other side: random feasible interior measures must never
beat the extreme-point optimum.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (DiracMixture, MarginalClass, ProductMeasure,
                       UniformMixture, class_violation, measure_to_dict, mix)
from .parameterize import (_constraint_rows_dirac, _interior_weights,
                           _segment_average, layout_for_class,
                           vector_to_extreme)
from .quantities import evaluate_qoi

_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02,
             -2.759285104469687e+02, 1.383577518672690e+02,
             -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02,
             -1.556989798598866e+02, 6.680131188771972e+01,
             -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01,
             -2.400758277161838e+00, -2.549732539343734e+00,
             4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01,
             2.445134137142996e+00, 3.754408661907416e+00)


def probit(u):
    """Inverse standard normal CDF, rational approximation on (0, 1)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("probit needs arguments strictly inside (0, 1)")
    out = np.empty_like(u)
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    lo = u < 0.02425
    hi = u > 1.0 - 0.02425
    mid = ~(lo | hi)

    q = u[mid] - 0.5
    r = q * q
    num = ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
    den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
    out[mid] = num * q / den

    for mask, flip in ((lo, 1.0), (hi, -1.0)):
        if not np.any(mask):
            continue
        p = u[mask] if flip > 0 else 1.0 - u[mask]
        q = np.sqrt(-2.0 * np.log(p))
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        out[mask] = flip * num / den
    return out if out.ndim else float(out)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def gumbel_sampler(rho: float, beta: float) -> Callable:
    return lambda u: rho - beta * np.log(-np.log(u))


def truncated_normal_sampler(mu: float, sigma: float, lo: float,
                             hi: float) -> Callable:
    pa = normal_cdf((lo - mu) / sigma)
    pb = normal_cdf((hi - mu) / sigma)
    return lambda u: mu + sigma * probit(pa + u * (pb - pa))


def uniform_sampler(lo: float, hi: float) -> Callable:
    return lambda u: lo + u * (hi - lo)


def sample_inputs(samplers: Sequence[Callable], n: int, seed: int) -> np.ndarray:
    """(n, d) iid draws; one counter-based stream per input, keyed like
    the solver's product sampler so seeds mean the same thing everywhere."""
    cols = []
    for i, sampler in enumerate(samplers):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        u = np.clip(rng.random(n), 1e-12, 1.0 - 1e-12)
        cols.append(sampler(u))
    return np.column_stack(cols)


def _empirical_quantile(values: np.ndarray, p: float, side: str) -> float:
    v = np.sort(values)
    n = v.size
    if side == "left":
        k = max(int(math.ceil(p * n)) - 1, 0)
    else:
        k = min(int(math.floor(p * n)), n - 1)
    return float(v[k])


def mc_reference(samplers: Sequence[Callable], model: Callable, spec,
                 n: int = 10 ** 6, seed: int = 0) -> float:
    """Plain Monte Carlo estimate of a QoI under nominal input laws."""
    X = sample_inputs(samplers, n, seed)
    y = np.asarray(model(X), dtype=float)
    kind = spec.kind
    if kind == "expectation":
        return float(np.mean(y ** spec.power))
    if kind == "failure_prob":
        return float(np.mean(y <= spec.h))
    if kind == "lower_quantile":
        return _empirical_quantile(y, spec.p, "left")
    if kind == "upper_quantile":
        return _empirical_quantile(y, spec.p, "right")
    if kind == "variance":
        return float(np.var(y))
    raise ValueError(f"mc_reference cannot estimate kind {kind!r}")


def quantile_se(values: np.ndarray, p: float) -> float:
    """Large-sample standard error of the empirical p-quantile.

    Density at the quantile is estimated by a central finite difference of
    order-n^{-1/2} half-width.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    delta = 2.0 / math.sqrt(n)
    q_hi = _empirical_quantile(v, min(p + delta, 1.0 - 1.0 / n), "left")
    q_lo = _empirical_quantile(v, max(p - delta, 1.0 / n), "left")
    f_hat = 2.0 * delta / max(q_hi - q_lo, 1e-300)
    return math.sqrt(p * (1.0 - p) / n) / f_hat


def random_feasible(mc: MarginalClass, rng: np.random.Generator,
                    extra_atoms: int = 3, attempts: int = 80):
    """A feasible measure of the class with more atoms than the budget.

    Positions are drawn uniformly; weights are projected from a Dirichlet
    draw onto the equality constraints.  Extra atoms keep the result in the
    interior of the class (generically not an extreme point), which is what
    the dominance tests need.  Returns None when every attempt fails.
    """
    n = mc.budget + extra_atoms
    eq = [c for c in mc.constraints if c.relation == "eq"]
    b = np.concatenate(([1.0], [c.bound for c in eq]))
    for _ in range(attempts):
        x = np.sort(rng.uniform(mc.support.lo, mc.support.hi, n))
        if mc.is_unimodal:
            rows = np.vstack([np.ones(n)]
                             + [_segment_average(c, mc.mode, x) for c in eq])
        else:
            rows = np.vstack([np.ones(n), _constraint_rows_dirac(eq, x)]
                             if eq else [np.ones(n)])
        w0 = rng.dirichlet(np.ones(n))
        w = _interior_weights(rows, b, w0)
        if w is None:
            continue
        if mc.is_unimodal:
            m = UniformMixture(mode=mc.mode, weights=tuple(w),
                               endpoints=tuple(x))
        else:
            m = DiracMixture(weights=tuple(w), locations=tuple(x))
        if class_violation(m, mc) <= 1e-8:
            return m
    return None


def random_extreme(mc: MarginalClass, rng: np.random.Generator,
                   attempts: int = 80):
    """A random extreme point of the class via the layout decoding."""
    lay = layout_for_class(mc)
    if lay.dims == 0:
        return lay.fixed
    for _ in range(attempts):
        res = vector_to_extreme(rng.random(lay.dims), lay)
        if res.measure is not None:
            return res.measure
    return None


def dominance_test(problem, bound_value: float, trials: int = 200,
                   seed: int = 0, value_fn: Optional[Callable] = None,
                   tol: float = 1e-6) -> dict:
    """Random feasible interior products must not beat the computed bound.

    ``value_fn(pm) -> float`` overrides the default QoI evaluation (used for
    ratio QoIs whose bound comes from a dedicated sweep).  Reports the worst
    offender, serialized, if any trial lands beyond ``tol``.
    """
    rng = np.random.default_rng(seed)
    spec = problem.spec
    sign = 1.0 if spec.direction == "sup" else -1.0
    if value_fn is None:
        value_fn = lambda pm: evaluate_qoi(pm, problem.model, spec, order=48)
    violations = 0
    max_excess = -math.inf
    worst = None
    best_value = -math.inf
    done = 0
    for _ in range(trials):
        ms = [random_feasible(mc, rng) for mc in problem.classes]
        if any(m is None for m in ms):
            continue
        pm = ProductMeasure(tuple(ms))
        val = float(value_fn(pm))
        done += 1
        best_value = max(best_value, sign * val)
        excess = sign * val - sign * bound_value
        if excess > max_excess:
            max_excess = excess
            if excess > tol:
                worst = measure_to_dict(pm)
        if excess > tol:
            violations += 1
    return {"trials": done, "requested": trials, "bound": float(bound_value),
            "direction": spec.direction, "violations": violations,
            "max_excess": float(max_excess),
            "best_trial_value": float(sign * best_value),
            "worst_measure": worst}


def jensen_extremal_check(problem, trials: int = 200, seed: int = 0,
                          affine_tol: float = 1e-12,
                          quasiconvex_tol: float = 1e-9) -> dict:
    """Mixture inequalities of the QoI along one marginal at a time.

    For random same-class pairs (m1, m2), a random mixing weight, and the
    other marginals held at a shared random extreme point: measure-affine
    QoIs must match the barycentric combination exactly, quasi-convex ones
    must stay below the max of the endpoints.
    """
    rng = np.random.default_rng(seed)
    spec = problem.spec
    affine = spec.kind == "expectation"
    tol = affine_tol if affine else quasiconvex_tol
    d = len(problem.classes)
    failures = 0
    max_gap = -math.inf
    done = 0
    for t in range(trials):
        i = t % d
        base = [random_extreme(mc, rng) for mc in problem.classes]
        m1 = random_feasible(problem.classes[i], rng)
        m2 = random_feasible(problem.classes[i], rng)
        if any(m is None for m in base) or m1 is None or m2 is None:
            continue
        lam = float(rng.uniform(0.1, 0.9))
        try:
            mixed = mix(m1, m2, lam)
        except ValueError:
            continue
        vals = []
        for mi in (m1, m2, mixed):
            ms = list(base)
            ms[i] = mi
            vals.append(evaluate_qoi(ProductMeasure(tuple(ms)), problem.model,
                                     spec, order=48))
        f1, f2, fm = vals
        done += 1
        if affine:
            gap = abs(fm - (lam * f1 + (1.0 - lam) * f2))
        else:
            gap = fm - max(f1, f2)
        max_gap = max(max_gap, gap)
        if gap > tol:
            failures += 1
    return {"trials": done, "requested": trials, "kind": spec.kind,
            "mode": "affine" if affine else "quasi_convex",
            "tolerance": tol, "failures": failures,
            "max_gap": float(max_gap)}
