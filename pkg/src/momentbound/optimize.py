"""Differential evolution over products of extreme-measure parameter cubes.

The reduction theorem turns each robust bound into a finite-dimensional
global optimization: every marginal class is replaced by its extreme
measures (Dirac or uniform mixtures within an atom budget), each of which a
ParamLayout encodes as a box [0,1]^k.  This module concatenates those boxes,
runs a seeded DE/rand/1/bin (or best/1/bin) search, scores infeasible
decodes with a large signed penalty, and re-evaluates the winning measure
with the refined quadrature before reporting.

Joint constraints (moments of functions coupling several inputs) cannot be
eliminated by the per-marginal parameterization; they are penalized, and
each marginal's atom budget is raised by the number of joint constraints so
the optimum stays representable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (MarginalClass, ProductMeasure, class_violation,
                       constraint_residuals, measure_to_dict)
from .parameterize import DecodeResult, ParamLayout, layout_for_class, vector_to_extreme
from .quantities import QoISpec, DirectionError, direction_allowed, evaluate_qoi, input_grid

PENALTY = 1e6
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class JointConstraint:
    """E[fn(X)] (relation) bound, with fn vectorized over input rows."""

    fn: Callable
    relation: str  # "eq" or "leq"
    bound: float
    scale: float = 1.0
    label: str = "joint"

    def violation(self, value: float) -> float:
        r = value - self.bound
        if self.relation == "eq":
            return abs(r) / self.scale
        return max(0.0, r) / self.scale


@dataclass(frozen=True)
class Problem:
    """Marginal classes + model + QoI; the unit every bound is computed on.

    ``nominals`` optionally carries one nominal law per input (distribution
    objects or finite mixtures); Sobol and Bayes bounds need them, plain
    bounds ignore them.
    """

    classes: tuple[MarginalClass, ...]
    model: Callable
    spec: QoISpec
    joint: tuple[JointConstraint, ...] = ()
    nominals: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "joint", tuple(self.joint))
        object.__setattr__(self, "nominals", tuple(self.nominals))


@dataclass
class DEConfig:
    population: Optional[int] = None  # None -> 15 * dims
    F: float = 0.7
    CR: float = 0.9
    max_generations: int = 600
    tol: float = 1e-8
    seed: int = 0
    strategy: str = "rand1bin"
    workers: Optional[int] = None  # None -> MOMENTBOUND_THREADS env, else 1

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")
        if not 0.0 < self.F <= 2.0:
            raise ValueError("F must lie in (0, 2]")
        if not 0.0 <= self.CR <= 1.0:
            raise ValueError("CR must lie in [0, 1]")
        if self.max_generations < 1:
            raise ValueError("max_generations must be positive")
        if self.strategy not in ("rand1bin", "best1bin"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get("MOMENTBOUND_THREADS", "")
        try:
            return max(1, int(env))
        except ValueError:
            return 1


@dataclass
class BoundResult:
    value: float
    argmax: ProductMeasure
    trace: list  # (generation, best objective so far)
    feasibility: dict
    seed: int
    spec: Optional[QoISpec] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "measure": measure_to_dict(self.argmax),
            "trace": [[int(g), float(v)] for g, v in self.trace],
            "feasibility": self.feasibility,
            "seed": self.seed,
        }
        if self.spec is not None:
            out["qoi"] = self.spec.to_dict()
        out.update(self.extra)
        return out


def _reflect(x: np.ndarray) -> np.ndarray:
    # fold the real line onto [0,1] by reflection at both walls
    y = np.mod(np.abs(x), 2.0)
    return np.where(y > 1.0, 2.0 - y, y)


def _batched(objective: Callable, X: np.ndarray, workers: int) -> np.ndarray:
    if workers <= 1 or X.shape[0] < 2 * workers:
        return np.asarray(objective(X), dtype=float)
    # chunk by index so results cannot depend on the worker count
    chunks = np.array_split(np.arange(X.shape[0]), workers)
    out = np.empty(X.shape[0])
    with ThreadPoolExecutor(max_workers=workers) as ex:
        for idx, vals in ex.map(
                lambda ix: (ix, np.asarray(objective(X[ix]), dtype=float)),
                chunks):
            out[idx] = vals
    return out


def optimize(objective: Callable, dims: int, config: DEConfig,
             maximize: bool = True):
    """Global search of ``objective`` over [0,1]^dims.

    ``objective`` maps a (n, dims) matrix to n scores (already penalized for
    any constraint violations).  Returns (theta*, score*, trace) with trace a
    list of (generation, best score so far).  Deterministic given the seed;
    thread count never changes the result because every random draw happens
    on the driving thread.
    """
    if dims < 1:
        raise ValueError("optimize needs dims >= 1")
    rng = np.random.default_rng(config.seed)
    n_pop = config.population if config.population is not None else 15 * dims
    n_pop = max(n_pop, 5)
    workers = config.resolved_workers()
    sign = 1.0 if maximize else -1.0

    pop = rng.random((n_pop, dims))
    scores = _batched(objective, pop, workers)
    _check_finite(scores, pop)
    best = int(np.argmax(sign * scores))
    trace = [(0, float(scores[best]))]

    idx_all = np.arange(n_pop)
    for gen in range(1, config.max_generations + 1):
        # all stochastic choices are made here, before any evaluation
        r = np.empty((n_pop, 3), dtype=int)
        for k in range(3):
            r[:, k] = rng.integers(0, n_pop, n_pop)
        for k in range(3):
            clash = (r[:, k] == idx_all)
            for j in range(k):
                clash |= r[:, k] == r[:, j]
            while np.any(clash):
                r[clash, k] = rng.integers(0, n_pop, int(clash.sum()))
                clash = (r[:, k] == idx_all)
                for j in range(k):
                    clash |= r[:, k] == r[:, j]
        cross = rng.random((n_pop, dims)) < config.CR
        cross[idx_all, rng.integers(0, dims, n_pop)] = True

        if config.strategy == "best1bin":
            base = np.broadcast_to(pop[best], (n_pop, dims))
        else:
            base = pop[r[:, 0]]
        mutant = _reflect(base + config.F * (pop[r[:, 1]] - pop[r[:, 2]]))
        trial = np.where(cross, mutant, pop)

        t_scores = _batched(objective, trial, workers)
        _check_finite(t_scores, trial)
        accept = sign * t_scores >= sign * scores
        pop[accept] = trial[accept]
        scores[accept] = t_scores[accept]
        # acceptance never lowers any slot, so the running max is monotone
        best = int(np.argmax(sign * scores))
        trace.append((gen, float(scores[best])))
        if np.ptp(scores) <= config.tol * max(1.0, abs(float(scores[best]))):
            break
    return pop[best].copy(), float(scores[best]), trace


def _check_finite(scores: np.ndarray, thetas: np.ndarray) -> None:
    bad = ~np.isfinite(scores)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RuntimeError("objective returned a non-finite score at theta="
                           f"{thetas[i].tolist()}")


def _decode_all(theta: np.ndarray, layouts: Sequence[ParamLayout]):
    """Split one concatenated vector and decode every marginal."""
    measures = []
    violation = 0.0
    off = 0
    for lay in layouts:
        res: DecodeResult = vector_to_extreme(theta[off:off + lay.dims], lay)
        off += lay.dims
        violation += res.violation
        if res.measure is None:
            return None, violation
        measures.append(res.measure)
    return ProductMeasure(tuple(measures)), violation


def _joint_violation(pm: ProductMeasure, joint: Sequence[JointConstraint],
                     order: int = 32) -> float:
    if not joint:
        return 0.0
    X, w = input_grid(pm, order)
    total = 0.0
    for jc in joint:
        val = float(np.asarray(jc.fn(X), dtype=float).reshape(-1) @ w)
        total += jc.violation(val)
    return total


def make_objective(problem: Problem, layouts: Sequence[ParamLayout],
                   maximize: bool, order: int = 32) -> Callable:
    """Penalized batch objective for the DE search."""
    sign = 1.0 if maximize else -1.0

    def objective(thetas: np.ndarray) -> np.ndarray:
        out = np.empty(thetas.shape[0])
        for i, theta in enumerate(thetas):
            pm, viol = _decode_all(theta, layouts)
            if pm is not None:
                viol += _joint_violation(pm, problem.joint, order=order)
            if pm is None or viol > FEAS_TOL:
                base = 0.0
                if pm is not None:
                    base = evaluate_qoi(pm, problem.model, problem.spec,
                                        order=order, fast=True)
                out[i] = base - sign * PENALTY * (1.0 + viol)
                continue
            out[i] = evaluate_qoi(pm, problem.model, problem.spec,
                                  order=order, fast=True)
        return out

    return objective


def _feasibility_report(pm: ProductMeasure, problem: Problem) -> dict:
    per_marg = []
    worst = 0.0
    for m, mc in zip(pm.marginals, problem.classes):
        v = class_violation(m, mc)
        res = [float(r) for r in constraint_residuals(m, mc)]
        per_marg.append({"name": mc.name, "violation": float(v),
                         "residuals": res})
        worst = max(worst, v)
    joint = []
    if problem.joint:
        X, w = input_grid(pm, 32)
        for jc in problem.joint:
            val = float(np.asarray(jc.fn(X), dtype=float).reshape(-1) @ w)
            jv = jc.violation(val)
            joint.append({"label": jc.label, "value": val,
                          "violation": float(jv)})
            worst = max(worst, jv)
    return {"marginals": per_marg, "joint": joint,
            "max_violation": float(worst)}


def bound_qoi(problem: Problem, config: Optional[DEConfig] = None,
              search_order: int = 32, report_order: int = 64) -> BoundResult:
    """Robust bound of problem.spec over the product of marginal classes.

    Assembles per-class extreme-measure layouts (atom budgets raised by the
    number of joint constraints), optimizes the penalized objective with DE,
    then re-evaluates the winning product measure at the reporting
    quadrature order with level-set refinement.
    """
    config = config or DEConfig()
    spec = problem.spec
    ok, reason = direction_allowed(spec.kind, spec.direction)
    if not ok:
        raise DirectionError(reason)
    if spec.kind in ("sobol_first", "sobol_total"):
        from .sobol import sobol_bound
        return sobol_bound(problem, config)
    if spec.kind in ("bayes_failure_prob", "bayes_quantile"):
        from .bayes import bayes_bound
        return bayes_bound(problem, config)

    n_joint = len(problem.joint)
    layouts = [layout_for_class(mc.with_joint_budget(n_joint))
               for mc in problem.classes]
    dims = sum(lay.dims for lay in layouts)
    maximize = spec.direction == "sup"

    if dims == 0:
        pm, _ = _decode_all(np.empty(0), layouts)
        value = evaluate_qoi(pm, problem.model, spec, order=report_order)
        return BoundResult(value=value, argmax=pm, trace=[(0, value)],
                           feasibility=_feasibility_report(pm, problem),
                           seed=config.seed, spec=spec)

    objective = make_objective(problem, layouts, maximize, order=search_order)
    theta, _, trace = optimize(objective, dims, config, maximize=maximize)
    pm, viol = _decode_all(theta, layouts)
    if pm is None:
        raise RuntimeError("optimizer terminated on an infeasible decode "
                           f"(violation {viol:.3g}); the class is likely "
                           "too tight for its atom budget")
    value = evaluate_qoi(pm, problem.model, spec, order=report_order)
    return BoundResult(value=value, argmax=pm, trace=trace,
                       feasibility=_feasibility_report(pm, problem),
                       seed=config.seed, spec=spec)


def golden_sweep(inner: Callable, lo: float, hi: float, maximize: bool,
                 prescan: int = 9, iters: int = 44):
    """Outer 1D search over a pinned linearization value.

    ``inner(y0)`` returns (value or None, payload); None marks an infeasible
    pin.  A coarse prescan brackets the best region (the objective need not
    be unimodal globally), then golden-section refines it.  Returns the best
    (y0, value, payload) triple seen.
    """
    sign = 1.0 if maximize else -1.0
    span = hi - lo
    ys = np.linspace(lo + 0.02 * span, hi - 0.02 * span, prescan)
    best = (None, -np.inf, None, None)  # y0, signed value, raw value, payload
    for y0 in ys:
        val, payload = inner(float(y0))
        if val is not None and sign * val > best[1]:
            best = (float(y0), sign * val, val, payload)
    if best[0] is None:
        return None, None, None
    k = int(np.argmin(np.abs(ys - best[0])))
    a = ys[max(0, k - 1)]
    b = ys[min(len(ys) - 1, k + 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, pc = inner(float(c))
    fd, pd = inner(float(d))
    for pt, val, payload in ((c, fc, pc), (d, fd, pd)):
        if val is not None and sign * val > best[1]:
            best = (float(pt), sign * val, val, payload)
    for _ in range(iters):
        sc = -np.inf if fc is None else sign * fc
        sd = -np.inf if fd is None else sign * fd
        if sc >= sd:
            b, d, fd, pd = d, c, fc, pc
            c = b - phi * (b - a)
            fc, pc = inner(float(c))
            if fc is not None and sign * fc > best[1]:
                best = (float(c), sign * fc, fc, pc)
        else:
            a, c, fc, pc = c, d, fd, pd
            d = a + phi * (b - a)
            fd, pd = inner(float(d))
            if fd is not None and sign * fd > best[1]:
                best = (float(d), sign * fd, fd, pd)
    return best[0], best[2], best[3]


def linearized_variance_bound(classes, model: Callable, direction: str = "sup",
                              config: Optional[DEConfig] = None) -> BoundResult:
    """Bound of Var(Y) over the classes.

    Variance is not measure affine, so the reduction theorem does not apply
    directly.  Pinning the mean linearizes it: for each trial value phi0 the
    inner problem bounds E[(G - phi0)^2] subject to the joint constraint
    E[G] = phi0 (which raises every atom budget by one), and the outer
    golden-section sweep searches over phi0.
    """
    config = config or DEConfig()
    maximize = direction == "sup"
    classes = tuple(classes)

    # bracket the reachable mean by probing the support box corners
    corners = np.array(np.meshgrid(*[(mc.support.lo, mc.support.hi)
                                     for mc in classes],
                                   indexing="ij")).reshape(len(classes), -1).T
    g = np.asarray(model(corners), dtype=float)
    lo, hi = float(g.min()), float(g.max())

    def inner(phi0: float):
        def shifted(X):
            return (np.asarray(model(X), dtype=float) - phi0) ** 2

        sub = Problem(
            classes=classes, model=shifted,
            spec=QoISpec(kind="expectation", direction=direction),
            joint=(JointConstraint(fn=model, relation="eq", bound=phi0,
                                   scale=max(1.0, abs(phi0)),
                                   label="pinned_mean"),))
        try:
            res = bound_qoi(sub, config)
        except RuntimeError:
            return None, None
        if res.feasibility["max_violation"] > 1e-6:
            return None, None
        return res.value, res

    phi0, value, payload = golden_sweep(inner, lo, hi, maximize)
    if phi0 is None:
        raise RuntimeError("no feasible pinned mean found; the classes admit "
                           "no measure at any swept mean value")
    payload.extra["phi0"] = float(phi0)
    payload.spec = QoISpec(kind="variance", direction=direction)
    payload.value = float(value)
    return payload


def cdf_envelope(problem: Problem, h_grid: Sequence[float],
                 config: Optional[DEConfig] = None) -> list[tuple[float, float]]:
    """Lower CDF envelope h -> inf over the classes of P[G(X) <= h].

    The pointwise minimum of CDFs need not be monotone once optimizer noise
    enters, so the result is cleaned up isotonically.  Inverting the
    envelope at level p recovers the maximal lower p-quantile.
    """
    h_grid = [float(h) for h in h_grid]
    if any(b < a for a, b in zip(h_grid, h_grid[1:])):
        raise ValueError("h grid must be sorted ascending")
    config = config or DEConfig()
    vals = []
    for h in h_grid:
        sub = Problem(classes=problem.classes, model=problem.model,
                      spec=QoISpec(kind="failure_prob", direction="inf", h=h),
                      joint=problem.joint)
        res = bound_qoi(sub, config)
        vals.append(min(max(res.value, 0.0), 1.0))
    vals = np.maximum.accumulate(vals)
    return list(zip(h_grid, [float(v) for v in vals]))
