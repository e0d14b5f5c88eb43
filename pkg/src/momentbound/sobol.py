"""Robust bounds on Sobol sensitivity indices.

A Sobol index is a ratio of two expectations, so it is not measure affine
and the reduction theorem does not apply to it directly.  It does apply
after linearization: fix the overall output mean at a trial value y0, add
E[Y] = y0 as one extra constraint (raising the atom budget by one), bound
the resulting ratio of affine functionals over the extreme measures, and
sweep y0 with a bracketed golden-section search outside.

For the first-order index of input i the other inputs keep their nominal
distributions, so the inner conditional expectations m1(x) = E[Y | X_i=x]
and m2(x) = E[Y^2 | X_i=x] collapse to 1D tables, computed once on a dense
grid by tensor quadrature and interpolated afterwards.  The inner search
then runs on batched linear solves: atom locations come from the DE vector,
weights are the unique solution of the (unit-scaled) moment system plus the
E[m1] = y0 row.

For the total index of input i all other marginals vary over their classes
while input i keeps its nominal law; the mean pin becomes a joint penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (Constraint, DiracMixture, MarginalClass, ProductMeasure,
                       UniformMixture, class_violation, expectation,
                       gauss_legendre_01, support_nodes)
from .optimize import BoundResult, DEConfig, golden_sweep, optimize
from .quantities import SobolUndefinedError

_TABLE_POINTS = 2049
_SOLVE_TOL = 1e-9


def nominal_nodes(nominal, order: int = 32):
    """Quadrature nodes (x, w) of a nominal input law.

    Accepts either a distribution object exposing ``quadrature()`` or a
    finite mixture from the measures module.
    """
    if hasattr(nominal, "quadrature"):
        return nominal.quadrature()
    return support_nodes(nominal, order=order)


@dataclass
class ConditionalTable:
    """m1(x) = E[Y | X_i = x], m2(x) = E[Y^2 | X_i = x] on a dense grid."""

    grid: np.ndarray
    m1: np.ndarray
    m2: np.ndarray

    def eval_m1(self, x):
        return np.interp(x, self.grid, self.m1)

    def eval_m2(self, x):
        return np.interp(x, self.grid, self.m2)


def conditional_table(model: Callable, i: int, support,
                      rest_nodes: Sequence[tuple], d: int,
                      n_grid: int = _TABLE_POINTS) -> ConditionalTable:
    """Tabulate the conditional mean and second moment along input i.

    ``rest_nodes`` lists (nodes, weights) for every input except i, in input
    order.  The table grid spans the support of input i.
    """
    grid = np.linspace(support.lo, support.hi, n_grid)
    packs = list(rest_nodes)
    grids = np.meshgrid(*[p[0] for p in packs], indexing="ij")
    Xr = np.column_stack([g.ravel() for g in grids]) if packs else np.zeros((1, 0))
    wr = np.ones(Xr.shape[0])
    for g in np.meshgrid(*[p[1] for p in packs], indexing="ij"):
        wr = wr * g.ravel()
    wr = wr / wr.sum()
    n_r = Xr.shape[0]
    cols = [j for j in range(d) if j != i]
    m1 = np.empty(n_grid)
    m2 = np.empty(n_grid)
    # chunk along the grid so the evaluation block stays a few million rows
    step = max(1, int(4_000_000 // max(1, n_r)))
    for s in range(0, n_grid, step):
        g = grid[s:s + step]
        X = np.empty((g.size * n_r, d))
        X[:, cols] = np.tile(Xr, (g.size, 1))
        X[:, i] = np.repeat(g, n_r)
        V = np.asarray(model(X), dtype=float).reshape(g.size, n_r)
        m1[s:s + step] = V @ wr
        m2[s:s + step] = (V ** 2) @ wr
    return ConditionalTable(grid=grid, m1=m1, m2=m2)


def first_order_ratio(measure, table: ConditionalTable) -> float:
    """S_i of one fixed marginal law of input i against a table.

    Uses the measure's own mean as the pin, so this is the plain index, not
    a linearized trial value.
    """
    mean = expectation(measure, table.eval_m1)
    num = expectation(measure, lambda x: table.eval_m1(x) ** 2) - mean ** 2
    den = expectation(measure, table.eval_m2) - mean ** 2
    if den <= 1e-14 * max(1.0, mean ** 2):
        raise SobolUndefinedError("total output variance is zero")
    return num / den


def _all_eq_raw(mc: MarginalClass) -> Optional[list[Constraint]]:
    cons = [c for c in mc.constraints]
    if all(c.relation == "eq" and c.fn is None for c in cons):
        return cons
    return None


class _InnerSolver:
    """Batched decode of candidate marginals pinned to E[m1] = y0.

    Locations (or uniform endpoints) live on the unit interval; weights are
    solved per candidate from the square system [normalization; moment rows
    scaled by their bounds; m1 row].  Works for all-Eq classical and
    unimodal classes, which is what the sweep needs; anything fancier goes
    through the generic penalty path in optimize.
    """

    def __init__(self, mc: MarginalClass, table: ConditionalTable):
        cons = _all_eq_raw(mc)
        if cons is None:
            raise ValueError("inner solver needs all-Eq raw-moment classes")
        self.mc = mc
        self.table = table
        self.lo = mc.support.lo
        self.span = mc.support.width
        self.orders = [c.order for c in cons]
        # rows are x**k / scale_k so every row is O(1) regardless of units
        self.scales = np.array([max(1.0, abs(c.bound)) for c in cons])
        self.row_bounds = np.array([c.bound for c in cons]) / self.scales
        self.B = len(cons) + 2  # atom budget with the mean pin added
        self.unimodal = mc.is_unimodal
        if self.unimodal:
            self.mode_u = (mc.mode - self.lo) / self.span
            self.gl_x, self.gl_w = gauss_legendre_01(32)

    @property
    def dims(self) -> int:
        return self.B

    def _m1_avg(self, x: np.ndarray) -> np.ndarray:
        """Mixture-component average of m1: pointwise for atoms, segment
        average for uniforms hanging off the mode."""
        if not self.unimodal:
            return self.table.eval_m1(x)
        pts = self.mc.mode + (x[..., None] - self.mc.mode) * self.gl_x
        return self.table.eval_m1(pts) @ self.gl_w

    def _rows(self, U: np.ndarray, with_pin: bool = True):
        """Constraint matrix rows for candidate positions U (n, B)."""
        n, B = U.shape
        R = len(self.orders) + 1 + (1 if with_pin else 0)
        A = np.empty((n, R, B))
        A[:, 0, :] = 1.0
        x = self.lo + self.span * U
        if not self.unimodal:
            for r, k in enumerate(self.orders, start=1):
                A[:, r, :] = x ** k / self.scales[r - 1]
        else:
            # uniform segments co(mode, z): averages of x^k are closed form
            a = self.mc.mode
            for r, k in enumerate(self.orders, start=1):
                acc = np.zeros_like(x)
                for j in range(k + 1):
                    acc += x ** j * a ** (k - j)
                A[:, r, :] = acc / (k + 1) / self.scales[r - 1]
        if with_pin:
            A[:, R - 1, :] = self._m1_avg(x)
        return A

    def decode(self, thetas: np.ndarray, y0: float | None):
        """(weights, positions, feasibility residual) for each candidate.

        ``y0 = None`` drops the pinned-mean row; candidates then carry one
        fewer component and only meet the class constraints.
        """
        U = np.clip(thetas, 0.0, 1.0)
        A = self._rows(U, with_pin=y0 is not None)
        n, R, B = A.shape
        if y0 is None:
            b = np.concatenate(([1.0], self.row_bounds))
        else:
            b = np.concatenate(([1.0], self.row_bounds, [y0]))
        dets = np.linalg.det(A)
        ok = np.abs(dets) > 1e-13
        W = np.zeros((n, B))
        if np.any(ok):
            rhs = np.broadcast_to(b[:, None], (int(ok.sum()), R, 1))
            W[ok] = np.linalg.solve(A[ok], rhs)[..., 0]
        resid = np.abs(A @ W[..., None] - b[None, :, None]).max(axis=(1, 2))
        neg = np.clip(-W, 0.0, None).sum(axis=1)
        bad = (~ok) | (resid > _SOLVE_TOL) | (neg > _SOLVE_TOL)
        viol = np.where(ok, resid + neg, 1.0)
        return W, U, bad, viol

    def mean_range(self, config: DEConfig) -> tuple[float, float]:
        """Achievable range of E[m1(X)] over the class.

        Two small pinless searches (maximize / minimize the mean of m1 over
        class members with one fewer component); the pinned sweep only makes
        sense inside this interval, which for tightly constrained classes is
        far narrower than the pointwise range of m1.
        """
        dims = len(self.orders) + 1

        def make_obj(sgn: float):
            def obj(thetas):
                W, U, bad, viol = self.decode(thetas, None)
                vals = (W * self._m1_avg(self.lo + self.span * U)).sum(axis=1)
                return np.where(~bad, sgn * vals, -1e6 * (1.0 + viol))
            return obj

        cfg = DEConfig(population=15 * dims, F=config.F, CR=config.CR,
                       max_generations=150, tol=1e-12, seed=config.seed,
                       strategy=config.strategy, workers=1)
        _, hi_val, _ = optimize(make_obj(1.0), dims, cfg, maximize=True)
        _, lo_neg, _ = optimize(make_obj(-1.0), dims, cfg, maximize=True)
        if hi_val <= -1e5 or lo_neg <= -1e5:
            raise RuntimeError("marginal class admits no feasible member "
                               "with the reduced component budget")
        return -lo_neg, hi_val

    def ratio(self, W: np.ndarray, U: np.ndarray, y0: float):
        """Linearized Sobol ratio per candidate, given solved weights."""
        x = self.lo + self.span * U
        if not self.unimodal:
            m1sq = self.table.eval_m1(x) ** 2
            m2 = self.table.eval_m2(x)
        else:
            pts = self.mode_u + (U[..., None] - self.mode_u) * self.gl_x
            px = self.lo + self.span * pts
            m1sq = self.table.eval_m1(px) ** 2 @ self.gl_w
            m2 = self.table.eval_m2(px) @ self.gl_w
        num = (W * m1sq).sum(axis=1) - y0 ** 2
        den = (W * m2).sum(axis=1) - y0 ** 2
        scale = max(1.0, y0 ** 2)
        good = den > 1e-12 * scale
        out = np.where(good, num / np.where(good, den, 1.0), np.nan)
        return out, good

    def measure(self, theta: np.ndarray, y0: float):
        W, U, bad, _ = self.decode(theta[None, :], y0)
        if bad[0]:
            return None
        w = np.clip(W[0], 0.0, None)
        w = w / w.sum()
        x = self.lo + self.span * U[0]
        if self.unimodal:
            return UniformMixture(mode=self.mc.mode, weights=tuple(w),
                                  endpoints=tuple(x))
        return DiracMixture(weights=tuple(w), locations=tuple(x))


def _first_order_bound(problem, config: DEConfig) -> BoundResult:
    spec = problem.spec
    i = spec.index - 1
    classes = problem.classes
    if not (0 <= i < len(classes)):
        raise ValueError(f"Sobol index {spec.index} out of range")
    nominals = getattr(problem, "nominals", ()) or ()
    if len(nominals) != len(classes) or any(
            nominals[j] is None for j in range(len(classes)) if j != i):
        raise ValueError("first-order Sobol bounds need nominal laws for "
                         "every other input")
    rest = [nominal_nodes(nominals[j]) for j in range(len(classes)) if j != i]
    table = conditional_table(problem.model, i, classes[i].support, rest,
                              d=len(classes))
    solver = _InnerSolver(classes[i], table)
    maximize = spec.direction == "sup"
    sign = 1.0 if maximize else -1.0

    def inner(y0: float):
        def obj(thetas):
            W, U, bad, viol = solver.decode(thetas, y0)
            vals, good = solver.ratio(W, U, y0)
            feas = (~bad) & good
            out = np.where(feas, np.where(feas, vals, 0.0),
                           -sign * 1e6 * (1.0 + viol))
            return out
        cfg = DEConfig(population=15 * solver.dims, F=config.F, CR=config.CR,
                       max_generations=200, tol=1e-10, seed=config.seed,
                       strategy=config.strategy, workers=1)
        theta, score, _ = optimize(obj, solver.dims, cfg, maximize=maximize)
        if sign * score <= -1e5:
            return None, None
        return float(score), theta

    lo, hi = solver.mean_range(config)
    y0, value, theta = golden_sweep(inner, lo, hi, maximize)
    if y0 is None:
        raise RuntimeError("no feasible pinned mean found for the Sobol "
                           "bound; the marginal class may be empty")
    mu = solver.measure(theta, y0)
    pm = ProductMeasure((mu,))
    report = {"marginals": [{"name": classes[i].name,
                             "violation": float(class_violation(mu, classes[i]))}],
              "joint": [{"label": "pinned_mean", "value": y0}],
              "max_violation": float(class_violation(mu, classes[i]))}
    return BoundResult(value=float(value), argmax=pm, trace=[(0, float(value))],
                       feasibility=report, seed=config.seed, spec=spec,
                       extra={"y0": float(y0), "input": classes[i].name})


def _total_order_bound(problem, config: DEConfig) -> BoundResult:
    from .parameterize import layout_for_class, vector_to_extreme

    spec = problem.spec
    i = spec.index - 1
    classes = problem.classes
    nominals = getattr(problem, "nominals", ()) or ()
    if len(nominals) != len(classes) or nominals[i] is None:
        raise ValueError("total-order Sobol bounds need the nominal law of "
                         "the indexed input")
    xi, wi = nominal_nodes(nominals[i])
    rest_idx = [j for j in range(len(classes)) if j != i]
    # one extra component per marginal: the pinned-mean constraint of the
    # reduction argument raises every budget by one, and candidates with the
    # enlarged budget realize the swept optimum with their own mean as pin
    layouts = [layout_for_class(classes[j].with_joint_budget(1))
               for j in rest_idx]
    dims = sum(l.dims for l in layouts)
    maximize = spec.direction == "sup"
    sign = 1.0 if maximize else -1.0
    d = len(classes)

    def stats(pm_rest: ProductMeasure):
        packs = [support_nodes(m, order=16) for m in pm_rest.marginals]
        grids = np.meshgrid(*[p[0] for p in packs], indexing="ij")
        Xr = np.column_stack([g.ravel() for g in grids])
        wr = np.ones(Xr.shape[0])
        for g in np.meshgrid(*[p[1] for p in packs], indexing="ij"):
            wr = wr * g.ravel()
        n_r = Xr.shape[0]
        X = np.empty((n_r * xi.size, d))
        X[:, rest_idx] = np.repeat(Xr, xi.size, axis=0)
        X[:, i] = np.tile(xi, n_r)
        V = np.asarray(problem.model(X), dtype=float).reshape(n_r, xi.size)
        t1 = V @ wi
        t2 = (V ** 2) @ wi
        return wr, t1, t2

    def obj(thetas):
        out = np.empty(thetas.shape[0])
        for k, theta in enumerate(thetas):
            off = 0
            ms = []
            viol = 0.0
            for lay in layouts:
                res = vector_to_extreme(theta[off:off + lay.dims], lay)
                off += lay.dims
                viol += res.violation
                if res.measure is None:
                    ms = None
                    break
                ms.append(res.measure)
            if ms is None or viol > 1e-8:
                out[k] = -sign * 1e6 * (1.0 + viol)
                continue
            wr, t1, t2 = stats(ProductMeasure(tuple(ms)))
            mean = float(wr @ t1)
            den = float(wr @ t2) - mean ** 2
            if den <= 1e-12 * max(1.0, mean ** 2):
                out[k] = -sign * 1e6
                continue
            num = float(wr @ (t2 - t1 ** 2))
            out[k] = num / den
        return out

    theta, score, trace = optimize(obj, dims, config, maximize=maximize)
    if sign * score <= -1e5:
        raise RuntimeError("no feasible marginal product found for the "
                           "total Sobol bound")
    ms = []
    off = 0
    for lay in layouts:
        res = vector_to_extreme(theta[off:off + lay.dims], lay)
        off += lay.dims
        ms.append(res.measure)
    pm = ProductMeasure(tuple(ms))
    wr, t1, t2 = stats(pm)
    worst = max(class_violation(m, classes[j])
                for m, j in zip(pm.marginals, rest_idx))
    report = {"marginals": [{"name": classes[j].name,
                             "violation": float(class_violation(m, classes[j]))}
                            for m, j in zip(pm.marginals, rest_idx)],
              "joint": [],
              "max_violation": float(worst)}
    return BoundResult(value=float(score), argmax=pm, trace=trace,
                       feasibility=report, seed=config.seed, spec=spec,
                       extra={"y0": float(wr @ t1), "input": classes[i].name})


def sobol_bound(problem, config: Optional[DEConfig] = None) -> BoundResult:
    """Bound of a Sobol index QoI over the marginal classes."""
    config = config or DEConfig()
    if problem.spec.kind == "sobol_first":
        return _first_order_bound(problem, config)
    return _total_order_bound(problem, config)


def nominal_first_order(problem, index: int) -> float:
    """First-order index when every input keeps its nominal law.

    Computed with the same conditional tables the bounds use, so the
    bracket S^- <= S^0 <= S^+ compares like against like.  ``index`` is
    1-based.
    """
    i = index - 1
    classes = problem.classes
    nominals = problem.nominals
    if len(nominals) != len(classes) or any(nom is None for nom in nominals):
        raise ValueError("nominal laws are required for every input")
    rest = [nominal_nodes(nominals[j]) for j in range(len(classes)) if j != i]
    table = conditional_table(problem.model, i, classes[i].support, rest,
                              d=len(classes))
    x, w = nominal_nodes(nominals[i])
    mean = float(w @ table.eval_m1(x))
    num = float(w @ table.eval_m1(x) ** 2) - mean ** 2
    den = float(w @ table.eval_m2(x)) - mean ** 2
    if den <= 1e-14 * max(1.0, mean ** 2):
        raise SobolUndefinedError("total output variance is zero")
    return num / den
