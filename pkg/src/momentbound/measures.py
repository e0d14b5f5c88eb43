"""Finite extreme measures and the moment classes they live in.

The optimizer never touches a generic probability measure.  Every candidate it
evaluates is a finite mixture: either Dirac atoms, or uniform segments hanging
off a shared mode (a point at the mode counts as a segment of zero length).
This module holds those mixture types, the class descriptions (support +
moment constraints + optional mode), and closed-form integration against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12
# endpoints closer than this (relative) to the mode collapse to a point mass
POINT_TOL = 1e-13


class EvaluationError(ValueError):
    """An integrand returned a non-finite value inside the support."""

    def __init__(self, message: str, location: float):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise ValueError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return (x >= self.lo - tol) & (x <= self.hi + tol)

    def outside_distance(self, x) -> float:
        """How far the worst point of ``x`` sits outside the interval."""
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return 0.0
        below = np.max(self.lo - x, initial=0.0)
        above = np.max(x - self.hi, initial=0.0)
        return float(max(below, above))


@dataclass(frozen=True)
class Constraint:
    """One scalar constraint E[phi(X)] (= | <=) bound on a marginal.

    ``kind`` is "raw_moment" (phi = x**order) or "generalized" (phi = fn,
    vectorized).  Relations are "eq" or "leq".
    """

    kind: str
    relation: str
    bound: float
    order: int | None = None
    fn: Callable | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("raw_moment", "generalized"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.relation not in ("eq", "leq"):
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.kind == "raw_moment":
            if self.order is None or self.order < 1:
                raise ValueError("raw_moment constraint needs order >= 1")
        elif self.fn is None:
            raise ValueError("generalized constraint needs a callable")

    @staticmethod
    def raw_moment(order: int, bound: float, relation: str = "eq") -> "Constraint":
        return Constraint("raw_moment", relation, float(bound), order=int(order),
                          label=f"m{order}")

    @staticmethod
    def generalized(fn: Callable, bound: float, relation: str = "eq",
                    label: str = "phi") -> "Constraint":
        return Constraint("generalized", relation, float(bound), fn=fn, label=label)

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "raw_moment":
            return x ** self.order
        return np.asarray(self.fn(x), dtype=float)

    def evaluate(self, m) -> float:
        if self.kind == "raw_moment":
            return raw_moment(m, self.order)
        return expectation(m, self.fn)


@dataclass(frozen=True)
class MarginalClass:
    """All probability measures on ``support`` meeting ``constraints``.

    ``mode`` switches the class to its unimodal variant (all members unimodal
    with that mode).  ``joint_budget`` is the number of constraints shared
    across the product; it enters the atom budget but lives on the problem.
    """

    name: str
    support: Interval
    constraints: tuple[Constraint, ...] = ()
    mode: float | None = None
    joint_budget: int = 0

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.mode is not None and not self.support.contains(self.mode):
            raise ValueError(f"mode {self.mode} outside support "
                             f"[{self.support.lo}, {self.support.hi}]")
        if self.joint_budget < 0:
            raise ValueError("joint_budget must be nonnegative")

    @property
    def budget(self) -> int:
        # max mixture components: one more than the constraint count it must hit
        return len(self.constraints) + self.joint_budget + 1

    @property
    def n_eq(self) -> int:
        return sum(1 for c in self.constraints if c.relation == "eq")

    @property
    def is_unimodal(self) -> bool:
        return self.mode is not None

    def with_joint_budget(self, n: int) -> "MarginalClass":
        return MarginalClass(self.name, self.support, self.constraints, self.mode, n)


@dataclass(frozen=True)
class DiracMixture:
    """Sum_k w_k * delta(x_k), weights normalized."""

    weights: tuple[float, ...]
    locations: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        x = np.asarray(self.locations, dtype=float)
        if w.shape != x.shape or w.ndim != 1 or w.size == 0:
            raise ValueError("weights and locations must be equal-length 1d")
        if np.any(w < -WEIGHT_SUM_TOL):
            raise ValueError(f"negative weight {w.min()}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", tuple(float(v) for v in np.maximum(w, 0.0)))
        object.__setattr__(self, "locations", tuple(float(v) for v in x))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def arrays(self):
        return (np.asarray(self.weights, dtype=float),
                np.asarray(self.locations, dtype=float))


@dataclass(frozen=True)
class UniformMixture:
    """Mixture of uniforms on the segments between ``mode`` and each endpoint.

    An endpoint equal to the mode contributes a point mass there, so every
    member is unimodal with mode ``mode`` (weak sense).
    """

    mode: float
    weights: tuple[float, ...]
    endpoints: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        z = np.asarray(self.endpoints, dtype=float)
        if w.shape != z.shape or w.ndim != 1 or w.size == 0:
            raise ValueError("weights and endpoints must be equal-length 1d")
        if np.any(w < -WEIGHT_SUM_TOL):
            raise ValueError(f"negative weight {w.min()}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        scale = max(1.0, abs(self.mode))
        z = np.where(np.abs(z - self.mode) <= POINT_TOL * scale, self.mode, z)
        object.__setattr__(self, "weights", tuple(float(v) for v in np.maximum(w, 0.0)))
        object.__setattr__(self, "endpoints", tuple(float(v) for v in z))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def arrays(self):
        return (np.asarray(self.weights, dtype=float),
                np.asarray(self.endpoints, dtype=float))


ExtremeMeasure = DiracMixture | UniformMixture


@dataclass(frozen=True)
class ProductMeasure:
    marginals: tuple[ExtremeMeasure, ...]

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not self.marginals:
            raise ValueError("product of zero marginals")

    @property
    def dim(self) -> int:
        return len(self.marginals)


@lru_cache(maxsize=64)
def gauss_legendre_01(order: int):
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def support_nodes(m: ExtremeMeasure, order: int = 32):
    """Quadrature representation (nodes, weights) of a mixture.

    Exact for Dirac mixtures; for uniform mixtures each segment gets a
    Gauss-Legendre rule of the given order, exact for polynomial integrands of
    degree <= 2*order - 1.
    """
    if isinstance(m, DiracMixture):
        w, x = m.arrays()
        return x, w
    w, z = m.arrays()
    g, gw = gauss_legendre_01(order)
    xs = []
    ws = []
    for wk, zk in zip(w, z):
        if zk == m.mode:
            xs.append(np.array([m.mode]))
            ws.append(np.array([wk]))
        else:
            lo, hi = (m.mode, zk) if zk > m.mode else (zk, m.mode)
            xs.append(lo + g * (hi - lo))
            ws.append(wk * gw)
    return np.concatenate(xs), np.concatenate(ws)


def expectation(m: ExtremeMeasure, f: Callable, order: int = 32) -> float:
    """E[f(X)] under a finite mixture.  ``f`` must accept arrays.

    Raises EvaluationError (carrying the offending location) if ``f`` comes
    back non-finite anywhere on the support nodes.
    """
    x, w = support_nodes(m, order=order)
    vals = np.asarray(f(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        loc = float(x[bad][0])
        raise EvaluationError(f"integrand non-finite at x={loc!r}", loc)
    return float(vals @ w)


def raw_moment(m: ExtremeMeasure, order: int) -> float:
    """E[X^order], closed form (no quadrature error)."""
    if order == 0:
        return 1.0
    if order < 0:
        raise ValueError("raw moment order must be >= 0")
    if isinstance(m, DiracMixture):
        w, x = m.arrays()
        return float(w @ x ** order)
    w, z = m.arrays()
    a = m.mode
    # mean of x^k over [a, z] is (z^{k+1}-a^{k+1})/((k+1)(z-a)); expand the
    # difference quotient as sum_j z^j a^(k-j) to stay stable for z near a
    j = np.arange(order + 1)
    terms = np.power.outer(z, j) * a ** (order - j)
    seg = terms.sum(axis=1) / (order + 1)
    return float(w @ seg)


def cdf(m: ExtremeMeasure, t):
    """P[X <= t]; vectorized in ``t``, right-continuous."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    tt = np.atleast_1d(t_arr)[:, None]
    if isinstance(m, DiracMixture):
        w, x = m.arrays()
        out = (tt >= x[None, :]) @ w
    else:
        w, z = m.arrays()
        a = m.mode
        lo = np.minimum(a, z)[None, :]
        hi = np.maximum(a, z)[None, :]
        width = hi - lo
        frac = np.empty((tt.shape[0], z.size))
        point = width[0] == 0.0
        frac[:, point] = (tt >= lo[:, point]).astype(float)
        nz = ~point
        frac[:, nz] = np.clip((tt - lo[:, nz]) / width[:, nz], 0.0, 1.0)
        out = frac @ w
    return float(out[0]) if scalar else out


def _cdf_polyline(m: ExtremeMeasure):
    """Points (t_j, F_j) tracing the CDF, jumps encoded as vertical segments."""
    if isinstance(m, DiracMixture):
        w, x = m.arrays()
        ordx = np.argsort(x, kind="stable")
        x = x[ordx]
        w = w[ordx]
        ts = np.repeat(x, 2)
        c = np.cumsum(w)
        fs = np.empty_like(ts)
        fs[0::2] = c - w          # left limits
        fs[1::2] = c
        return ts, fs
    w, z = m.arrays()
    knots = np.unique(np.concatenate([z, [m.mode]]))
    f_right = cdf(m, knots)
    # left limit differs only where point components sit exactly at the knot
    point_w = np.zeros_like(knots)
    for wk, zk in zip(w, z):
        if zk == m.mode:
            point_w[np.searchsorted(knots, m.mode)] += wk
    f_left = f_right - point_w
    ts = np.repeat(knots, 2)
    fs = np.empty_like(ts)
    fs[0::2] = f_left
    fs[1::2] = f_right
    return ts, fs


def ppf(m: ExtremeMeasure, u):
    """Generalized inverse CDF, inf{x : F(x) >= u}."""
    ts, fs = _cdf_polyline(m)
    u_arr = np.asarray(u, dtype=float)
    scalar = u_arr.ndim == 0
    uu = np.atleast_1d(u_arr)
    if np.any((uu < 0) | (uu > 1)):
        raise ValueError("ppf argument outside [0, 1]")
    idx = np.searchsorted(fs, uu, side="left")
    idx = np.clip(idx, 1, len(fs) - 1)
    f0, f1 = fs[idx - 1], fs[idx]
    t0, t1 = ts[idx - 1], ts[idx]
    df = f1 - f0
    frac = np.where(df > 0, (uu - f0) / np.where(df > 0, df, 1.0), 1.0)
    out = t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)
    out = np.where(uu <= fs[0], ts[0], out)
    return float(out[0]) if scalar else out


def constraint_residuals(m: ExtremeMeasure, mc: MarginalClass) -> np.ndarray:
    """One residual per class constraint.

    Leq residuals are signed (E[phi] - bound, feasible iff <= tol); Eq
    residuals are the absolute miss |E[phi] - bound|.
    """
    out = np.array([c.evaluate(m) - c.bound for c in mc.constraints], dtype=float)
    eq = np.array([c.relation == "eq" for c in mc.constraints], dtype=bool)
    out[eq] = np.abs(out[eq])
    return out


def class_violation(m: ExtremeMeasure, mc: MarginalClass) -> float:
    """Worst feasibility violation of ``m`` against the class (0 = feasible).

    Covers constraint residuals (absolute for eq, positive part for leq),
    support containment, and the mode match for unimodal classes.  The
    component count is deliberately not checked: any finite mixture meeting
    the constraints belongs to the class, regardless of how many components
    it spends doing so.
    """
    res = constraint_residuals(m, mc)
    v = 0.0
    for c, r in zip(mc.constraints, res):
        scale = max(1.0, abs(c.bound))
        v = max(v, (abs(r) if c.relation == "eq" else max(r, 0.0)) / scale)
    if isinstance(m, DiracMixture):
        pts = np.asarray(m.locations)
        if mc.is_unimodal:
            v = max(v, 1.0)  # wrong variant for a unimodal class
    else:
        pts = np.asarray(m.endpoints + (m.mode,))
        if not mc.is_unimodal:
            v = max(v, 1.0)
        elif m.mode != mc.mode:
            v = max(v, abs(m.mode - mc.mode) / max(1.0, abs(mc.mode)))
    v = max(v, mc.support.outside_distance(pts) / max(1.0, mc.support.width))
    return v


def is_feasible(m: ExtremeMeasure, mc: MarginalClass, tol: float = 1e-8) -> bool:
    return class_violation(m, mc) <= tol


def mix(m1: ExtremeMeasure, m2: ExtremeMeasure, lam: float) -> ExtremeMeasure:
    """Convex combination lam*m1 + (1-lam)*m2 of two same-variant mixtures."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("mixing weight must lie in [0, 1]")
    if type(m1) is not type(m2):
        raise TypeError("cannot mix different mixture variants")
    if isinstance(m1, DiracMixture):
        w = [lam * v for v in m1.weights] + [(1 - lam) * v for v in m2.weights]
        x = list(m1.locations) + list(m2.locations)
        return DiracMixture(tuple(w), tuple(x))
    if m1.mode != m2.mode:
        raise ValueError("cannot mix uniform mixtures with different modes")
    w = [lam * v for v in m1.weights] + [(1 - lam) * v for v in m2.weights]
    z = list(m1.endpoints) + list(m2.endpoints)
    return UniformMixture(m1.mode, tuple(w), tuple(z))


def product_sample(pm: ProductMeasure, n: int, seed: int) -> np.ndarray:
    """n iid draws from the product, shape (n, d).

    Counter-based generator (Philox), one stream per marginal keyed by
    (seed, marginal index), inverse-CDF transform.  Same seed, same draws,
    regardless of how many threads anyone uses elsewhere.
    """
    cols = []
    for i, m in enumerate(pm.marginals):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        cols.append(ppf(m, rng.random(n)))
    return np.column_stack(cols)


def measure_to_dict(m) -> dict:
    if isinstance(m, DiracMixture):
        atoms = sorted(zip(m.locations, m.weights))
        return {"kind": "dirac_mixture",
                "atoms": [[w, x] for x, w in atoms]}
    if isinstance(m, UniformMixture):
        comps = sorted(zip(m.endpoints, m.weights))
        return {"kind": "uniform_mixture", "mode": m.mode,
                "components": [[w, z] for z, w in comps]}
    if isinstance(m, ProductMeasure):
        return {"kind": "product",
                "marginals": [measure_to_dict(mm) for mm in m.marginals]}
    raise TypeError(f"not a measure: {type(m)!r}")


def measure_from_dict(d: dict):
    kind = d["kind"]
    if kind == "dirac_mixture":
        w = tuple(a[0] for a in d["atoms"])
        x = tuple(a[1] for a in d["atoms"])
        return DiracMixture(w, x)
    if kind == "uniform_mixture":
        w = tuple(a[0] for a in d["components"])
        z = tuple(a[1] for a in d["components"])
        return UniformMixture(d["mode"], w, z)
    if kind == "product":
        return ProductMeasure(tuple(measure_from_dict(x) for x in d["marginals"]))
    raise ValueError(f"unknown measure kind {kind!r}")
