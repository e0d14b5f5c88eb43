"""Maps from unit hypercubes onto the extreme measures of a marginal class.

Three layouts cover the class shapes that occur:

* canonical-dirac: all constraints are equality raw moments m_1..m_N.  The
  constraints pin the first N canonical coordinates; free coordinates fill the
  rest of [0,1]^(2B-1) and every decode is feasible by construction.
* direct-dirac: generalized or inequality constraints present.  theta encodes
  atom locations affinely and weights through a stick-breaking simplex map,
  then the weights are least-squares projected onto the equality constraints.
  Projection can land outside the simplex; that comes back as a violation for
  the optimizer's penalty instead of an exception.
* unimodal-mixture: same as direct-dirac but the components are uniform
  segments between the class mode and encoded endpoints, and the constraint
  rows use segment-averaged integrands.

B is the atom budget of the class (constraint count + shared joint-constraint
count + 1); no decode ever emits more than B components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .canonical import dirac_from_canonical, moments_to_canonical
from .measures import (Constraint, DiracMixture, ExtremeMeasure, Interval,
                       MarginalClass, UniformMixture, gauss_legendre_01)

# accepted equality residual / weight negativity before flagging infeasible
PROJECTION_TOL = 1e-9


@dataclass(frozen=True)
class ParamLayout:
    kind: str  # "canonical-dirac" | "direct-dirac" | "unimodal-mixture"
    marginal_class: MarginalClass
    budget: int
    dims: int
    pinned: tuple[float, ...] = ()
    pinned_terminated: bool = False
    fixed: Optional[ExtremeMeasure] = field(default=None, compare=False)


@dataclass(frozen=True)
class DecodeResult:
    """Outcome of one theta decode.

    ``violation`` > 0 means the geometry could not be repaired onto the
    equality constraints (measure is None); the optimizer turns it into a
    penalty.  ``degenerate`` marks boundary collapses (fewer components than
    the budget), which are feasible.
    """

    measure: Optional[ExtremeMeasure]
    violation: float = 0.0
    degenerate: bool = False


def _classical_eq_orders(mc: MarginalClass) -> Optional[list[Constraint]]:
    """Constraints sorted by order if they are exactly Eq m_1..m_N, else None."""
    if any(c.kind != "raw_moment" or c.relation != "eq" for c in mc.constraints):
        return None
    by_order = sorted(mc.constraints, key=lambda c: c.order)
    if [c.order for c in by_order] != list(range(1, len(by_order) + 1)):
        return None
    return by_order


def layout_for_class(mc: MarginalClass) -> ParamLayout:
    """Choose and precompute the parameterization for one marginal class.

    Raises canonical.InfeasibleMomentsError if equality moments are not
    achievable on the support (the class is empty).
    """
    budget = mc.budget
    if mc.is_unimodal:
        n_eq = mc.n_eq
        dims = budget + max(0, budget - 1 - n_eq)
        return ParamLayout("unimodal-mixture", mc, budget, dims)
    classical = _classical_eq_orders(mc)
    if classical is not None:
        cs = moments_to_canonical([c.bound for c in classical], mc.support)
        if cs.terminated:
            # the moments pin a unique measure; nothing left to optimize
            fixed, _ = dirac_from_canonical(
                _pad_odd(np.asarray(cs.p)), mc.support)
            return ParamLayout("canonical-dirac", mc, budget, 0,
                               pinned=cs.p, pinned_terminated=True, fixed=fixed)
        dims = 2 * budget - 1 - len(cs.p)
        return ParamLayout("canonical-dirac", mc, budget, dims, pinned=cs.p)
    n_eq = mc.n_eq
    dims = budget + max(0, budget - 1 - n_eq)
    return ParamLayout("direct-dirac", mc, budget, dims)


def _pad_odd(p: np.ndarray) -> np.ndarray:
    if len(p) % 2 == 1:
        return p
    return np.concatenate([p, [0.5]])


def simplex_map(u) -> np.ndarray:
    """Stick-breaking surjection [0,1]^{k-1} -> k-simplex.

    Each stick keeps the fraction u_i^(1/(k-i)), which balances the split so
    uniform u gives uniform-like weights.  Corners of the cube map to
    simplex vertices; the weights sum to one to the last bit.
    """
    u = np.asarray(u, dtype=float)
    k = u.size + 1
    w = np.empty(k)
    remaining = 1.0
    for i in range(k - 1):
        z = u[i] ** (1.0 / (k - 1 - i))
        w[i] = remaining * (1.0 - z)
        remaining *= z
    w[k - 1] = max(0.0, 1.0 - w[: k - 1].sum())
    return w


def _constraint_rows_dirac(constraints, x: np.ndarray) -> np.ndarray:
    return np.array([c.phi(x) for c in constraints], dtype=float)


def _segment_average(c: Constraint, mode: float, z: np.ndarray,
                     order: int = 32) -> np.ndarray:
    """E[phi(U)] for U uniform on co(mode, z_k), one value per endpoint."""
    if c.kind == "raw_moment":
        k = c.order
        j = np.arange(k + 1)
        return (np.power.outer(z, j) * mode ** (k - j)).sum(axis=1) / (k + 1)
    g, gw = gauss_legendre_01(order)
    pts = mode + (z - mode)[:, None] * g[None, :]
    vals = np.asarray(c.fn(pts), dtype=float)
    return vals @ gw


def _solve_weights(rows: np.ndarray, b: np.ndarray,
                   w0: Optional[np.ndarray]) -> tuple[Optional[np.ndarray], float]:
    """Weights meeting rows @ w = b, near w0 when freedom remains.

    Returns (weights, violation); weights None when the geometry is
    infeasible (residual or negativity beyond tolerance).
    """
    r, n = rows.shape
    scale = np.maximum(1.0, np.abs(b))
    if r == n:
        try:
            w = np.linalg.solve(rows, b)
        except np.linalg.LinAlgError:
            w, *_ = np.linalg.lstsq(rows, b, rcond=None)
    elif r < n:
        if w0 is None:
            w0 = np.full(n, 1.0 / n)
        gram = rows @ rows.T
        gram[np.diag_indices_from(gram)] += 1e-13 * max(1.0, np.trace(gram))
        try:
            lam = np.linalg.solve(gram, rows @ w0 - b)
        except np.linalg.LinAlgError:
            return None, 1.0
        w = w0 - rows.T @ lam
    else:
        w, *_ = np.linalg.lstsq(rows, b, rcond=None)
    if not np.all(np.isfinite(w)):
        return None, 1.0
    resid = float(np.max(np.abs(rows @ w - b) / scale))
    neg = float(max(0.0, -w.min()))
    if resid > PROJECTION_TOL or neg > PROJECTION_TOL:
        return None, max(resid, neg)
    w = np.maximum(w, 0.0)
    w = w / w.sum()
    return w, 0.0


def _interior_weights(rows: np.ndarray, b: np.ndarray, w0: np.ndarray,
                      iters: int = 600) -> Optional[np.ndarray]:
    """Nonnegative weights meeting rows @ w = b, reached from w0.

    The one-shot projection of _solve_weights is the right primitive for
    decode parameterizations, but a random Dirichlet start rarely survives
    its negativity check when the target moments sit deep in one tail of
    the drawn atoms.  Alternating projections onto the constraint
    hyperplane and the orthant converge to a feasible point whenever one
    exists, and from a generic start the limit keeps full support.
    """
    scale = np.maximum(1.0, np.abs(b))
    R = rows / scale[:, None]
    c = b / scale
    gram = R @ R.T
    gram[np.diag_indices_from(gram)] += 1e-13 * max(1.0, np.trace(gram))
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        return None
    w = np.asarray(w0, dtype=float)
    for _ in range(iters):
        lam = np.linalg.solve(chol.T, np.linalg.solve(chol, R @ w - c))
        w = w - R.T @ lam
        if w.min() >= 0.0:
            break
        w = np.maximum(w, 0.0)
    if w.min() < 0.0 or np.max(np.abs(rows @ w - b) / scale) > 1e-9:
        return None
    return w / w.sum()


def vector_to_extreme(theta, layout: ParamLayout) -> DecodeResult:
    """Decode one hypercube point into an extreme measure of the class."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.dims,):
        raise ValueError(f"theta has shape {theta.shape}, layout wants ({layout.dims},)")
    if np.any((theta < -1e-12) | (theta > 1 + 1e-12)):
        raise ValueError("theta outside the unit hypercube")
    theta = np.clip(theta, 0.0, 1.0)
    mc = layout.marginal_class
    if layout.fixed is not None:
        return DecodeResult(layout.fixed, 0.0, True)

    if layout.kind == "canonical-dirac":
        p = np.concatenate([layout.pinned, theta])
        measure, degenerate = dirac_from_canonical(p, mc.support)
        return DecodeResult(measure, 0.0, degenerate)

    budget = layout.budget
    locs = mc.support.lo + theta[:budget] * mc.support.width
    eq = [c for c in mc.constraints if c.relation == "eq"]
    n_free = budget - 1 - len(eq)
    w0 = None
    if n_free > 0:
        u = np.concatenate([theta[budget:], np.full(budget - 1 - theta[budget:].size, 0.5)])
        w0 = simplex_map(u)

    if layout.kind == "direct-dirac":
        rows = np.vstack([np.ones(budget), _constraint_rows_dirac(eq, locs)]) \
            if eq else np.ones((1, budget))
        b = np.concatenate([[1.0], [c.bound for c in eq]])
        w, violation = _solve_weights(rows, b, w0)
        if w is None:
            return DecodeResult(None, violation)
        return DecodeResult(DiracMixture(tuple(w), tuple(locs)), 0.0)

    if layout.kind == "unimodal-mixture":
        rows = [np.ones(budget)]
        for c in eq:
            rows.append(_segment_average(c, mc.mode, locs))
        rows = np.vstack(rows)
        b = np.concatenate([[1.0], [c.bound for c in eq]])
        w, violation = _solve_weights(rows, b, w0)
        if w is None:
            return DecodeResult(None, violation)
        return DecodeResult(UniformMixture(mc.mode, tuple(w), tuple(locs)), 0.0)

    raise ValueError(f"unknown layout kind {layout.kind!r}")
