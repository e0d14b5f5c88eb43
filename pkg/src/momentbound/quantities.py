"""Quantities of interest of the pushforward law Y = G(X_1, ..., X_d).

Inputs are always finite mixtures (the reduction theorem guarantees that is
enough), so the output law is handled two ways at once:

* a weighted node set: exact for Dirac inputs, Gauss-Legendre tensor
  quadrature across uniform components otherwise.  Expectations, variances
  and smooth integrands read off this directly.
* for CDF-flavored quantities (failure probability, quantiles) with a
  continuous input direction, nodes are too coarse: the distribution keeps
  "cells" (one uniform segment crossed with atoms of the other inputs) and
  measures the sublevel set {G <= t} along the segment by scanning for sign
  changes and bisecting each crossing.  This makes F(t) exact up to the scan
  resolution of the cell, and quantiles follow by bisection on t.

Only one continuous direction gets the exact treatment (the first marginal
carrying uniform segments); further uniform marginals enter through their
quadrature nodes as strata.  The case study has a single unimodal input, so
nothing is lost there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .measures import (DiracMixture, ProductMeasure, UniformMixture,
                       gauss_legendre_01, support_nodes)
from .models import ModelFailureError

QUANTILE_TOL = 1e-11
_SCAN = 65
_BISECT_STEPS = 60


class SobolUndefinedError(ValueError):
    """Total variance is zero; no Sobol index exists."""


class DirectionError(ValueError):
    """QoI direction incompatible with its semicontinuity."""


_DIRECTION_RULES = {
    "lower_quantile": ("sup",),
    "upper_quantile": ("inf",),
}


def direction_allowed(kind: str, direction: str) -> tuple[bool, str]:
    allowed = _DIRECTION_RULES.get(kind)
    if allowed is None or direction in allowed:
        return True, ""
    if kind == "lower_quantile":
        return False, ("inf of the lower quantile is not reducible to finite "
                       "mixtures: Q^L is quasi-convex and lower semicontinuous, "
                       "which licenses sup only; take inf of upper_quantile "
                       "instead")
    return False, ("sup of the upper quantile is not reducible to finite "
                   "mixtures: Q^R is quasi-concave and upper semicontinuous, "
                   "which licenses inf only; take sup of lower_quantile "
                   "instead")


@dataclass(frozen=True)
class QoISpec:
    """What to compute of the output law, and which way to optimize it."""

    kind: str
    direction: str = "sup"
    p: Optional[float] = None
    h: Optional[float] = None
    index: Optional[int] = None  # 1-based input index for Sobol kinds
    power: int = 1
    data: Optional[tuple[float, ...]] = None  # observations for Bayes kinds
    convention: str = "height"

    _KINDS = ("expectation", "failure_prob", "lower_quantile", "upper_quantile",
              "variance", "sobol_first", "sobol_total", "bayes_failure_prob",
              "bayes_quantile")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown QoI kind {self.kind!r}")
        if self.direction not in ("sup", "inf"):
            raise ValueError(f"direction must be sup or inf, got {self.direction!r}")
        if self.kind in ("lower_quantile", "upper_quantile", "bayes_quantile"):
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ValueError("quantile kinds need p strictly inside (0, 1)")
        if self.kind in ("failure_prob", "bayes_failure_prob"):
            if self.h is None or not np.isfinite(self.h):
                raise ValueError("failure probability kinds need a finite level h")
        if self.kind in ("sobol_first", "sobol_total"):
            if self.index is None or self.index < 1:
                raise ValueError("Sobol kinds need a 1-based input index")
        if self.kind.startswith("bayes") and self.data is not None:
            object.__setattr__(self, "data", tuple(float(v) for v in self.data))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "direction": self.direction}
        if self.p is not None:
            out["p"] = self.p
        if self.h is not None:
            out["h"] = self.h
        if self.index is not None:
            out["index"] = self.index
        if self.power != 1:
            out["power"] = self.power
        if self.data is not None:
            out["data"] = list(self.data)
        if self.kind.startswith("bayes"):
            out["convention"] = self.convention
        return out


@dataclass
class _Cells:
    """Level-set refinement data: atoms plus 1D segments along one input."""

    model: Callable
    axis: int
    base: np.ndarray       # (n_cells, d); axis column is overwritten per query
    lo: np.ndarray         # (n_cells,) segment start along axis
    hi: np.ndarray
    weights: np.ndarray    # (n_cells,)
    scan_f: np.ndarray     # (n_scan,) fractions in [0, 1]
    scan_vals: np.ndarray  # (n_cells, n_scan) cached model values
    atom_vals: np.ndarray  # point part of the law
    atom_weights: np.ndarray

    def _model_at(self, cell_idx: np.ndarray, frac: np.ndarray) -> np.ndarray:
        rows = self.base[cell_idx].copy()
        rows[:, self.axis] = self.lo[cell_idx] + frac * (self.hi[cell_idx]
                                                         - self.lo[cell_idx])
        return np.asarray(self.model(rows), dtype=float)

    def cdf(self, t: float) -> float:
        """P[Y <= t], exact along the refined axis up to scan resolution."""
        out = float(self.atom_weights @ (self.atom_vals <= t))
        if self.weights.size == 0:
            return out
        below = self.scan_vals <= t
        df = np.diff(self.scan_f)
        inside = (below[:, :-1] & below[:, 1:]) @ df
        crossing = below[:, :-1] != below[:, 1:]
        ci, cj = np.nonzero(crossing)
        if ci.size:
            f_lo = self.scan_f[cj]
            f_hi = self.scan_f[cj + 1]
            # bisect each sign change of G - t along the segment
            for _ in range(48):
                mid = 0.5 * (f_lo + f_hi)
                below_mid = self._model_at(ci, mid) <= t
                left_below = below[ci, cj]
                go_right = below_mid == left_below
                f_lo = np.where(go_right, mid, f_lo)
                f_hi = np.where(go_right, f_hi, mid)
            root = 0.5 * (f_lo + f_hi)
            part = np.where(below[ci, cj], root - self.scan_f[cj],
                            self.scan_f[cj + 1] - root)
            inside = inside + np.bincount(ci, weights=part,
                                          minlength=self.weights.size)
        return out + float(self.weights @ inside)

    def value_range(self) -> tuple[float, float]:
        lo = min(self.scan_vals.min(initial=np.inf),
                 self.atom_vals.min(initial=np.inf))
        hi = max(self.scan_vals.max(initial=-np.inf),
                 self.atom_vals.max(initial=-np.inf))
        return float(lo), float(hi)


class OutputDistribution:
    """Law of the model output under one product of finite mixtures."""

    def __init__(self, values: np.ndarray, weights: np.ndarray,
                 atomic: bool, cells: Optional[_Cells] = None):
        self.values = np.asarray(values, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.atomic = atomic
        self.cells = cells
        self._sorted: Optional[tuple[np.ndarray, np.ndarray]] = None

    def _sorted_cdf(self):
        if self._sorted is None:
            order = np.argsort(self.values, kind="stable")
            v = self.values[order]
            c = np.cumsum(self.weights[order])
            c[-1] = max(c[-1], 1.0)
            self._sorted = (v, c)
        return self._sorted

    def cdf(self, t):
        """P[Y <= t].  Exact for atomic laws; cell-refined otherwise."""
        if self.cells is not None:
            t_arr = np.asarray(t, dtype=float)
            if t_arr.ndim == 0:
                return self.cells.cdf(float(t_arr))
            return np.array([self.cells.cdf(float(v)) for v in t_arr])
        v, c = self._sorted_cdf()
        idx = np.searchsorted(v, t, side="right")
        out = np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(t) == 0 else out

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def expectation(self, f: Callable) -> float:
        vals = np.asarray(f(self.values), dtype=float)
        return float(vals @ self.weights)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.values - m) ** 2)

    def _step_quantile(self, p: float, side: str) -> float:
        v, c = self._sorted_cdf()
        if side == "left":
            idx = np.searchsorted(c, p, side="left")
        else:
            idx = np.searchsorted(c, p, side="right")
        return float(v[min(idx, len(v) - 1)])

    def _refined_quantile(self, p: float, side: str) -> float:
        assert self.cells is not None
        vlo, vhi = self.cells.value_range()
        lo = vlo - max(1e-9, 1e-9 * abs(vlo))
        hi = vhi
        meets = (lambda f: f >= p) if side == "left" else (lambda f: f > p)
        if meets(self.cells.cdf(lo)):
            return lo
        for _ in range(_BISECT_STEPS):
            if hi - lo <= QUANTILE_TOL * max(1.0, abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            if meets(self.cells.cdf(mid)):
                hi = mid
            else:
                lo = mid
        return hi

    def lower_quantile(self, p: float) -> float:
        """Q^L_p = inf{t : F(t) >= p}."""
        if not 0.0 < p < 1.0:
            raise ValueError("quantile order must lie in (0, 1)")
        if self.cells is None:
            return self._step_quantile(p, "left")
        return self._refined_quantile(p, "left")

    def upper_quantile(self, p: float) -> float:
        """Q^R_p = inf{t : F(t) > p}."""
        if not 0.0 < p < 1.0:
            raise ValueError("quantile order must lie in (0, 1)")
        if self.cells is None:
            return self._step_quantile(p, "right")
        return self._refined_quantile(p, "right")


def _marginal_nodes(pm: ProductMeasure, order: int):
    packs = []
    for m in pm.marginals:
        x, w = support_nodes(m, order=order)
        packs.append((x, w))
    return packs


def _tensor(packs):
    grids = np.meshgrid(*[p[0] for p in packs], indexing="ij")
    X = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*[p[1] for p in packs], indexing="ij")
    w = np.ones(X.shape[0])
    for g in wgrids:
        w = w * g.ravel()
    return X, w


def input_grid(pm: ProductMeasure, order: int = 32):
    """Tensor quadrature (rows, weights) of the whole product measure."""
    return _tensor(_marginal_nodes(pm, order))


def _eval_model(model: Callable, X: np.ndarray) -> np.ndarray:
    vals = np.asarray(model(X), dtype=float).reshape(X.shape[0])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        row = tuple(float(v) for v in X[int(np.argmax(bad))])
        raise ModelFailureError(f"model returned non-finite output at {row}",
                                row=row)
    return vals


def _build_cells(pm: ProductMeasure, model: Callable, scan: int) -> Optional[_Cells]:
    axis = None
    for i, m in enumerate(pm.marginals):
        if isinstance(m, UniformMixture) and any(z != m.mode for z in m.endpoints):
            axis = i
            break
    if axis is None:
        return None
    packs = []
    for i, m in enumerate(pm.marginals):
        if i == axis:
            packs.append((np.zeros(1), np.ones(1)))  # placeholder column
        else:
            packs.append(support_nodes(m, order=64))
    base, base_w = _tensor(packs)
    mref = pm.marginals[axis]
    w_arr, z_arr = mref.arrays()
    seg_mask = z_arr != mref.mode
    # point components of the refined marginal stay atoms
    atom_vals = []
    atom_w = []
    for wk, zk in zip(w_arr[~seg_mask], z_arr[~seg_mask]):
        rows = base.copy()
        rows[:, axis] = zk
        atom_vals.append(_eval_model(model, rows))
        atom_w.append(base_w * wk)
    seg_lo = np.minimum(mref.mode, z_arr[seg_mask])
    seg_hi = np.maximum(mref.mode, z_arr[seg_mask])
    seg_w = w_arr[seg_mask]
    n_base = base.shape[0]
    n_seg = seg_w.size
    cell_base = np.repeat(base, n_seg, axis=0)
    cell_lo = np.tile(seg_lo, n_base)
    cell_hi = np.tile(seg_hi, n_base)
    cell_w = np.repeat(base_w, n_seg) * np.tile(seg_w, n_base)
    scan_f = np.linspace(0.0, 1.0, scan)
    rows = np.repeat(cell_base, scan, axis=0)
    rows[:, axis] = (np.repeat(cell_lo, scan)
                     + np.tile(scan_f, len(cell_lo))
                     * np.repeat(cell_hi - cell_lo, scan))
    scan_vals = _eval_model(model, rows).reshape(len(cell_lo), scan)
    return _Cells(model=model, axis=axis, base=cell_base, lo=cell_lo,
                  hi=cell_hi, weights=cell_w, scan_f=scan_f,
                  scan_vals=scan_vals,
                  atom_vals=(np.concatenate(atom_vals) if atom_vals
                             else np.empty(0)),
                  atom_weights=(np.concatenate(atom_w) if atom_w
                                else np.empty(0)))


def pushforward(pm: ProductMeasure, model: Callable, order: int = 64,
                with_cells: bool = True, scan: int = _SCAN,
                max_nodes: int = 2_000_000) -> OutputDistribution:
    """Output law of ``model`` under ``pm``.

    ``order`` is the Gauss-Legendre order per uniform component.  The node
    count is the product of per-marginal node counts; guarded by
    ``max_nodes``.  ``with_cells=False`` skips the level-set refinement data
    (cheaper; quantile/CDF queries then use the node discretization).
    """
    packs = _marginal_nodes(pm, order)
    total = 1
    for x, _ in packs:
        total *= x.size
    if total > max_nodes:
        raise ValueError(f"pushforward tensor would need {total} nodes "
                         f"(cap {max_nodes}); lower the quadrature order")
    X, w = _tensor(packs)
    vals = _eval_model(model, X)
    atomic = all(isinstance(m, DiracMixture) for m in pm.marginals)
    cells = None
    if with_cells and not atomic:
        cells = _build_cells(pm, model, scan)
    return OutputDistribution(vals, w, atomic, cells)


def expectation_qoi(pm: ProductMeasure, q: Callable, order: int = 32) -> float:
    """E[q(X)] for an integrand over input rows (vectorized)."""
    X, w = input_grid(pm, order)
    vals = np.asarray(q(X), dtype=float).reshape(X.shape[0])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        row = tuple(float(v) for v in X[int(np.argmax(bad))])
        raise ModelFailureError(f"integrand non-finite at {row}", row=row)
    return float(vals @ w)


def variance_qoi(pm: ProductMeasure, model: Callable, order: int = 64) -> float:
    return pushforward(pm, model, order=order, with_cells=False).variance()


def _conditioned_values(pm: ProductMeasure, i: int, model: Callable,
                        order: int):
    """(w_i, w_rest, V) with V[a, b] = G(x_i^a, x_rest^b)."""
    packs = _marginal_nodes(pm, order)
    xi, wi = packs[i]
    rest = [p for j, p in enumerate(packs) if j != i]
    Xr, wr = _tensor(rest) if rest else (np.zeros((1, 0)), np.ones(1))
    n_i, n_r = xi.size, Xr.shape[0]
    X = np.empty((n_i * n_r, len(packs)))
    cols = [j for j in range(len(packs)) if j != i]
    X[:, cols] = np.tile(Xr, (n_i, 1))
    X[:, i] = np.repeat(xi, n_r)
    V = _eval_model(model, X).reshape(n_i, n_r)
    return wi, wr, V


def sobol_first(pm: ProductMeasure, i: int, model: Callable,
                order: int = 32) -> float:
    """First-order index S_i = Var(E[Y | X_i]) / Var(Y); ``i`` is 0-based."""
    wi, wr, V = _conditioned_values(pm, i, model, order)
    cond_mean = V @ wr
    mean = float(wi @ cond_mean)
    total_var = float(wi @ ((V - mean) ** 2 @ wr))
    if total_var <= 1e-14 * max(1.0, mean ** 2):
        raise SobolUndefinedError("total output variance is zero")
    var_cond = float(wi @ (cond_mean - mean) ** 2)
    return var_cond / total_var


def sobol_total(pm: ProductMeasure, i: int, model: Callable,
                order: int = 32) -> float:
    """Total index S_Ti = E[Var(Y | X_~i)] / Var(Y); ``i`` is 0-based."""
    wi, wr, V = _conditioned_values(pm, i, model, order)
    mean = float(wi @ (V @ wr))
    total_var = float(wi @ ((V - mean) ** 2 @ wr))
    if total_var <= 1e-14 * max(1.0, mean ** 2):
        raise SobolUndefinedError("total output variance is zero")
    cond_on_rest_mean = wi @ V  # E_i[Y | X_~i] per rest node
    within = wi @ (V ** 2) - cond_on_rest_mean ** 2
    return float(wr @ within) / total_var


def evaluate_qoi(pm: ProductMeasure, model: Callable, spec: QoISpec, *,
                 order: int = 64, fast: bool = False) -> float:
    """Point evaluation of a (non-Bayes) QoI at one product measure.

    ``fast=True`` drops the level-set refinement (used inside optimization
    loops; final reported values are always refined).
    """
    kind = spec.kind
    if kind == "expectation":
        od = pushforward(pm, model, order=order, with_cells=False)
        if spec.power == 1:
            return od.mean()
        return od.expectation(lambda y: y ** spec.power)
    if kind == "variance":
        return variance_qoi(pm, model, order=order)
    if kind == "failure_prob":
        od = pushforward(pm, model, order=order, with_cells=not fast)
        return float(od.cdf(spec.h))
    if kind in ("lower_quantile", "upper_quantile"):
        od = pushforward(pm, model, order=order, with_cells=not fast)
        if kind == "lower_quantile":
            return od.lower_quantile(spec.p)
        return od.upper_quantile(spec.p)
    if kind == "sobol_first":
        return sobol_first(pm, spec.index - 1, model, order=min(order, 32))
    if kind == "sobol_total":
        return sobol_total(pm, spec.index - 1, model, order=min(order, 32))
    raise ValueError(f"evaluate_qoi cannot handle kind {kind!r}")
