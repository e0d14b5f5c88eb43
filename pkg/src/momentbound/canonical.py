"""Canonical coordinates for moment vectors on a compact interval.

A feasible raw-moment vector (m_1, ..., m_k) on [lo, hi] maps to canonical
coordinates (p_1, ..., p_k): p_j says where m_j sits inside the interval of
values still reachable after fixing m_1..m_{j-1}.  Interior sequences live in
the open box (0, 1)^k with no cross-coupling, which is what the optimizer
parameterization wants; a p_j on the boundary {0, 1} pins the measure and
terminates the sequence.

The forward map runs the Chebyshev-style recurrence from moments to the
three-term recurrence coefficients (alpha, beta) of the orthogonal
polynomials, then peels those into the zeta chain

    alpha_k = zeta_{2k} + zeta_{2k+1},   beta_k = zeta_{2k-1} * zeta_{2k},
    zeta_j = (1 - p_{j-1}) * p_j  on [0, 1],

and the reverse map rebuilds moments as powers of the Jacobi matrix,
m_k = e_1' J^k e_1.  Diagonalizing the same Jacobi matrix gives the unique
Gauss quadrature measure matching m_0..m_{2n}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .measures import DiracMixture, Interval

# beta_k below this is a rank drop: the measure has only k support points
BETA_TOL = 1e-12
# p within this of {0,1} counts as boundary
P_BOUNDARY_TOL = 1e-12
# feasibility slack for p before declaring the moment vector invalid
P_FEAS_TOL = 1e-9


class InfeasibleMomentsError(ValueError):
    """Moment vector leaves the moment space; ``index`` is the first bad m_j."""

    def __init__(self, index: int, message: str):
        super().__init__(f"m_{index}: {message}")
        self.index = index


@dataclass(frozen=True)
class CanonicalSeq:
    """Canonical coordinates p_1..p_k of a moment vector on ``interval``.

    ``terminated`` means the last p sits on {0, 1}, so the measure (and every
    later moment) is already pinned down.
    """

    p: tuple[float, ...]
    interval: Interval
    terminated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        for j, pj in enumerate(self.p, start=1):
            if not 0.0 <= pj <= 1.0:
                raise ValueError(f"p_{j} = {pj} outside [0, 1]")
        for pj in self.p[:-1]:
            if pj in (0.0, 1.0):
                raise ValueError("boundary p inside the sequence; truncate at it")
        if self.p and self.p[-1] in (0.0, 1.0) and not self.terminated:
            raise ValueError("sequence ending on a boundary p must set terminated")

    def __len__(self) -> int:
        return len(self.p)


def _to_unit_moments(moments: Sequence[float], interval: Interval) -> np.ndarray:
    """Raw moments of X -> raw moments of T = (X - lo)/width, with t_0 = 1."""
    m = np.concatenate([[1.0], np.asarray(moments, dtype=float)])
    k = len(m) - 1
    lo, w = interval.lo, interval.width
    t = np.empty(k + 1)
    for i in range(k + 1):
        j = np.arange(i + 1)
        coef = np.array([math.comb(i, jj) for jj in j], dtype=float)
        t[i] = np.sum(coef * (-lo) ** (i - j) * m[j]) / w ** i
    return t


def _from_unit_moments(t: np.ndarray, interval: Interval) -> np.ndarray:
    """Inverse of _to_unit_moments; returns m_1..m_k."""
    k = len(t) - 1
    lo, w = interval.lo, interval.width
    m = np.empty(k + 1)
    for i in range(k + 1):
        j = np.arange(i + 1)
        coef = np.array([math.comb(i, jj) for jj in j], dtype=float)
        m[i] = np.sum(coef * lo ** (i - j) * w ** j * t[j])
    return m[1:]


def _zeta_from_p(p: np.ndarray) -> np.ndarray:
    """zeta_j = (1 - p_{j-1}) p_j with p_0 = 0.  Returns zeta_1..zeta_len(p)."""
    q = np.concatenate([[1.0], 1.0 - p[:-1]])
    return q * p


def _recurrence_from_zeta(zeta: np.ndarray, size: int):
    """(alpha_0..alpha_{size-1}, beta_1..beta_{size-1}) from zeta_1.. .

    Needs len(zeta) >= 2*size - 1.  A zero beta decouples the Jacobi matrix,
    so entries past the first zero never influence the represented measure.
    """
    z = np.concatenate([[0.0], zeta])  # z[j] = zeta_j, zeta_0 = 0
    alpha = np.array([z[2 * k] + z[2 * k + 1] for k in range(size)])
    beta = np.array([z[2 * k - 1] * z[2 * k] for k in range(1, size)])
    return alpha, beta


def _moments_from_recurrence(alpha: np.ndarray, beta: np.ndarray, k: int) -> np.ndarray:
    """t_1..t_k of the measure with Jacobi coefficients (alpha, beta)."""
    size = len(alpha)
    jmat = np.diag(alpha)
    if size > 1:
        off = np.sqrt(np.maximum(beta, 0.0))
        jmat += np.diag(off, 1) + np.diag(off, -1)
    v = np.zeros(size)
    v[0] = 1.0
    out = np.empty(k)
    for i in range(k):
        v = jmat @ v
        out[i] = v[0]
    return out


def _p_extension(p: Sequence[float], length: int) -> np.ndarray:
    """Pad p with 1/2 up to ``length``; past a boundary p the padding is inert."""
    p = np.asarray(p, dtype=float)
    if len(p) >= length:
        return p[:length]
    return np.concatenate([p, np.full(length - len(p), 0.5)])


def moments_to_canonical(moments: Sequence[float], interval: Interval) -> CanonicalSeq:
    """Canonical coordinates of (m_1..m_k); raises if the vector is infeasible.

    The error names the first moment index at which feasibility fails, which
    is also the first index where the canonical coordinate would leave [0, 1].
    """
    t = _to_unit_moments(moments, interval)
    k_tot = len(t) - 1
    if k_tot == 0:
        return CanonicalSeq((), interval)

    # Chebyshev-style recurrence on the unit-interval moments.
    # sigma rows: sig_prev = row k-1, sig_prev2 = row k-2; row k valid for
    # l in [k, k_tot - k].  beta_k = sig_k[k]/sig_{k-1}[k-1];
    # alpha_k = sig_k[k+1]/sig_k[k] - sig_{k-1}[k]/sig_{k-1}[k-1].
    alphas = [t[1]]
    betas: list[float] = []
    sig_prev2 = np.zeros(k_tot + 1)
    sig_prev = t.copy()
    rank_drop = False
    for k in range(1, k_tot // 2 + 1):
        row = np.zeros(k_tot + 1)
        b_prev = betas[k - 2] if k >= 2 else 0.0
        a_prev = alphas[k - 1]
        ls = np.arange(k, k_tot - k + 1)
        row[ls] = sig_prev[ls + 1] - a_prev * sig_prev[ls] - b_prev * sig_prev2[ls]
        # sig_prev[k-1] is sigma_{k-1,k-1} (= 1 for k = 1)
        beta_k = row[k] / sig_prev[k - 1]
        betas.append(beta_k)
        if beta_k <= BETA_TOL:
            rank_drop = True
            break
        if 2 * k + 1 <= k_tot:
            alphas.append(row[k + 1] / row[k] - sig_prev[k] / sig_prev[k - 1])
        sig_prev2 = sig_prev
        sig_prev = row

    # Peel (alpha, beta) into zeta and p, watching for boundary hits.
    p: list[float] = []
    zeta: list[float] = []  # zeta[j-1] = zeta_j
    q_prev = 1.0  # 1 - p_{j-1}
    terminated = False

    def push(j: int, zeta_j: float) -> bool:
        """Validate and record p_j; returns True if the sequence stops here."""
        nonlocal q_prev, terminated
        if q_prev <= P_BOUNDARY_TOL:
            # previous p was 1; nothing more can vary
            terminated = True
            return True
        pj = zeta_j / q_prev
        if pj < -P_FEAS_TOL or pj > 1.0 + P_FEAS_TOL:
            raise InfeasibleMomentsError(j, f"canonical coordinate p_{j} = {pj:.6g} "
                                            "outside [0, 1]")
        pj = min(max(pj, 0.0), 1.0)
        if pj <= P_BOUNDARY_TOL:
            pj = 0.0
        elif pj >= 1.0 - P_BOUNDARY_TOL:
            pj = 1.0
        p.append(pj)
        zeta.append(q_prev * pj)
        q_prev = 1.0 - pj
        if pj in (0.0, 1.0):
            terminated = True
            return True
        return False

    stopped = False
    for j in range(1, k_tot + 1):
        if j == 1:
            zeta_j = alphas[0]
        elif j % 2 == 0:
            kk = j // 2
            if kk - 1 >= len(betas):
                stopped = True
                break
            zeta_j = betas[kk - 1] / zeta[j - 2] if zeta[j - 2] > 0 else 0.0
        else:
            kk = (j - 1) // 2
            if kk >= len(alphas):
                stopped = True
                break
            zeta_j = alphas[kk] - zeta[j - 2]
        if push(j, zeta_j):
            stopped = True
            break
    if rank_drop and not terminated and p and 0.0 < p[-1] < 1.0:
        # rank drop detected in the recurrence but the extracted coordinate
        # stayed numerically interior; pin it so the sequence reads as ended
        p[-1] = 0.0 if p[-1] < 0.5 else 1.0
        terminated = True

    cs = CanonicalSeq(tuple(p), interval, terminated=terminated)
    if len(p) < k_tot or terminated:
        # the remaining moments are forced; verify the caller's values agree
        forced = canonical_to_moments(cs, k_tot)
        given = np.asarray(moments, dtype=float)
        scale = np.maximum(1.0, np.abs(given))
        for idx in range(len(p), k_tot):
            if abs(forced[idx] - given[idx]) > 1e-8 * scale[idx]:
                raise InfeasibleMomentsError(
                    idx + 1, f"value {given[idx]!r} incompatible with the boundary "
                             f"measure pinned by m_1..m_{len(p)} "
                             f"(forced value {forced[idx]!r})")
    return cs


def canonical_to_moments(cs: CanonicalSeq, k: int | None = None) -> np.ndarray:
    """Raw moments m_1..m_k of the measure with canonical coordinates ``cs``.

    ``k`` defaults to len(cs); asking for more is only meaningful when the
    sequence terminated (the tail is then forced).
    """
    if k is None:
        k = len(cs)
    if k == 0:
        return np.array([])
    size = k // 2 + 1
    p_ext = _p_extension(cs.p, 2 * size - 1)
    zeta = _zeta_from_p(p_ext)
    alpha, beta = _recurrence_from_zeta(zeta, size)
    t = _moments_from_recurrence(alpha, beta, k)
    return _from_unit_moments(np.concatenate([[1.0], t]), cs.interval)


def dirac_from_canonical(p: Sequence[float], interval: Interval,
                         mass: float = 1.0) -> tuple[DiracMixture, bool]:
    """Gauss measure for canonical coordinates p_1..p_{2n+1} (n+1 atoms max).

    Returns (measure, degenerate).  ``degenerate`` flags a rank drop: some
    beta vanished, so fewer than n+1 atoms carry the measure.
    """
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    if len(p) % 2 == 0:
        raise ValueError("need an odd number of canonical coordinates, p_1..p_{2n+1}")
    size = (len(p) + 1) // 2
    zeta = _zeta_from_p(p)
    alpha, beta = _recurrence_from_zeta(zeta, size)
    eff = size
    for k, b in enumerate(beta, start=1):
        if b <= BETA_TOL:
            eff = k
            break
    degenerate = eff < size
    if eff == 1:
        eig = alpha[:1]
        wts = np.array([1.0])
    else:
        off = np.sqrt(beta[:eff - 1])
        jmat = np.diag(alpha[:eff]) + np.diag(off, 1) + np.diag(off, -1)
        eig, vecs = np.linalg.eigh(jmat)
        wts = vecs[0, :] ** 2
    eig = np.clip(eig, 0.0, 1.0)
    wts = wts / wts.sum() * mass
    locs = interval.lo + eig * interval.width
    return DiracMixture(tuple(wts), tuple(locs)), degenerate


class QuadratureResult(NamedTuple):
    measure: DiracMixture
    degenerate: bool
    mass: float


def moments_to_quadrature(moments: Sequence[float], interval: Interval) -> QuadratureResult:
    """Gauss measure reproducing m_0, m_1, ..., m_{2n} exactly.

    The even moment count leaves one recurrence coefficient free; the
    completion used here sets the next canonical coordinate to 1/2, which
    keeps the atoms strictly inside the interval.  ``degenerate`` flags the
    rank-drop case (moment vector on the boundary, fewer atoms than n+1).
    ``mass`` returns m_0; the measure itself is normalized to mass one.
    """
    moments = np.asarray(moments, dtype=float)
    if len(moments) % 2 == 0:
        raise ValueError("need an odd number of moments m_0..m_{2n}")
    m0 = float(moments[0])
    if not m0 > 0:
        raise InfeasibleMomentsError(0, f"total mass {m0!r} must be positive")
    cs = moments_to_canonical(moments[1:] / m0, interval)
    n = (len(moments) - 1) // 2
    p_ext = _p_extension(cs.p, 2 * n + 1)
    measure, degenerate = dirac_from_canonical(p_ext, interval, mass=1.0)
    return QuadratureResult(measure, degenerate or cs.terminated, m0)
