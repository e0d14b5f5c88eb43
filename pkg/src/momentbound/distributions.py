"""Parametric nominal distributions: CDFs, inverse CDFs, and quadratures.

These never enter the optimization (the optimizer only sees extreme
mixtures); they describe the baseline input laws for Monte Carlo references,
Sobol conditioning, and Bayesian predictive integration.  Quadratures go
through the quantile function with composite Gauss-Legendre panels in
probability space, clipped to [tail_eps, 1 - tail_eps]; the discarded tail
mass is far below any tolerance used against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .measures import gauss_legendre_01

TAIL_EPS = 1e-9

EULER_GAMMA = 0.5772156649015329


def _panel_quadrature(ppf, panels: int, order: int):
    u_lo, u_hi = TAIL_EPS, 1.0 - TAIL_EPS
    edges = np.linspace(u_lo, u_hi, panels + 1)
    g, gw = gauss_legendre_01(order)
    us = (edges[:-1, None] + np.diff(edges)[:, None] * g[None, :]).ravel()
    ws = (np.diff(edges)[:, None] * gw[None, :]).ravel()
    x = ppf(us)
    ws = ws / ws.sum()
    return x, ws


@dataclass(frozen=True)
class Gumbel:
    """Location-scale Gumbel: CDF exp(-exp(-(x - rho)/beta))."""

    rho: float
    beta: float

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-np.exp(-(x - self.rho) / self.beta))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return self.rho - self.beta * np.log(-np.log(u))

    @property
    def mean(self) -> float:
        return self.rho + EULER_GAMMA * self.beta

    def quadrature(self, panels: int = 16, order: int = 8):
        return _panel_quadrature(self.ppf, panels, order)

    def loglik(self, data):
        return float(gumbel_loglik(data, self.rho, self.beta))


def gumbel_loglik(data, rho, beta):
    """Gumbel log likelihood of iid ``data``, vectorized over (rho, beta)."""
    data = np.asarray(data, dtype=float)
    rho = np.asarray(rho, dtype=float)
    beta = np.asarray(beta, dtype=float)
    z = (data - rho[..., None]) / beta[..., None]
    return (-np.log(beta) * data.size
            - z.sum(axis=-1) - np.exp(-z).sum(axis=-1))


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sigma) conditioned on [lo, hi]."""

    mu: float
    sigma: float
    lo: float
    hi: float

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.mu) / self.sigma

    @property
    def _phi_bounds(self):
        return ndtr(self._z(self.lo)), ndtr(self._z(self.hi))

    def cdf(self, x):
        pa, pb = self._phi_bounds
        c = (ndtr(self._z(x)) - pa) / (pb - pa)
        return np.clip(c, 0.0, 1.0)

    def ppf(self, u):
        pa, pb = self._phi_bounds
        u = np.asarray(u, dtype=float)
        return self.mu + self.sigma * ndtri(pa + u * (pb - pa))

    @property
    def mean(self) -> float:
        pa, pb = self._phi_bounds
        za, zb = self._z(self.lo), self._z(self.hi)
        pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        return self.mu + self.sigma * (pdf(za) - pdf(zb)) / (pb - pa)

    @property
    def second_moment(self) -> float:
        pa, pb = self._phi_bounds
        za, zb = self._z(self.lo), self._z(self.hi)
        pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        frac = (za * pdf(za) - zb * pdf(zb)) / (pb - pa)
        var = self.sigma ** 2 * (1.0 + frac
                                 - ((pdf(za) - pdf(zb)) / (pb - pa)) ** 2)
        return var + self.mean ** 2

    def quadrature(self, panels: int = 16, order: int = 8):
        return _panel_quadrature(self.ppf, panels, order)


@dataclass(frozen=True)
class UniformDist:
    lo: float
    hi: float

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return self.lo + u * (self.hi - self.lo)

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def quadrature(self, panels: int = 1, order: int = 16):
        g, gw = gauss_legendre_01(order * panels)
        return self.lo + g * (self.hi - self.lo), gw.copy()
