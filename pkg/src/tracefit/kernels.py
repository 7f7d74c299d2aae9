"""Epidemiological kernels of the SIR model on a rooted random tree.

All functions take the age since infection ``a`` of a node, never a calendar
time. Rates are per unit time; the nondimensional convention used by the
estimator sets the total removal rate ``alpha + sigma`` to one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this relative gap between beta and alpha+sigma the analytic limit is used.
_SINGULAR_RTOL = 1e-8


class SubcriticalTreeError(ValueError):
    """Raised when the expected downstream degree does not exceed one."""


@dataclass(frozen=True)
class EpidemicParams:
    """Rates of the tree SIR model plus the per-edge tracing probability.

    Attributes
    ----------
    beta : float
        Per-edge infectious contact rate.
    alpha : float
        Unobserved recovery rate.
    sigma : float
        Diagnosis rate; a diagnosed node becomes an index case.
    p : float
        Probability that tracing along one edge succeeds.
    """

    beta: float
    alpha: float
    sigma: float
    p: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.alpha + self.sigma <= 0:
            raise ValueError("alpha + sigma must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")

    @property
    def removal_rate(self) -> float:
        return self.alpha + self.sigma

    @property
    def p_obs(self) -> float:
        """Probability that an infected node is eventually diagnosed."""
        return self.sigma / (self.alpha + self.sigma)

    def scaled(self, c: float) -> "EpidemicParams":
        """Same model with every rate multiplied by ``c`` (a change of time unit)."""
        return EpidemicParams(self.beta * c, self.alpha * c, self.sigma * c, self.p)

    def with_p(self, p: float) -> "EpidemicParams":
        return EpidemicParams(self.beta, self.alpha, self.sigma, p)


@dataclass(frozen=True)
class GrowthSummary:
    lam: float
    r0: float
    phi_rate: float


def infection_kernel(a, beta: float, mean_k: float):
    """Rate at which an average infected node of age ``a`` infects downstream nodes."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("age since infection must be non-negative")
    if beta <= 0 or mean_k <= 0:
        raise ValueError("beta and mean_k must be positive")
    out = mean_k * beta * np.exp(-beta * a)
    return out if out.ndim else float(out)


def growth_summary(params: EpidemicParams, mean_k: float) -> GrowthSummary:
    """Malthusian growth rate, R0 and the index-case age rate for a tree.

    Raises
    ------
    SubcriticalTreeError
        If ``mean_k <= 1``; the tree is finite almost surely and the
        asymptotic age density does not exist.
    """
    if mean_k <= 1:
        raise SubcriticalTreeError(f"subcritical tree: E[K] = {mean_k} <= 1")
    b, g = params.beta, params.removal_rate
    phi_rate = b * (mean_k - 1.0)
    return GrowthSummary(lam=phi_rate - g, r0=mean_k * b / (g + b), phi_rate=phi_rate)


def euler_lotka_residual(params: EpidemicParams, mean_k: float) -> float:
    """``int theta(a) exp(-(lam + alpha + sigma) a) da - 1`` in closed form."""
    lam = growth_summary(params, mean_k).lam
    return mean_k * params.beta / (lam + params.removal_rate + params.beta) - 1.0


def index_age_density(a, phi_rate: float):
    """Asymptotic density of the age at diagnosis of index cases."""
    if phi_rate <= 0:
        raise ValueError(f"phi_rate must be positive, got {phi_rate}")
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("age since infection must be non-negative")
    out = phi_rate * np.exp(-phi_rate * a)
    return out if out.ndim else float(out)


def infected_downstream_prob(a, beta: float, removal_rate: float):
    """Probability that one downstream node is infectious when its infector has age ``a``.

    Solves the susceptible -> infected -> removed chain of a single edge. The
    removable singularity at ``beta == removal_rate`` is evaluated through
    ``expm1`` and, within a relative gap of 1e-8, through its limit
    ``beta * a * exp(-beta * a)``.
    """
    a = np.asarray(a, dtype=float)
    d = removal_rate - beta
    if abs(d) < _SINGULAR_RTOL * removal_rate:
        out = beta * a * np.exp(-beta * a)
    else:
        # (exp(-beta a) - exp(-g a)) / (g - beta), factoring out the slower exponential
        slow = min(beta, removal_rate)
        out = -beta * np.exp(-slow * a) * np.expm1(-abs(d) * a) / abs(d)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def edge_trace_prob(a, params: EpidemicParams):
    """Probability that a given downstream node is infected and traced at diagnosis age ``a``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("age since infection must be non-negative")
    out = params.p * infected_downstream_prob(a, params.beta, params.removal_rate)
    return out if np.ndim(out) else float(out)


def infector_alive_prob(a, params: EpidemicParams):
    """Probability that the infector is still infectious, first order in ``p``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("age since infection must be non-negative")
    out = np.exp(-params.removal_rate * a)
    return out if out.ndim else float(out)


def nondimensionalize(r0: float, mean_k: float, p: float = 0.0) -> EpidemicParams:
    """Rates with ``alpha + sigma = 1`` that reproduce ``r0`` for degree mean ``mean_k``.

    The split ``alpha = sigma = 0.5`` is a convention; the detectee
    distribution depends on the two only through their sum.
    """
    if r0 <= 0:
        raise ValueError(f"r0 must be positive, got {r0}")
    if mean_k <= r0:
        raise ValueError(f"degree below reproduction number: E[K] = {mean_k} <= R0 = {r0}")
    return EpidemicParams(beta=r0 / (mean_k - r0), alpha=0.5, sigma=0.5, p=p)
