"""Distribution of the number of detectees per index case.

Conditioned on the index case's age at diagnosis ``a`` and its downstream
degree ``k``, forward detectees are Binomial(k, p_hat(a)). Full tracing adds
the infector with probability ``p * exp(-(alpha+sigma) a)``. Mixing over ``k``
and integrating ``a`` against the index-age density gives the unconditional
pmf.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .degree import DegreeModel, Fixed, RandomMixingLimit
from .kernels import (
    EpidemicParams,
    SubcriticalTreeError,
    edge_trace_prob,
    growth_summary,
    infector_alive_prob,
)
from .quadrature import IntegrationSpec, integrate_semi_infinite

DEFAULT_DEGREE_TAIL = 1e-13
TAIL_TARGET = 1e-9
# exp() arguments beyond this switch the degree mixture to its recurrence form
_LOG_SAFE = 600.0


class TracingMode(str, enum.Enum):
    FORWARD = "forward"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "TracingMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"tracing mode must be 'forward' or 'full', got {value!r}") from None


class ModelConfigError(ValueError):
    """Invalid combination of degree model, rates and tracing settings."""


@dataclass(frozen=True)
class DetecteePmf:
    """``P(T = i)`` for ``i = 0..i_max`` plus the mass beyond ``i_max``.

    ``tail`` also absorbs degree mass excluded by a degree cap, so
    ``probs.sum() + tail == 1`` always holds.
    """

    probs: np.ndarray
    tail: float
    mode: TracingMode
    params: EpidemicParams
    model: DegreeModel
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def i_max(self) -> int:
        return len(self.probs) - 1

    def __getitem__(self, i):
        return self.prob(i)

    def prob(self, i):
        i = np.asarray(i)
        out = np.where((i >= 0) & (i <= self.i_max),
                       self.probs[np.clip(i, 0, self.i_max)], 0.0)
        return out if out.ndim else float(out)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))


def forward_pmf_given_age(i, a, k, params: EpidemicParams):
    """Binomial(k, p_hat(a)) mass at ``i``; zero outside ``0..k``."""
    q = edge_trace_prob(a, params)
    out = stats.binom.pmf(i, k, q)
    return float(out) if np.ndim(out) == 0 else out


def full_pmf_given_age(i, a, k, params: EpidemicParams):
    """Forward count mixed with a possible backward detection of the infector."""
    w = params.p * infector_alive_prob(a, params)
    back = forward_pmf_given_age(np.asarray(i) - 1, a, k, params)
    fwd = forward_pmf_given_age(i, a, k, params)
    out = w * back + (1.0 - w) * fwd
    return float(out) if np.ndim(out) == 0 else out


def forward_pmf_fixed(i, k: int, params: EpidemicParams, abs_tol: float = 1e-10):
    """``P(T = i)`` for fixed downstream degree ``k`` under forward tracing."""
    if k <= 1:
        raise SubcriticalTreeError(f"subcritical tree: fixed degree {k} <= 1")
    rate = params.beta * (k - 1)

    def integrand(a):
        return forward_pmf_given_age(i, a, k, params) * rate * np.exp(-rate * a)

    return integrate_semi_infinite(integrand, IntegrationSpec(rate, abs_tol))


def _mixture_matrix(ks, pk, i_max):
    """``pk * C(k, i)`` in log space for ``k`` in ``ks`` and ``i = 0..i_max``."""
    i = np.arange(i_max + 1)
    valid = (ks[:, None] >= i[None, :]) & (pk[:, None] > 0)
    with np.errstate(divide="ignore"):
        logm = (gammaln(ks + 1.0)[:, None] - gammaln(i + 1.0)[None, :]
                - gammaln(np.maximum(ks[:, None] - i[None, :], 0) + 1.0)
                + np.log(pk)[:, None])
    return np.where(valid, logm, -np.inf)


class _DegreeMixture:
    """Evaluates ``sum_k P(K=k) Binom(i; k, q)`` for batches of ``q``."""

    def __init__(self, ks, pk, i_max):
        self.ks = ks.astype(float)
        self.pk = pk
        self.i_max = i_max
        logm = _mixture_matrix(ks, pk, i_max)
        self.use_recurrence = bool(np.max(logm) > _LOG_SAFE)
        self.m = None if self.use_recurrence else np.exp(logm)
        self.i = np.arange(i_max + 1)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        x = 1.0 - q
        if not self.use_recurrence:
            with np.errstate(divide="ignore"):
                z = np.log(q) - np.log(x)
            if np.all(self.i_max * np.where(np.isfinite(z), z, 0.0) < _LOG_SAFE):
                xp = np.exp(np.log(x)[:, None] * self.ks[None, :])
                with np.errstate(divide="ignore", invalid="ignore"):
                    zi = np.where(self.i[None, :] == 0, 1.0,
                                  np.exp(self.i[None, :] * z[:, None]))
                return (xp @ self.m) * zi
        return self._recurrence(q, x)

    def _recurrence(self, q, x):
        # Pascal recursion over k keeps every entry a convex combination.
        b = np.zeros((len(q), self.i_max + 1))
        b[:, 0] = 1.0
        acc = np.zeros_like(b)
        ks = self.ks.astype(np.int64)
        k_prev = 0
        for k, w in zip(ks, self.pk):
            for _ in range(k - k_prev):
                b[:, 1:] = x[:, None] * b[:, 1:] + q[:, None] * b[:, :-1]
                b[:, 0] *= x
            k_prev = k
            if w > 0:
                acc += w * b
        return acc


def _degree_support(model: DegreeModel, k_cap, degree_tail_tol):
    k_hi = model.support_upper(degree_tail_tol)
    if k_cap is not None:
        k_hi = min(k_hi, int(k_cap))
    ks = np.arange(k_hi + 1)
    return ks, model.pmf_array(k_hi)


def _phi_rate(params: EpidemicParams, model: DegreeModel) -> float:
    try:
        return growth_summary(params, model.mean()).phi_rate
    except SubcriticalTreeError as exc:
        raise ModelConfigError(str(exc)) from None


def _pmf_vector(params, model, mode, i_max, r0, k_cap, abs_tol, degree_tail_tol):
    g = params.removal_rate
    p = params.p
    full = mode is TracingMode.FULL
    n_out = i_max + 1
    if isinstance(model, RandomMixingLimit):
        if r0 is None or r0 <= 0:
            raise ModelConfigError("the random-mixing limit needs a positive r0")
        rate = r0 * g
        i = np.arange(n_out)

        def forward(a):
            mu = p * r0 * -np.expm1(-g * a)
            with np.errstate(divide="ignore"):
                lmu = np.log(mu)
            logp = i[None, :] * lmu[:, None] - mu[:, None] - gammaln(i + 1.0)[None, :]
            return np.where(i[None, :] == 0, np.exp(-mu)[:, None], np.exp(logp))
    else:
        rate = _phi_rate(params, model)
        ks, pk = _degree_support(model, k_cap, degree_tail_tol)
        mix = _DegreeMixture(ks, pk, i_max)

        def forward(a):
            return mix(edge_trace_prob(a, params))

    def integrand(a):
        f = forward(a)
        if full:
            w = (p * np.exp(-g * a))[:, None]
            shifted = np.zeros_like(f)
            shifted[:, 1:] = f[:, :-1]
            f = w * shifted + (1.0 - w) * f
        return f * (rate * np.exp(-rate * a))[:, None]

    spec = IntegrationSpec(rate, abs_tol)
    probs = np.atleast_1d(integrate_semi_infinite(integrand, spec))
    return np.clip(probs, 0.0, None), rate


def _i_limit(model, mode, k_cap, degree_tail_tol):
    if isinstance(model, RandomMixingLimit):
        return 100_000
    k_hi = model.support_upper(degree_tail_tol)
    if k_cap is not None:
        k_hi = min(k_hi, int(k_cap))
    return k_hi + (1 if mode is TracingMode.FULL else 0)


def detectee_pmf(params: EpidemicParams, model: DegreeModel, mode="forward",
                 i_max: int | None = None, *, r0: float | None = None,
                 k_cap: int | None = None, abs_tol: float = 1e-10,
                 degree_tail_tol: float = DEFAULT_DEGREE_TAIL) -> DetecteePmf:
    """Unconditional detectee pmf ``P(T=i)`` (forward) or ``P(T_tot=i)`` (full).

    Parameters
    ----------
    params
        Rates and tracing probability. Only ``beta/(alpha+sigma)`` and ``p``
        matter; rescaling all rates leaves the result unchanged.
    model
        Downstream degree distribution. The index-age density uses its mean.
        For :class:`~tracefit.degree.RandomMixingLimit` pass ``r0``.
    mode
        ``"forward"`` or ``"full"``.
    i_max
        Largest count to report. By default the smallest power-of-two
        multiple of 32 leaving less than 1e-9 beyond it.
    k_cap
        Drop degrees above this value from the mixture without
        renormalizing; their mass ends up in ``tail``.
    abs_tol
        Absolute quadrature tolerance per pmf entry.
    """
    mode = TracingMode.parse(mode)
    if isinstance(model, Fixed) and model.k <= 1:
        raise ModelConfigError(f"subcritical tree: fixed degree {model.k} <= 1")
    limit = _i_limit(model, mode, k_cap, degree_tail_tol)
    if i_max is not None:
        if i_max < 0:
            raise ValueError("i_max must be non-negative")
        probs, rate = _pmf_vector(params, model, mode, int(i_max), r0, k_cap, abs_tol,
                                  degree_tail_tol)
    else:
        n = 31
        while True:
            probs, rate = _pmf_vector(params, model, mode, n, r0, k_cap, abs_tol,
                                      degree_tail_tol)
            if 1.0 - probs.sum() < TAIL_TARGET or n >= limit:
                break
            n = min(2 * n + 1, limit)
        cdf = np.cumsum(probs)
        cut = int(np.searchsorted(cdf, 1.0 - TAIL_TARGET, side="right"))
        probs = probs[:min(cut + 1, len(probs))]
    tail = max(1.0 - float(probs.sum()), 0.0)
    return DetecteePmf(probs=probs, tail=tail, mode=mode, params=params, model=model,
                       extra={"phi_rate": rate, "k_cap": k_cap, "r0": r0})
