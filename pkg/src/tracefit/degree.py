"""Downstream-degree distributions K of the rooted random tree."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

# Power-law truncation that reproduces the reference Karnataka analysis
# (gamma = 1.48 gives E[K] = 11.4 only for k_max = 200).
DEFAULT_POWERLAW_KMAX = 200


class DegreeModel:
    """Common interface of the degree families.

    Subclasses validate their parameters at construction; queries never
    raise for a constructed model.
    """

    family: str = ""
    n_params: int = 0  # fitted parameters including the tracing probability p

    def pmf(self, k):
        k = np.asarray(k)
        out = np.zeros(k.shape, dtype=float)
        ok = (k >= 0) & (k == np.floor(k))
        if np.any(ok):
            out[ok] = self._pmf(k[ok].astype(np.int64))
        return out if out.ndim else float(out)

    def pmf_array(self, k_hi: int) -> np.ndarray:
        """Masses at ``k = 0..k_hi``."""
        return self.pmf(np.arange(k_hi + 1))

    def sf(self, k: int) -> float:
        """Tail mass ``P(K > k)``."""
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def support_upper(self, tail_tol: float) -> int:
        """Smallest ``K*`` with ``P(K > K*) <= tail_tol``."""
        if not 0 < tail_tol < 1:
            raise ValueError("tail_tol must lie in (0, 1)")
        k = max(int(self._isf_guess(tail_tol)), 0)
        while k > 0 and self.sf(k - 1) <= tail_tol:
            k -= 1
        while self.sf(k) > tail_tol:
            k += 1
        return k

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def _pmf(self, k: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _isf_guess(self, tol: float) -> float:
        return self.mean()

    def spec(self) -> str:
        """Textual form accepted by :func:`parse_degree_spec`."""
        raise NotImplementedError


@dataclass(frozen=True)
class Fixed(DegreeModel):
    k: int
    family = "fixed"
    n_params = 2

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"fixed degree must be a positive integer, got {self.k}")

    def _pmf(self, k):
        return (k == self.k).astype(float)

    def sf(self, k):
        return 1.0 if k < self.k else 0.0

    def mean(self):
        return float(self.k)

    def variance(self):
        return 0.0

    def support_upper(self, tail_tol):
        return int(self.k)

    def sample(self, rng, size=None):
        if size is None:
            return int(self.k)
        return np.full(size, self.k, dtype=np.int64)

    def spec(self):
        return f"fixed:{self.k}"


@dataclass(frozen=True)
class Poisson(DegreeModel):
    mean_k: float
    family = "poisson"
    n_params = 2

    def __post_init__(self):
        if not self.mean_k > 0:
            raise ValueError(f"Poisson mean must be positive, got {self.mean_k}")

    def _pmf(self, k):
        return stats.poisson.pmf(k, self.mean_k)

    def sf(self, k):
        return float(stats.poisson.sf(k, self.mean_k))

    def mean(self):
        return float(self.mean_k)

    def variance(self):
        return float(self.mean_k)

    def _isf_guess(self, tol):
        return stats.poisson.isf(tol, self.mean_k)

    def sample(self, rng, size=None):
        return rng.poisson(self.mean_k, size)

    def spec(self):
        return f"poisson:{self.mean_k:g}"


@dataclass(frozen=True)
class Geometric(DegreeModel):
    """Geometric law on ``k = 0, 1, ...`` with ``P(K=k) = (1-q) q^k``, ``E[K] = q/(1-q)``."""

    mean_k: float
    family = "geometric"
    n_params = 2

    def __post_init__(self):
        if not self.mean_k > 0:
            raise ValueError(f"geometric mean must be positive, got {self.mean_k}")

    @property
    def q(self) -> float:
        return self.mean_k / (1.0 + self.mean_k)

    def _pmf(self, k):
        q = self.q
        return (1.0 - q) * np.exp(k * math.log(q))

    def sf(self, k):
        return self.q ** (k + 1) if k >= 0 else 1.0

    def mean(self):
        return float(self.mean_k)

    def variance(self):
        q = self.q
        return q / (1.0 - q) ** 2

    def _isf_guess(self, tol):
        return math.log(tol) / math.log(self.q) - 1.0

    def sample(self, rng, size=None):
        # numpy's geometric counts trials, starting at 1
        return rng.geometric(1.0 - self.q, size) - 1

    def spec(self):
        return f"geometric:{self.mean_k:g}"


@dataclass(frozen=True)
class NegBinomial(DegreeModel):
    """Negative binomial with shape ``r`` and mean ``mean_k``; variance ``m + m^2/r``."""

    r: float
    mean_k: float
    family = "negbinom"
    n_params = 3

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"negative binomial shape must be positive, got {self.r}")
        if not self.mean_k > 0:
            raise ValueError(f"negative binomial mean must be positive, got {self.mean_k}")

    @property
    def _prob(self) -> float:
        return self.r / (self.r + self.mean_k)

    def _pmf(self, k):
        return stats.nbinom.pmf(k, self.r, self._prob)

    def sf(self, k):
        return float(stats.nbinom.sf(k, self.r, self._prob))

    def mean(self):
        return float(self.mean_k)

    def variance(self):
        return self.mean_k + self.mean_k**2 / self.r

    def _isf_guess(self, tol):
        return stats.nbinom.isf(tol, self.r, self._prob)

    def sample(self, rng, size=None):
        return rng.negative_binomial(self.r, self._prob, size)

    def spec(self):
        return f"negbinom:{self.r:g}:{self.mean_k:g}"


@dataclass(frozen=True)
class PowerLaw(DegreeModel):
    """``P(K=k) = c k^-gamma`` on ``k = 1..k_max``, normalized by direct summation."""

    gamma: float
    k_max: int = DEFAULT_POWERLAW_KMAX
    family = "powerlaw"
    n_params = 2
    _w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"power-law exponent must exceed 1, got {self.gamma}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError(f"k_max must be a positive integer, got {self.k_max}")
        k = np.arange(1, int(self.k_max) + 1, dtype=float)
        w = k ** (-self.gamma)
        object.__setattr__(self, "_w", w / w.sum())

    def _pmf(self, k):
        out = np.zeros(k.shape)
        ok = (k >= 1) & (k <= self.k_max)
        out[ok] = self._w[k[ok] - 1]
        return out

    def sf(self, k):
        if k < 1:
            return 1.0
        return float(self._w[k:].sum()) if k < self.k_max else 0.0

    def mean(self):
        return float(np.dot(np.arange(1, self.k_max + 1), self._w))

    def variance(self):
        k = np.arange(1, self.k_max + 1)
        return float(np.dot(k * k, self._w) - self.mean() ** 2)

    def support_upper(self, tail_tol):
        return int(self.k_max)

    def sample(self, rng, size=None):
        return rng.choice(np.arange(1, self.k_max + 1), size=size, p=self._w)

    def spec(self):
        return f"powerlaw:{self.gamma:g}:{self.k_max}"


@dataclass(frozen=True)
class RandomMixingLimit(DegreeModel):
    """Full-graph limit ``K = N - 1 -> inf`` with ``beta -> 0`` at fixed R0.

    Has no degree distribution of its own; the mixture module treats it
    through its Poisson limit.
    """

    family = "randommix"
    n_params = 1

    def _pmf(self, k):
        raise TypeError("the random-mixing limit has no finite degree distribution")

    def pmf(self, k):
        raise TypeError("the random-mixing limit has no finite degree distribution")

    def mean(self):
        return math.inf

    def sf(self, k):
        return 1.0

    def spec(self):
        return "randommix"


FAMILIES = ("randommix", "fixed", "poisson", "geometric", "powerlaw", "negbinom")

N_PARAMS = {
    "randommix": RandomMixingLimit.n_params,
    "fixed": Fixed.n_params,
    "poisson": Poisson.n_params,
    "geometric": Geometric.n_params,
    "powerlaw": PowerLaw.n_params,
    "negbinom": NegBinomial.n_params,
}


def parse_degree_spec(text: str) -> DegreeModel:
    """Parse ``fixed:4``, ``poisson:4``, ``geometric:16.6``, ``powerlaw:1.48:200``,
    ``negbinom:0.16:4.5`` (shape, mean) or ``randommix``."""
    parts = text.strip().lower().split(":")
    name, args = parts[0], parts[1:]
    try:
        if name == "randommix" and not args:
            return RandomMixingLimit()
        if name == "fixed" and len(args) == 1:
            k = float(args[0])
            if k != int(k):
                raise ValueError("fixed degree must be an integer")
            return Fixed(int(k))
        if name == "poisson" and len(args) == 1:
            return Poisson(float(args[0]))
        if name == "geometric" and len(args) == 1:
            return Geometric(float(args[0]))
        if name == "powerlaw" and len(args) in (1, 2):
            k_max = int(args[1]) if len(args) == 2 else DEFAULT_POWERLAW_KMAX
            return PowerLaw(float(args[0]), k_max)
        if name == "negbinom" and len(args) == 2:
            return NegBinomial(float(args[0]), float(args[1]))
    except ValueError as exc:
        raise ValueError(f"invalid degree spec {text!r}: {exc}") from None
    raise ValueError(f"unrecognised degree spec {text!r}")
