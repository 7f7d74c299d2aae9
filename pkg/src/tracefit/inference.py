"""Maximum-likelihood estimation of the tracing probability and degree law.

The epidemiological rates enter only through R0 (time measured in units of
``1/(alpha+sigma)``), so a fit is parameterized by ``p`` and the degree
parameters alone. All constraints are encoded by transforms so that the
optimizer works on an unconstrained vector:

========== =======================================
parameter  transform
========== =======================================
p          ``logit(p)``
E[K]       ``log(E[K] - R0)`` (keeps E[K] > R0)
r, gamma-1 ``log``
========== =======================================
"""
from __future__ import annotations

import enum
import csv
import hashlib
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit

from .degree import (
    DEFAULT_POWERLAW_KMAX,
    FAMILIES,
    N_PARAMS,
    DegreeModel,
    Fixed,
    Geometric,
    NegBinomial,
    Poisson,
    PowerLaw,
    RandomMixingLimit,
)
from .kernels import EpidemicParams, nondimensionalize
from .mixture import ModelConfigError, TracingMode, detectee_pmf

# Degree sums are cut at k <= 200, the truncation under which the reference
# power-law row (gamma = 1.48, E[K] = 11.4) is reproduced.
DEFAULT_K_CAP = 200
# p this close to 1 counts as the upper edge of the parameter space
P_EDGE_TOL = 1e-6


class EmptyHistogramError(ValueError):
    pass


class IngestError(ValueError):
    """Malformed detectee CSV input."""


class DegeneratePointError(ArithmeticError):
    """The objective is not finite at a finite-difference probe point."""


class NotNegativeDefiniteError(ArithmeticError):
    """The Hessian does not support a Wald interval."""


@dataclass(frozen=True)
class DetecteeHistogram:
    """Observed detectee counts in canonical form: sorted, distinct, positive frequencies."""

    counts: tuple
    freqs: tuple

    def __post_init__(self):
        if len(self.counts) == 0:
            raise EmptyHistogramError("histogram has no observations")
        if len(self.counts) != len(self.freqs):
            raise ValueError("counts and freqs differ in length")
        if list(self.counts) != sorted(set(self.counts)):
            raise ValueError("counts must be distinct and sorted; use from_pairs")
        if any(c < 0 for c in self.counts) or any(f <= 0 for f in self.freqs):
            raise ValueError("counts must be >= 0 and frequencies > 0")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "DetecteeHistogram":
        """Canonicalize (detectees, frequency) rows; duplicates are summed, zeros dropped."""
        merged: Counter = Counter()
        for i, n in pairs:
            if int(i) != i or int(n) != n:
                raise ValueError(f"non-integer row ({i}, {n})")
            if i < 0 or n < 0:
                raise ValueError(f"negative value in row ({i}, {n})")
            merged[int(i)] += int(n)
        items = sorted((i, n) for i, n in merged.items() if n > 0)
        return cls(tuple(i for i, _ in items), tuple(n for _, n in items))

    @classmethod
    def from_csv_text(cls, text: str, source: str = "<input>") -> "DetecteeHistogram":
        """Parse ``detectees,frequency`` CSV text; errors name the offending line."""
        rows = list(csv.reader(io.StringIO(text)))
        lines = [(n, r) for n, r in enumerate(rows, start=1)
                 if r and not (len(r) == 1 and not r[0].strip())]
        if not lines:
            raise IngestError(f"{source}: file is empty")
        n0, header = lines[0]
        if [h.strip().lower() for h in header] != ["detectees", "frequency"]:
            raise IngestError(f"{source}:{n0}: expected header 'detectees,frequency', "
                              f"got {','.join(header)!r}")
        pairs = []
        for n, row in lines[1:]:
            if len(row) != 2:
                raise IngestError(f"{source}:{n}: expected 2 fields, got {len(row)}")
            try:
                i, f = (int(v.strip()) for v in row)
            except ValueError:
                raise IngestError(f"{source}:{n}: non-integer value in {','.join(row)!r}") from None
            if i < 0 or f < 0:
                raise IngestError(f"{source}:{n}: negative value in {','.join(row)!r}")
            pairs.append((i, f))
        if not pairs or sum(f for _, f in pairs) == 0:
            raise IngestError(f"{source}: no observations")
        return cls.from_pairs(pairs)

    @classmethod
    def from_observations(cls, values: Iterable[int]) -> "DetecteeHistogram":
        return cls.from_pairs((int(v), 1) for v in values)

    @property
    def n(self) -> int:
        return int(sum(self.freqs))

    @property
    def max_count(self) -> int:
        return int(self.counts[-1])

    def arrays(self):
        return np.asarray(self.counts, dtype=np.int64), np.asarray(self.freqs, dtype=np.int64)

    def items(self):
        return list(zip(self.counts, self.freqs))

    def expanded(self) -> np.ndarray:
        i, n = self.arrays()
        return np.repeat(i, n)

    def mean(self) -> float:
        i, n = self.arrays()
        return float(np.dot(i, n) / n.sum())

    def to_csv(self) -> str:
        lines = ["detectees,frequency"] + [f"{i},{n}" for i, n in self.items()]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """SHA-256 of the canonical CSV text."""
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


class FitStatus(str, enum.Enum):
    CONVERGED = "converged"
    BOUNDARY_MAXIMUM = "boundary_maximum"
    NOT_CONVERGED = "not_converged"


@dataclass(frozen=True)
class FitOptions:
    """Optimizer and numerical settings of :func:`fit_mle`."""

    k_cap: int | None = DEFAULT_K_CAP
    powerlaw_kmax: int = DEFAULT_POWERLAW_KMAX
    restarts: int = 3
    seed: int = 0
    maxiter: int = 2000
    fatol: float = 1e-8
    loop_abs_tol: float = 1e-8
    final_abs_tol: float = 1e-11
    fd_step: float = 1e-4
    hessian_step: float = 1e-3
    grad_tol: float = 1e-4
    mean_cap: float = 200.0
    boundary_tol: float = 0.05
    fixed_k_max: int = 20
    fix_mean_k: float | None = None


@dataclass
class FitResult:
    family: str
    r0: float
    mode: TracingMode
    estimates: dict
    x: np.ndarray
    ll_max: float
    aic: float
    n_params: int
    gradient: np.ndarray
    gradient_norm: float
    hessian: np.ndarray
    status: FitStatus
    message: str = ""
    wald_ci: dict | None = None
    wald_error: str | None = None
    profile_ci_mean_k: tuple | None = None
    param_names: tuple = ()
    k_cap: int | None = None
    n_obs: int = 0
    data_digest: str = ""
    n_evals: int = 0
    options: FitOptions = field(default_factory=FitOptions)

    @property
    def p(self) -> float:
        return self.estimates["p"]

    @property
    def mean_k(self) -> float | None:
        return self.estimates.get("mean_k")

    def model(self) -> DegreeModel:
        return resolve_model(self.family, self.r0, self.estimates, self.options.powerlaw_kmax)[1]

    def params(self) -> EpidemicParams:
        return resolve_model(self.family, self.r0, self.estimates, self.options.powerlaw_kmax)[0]

    def to_dict(self) -> dict:
        def ci(d):
            return None if d is None else {k: [float(a), float(b)] for k, (a, b) in d.items()}

        return {
            "family": self.family,
            "r0": self.r0,
            "mode": self.mode.value,
            "status": self.status.value,
            "message": self.message,
            "estimates": {k: float(v) for k, v in self.estimates.items()},
            "transformed": [float(v) for v in self.x],
            "param_names": list(self.param_names),
            "ll": float(self.ll_max),
            "aic": float(self.aic),
            "n_params": self.n_params,
            "gradient_norm": float(self.gradient_norm),
            "hessian": np.asarray(self.hessian, dtype=float).tolist(),
            "wald_ci": ci(self.wald_ci),
            "wald_error": self.wald_error,
            "profile_ci_mean_k": (None if self.profile_ci_mean_k is None
                                  else [float(v) for v in self.profile_ci_mean_k]),
            "k_cap": self.k_cap,
            "powerlaw_kmax": self.options.powerlaw_kmax,
            "n_obs": self.n_obs,
            "data_digest": self.data_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


class _Parameterization:
    """Maps the unconstrained vector ``x`` of a family to natural parameters."""

    def __init__(self, family: str, r0: float, options: FitOptions, fixed_k: int | None = None):
        if family not in FAMILIES:
            raise ModelConfigError(f"unknown degree family {family!r}; choose from {FAMILIES}")
        if not r0 > 0:
            raise ModelConfigError(f"r0 must be positive, got {r0}")
        self.family = family
        self.r0 = float(r0)
        self.options = options
        self.fixed_k = fixed_k
        self.fix_mean = options.fix_mean_k if family in ("poisson", "geometric", "negbinom") else None
        names = ["p"]
        if family in ("poisson", "geometric", "negbinom") and self.fix_mean is None:
            names.append("mean_k")
        if family == "powerlaw":
            names.append("gamma")
        if family == "negbinom":
            names.append("r")
        self.names = tuple(names)

    def natural(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        out = {"p": float(expit(x[0]))}
        j = 1
        if "mean_k" in self.names:
            out["mean_k"] = self.r0 + math.exp(x[j])
            j += 1
        elif self.fix_mean is not None:
            out["mean_k"] = float(self.fix_mean)
        if "gamma" in self.names:
            out["gamma"] = 1.0 + math.exp(x[j])
            j += 1
        if "r" in self.names:
            out["r"] = math.exp(x[j])
        if self.family == "fixed":
            out["k"] = self.fixed_k
            out["mean_k"] = float(self.fixed_k)
        if self.family == "powerlaw":
            out["mean_k"] = PowerLaw(out["gamma"], self.options.powerlaw_kmax).mean()
        return out

    def encode(self, nat: dict) -> np.ndarray:
        x = [float(logit(nat["p"]))]
        if "mean_k" in self.names:
            x.append(math.log(nat["mean_k"] - self.r0))
        if "gamma" in self.names:
            x.append(math.log(nat["gamma"] - 1.0))
        if "r" in self.names:
            x.append(math.log(nat["r"]))
        return np.array(x)

    def jacobian_diag(self, nat: dict) -> np.ndarray:
        d = [nat["p"] * (1.0 - nat["p"])]
        if "mean_k" in self.names:
            d.append(nat["mean_k"] - self.r0)
        if "gamma" in self.names:
            d.append(nat["gamma"] - 1.0)
        if "r" in self.names:
            d.append(nat["r"])
        return np.array(d)

    def model(self, nat: dict) -> DegreeModel:
        f = self.family
        if f == "randommix":
            return RandomMixingLimit()
        if f == "fixed":
            return Fixed(int(nat["k"]))
        if f == "poisson":
            return Poisson(nat["mean_k"])
        if f == "geometric":
            return Geometric(nat["mean_k"])
        if f == "negbinom":
            return NegBinomial(nat["r"], nat["mean_k"])
        return PowerLaw(nat["gamma"], self.options.powerlaw_kmax)

    def epi(self, nat: dict) -> EpidemicParams:
        if self.family == "randommix":
            # beta is immaterial in the limit; alpha + sigma = 1 as elsewhere
            return EpidemicParams(beta=1.0, alpha=0.5, sigma=0.5, p=nat["p"])
        return nondimensionalize(self.r0, nat["mean_k"], nat["p"])

    def start(self) -> np.ndarray:
        nat = {"p": 0.5, "mean_k": self.r0 + 1.5, "gamma": 2.0, "r": 0.5, "k": self.fixed_k}
        if self.family == "powerlaw":
            nat["gamma"] = self._powerlaw_gamma_for_mean(self.r0 + 1.5)
        return self.encode(nat)

    def start_grid(self) -> list:
        """Starting points spread over E[K] and the shape parameter."""
        if len(self.names) == 1:
            return [self.start()]
        grid = []
        for gap in (0.2, 1.5, 6.0, 25.0):
            nat = {"p": 0.5, "mean_k": self.r0 + gap, "k": self.fixed_k}
            if self.family == "powerlaw":
                nat["gamma"] = self._powerlaw_gamma_for_mean(self.r0 + gap)
            for r in ((0.2, 2.0) if self.family == "negbinom" else (None,)):
                grid.append(self.encode(dict(nat, r=r)))
        unique = []
        for x in grid:
            if not any(np.allclose(x, u) for u in unique):
                unique.append(x)
        return unique

    def _powerlaw_gamma_for_mean(self, target: float) -> float:
        k_max = self.options.powerlaw_kmax
        lo, hi = 1.0 + 1e-6, 12.0
        if PowerLaw(lo, k_max).mean() <= self.r0:
            raise ModelConfigError(
                f"no power law on 1..{k_max} has E[K] > R0 = {self.r0:g}; raise k_max")
        if PowerLaw(lo, k_max).mean() <= target:
            return 1.0 + 1e-3
        if PowerLaw(hi, k_max).mean() >= target:
            return hi
        return optimize.brentq(lambda g: PowerLaw(g, k_max).mean() - target, lo, hi, xtol=1e-10)


def resolve_model(family: str, r0: float, estimates: dict,
                  powerlaw_kmax: int = DEFAULT_POWERLAW_KMAX):
    """``(EpidemicParams, DegreeModel)`` for natural-scale estimates of a family."""
    opts = FitOptions(powerlaw_kmax=powerlaw_kmax)
    k = estimates.get("k")
    par = _Parameterization(family, r0, opts, None if k is None else int(k))
    nat = dict(estimates)
    if family == "powerlaw":
        nat["mean_k"] = PowerLaw(nat["gamma"], powerlaw_kmax).mean()
    return par.epi(nat), par.model(nat)


def log_likelihood(params: EpidemicParams, model: DegreeModel, mode, data: DetecteeHistogram,
                   *, r0: float | None = None, k_cap: int | None = None,
                   abs_tol: float = 1e-10) -> float:
    """``sum_i n_i log P(T = i)``; ``-inf`` if an observed count has zero probability."""
    pmf = detectee_pmf(params, model, mode, data.max_count, r0=r0, k_cap=k_cap,
                       abs_tol=abs_tol)
    i, n = data.arrays()
    probs = pmf.probs[i]
    if np.any(probs <= 0):
        return -math.inf
    return float(np.dot(n, np.log(probs)))


class _Objective:
    """Log-likelihood as a function of the transformed vector, with caching."""

    def __init__(self, par: _Parameterization, data, mode, abs_tol):
        self.par = par
        self.data = data
        self.mode = mode
        self.abs_tol = abs_tol
        self.cache: dict = {}
        self.n_evals = 0

    def __call__(self, x) -> float:
        key = tuple(float(v) for v in x)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.n_evals += 1
        try:
            nat = self.par.natural(x)
            if nat.get("mean_k", math.inf) <= self.par.r0 and self.par.family != "randommix":
                val = -math.inf
            else:
                val = log_likelihood(self.par.epi(nat), self.par.model(nat), self.mode,
                                     self.data, r0=self.par.r0, k_cap=self.par.options.k_cap,
                                     abs_tol=self.abs_tol)
        except (ValueError, OverflowError, FloatingPointError):
            val = -math.inf
        if not math.isfinite(val):
            val = -math.inf
        self.cache[key] = val
        return val


def gradient_and_hessian(objective: Callable[[np.ndarray], float], x, step: float = 1e-4,
                         hessian_step: float | None = None):
    """Central-difference gradient and symmetrized Hessian of ``objective`` at ``x``.

    The step in coordinate ``j`` is ``step * (1 + |x_j|)``; ``hessian_step``
    overrides it for the second derivatives.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    hs = hessian_step if hessian_step is not None else step

    def f(v):
        val = objective(v)
        if not np.isfinite(val):
            raise DegeneratePointError(f"objective is {val} at probe point {v}")
        return float(val)

    f0 = f(x)
    g = np.zeros(n)
    h1 = step * (1.0 + np.abs(x))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h1[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h1[j])
    h2 = hs * (1.0 + np.abs(x))
    H = np.zeros((n, n))
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = h2[j]
        H[j, j] = (f(x + ej) - 2.0 * f0 + f(x - ej)) / h2[j] ** 2
        for m in range(j + 1, n):
            em = np.zeros(n)
            em[m] = h2[m]
            H[j, m] = (f(x + ej + em) - f(x + ej - em) - f(x - ej + em) + f(x - ej - em)) \
                / (4.0 * h2[j] * h2[m])
            H[m, j] = H[j, m]
    return g, 0.5 * (H + H.T)


def wald_intervals(estimates: Sequence[float], jacobian: Sequence[float], hessian,
                   level: float = 0.95):
    """Delta-method intervals ``est +- z * |d nat/dx| * sqrt(diag((-H)^-1))``.

    ``hessian`` is the Hessian of the log-likelihood in the transformed
    coordinates and ``jacobian`` the derivative of each natural parameter
    with respect to its own transformed coordinate.
    """
    H = np.asarray(hessian, dtype=float)
    eig = np.linalg.eigvalsh(H)
    if not np.all(eig < 0):
        raise NotNegativeDefiniteError(
            f"Hessian is not negative definite (eigenvalues {eig}); use a profile interval")
    cov = np.linalg.inv(-H)
    z = stats.norm.ppf(0.5 + level / 2.0)
    se = np.abs(np.asarray(jacobian)) * np.sqrt(np.diag(cov))
    est = np.asarray(estimates, dtype=float)
    return list(zip(est - z * se, est + z * se))


def wald_ci(fit: FitResult, level: float = 0.95) -> dict:
    """Wald intervals of the fitted parameters on their natural scale.

    Raises
    ------
    NotNegativeDefiniteError
        If ``-H`` is not positive definite; fall back to
        :func:`profile_ci_mean_k`.
    """
    par = _Parameterization(fit.family, fit.r0, fit.options, fit.estimates.get("k"))
    nat = fit.estimates
    names = par.names
    jac = par.jacobian_diag(nat)
    ivs = wald_intervals([nat[k] for k in names], jac, fit.hessian, level)
    out = dict(zip(names, ivs))
    if fit.family == "powerlaw":
        # E[K] is a derived quantity; carry the gamma interval through its derivative
        g = nat["gamma"]
        h = 1e-5 * g
        k_max = fit.options.powerlaw_kmax
        dm = (PowerLaw(g + h, k_max).mean() - PowerLaw(g - h, k_max).mean()) / (2 * h)
        lo, hi = out["gamma"]
        half = abs(dm) * (hi - lo) / 2.0
        out["mean_k"] = (nat["mean_k"] - half, nat["mean_k"] + half)
    return out


def _newton_polish(obj, x, options, max_iter=8):
    """A few damped Newton steps on the log-likelihood from ``x``."""
    f0 = obj(x)
    for _ in range(max_iter):
        try:
            g, H = gradient_and_hessian(obj, x, options.fd_step, options.hessian_step)
        except DegeneratePointError:
            return x
        if np.max(np.abs(g)) < 1e-7:
            return x
        eig = np.linalg.eigvalsh(H)
        if not np.all(eig < 0):
            return x
        dx = -np.linalg.solve(H, g)
        t = 1.0
        while t > 1e-4:
            xn = x + t * dx
            fn = obj(xn)
            # near the optimum the gain is below the rounding of a large ll sum
            if fn >= f0 - 8 * np.finfo(float).eps * abs(f0):
                x, f0 = xn, fn
                break
            t *= 0.5
        else:
            return x
    return x


def _screen(obj, x):
    """Best tracing probability with the other coordinates of ``x`` held fixed."""
    res = optimize.minimize_scalar(lambda t: -obj(np.concatenate([[t], x[1:]])),
                                   bounds=(-8.0, 8.0), method="bounded",
                                   options={"xatol": 1e-3})
    return -float(res.fun), np.concatenate([[res.x], x[1:]])


def _optimize(obj, par: _Parameterization, options: FitOptions):
    rng = np.random.default_rng(options.seed)
    # the likelihood can have a second mode at the R0 boundary, so screen a grid first
    screened = sorted((_screen(obj, x) for x in par.start_grid()), key=lambda t: -t[0])
    starts = [x for ll, x in screened[:2] if np.isfinite(ll)] or [par.start()]
    best_x = starts[0]
    starts += [best_x + rng.normal(0.0, 1.0, size=len(best_x)) for _ in range(options.restarts)]
    best = None
    for s in starts:
        with np.errstate(invalid="ignore"):
            # infeasible vertices are +inf; scipy's spread check then sees inf - inf
            res = optimize.minimize(lambda v: -obj(v), s, method="Nelder-Mead",
                                    options={"maxiter": options.maxiter, "fatol": options.fatol,
                                             "xatol": 1e-7, "adaptive": len(s) > 2})
        if best is None or res.fun < best.fun:
            best = res
    return best


def _mean_capped(par: _Parameterization, options: FitOptions, obj: _Objective):
    """Wrap the objective so that E[K] beyond ``mean_cap`` is infeasible."""
    if "mean_k" not in par.names:
        return obj
    cap_x = math.log(options.mean_cap - par.r0)

    def capped(x):
        if x[1] > cap_x:
            return -math.inf
        return obj(x)

    capped.cache = obj.cache  # type: ignore[attr-defined]
    return capped


def _fit_continuous(data, par, mode, options) -> FitResult:
    loop_obj = _Objective(par, data, mode, options.loop_abs_tol)
    search = _mean_capped(par, options, loop_obj)
    res = _optimize(search, par, options)
    final_obj = _Objective(par, data, mode, options.final_abs_tol)
    x = np.asarray(res.x, dtype=float)
    nat = par.natural(x)
    message = ""
    at_cap = "mean_k" in par.names and nat["mean_k"] > 0.98 * options.mean_cap
    at_boundary = "mean_k" in nat and nat["mean_k"] - par.r0 < options.boundary_tol
    if not (at_cap or at_boundary):
        x = _newton_polish(final_obj, x, options)
        nat = par.natural(x)
    ll = final_obj(x)
    try:
        grad, _ = gradient_and_hessian(final_obj, x, options.fd_step)
        _, hess = gradient_and_hessian(final_obj, x, options.hessian_step)
    except DegeneratePointError as exc:
        grad = np.full(len(x), np.nan)
        hess = np.full((len(x), len(x)), np.nan)
        message = str(exc)
    gnorm = float(np.max(np.abs(grad))) if np.all(np.isfinite(grad)) else math.inf
    negdef = bool(np.all(np.isfinite(hess)) and np.all(np.linalg.eigvalsh(hess) < 0))
    if not math.isfinite(ll):
        status = FitStatus.NOT_CONVERGED
        message = "no feasible parameter point found"
    elif at_cap:
        status = FitStatus.NOT_CONVERGED
        message = (f"E[K] kept increasing up to the cap {options.mean_cap:g}; "
                   "estimates are reported at the cap")
    elif at_boundary:
        status = FitStatus.BOUNDARY_MAXIMUM
        message = f"maximum at the lower boundary E[K] -> R0 = {par.r0:g}"
    elif nat["p"] > 1.0 - P_EDGE_TOL:
        status = FitStatus.BOUNDARY_MAXIMUM
        message = "maximum at the boundary p -> 1"
    elif not res.success:
        status = FitStatus.NOT_CONVERGED
        message = message or str(res.message)
    elif gnorm < options.grad_tol and negdef:
        status = FitStatus.CONVERGED
        beyond = _untruncated_at_mean_cap(par, data, mode, options, x)
        if beyond is not None and beyond > ll:
            status = FitStatus.NOT_CONVERGED
            message = (f"maximum is produced by the degree cap k <= {options.k_cap}: without "
                       f"it the log-likelihood at E[K] = {options.mean_cap:g} is {beyond:.3f} "
                       f"> {ll:.3f}, so E[K] keeps increasing")
    else:
        status = FitStatus.NOT_CONVERGED
        message = message or (f"optimality check failed: |grad| = {gnorm:.2e}, "
                              f"Hessian negative definite: {negdef}")
    return FitResult(
        family=par.family, r0=par.r0, mode=mode, estimates=nat, x=x, ll_max=ll,
        aic=aic_value(ll, N_PARAMS[par.family]), n_params=N_PARAMS[par.family],
        gradient=grad, gradient_norm=gnorm, hessian=hess, status=status, message=message,
        param_names=par.names, k_cap=options.k_cap, n_obs=data.n, data_digest=data.digest(),
        n_evals=loop_obj.n_evals + final_obj.n_evals, options=options)


def _untruncated_at_mean_cap(par, data, mode, options, x) -> float | None:
    """Profile log-likelihood at E[K] = mean_cap with the degree cap removed.

    A maximum found under the cap ``k <= k_cap`` is only credible if the
    untruncated likelihood does not keep climbing in E[K]. Returns ``None``
    when the check does not apply.
    """
    if options.k_cap is None or "mean_k" not in par.names:
        return None
    par_u = _Parameterization(par.family, par.r0, replace(options, k_cap=None))
    obj = _Objective(par_u, data, mode, options.loop_abs_tol)
    rest = [math.log(options.mean_cap - par.r0)] + [float(v) for v in x[2:]]
    res = optimize.minimize_scalar(lambda t: -obj(np.array([t] + rest)),
                                   bracket=(x[0] - 0.5, x[0] + 0.5), options={"xtol": 1e-5})
    return -float(res.fun) if np.isfinite(res.fun) else None


def aic_value(ll: float, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * ll


def _fit_fixed(data, r0, mode, options) -> FitResult:
    if options.fix_mean_k is not None:
        ks = [int(round(options.fix_mean_k))]
    else:
        lo = max(2, math.floor(r0) + 1)
        ks = list(range(lo, options.fixed_k_max + 1))
    need = data.max_count - (1 if mode is TracingMode.FULL else 0)
    feasible = [k for k in ks if k >= need and k > r0]
    if not feasible:
        raise ModelConfigError(
            f"observed count {data.max_count} exceeds every admissible fixed degree "
            f"(searched k <= {max(ks) if ks else 'none'})")
    best = None
    for k in feasible:
        fit = _fit_continuous(data, _Parameterization("fixed", r0, options, k), mode, options)
        if best is None or fit.ll_max > best.ll_max:
            best = fit
    return best


def fit_mle(data: DetecteeHistogram, family: str, r0: float, mode="forward",
            options: FitOptions | None = None, *, profile: bool | None = None) -> FitResult:
    """Maximize the detectee log-likelihood over ``p`` and the degree parameters.

    Parameters
    ----------
    data
        Observed histogram.
    family
        One of ``randommix, fixed, poisson, geometric, powerlaw, negbinom``.
    r0
        Basic reproduction number; fixed, never estimated.
    mode
        ``"forward"`` or ``"full"`` tracing.
    options
        :class:`FitOptions`; by default degree sums are cut at ``k <= 200``.
    profile
        Compute the profile interval of E[K]. Defaults to doing so whenever
        the Wald interval is unavailable or the fit sits on the R0 boundary.

    Notes
    -----
    A coarse grid of starting points is screened by maximizing over ``p``
    alone; Nelder-Mead then runs from the two best of them and from
    ``options.restarts`` perturbations of the best, and the winner is
    polished with damped Newton steps on finite-difference derivatives. The returned status is ``boundary_maximum`` if E[K] ends
    within ``boundary_tol`` of R0 and ``not_converged`` if E[K] runs to
    ``mean_cap`` or the optimality check fails.
    """
    options = options or FitOptions()
    mode = TracingMode.parse(mode)
    if family == "fixed":
        fit = _fit_fixed(data, r0, mode, options)
    else:
        fit = _fit_continuous(data, _Parameterization(family, r0, options), mode, options)
    if fit.status is FitStatus.BOUNDARY_MAXIMUM:
        fit.wald_error = "maximum on a parameter boundary; the Wald interval does not apply"
    else:
        try:
            fit.wald_ci = wald_ci(fit)
        except (NotNegativeDefiniteError, np.linalg.LinAlgError) as exc:
            fit.wald_error = str(exc)
    do_profile = profile
    if do_profile is None:
        do_profile = (fit.status is FitStatus.BOUNDARY_MAXIMUM
                      or (fit.wald_ci is None and fit.status is not FitStatus.NOT_CONVERGED))
    if do_profile and "mean_k" in fit.param_names:
        fit.profile_ci_mean_k = profile_ci_mean_k(data, family, r0, mode, fit)
    return fit


def profile_ci_mean_k(data: DetecteeHistogram, family: str, r0: float, mode,
                      fit: FitResult, drop: float = 2.0, tol: float = 1e-3,
                      upper_limit: float = 1e4) -> tuple:
    """Interval of E[K] whose profile log-likelihood stays above ``ll_max - drop``.

    The tracing probability is re-maximized at each E[K]; other shape
    parameters are held at their estimates. Endpoints are located by
    bisection to ``tol``. The lower end is R0 if the profile never drops
    below the threshold there; the upper end is ``inf`` if it does not
    drop before ``upper_limit``.
    """
    mode = TracingMode.parse(mode)
    if family not in ("poisson", "geometric", "negbinom"):
        raise ValueError(f"profile interval for E[K] is not available for {family!r}")
    opts = replace(fit.options, fix_mean_k=None)
    par = _Parameterization(family, r0, opts)
    obj = _Objective(par, data, mode, opts.final_abs_tol)
    shape = [math.log(fit.estimates["r"])] if family == "negbinom" else []
    x_p = float(fit.x[0])

    def prof(m):
        nonlocal x_p
        xm = math.log(m - r0)
        res = optimize.minimize_scalar(lambda t: -obj(np.array([t, xm] + shape)),
                                       bracket=(x_p - 0.5, x_p + 0.5),
                                       options={"xtol": 1e-6})
        if np.isfinite(res.fun):
            x_p = float(res.x)
        return -float(res.fun)

    return profile_interval(prof, fit.estimates["mean_k"], fit.ll_max, r0, drop=drop, tol=tol,
                            upper_limit=upper_limit)


def profile_interval(profile: Callable[[float], float], m_hat: float, ll_max: float,
                     lower_limit: float, drop: float = 2.0, tol: float = 1e-3,
                     upper_limit: float = 1e4) -> tuple:
    """Endpoints where ``profile`` falls to ``ll_max - drop`` on either side of ``m_hat``.

    The upper end is searched by doubling the distance to ``lower_limit``
    and then bisected to ``tol``; it is ``inf`` if the profile stays above
    the threshold up to ``upper_limit``. The lower end is ``lower_limit``
    itself if the profile is still above the threshold there.
    """
    target = ll_max - drop
    inside, outside = m_hat, None
    m = m_hat
    while m < upper_limit:
        m = min(lower_limit + 2.0 * (m - lower_limit) if m - lower_limit > 0.5 else m + 1.0,
                upper_limit)
        if profile(m) < target:
            outside = m
            break
        inside = m
    if outside is None:
        upper = math.inf
    else:
        while outside - inside > tol:
            mid = 0.5 * (inside + outside)
            if profile(mid) < target:
                outside = mid
            else:
                inside = mid
        upper = 0.5 * (inside + outside)
    m_low = lower_limit + 1e-6 * max(1.0, abs(lower_limit))
    if m_hat <= m_low or profile(m_low) >= target:
        lower = lower_limit
    else:
        inside, outside = m_hat, m_low
        while inside - outside > tol:
            mid = 0.5 * (inside + outside)
            if profile(mid) < target:
                outside = mid
            else:
                inside = mid
        lower = 0.5 * (inside + outside)
    return (lower, upper)
