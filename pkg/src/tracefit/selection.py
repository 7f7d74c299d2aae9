"""Model comparison: AIC, binned chi-square goodness of fit, cumulative tables."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .inference import DetecteeHistogram, aic_value
from .mixture import DetecteePmf

# Counts 0..4 individually, 5-7 pooled, and everything above 7.
DEFAULT_BINS = ((0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 7), (8, None))
MIN_EXPECTED = 1.0
WARN_EXPECTED = 5.0


class BinningError(ValueError):
    pass


class LowExpectedCountWarning(UserWarning):
    pass


def aic(ll: float, n_params: int) -> float:
    """Akaike information criterion ``2k - 2 ll``."""
    if n_params < 1:
        raise ValueError("n_params must be >= 1")
    return aic_value(ll, n_params)


@dataclass(frozen=True)
class GofReport:
    bins: list  # (label, observed, expected)
    statistic: float
    dof: int
    p_value: float

    def to_csv(self) -> str:
        rows = ["bin,observed,expected"]
        rows += [f"{lab},{o},{e:.10g}" for lab, o, e in self.bins]
        rows.append(f"# statistic={self.statistic:.10g} dof={self.dof} p_value={self.p_value:.10g}")
        return "\n".join(rows) + "\n"


def _label(lo, hi):
    if hi is None:
        return f">{lo - 1}"
    return str(lo) if lo == hi else f"{lo}-{hi}"


def chi_square_gof(data: DetecteeHistogram, pmf: DetecteePmf, n_params: int,
                   bins=DEFAULT_BINS) -> GofReport:
    """Pearson chi-square test of ``data`` against a fitted pmf.

    The last bin is open and also receives the pmf's tail mass beyond
    ``pmf.i_max``, so expected counts sum to ``n``. Degrees of freedom are
    ``len(bins) - 1 - n_params``.

    Raises
    ------
    BinningError
        If an expected count falls below 1 or no degrees of freedom remain.
    """
    counts, freqs = data.arrays()
    n = data.n
    out = []
    for lo, hi in bins:
        if hi is None:
            obs = int(freqs[counts >= lo].sum())
            mass = float(pmf.probs[lo:].sum()) + pmf.tail if lo <= pmf.i_max else pmf.tail
        else:
            obs = int(freqs[(counts >= lo) & (counts <= hi)].sum())
            mass = float(pmf.probs[lo:min(hi, pmf.i_max) + 1].sum())
        out.append((_label(lo, hi), obs, n * mass))
    if bins[-1][1] is not None and sum(o for _, o, _ in out) != n:
        raise BinningError("bins do not cover every observation; make the last bin open")
    exp = np.array([e for _, _, e in out])
    obs = np.array([o for _, o, _ in out], dtype=float)
    if np.any(exp < MIN_EXPECTED):
        bad = [lab for lab, _, e in out if e < MIN_EXPECTED]
        raise BinningError(f"expected count below {MIN_EXPECTED} in bins {bad}; use coarser bins")
    if np.any(exp < WARN_EXPECTED):
        warnings.warn("some expected counts are below 5", LowExpectedCountWarning, stacklevel=2)
    dof = len(bins) - 1 - n_params
    if dof < 1:
        raise BinningError(f"no degrees of freedom left ({len(bins)} bins, {n_params} parameters)")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return GofReport(out, stat, dof, float(stats.chi2.sf(stat, dof)))


def cumulative_compare(data: DetecteeHistogram, pmf: DetecteePmf) -> np.ndarray:
    """Rows ``(i, empirical CDF, theoretical CDF)`` for ``i = 0..max(observed, i_max)``."""
    top = max(data.max_count, pmf.i_max)
    i = np.arange(top + 1)
    counts, freqs = data.arrays()
    emp = np.zeros(top + 1)
    np.add.at(emp, counts, freqs)
    emp = np.cumsum(emp) / data.n
    theo = np.cumsum(np.concatenate([pmf.probs, np.zeros(top - pmf.i_max)]))
    return np.column_stack([i, emp, np.minimum(theo, 1.0)])
