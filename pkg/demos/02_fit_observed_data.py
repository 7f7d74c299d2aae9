"""Fit the degree families to the bundled detectee counts and rank them.

The data are 956 index cases with the number of contacts each one led to
being diagnosed. R0 is treated as known. Expect about a minute on one core.
"""
from tracefit import aic, chi_square_gof, cumulative_compare, detectee_pmf, fit_mle
from tracefit.datasets import karnataka

data = karnataka()
print(f"{data.n} index cases, mean {data.mean():.3f} detectees each\n")

R0 = 2.4
fits = {}
for family in ("negbinom", "powerlaw", "geometric", "poisson", "randommix"):
    fit = fit_mle(data, family, R0, "forward", profile=False)
    fits[family] = fit
    est = ", ".join(f"{k}={v:.4g}" for k, v in fit.estimates.items())
    print(f"{family:10s} {fit.status.value:17s} AIC={fit.aic:9.2f}  {est}")
    if fit.message:
        print(f"{'':10s} note: {fit.message}")

# Intervals for the best-ranked family. At an interior optimum the Wald
# interval comes from the observed information; on the E[K] = R0 boundary
# only the profile interval is meaningful.
best = min((f for f in fits.values() if f.status.value != "not_converged"), key=lambda f: f.aic)
print(f"\nbest by AIC: {best.family}")
if best.wald_ci:
    for name, (lo, hi) in best.wald_ci.items():
        print(f"  Wald 95% {name}: ({lo:.4g}, {hi:.4g})")
if "mean_k" in best.param_names and best.family in ("negbinom", "geometric", "poisson"):
    best = fit_mle(data, best.family, R0, "forward", profile=True)
    lo, hi = best.profile_ci_mean_k
    print(f"  profile 95% E[K]: ({lo:.4g}, {hi:.4g})")

pmf = detectee_pmf(best.params(), best.model(), "forward", k_cap=best.k_cap)
gof = chi_square_gof(data, pmf, best.n_params)
print(f"\nchi-square: statistic {gof.statistic:.2f} on {gof.dof} dof, p = {gof.p_value:.3g}")
for label, obs, exp in gof.bins:
    print(f"  {label:>4s}  observed {obs:4d}  expected {exp:7.2f}")

rows = cumulative_compare(data, pmf)
print("\ncumulative: i, empirical, model")
for i, emp, mod in rows[:6]:
    print(f"  {int(i):2d}  {emp:.4f}  {mod:.4f}")
print(f"\nAIC by hand for {best.family}: {aic(best.ll_max, best.n_params):.2f}")
