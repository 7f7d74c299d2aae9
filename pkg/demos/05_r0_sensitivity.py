"""How much do the estimates depend on the assumed R0?

R0 is not estimated from detectee counts, so it has to be supplied. This
refits the two best families over a range of plausible values. Expect one
to two minutes.
"""
from tracefit import fit_mle
from tracefit.datasets import karnataka

data = karnataka()
print("family     R0    status             p        E[K]     AIC")
for family in ("negbinom", "powerlaw"):
    for r0 in (2.0, 3.0, 4.0, 5.0):
        fit = fit_mle(data, family, r0, "forward", profile=False)
        print(f"{family:9s} {r0:4.1f}   {fit.status.value:17s} {fit.p:7.4f}  "
              f"{fit.mean_k:7.3f}  {fit.aic:8.2f}")
