"""How many contacts does one index case lead to?

Builds the theoretical distribution of detectees per index case for a few
degree laws and checks it against a small stochastic simulation.
"""
import numpy as np

from tracefit import (
    EpidemicParams, Fixed, NegBinomial, Poisson, SimConfig, detectee_pmf, growth_summary,
    simulate_tree,
)

params = EpidemicParams(beta=1.5, alpha=0.5, sigma=0.5, p=0.6)

print("epidemic growth")
for mean_k in (2.0, 4.0, 8.0):
    g = growth_summary(params, mean_k)
    print(f"  E[K]={mean_k:4.1f}  lambda={g.lam:6.3f}  R0={g.r0:5.2f}  age-density rate={g.phi_rate:6.3f}")

print("\nP(T = i) under forward tracing")
models = {"fixed 4": Fixed(4), "poisson 4": Poisson(4.0), "negbinom r=0.5, mean 4": NegBinomial(0.5, 4.0)}
for name, model in models.items():
    pmf = detectee_pmf(params, model, "forward")
    head = " ".join(f"{v:.4f}" for v in pmf.probs[:6])
    print(f"  {name:24s} {head}  mean={pmf.mean():.3f}")

# Backward tracing adds the infector when it is still undiagnosed.
fwd = detectee_pmf(params, Poisson(4.0), "forward")
full = detectee_pmf(params, Poisson(4.0), "full")
print(f"\nmean detectees: forward {fwd.mean():.3f}, full {full.mean():.3f}")

# A 20,000-index-case simulation of the same model.
cfg = SimConfig(params=params, degree=Fixed(4), mode="forward", max_infected=None,
                max_index_cases=20_000, seed=1)
res = simulate_tree(cfg)
values = np.array([r.forward_detected for r in res.records])
emp = np.bincount(values, minlength=6)[:6] / len(values)
theo = detectee_pmf(params, Fixed(4), "forward").probs[:6]
print("\nfixed degree 4, simulated vs theoretical")
for i, (e, t) in enumerate(zip(emp, theo)):
    print(f"  i={i}  sim={e:.4f}  pmf={t:.4f}")
