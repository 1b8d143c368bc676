"""Compare models with Kruskal-Wallis, Conover-Iman post-hoc tests and
FDR-adjusted p-values over per-step AUCs.

    python demos/03_model_comparison.py
"""

import numpy as np

from eegpath.evaluation import adjusted_pairwise, kruskal_wallis

rng = np.random.default_rng(0)
# six CV-step AUCs per model, e.g. taken from CvReport files
steps = {"siNet": rng.normal(0.80, 0.01, 6), "miNet": rng.normal(0.83, 0.01, 6),
         "GBE": rng.normal(0.85, 0.01, 6), "META": rng.normal(0.86, 0.01, 6)}
names = list(steps)
samples = [steps[m] for m in names]

kw = kruskal_wallis(samples)
print(f"Kruskal-Wallis H = {kw.statistic:.2f}, p = {kw.pvalue:.4f}")
print("Conover-Iman, FDR-adjusted p-values:")
adj = adjusted_pairwise(samples)
print(" " * 7 + "".join(f"{m:>8s}" for m in names))
for i, m in enumerate(names):
    print(f"{m:7s}" + "".join(f"{adj[i, j]:8.4f}" for j in range(len(names))))
