"""Fit the saturation power law AUC(n) = a - alpha * n^-beta to the bundled
published ELM-subset means and report asymptotes and N_DB.

    python demos/02_scaling_law.py
"""

from eegpath.evaluation import (NoConvergence, elm_series, fit_power_law, n_db,
                                published_scaling_reference)

reference = published_scaling_reference()
print(f"{'model':10s} {'asymptote':>16s} {'published':>10s} {'N_DB (k)':>10s}")
for model in reference:
    try:
        n, auc, _ = elm_series(model)
    except KeyError:
        continue
    fit = fit_power_law(n, auc)
    try:
        ndb = f"{n_db(fit) / 1000:10.0f}"
    except (NoConvergence, ValueError):
        ndb = f"{'-':>10s}"
    flag = "" if fit.converged else "  (not converged)"
    print(f"{model:10s} {fit.asymptote:8.2f} +/- {fit.asymptote_se:5.2f} "
          f"{reference[model]['auc_asymptote']:10.1f} {ndb}{flag}")
