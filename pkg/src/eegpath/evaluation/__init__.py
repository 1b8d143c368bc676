"""Metrics, rank statistics, power-law scaling fits and cross-validation."""

from .cv import (AccessLog, CvReport, Dataset, DataView, FoldAssignment, ModelSpec,
                 StepResult, cross_validate, cross_validate_suite, leakage_violations,
                 stratified_folds)
from .metrics import SingleClass, acc, auc, rankdata
from .scaling import (NoConvergence, PowerLawFit, TooFewPoints, curve_points, elm_series,
                      fit_power_law, n_db, published_auc_table, published_scaling_reference)
from .stats import (KruskalResult, OutOfRange, adjusted_pairwise, conover_iman, fdr_adjust,
                    kruskal_wallis)
