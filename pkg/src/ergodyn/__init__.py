"""Stationary-regime analysis of SGD training dynamics.

The package treats a fixed-step SGD run as repeated application of a
random map and provides the pieces needed to study where the iterates
settle: objectives with exact per-example gradients, the update map and
trajectory runner, empirical occupation measures with a vanishing-change
test for stationarity, per-iterate diagnostics, and mechanical checkers
for the stability guarantees that weight decay buys.
"""

__version__ = "0.1.0"

from .data import Dataset, load_csv, make_blobs, save_csv
from .diagnostics import (DiagnosticsRecord, GradientStats, diagnose,
                          eos_ratio, epoch_losses, full_quantities, plot_csv,
                          sharpness, write_diagnostics_csv, write_epoch_csv)
from .dynamics import (Schedule, Trajectory, UpdateMap, load_trajectory,
                       run_trajectories, run_trajectory, save_trajectory,
                       sgd_step)
from .measures import (EmpiricalMeasure, Observable, VanishingChangeReport,
                       build_measure, coordinate_observable,
                       grad_norm_observable, hoeffding_envelope,
                       invariance_residual, loss_observable, measure_distance,
                       time_average, vanishing_change, vanishing_change_sweep)
from .objectives import (BatchNormMlpObjective, MlpObjective, MlpSpec,
                         Objective, Quadratic, RegularizedObjective,
                         SinProduct, cross_entropy, hvp, label_log_prob,
                         log_softmax, mlp_forward, operator_norm, softmax)
from .params import ParamVector
from .theorems import (BnReport, CeLemmaReport, CompactDomainReport,
                       InvarianceResult, PreconditionError, SmallerStepReport,
                       check_bn_bounds, check_ce_lemma, check_compact_domain,
                       check_smaller_step, detect_invariance, write_report)

__all__ = [
    "__version__",
    "BatchNormMlpObjective", "BnReport", "CeLemmaReport",
    "CompactDomainReport", "Dataset", "DiagnosticsRecord", "EmpiricalMeasure",
    "GradientStats", "InvarianceResult", "MlpObjective", "MlpSpec",
    "Objective", "Observable", "ParamVector", "PreconditionError",
    "Quadratic", "RegularizedObjective", "Schedule", "SinProduct",
    "SmallerStepReport", "Trajectory", "UpdateMap", "VanishingChangeReport",
    "build_measure", "check_bn_bounds", "check_ce_lemma",
    "check_compact_domain", "check_smaller_step", "coordinate_observable",
    "cross_entropy", "detect_invariance", "diagnose", "eos_ratio",
    "epoch_losses", "full_quantities", "grad_norm_observable",
    "hoeffding_envelope", "hvp", "invariance_residual", "label_log_prob",
    "load_csv", "load_trajectory", "log_softmax", "loss_observable",
    "make_blobs", "measure_distance", "mlp_forward", "operator_norm",
    "plot_csv", "run_trajectories", "run_trajectory", "save_csv",
    "save_trajectory", "sgd_step", "sharpness", "softmax", "time_average",
    "vanishing_change", "vanishing_change_sweep", "write_diagnostics_csv",
    "write_epoch_csv", "write_report",
]
