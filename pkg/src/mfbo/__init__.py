"""Multi-fidelity Bayesian optimization toolkit.

Gaussian-process surrogates (single and multi-fidelity), acquisition
functions, optimization loops and a small benchmark harness.
"""
from ._accel import BACKEND
from .acquisition import (AcquisitionState, acq_cei, acq_ei, acq_kg, acq_lcb, acq_mf_heuristic,
                          acq_pi, acq_wei, fidelity_query, get_acquisition, ts_sample_model)
from .gp import BoxDomain, GPModel, KernelSpec, TrainingError, build_gp, fit_gp, predict_gp
from .mvgp import MVGPModel, build_mvgp, fit_mvgp
from .optimize import (ALState, AcquisitionSpec, MaximizerConfig, RunTrace, maximize_acquisition,
                       run_augmented_lagrangian, run_generic_bo, run_mf_heuristic, run_mf_no_fidelity,
                       run_mf_sequential, run_ts, ts_constrained_select)
from .surrogates import (FidelityDAG, FidelityDataset, RecursiveMF, fit_augmented, fit_cokriging,
                         fit_gmgp_recursive, fit_hierarchical_kriging, fit_lmc, fit_recursive,
                         fit_surrogate, mf_predict)

__version__ = "0.1.0"
