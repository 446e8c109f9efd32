"""Learning-to-optimize for distribution grid reconfiguration.

A neural network predicts switch states and a subset of the power-flow
variables; physics-informed rounding and a closed-form completion turn the
prediction into a radial topology with exactly satisfied flow equations.
An exhaustive oracle supplies optimal labels and the baseline regimes.
"""
from .completion import CompletionModel, DecisionVector, IndexMap, complete
from .errors import GridReconfError
from .experiment import ExperimentConfig, power_system_report, run_experiment
from .feeders import bw33, load_named_grid, tpc94
from .grid import GridModel, Line, PowerState, TopologyState, cutoff_L, distflow_residuals, is_radial
from .metrics import MetricsRecord, eval_metrics
from .model import Committee, Predictor, TrainConfig, train_committee
from .oracle import brute_force_optimum, check_feasibility, enumerate_radial, export_warmstart, label_dataset
from .phyr import insi, phyr_round
from .scenarios import Dataset, DatasetSpec, build_dataset, split_dataset

__version__ = "0.1.0"

__all__ = [
    "Committee", "CompletionModel", "Dataset", "DatasetSpec", "DecisionVector", "ExperimentConfig", "GridModel",
    "GridReconfError", "IndexMap", "Line", "MetricsRecord", "PowerState", "Predictor", "TopologyState",
    "TrainConfig", "brute_force_optimum", "build_dataset", "bw33", "check_feasibility", "complete", "cutoff_L",
    "distflow_residuals", "enumerate_radial", "eval_metrics", "export_warmstart", "insi", "is_radial",
    "label_dataset", "load_named_grid", "phyr_round", "power_system_report", "run_experiment", "split_dataset",
    "tpc94", "train_committee",
]
