"""Load sampling, dataset labelling, normalisation, losses, metrics and training."""
from .dataset import Dataset, assign_splits, case_arrays, label_dataset, load_dataset, save_dataset
from .experiments import ALUMINIUM, SETUPS, ExperimentSetup, cube_bc, cube_setup, excavation_setup, tube_setup
from .loop import HeldOutEvaluation, TrainReport, check_compatible, evaluate_testset, predict, train
from .metrics import LOSS_KINDS, MetricReport, compute_loss, compute_metrics, loss_tensor, nearest_rank_ids
from .metrics import relative_error_field
from .normalization import MODES, NormalizationSpec
from .sampling import FAMILIES, DewateringFamily, GaussianBodyFamily, LoadCase, TubeFluxFamily, sample_load_cases
from .schedule import LrSchedule, constant, warm_hold_decay

__all__ = [
    "Dataset", "assign_splits", "case_arrays", "label_dataset", "load_dataset", "save_dataset", "ALUMINIUM",
    "SETUPS", "ExperimentSetup", "cube_bc", "cube_setup", "excavation_setup", "tube_setup",
    "HeldOutEvaluation", "TrainReport", "check_compatible", "evaluate_testset", "predict", "train",
    "LOSS_KINDS", "MetricReport", "compute_loss", "compute_metrics", "loss_tensor", "nearest_rank_ids",
    "relative_error_field", "MODES", "NormalizationSpec", "FAMILIES", "DewateringFamily",
    "GaussianBodyFamily", "LoadCase", "TubeFluxFamily", "sample_load_cases", "LrSchedule", "constant",
    "warm_hold_decay",
]
