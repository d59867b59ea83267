from .checkpoint import Checkpoint, CheckpointError
from .config import GAUGE_KINDS, REGULARIZERS, TrainConfig
from .inverse import InverseFit, fit_inverse_gauge, inverse_loss
from .loop import (
    Dataset,
    EvalResult,
    TrainingDiverged,
    TrainResult,
    build_dataset,
    evaluate,
    gauge_metrics,
    render_views,
    surface_samples,
    train,
)
from .metrics import MetricLog, occupancy_metric, selection_counts, utilization_metric
from .model import GaugeFieldModel
from .optim import Adam, AdamState, adam_state, adam_step

__all__ = [
    "Adam", "AdamState", "Checkpoint", "CheckpointError", "Dataset", "EvalResult", "GAUGE_KINDS",
    "GaugeFieldModel", "InverseFit", "MetricLog", "REGULARIZERS", "TrainConfig", "TrainResult",
    "TrainingDiverged", "adam_state", "adam_step", "build_dataset", "evaluate", "fit_inverse_gauge",
    "gauge_metrics", "inverse_loss", "occupancy_metric", "render_views", "selection_counts",
    "surface_samples", "train", "utilization_metric",
]
