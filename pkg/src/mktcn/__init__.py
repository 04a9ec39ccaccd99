"""Early leak prediction from pipeline telemetry with a dilated causal
convolution network and a Kolmogorov-Arnold classification head."""

__version__ = "0.1.0"

from .datagen import PipelineConfig, TimeSeriesFrame, generate_multiclass, generate_pipeline
from .metrics import MetricsReport, evaluate, macro_metrics
from .model import MktcnModel, ModelConfig
from .preprocess import PcaModel, SerialDataset, fit_pca, prepare
from .train import TrainConfig, load_checkpoint, predict, save_checkpoint, train_model

__all__ = [
    "PipelineConfig", "TimeSeriesFrame", "generate_pipeline", "generate_multiclass",
    "PcaModel", "SerialDataset", "fit_pca", "prepare",
    "MktcnModel", "ModelConfig", "TrainConfig", "train_model", "predict",
    "save_checkpoint", "load_checkpoint", "MetricsReport", "evaluate", "macro_metrics",
]
