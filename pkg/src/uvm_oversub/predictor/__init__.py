from .losses import LossConfig, ce_from_logits, loss_ce, loss_lucir, loss_thrash, lucir_lambda, total_loss
from .model import PredictorConfig, PredictorModel, TraceFeatures, WindowBatch, forward
from .train import Trainer, TrainingError, predict_topk
from .vocab import DeltaVocabulary

__all__ = [
    "DeltaVocabulary",
    "LossConfig",
    "PredictorConfig",
    "PredictorModel",
    "TraceFeatures",
    "Trainer",
    "TrainingError",
    "WindowBatch",
    "ce_from_logits",
    "forward",
    "loss_ce",
    "loss_lucir",
    "loss_thrash",
    "lucir_lambda",
    "predict_topk",
    "total_loss",
]
