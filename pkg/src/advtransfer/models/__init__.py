from .base import DifferentiableModel, InvertedDropout, ModelEvaluationError, ModelMode, TorchModel
from .ctc import CtcAlignmentError, ctc_loss, ctc_loss_and_grad, greedy_decode
from .registry import (
    DuplicateModelError,
    UnknownModelError,
    load_checkpoint,
    load_model,
    register_adapter,
    registered_models,
    save_checkpoint,
    unregister_adapter,
)
from .toy_classifier import ToyClassifier, kl_to_target
from .toy_ctc import ToyCtcModel

register_adapter(ToyCtcModel.kind, ToyCtcModel)
register_adapter(ToyClassifier.kind, ToyClassifier)

__all__ = [
    "CtcAlignmentError",
    "DifferentiableModel",
    "DuplicateModelError",
    "InvertedDropout",
    "ModelEvaluationError",
    "ModelMode",
    "TorchModel",
    "ToyClassifier",
    "ToyCtcModel",
    "UnknownModelError",
    "ctc_loss",
    "ctc_loss_and_grad",
    "greedy_decode",
    "kl_to_target",
    "load_checkpoint",
    "load_model",
    "register_adapter",
    "registered_models",
    "save_checkpoint",
    "unregister_adapter",
]
