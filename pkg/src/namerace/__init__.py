"""Character-level BiLSTM ethnicity classifier for personal names."""

from namerace.encoding import encode_fullname, encode_lastname, normalize
from namerace.inference import BatchRequest, Prediction, predict_batch
from namerace.modelio import load_model, save_model
from namerace.nncore import Model, ModelSpec, model_forward

__all__ = [
    "BatchRequest",
    "Model",
    "ModelSpec",
    "Prediction",
    "encode_fullname",
    "encode_lastname",
    "load_model",
    "model_forward",
    "normalize",
    "predict_batch",
    "save_model",
]
