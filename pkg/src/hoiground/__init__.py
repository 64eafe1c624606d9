"""Spatially grounded pairwise human-object interaction reasoning.

Library layout:

* :mod:`hoiground.numerics` - softmax / sigmoid / cosine kernels and the
  finite-difference gradient oracle
* :mod:`hoiground.params` - learnable parameters, init, checkpoints
* :mod:`hoiground.grounding` - similarity fields, region masks, importance
  weights, pair queries
* :mod:`hoiground.decoder` - cross-attention interaction decoding and the
  per-class-query baseline
* :mod:`hoiground.interactiveness` - image- and instance-level gates
* :mod:`hoiground.training` - focal loss, analytic backward, gradient descent
* :mod:`hoiground.synthetic` - planted-signal scene generator
* :mod:`hoiground.detection` - proposal filtering and training-free detection
* :mod:`hoiground.evaluation` - mAP with rare/non-rare grouping
* :mod:`hoiground.bench` - efficiency harness with exact pass counters
* :mod:`hoiground.cli` - the ``hoiground`` command
"""

from .decoder import TextEmbeddingBank
from .detection import Detection, DetectorConfig, HOIPrediction, detect, detect_naive
from .grounding import FeatureMap
from .params import ModelParams, init_params, load_checkpoint, save_checkpoint
from .training import ImageSample, TrainConfig, classification_forward, focal_loss, train

__version__ = "0.1.0"

__all__ = [
    "TextEmbeddingBank",
    "Detection",
    "DetectorConfig",
    "HOIPrediction",
    "detect",
    "detect_naive",
    "FeatureMap",
    "ModelParams",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "ImageSample",
    "TrainConfig",
    "classification_forward",
    "focal_loss",
    "train",
    "__version__",
]
