"""Knowledge graph embedding: dataset handling, negative sampling, eight
scoring models, link-prediction evaluation, TPE tuning and 2-D projection."""

from .data import KgDataset, Triple, Vocab, load_dataset, parse_dataset
from .estimator import KGEModel
from .evaluation import MetricsReport, evaluate
from .models import ModelParams, init_params, registered, score
from .projection import PCAProjector, TSNEProjector, pca_2d, tsne_2d
from .sampler import SamplerConfig
from .training import HyperParams, train
from .tuning import tune

__all__ = [
    "HyperParams", "KGEModel", "KgDataset", "MetricsReport", "ModelParams", "PCAProjector",
    "SamplerConfig", "TSNEProjector", "Triple", "Vocab", "evaluate", "init_params",
    "load_dataset", "parse_dataset", "pca_2d", "registered", "score", "train", "tsne_2d", "tune",
]
__version__ = "0.1.0"
