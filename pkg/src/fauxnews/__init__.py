"""Synthetic multimodal fake-news benchmark forge, detection/reasoning model,
and evaluation harness."""

from .data_model import BBox, Dataset, Domain, ManipClass, NewsSample, load_dataset, save_dataset
from .forge import ForgeConfig, Lexicon, consistency_score, forge_dataset, generate_base
from .model import ModelConfig, NewsModel
from .training import LossWeights, StagePlan, bce_loss, bbox_l1_loss, giou_loss, total_loss, train_stage

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Dataset",
    "Domain",
    "ManipClass",
    "NewsSample",
    "load_dataset",
    "save_dataset",
    "ForgeConfig",
    "Lexicon",
    "consistency_score",
    "forge_dataset",
    "generate_base",
    "ModelConfig",
    "NewsModel",
    "LossWeights",
    "StagePlan",
    "bce_loss",
    "bbox_l1_loss",
    "giou_loss",
    "total_loss",
    "train_stage",
    "__version__",
]
