"""Multi-class learning to help: a server classifier and a rejector trained
around a fixed client classifier."""

from .core import (CostParams, Dataset, GeneralCosts, Route, argmax_label,
                   general_loss, generalized_loss, route_from_scores)
from .models import HybridSystem, ScoreModel, init_model, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "CostParams", "Dataset", "GeneralCosts", "Route", "argmax_label",
    "general_loss", "generalized_loss", "route_from_scores",
    "HybridSystem", "ScoreModel", "init_model", "load_model", "save_model",
]
