"""Full-reference image quality from permutation-entropy features and a
random-forest regressor."""

__version__ = "0.1.0"

from .entropy import PeConfig, entropy_map, ordinal_pattern, patch_entropy, pattern_table
from .evaluation import (EvalReport, LogisticParams, SignificanceVerdict, apply_logistic,
                         cross_validate, evaluate, f_critical, f_test, fit_logistic,
                         kfold_split, krcc, plcc, rmse, srcc)
from .features import FeatureVector, extract_features, extract_statistics, local_quality_map
from .forest import (ForestConfig, ForestModel, TrainingSet, grid_search, load_model,
                     oob_error, predict, predict_many, save_model, train_forest)
from .image import fuse_gradients, load_image, normalize, read_gray, sobel_gradient, to_grayscale

__all__ = [
    "PeConfig", "entropy_map", "ordinal_pattern", "patch_entropy", "pattern_table",
    "EvalReport", "LogisticParams", "SignificanceVerdict", "apply_logistic", "cross_validate",
    "evaluate", "f_critical", "f_test", "fit_logistic", "kfold_split", "krcc", "plcc", "rmse",
    "srcc", "FeatureVector", "extract_features", "extract_statistics", "local_quality_map",
    "ForestConfig", "ForestModel", "TrainingSet", "grid_search", "load_model", "oob_error",
    "predict", "predict_many", "save_model", "train_forest", "fuse_gradients", "load_image",
    "normalize", "read_gray", "sobel_gradient", "to_grayscale",
]
