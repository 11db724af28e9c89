"""Greedy additive sums of sparse oblique decision trees (RO-FIGS) and the
univariate FIGS baseline."""

from .data import (
    Dataset,
    Encoder,
    FeatureKind,
    FoldPlan,
    MinMaxScaler,
    fit_encoder,
    fit_scaler,
    load_csv,
    load_fold_file,
    make_folds,
    scale,
    transform,
)
from .evaluation import (
    GridSpec,
    MetricReport,
    ModelStats,
    balanced_accuracy,
    cross_validate,
    fit_pipeline,
    grid_search,
    mean_rank,
    model_stats,
    predict_dataset,
)
from .model import (
    FitConfig,
    FitReport,
    TreeSumModel,
    fit,
    predict_class,
    predict_proba,
    predict_raw,
    residuals,
)
from .split import (
    ObliqueSplit,
    SplitSearchConfig,
    best_univariate_split,
    half_norm,
    impurity_decrease,
    learn_oblique_split,
    node_sse,
    smoothed_objective,
)

__version__ = "0.1.0"
