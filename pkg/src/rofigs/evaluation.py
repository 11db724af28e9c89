"""Evaluation harness: balanced accuracy, cross-validation, the
``min_imp_dec`` x ``beam_size`` grid search, model statistics and rank tables."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.stats import rankdata

from .data import E_OHE, Dataset, FoldPlan, fit_encoder, fit_scaler, scale_matrix, transform
from .errors import RofigsError, SchemaError, UndefinedMetricError, ValidationError
from .model import FitConfig, TreeSumModel, fit, internal_nodes, predict_class, predict_raw

DEFAULT_MIN_IMP_DEC = (0.05, 0.1, 1.0, 5.0, 10.0)


def balanced_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.shape != y_pred.shape:
        raise ValidationError("y_true and y_pred differ in length")
    pos, neg = y_true == 1, y_true == 0
    if not pos.any() or not neg.any():
        raise UndefinedMetricError("balanced accuracy needs both classes in y_true")
    tpr = float((y_pred[pos] == 1).mean())
    tnr = float((y_pred[neg] == 0).mean())
    return (tpr + tnr) / 2.0


# pipeline -------------------------------------------------------------------


def fit_pipeline(train: Dataset, cfg: FitConfig, encoding: str = E_OHE):
    """Encode, min-max scale and fit; the model carries its encoder and scaler."""
    encoder = fit_encoder(train, encoding)
    encoded = transform(encoder, train)
    scaler = fit_scaler(encoded)
    X = scale_matrix(scaler, encoded.matrix())
    model, report = fit(X, cfg, y=train.labels, task=train.task)
    model.encoder = encoder
    model.scaler = scaler
    return model, report


def model_matrix(model: TreeSumModel, data: Dataset) -> np.ndarray:
    """Raw dataset -> the scaled matrix the model was trained on."""
    if model.encoder is None or model.scaler is None:
        if not data.is_numeric:
            raise SchemaError("model has no encoder but the data has nominal columns")
        return data.matrix()
    encoded = transform(model.encoder, data)
    return scale_matrix(model.scaler, encoded.matrix())


def predict_dataset(model: TreeSumModel, data: Dataset) -> np.ndarray:
    return predict_raw(model, model_matrix(model, data))


def _score(model: TreeSumModel, data: Dataset) -> float:
    return balanced_accuracy(data.labels, predict_class(model, model_matrix(model, data)))


# statistics -----------------------------------------------------------------


@dataclass
class ModelStats:
    n_trees: int
    n_splits: int
    avg_features_per_split: float
    feature_cooccurrence: dict[frozenset, int] = field(default_factory=dict)

    def to_dict(self, names=None) -> dict:
        def label(fs):
            idx = sorted(fs)
            return " + ".join(names[i] if names else str(i) for i in idx)

        pairs = sorted(self.feature_cooccurrence.items(), key=lambda kv: (-kv[1], sorted(kv[0])))
        return {
            "n_trees": self.n_trees,
            "n_splits": self.n_splits,
            "avg_features_per_split": self.avg_features_per_split,
            "feature_cooccurrence": [{"features": label(k), "count": v} for k, v in pairs],
        }


def model_stats(model: TreeSumModel) -> ModelStats:
    splits = [node.split for tree in model.trees for node in internal_nodes(tree)]
    counts = Counter(frozenset(s.active_features) for s in splits)
    avg = float(np.mean([len(s.active_features) for s in splits])) if splits else 0.0
    return ModelStats(len(model.trees), len(splits), avg, dict(counts))


def mean_rank(score_table) -> np.ndarray:
    """Average reversed rank per method; rows are methods, columns datasets.

    The best score on a dataset gets rank ``m``; ties share their mean rank.
    """
    scores = np.asarray(score_table, dtype=float)
    if scores.ndim != 2 or np.isnan(scores).any():
        raise ValidationError("score table must be a complete methods x datasets matrix")
    ranks = np.column_stack([rankdata(scores[:, j], method="average") for j in range(scores.shape[1])])
    return ranks.mean(axis=1)


# cross-validation -----------------------------------------------------------


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


@dataclass
class MetricReport:
    scores: list[float]
    stats: list[ModelStats]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def to_dict(self, names=None) -> dict:
        return {
            "mean_balanced_accuracy": self.mean,
            "std_balanced_accuracy": self.std,
            "folds": [
                {"fold": i, "balanced_accuracy": s, **st.to_dict(names)}
                for i, (s, st) in enumerate(zip(self.scores, self.stats))
            ],
        }


def _fold_job(args):
    data, fold_index, fit_rows, score_rows, cfg, encoding = args
    try:
        model, report = fit_pipeline(data.subset(fit_rows), cfg, encoding)
        score = _score(model, data.subset(score_rows))
    except RofigsError as exc:
        raise type(exc)(f"fold {fold_index}: {exc}") from exc
    return score, model_stats(model), report


def _run(jobs, tasks):
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fold_job, tasks))
    return [_fold_job(t) for t in tasks]


def _fit_rows(fold):
    return np.sort(np.concatenate([fold.train, fold.val]))


def cross_validate(
    data: Dataset, cfg: FitConfig, folds: FoldPlan, encoding: str = E_OHE, jobs: int = 1
) -> MetricReport:
    """Fit on train+validation of every fold and score its test split.

    Fold ``i`` uses the seed derived from ``(cfg.seed, i)``.
    """
    tasks = [
        (data, i, _fit_rows(f), f.test, replace(cfg, seed=derive_seed(cfg.seed, i)), encoding)
        for i, f in enumerate(folds.folds)
    ]
    results = _run(jobs, tasks)
    return MetricReport([r[0] for r in results], [r[1] for r in results])


@dataclass(frozen=True)
class GridSpec:
    min_imp_dec: tuple[float, ...]
    beam_size: tuple[int, ...]

    def __post_init__(self):
        if not self.min_imp_dec or not self.beam_size:
            raise ValidationError("grid needs at least one value per axis")

    @classmethod
    def default(cls, d: int, min_imp_dec=DEFAULT_MIN_IMP_DEC) -> "GridSpec":
        return cls(tuple(min_imp_dec), default_beam_sizes(d))

    def cells(self):
        return list(product(self.min_imp_dec, self.beam_size))


def default_beam_sizes(d: int) -> tuple[int, ...]:
    """1, 2, sqrt(d), d/4, d/2 and d, rounded up, clamped to [1, d], deduplicated."""
    if d < 1:
        raise ValidationError("need at least one feature")
    raw = [1, 2, math.ceil(math.sqrt(d)), math.ceil(d / 4), math.ceil(d / 2), d]
    return tuple(sorted({min(max(b, 1), d) for b in raw}))


def grid_search(
    data: Dataset,
    grid: GridSpec,
    folds: FoldPlan,
    base: FitConfig | None = None,
    encoding: str = E_OHE,
    select_on: str = "val",
    jobs: int = 1,
):
    """Score every ``(min_imp_dec, beam_size)`` cell and pick the best.

    With ``select_on="val"`` each fold's train split is fitted and its validation
    split scored; ``"test"`` fits train+validation and scores the test split.
    Ties prefer a smaller beam, then a larger ``min_imp_dec``.
    Returns ``(best_config, table)`` with one dict per cell.
    """
    if select_on not in ("val", "test"):
        raise ValidationError("select_on must be 'val' or 'test'")
    base = base or FitConfig()
    cells = grid.cells()

    splits = []
    for f in folds.folds:
        fit_rows, score_rows = (f.train, f.val) if select_on == "val" else (_fit_rows(f), f.test)
        # one-hot width can differ between folds; beams are clamped to it
        part = data.subset(fit_rows)
        splits.append((fit_rows, score_rows, transform(fit_encoder(part, encoding), part).d))

    tasks = []
    for c, (mid, beam) in enumerate(cells):
        for i, (fit_rows, score_rows, d_fold) in enumerate(splits):
            cfg = replace(
                base,
                min_imp_dec=float(mid),
                beam_size=min(int(beam), d_fold),
                seed=derive_seed(base.seed, c, i),
            )
            tasks.append((data, i, fit_rows, score_rows, cfg, encoding))
    results = _run(jobs, tasks)

    k = folds.k
    table = []
    for c, (mid, beam) in enumerate(cells):
        chunk = results[c * k : (c + 1) * k]
        scores = [r[0] for r in chunk]
        table.append(
            {
                "cell": c,
                "min_imp_dec": float(mid),
                "beam_size": int(beam),
                "mean_balanced_accuracy": float(np.mean(scores)),
                "std_balanced_accuracy": float(np.std(scores)),
                "mean_trees": float(np.mean([r[1].n_trees for r in chunk])),
                "mean_splits": float(np.mean([r[1].n_splits for r in chunk])),
                "mean_features_per_split": float(np.mean([r[1].avg_features_per_split for r in chunk])),
            }
        )
    best = min(
        table, key=lambda row: (-row["mean_balanced_accuracy"], row["beam_size"], -row["min_imp_dec"])
    )
    best_cfg = replace(base, min_imp_dec=best["min_imp_dec"], beam_size=best["beam_size"])
    return best_cfg, table
