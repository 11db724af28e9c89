"""Additive sums of (oblique) trees and the greedy loop that grows them.

One split is committed per iteration: either a new stump or the replacement of
an existing leaf. Candidates for a leaf of tree ``t`` are fitted on the
residuals of all other trees, and after each commit every tree's leaves are
backfitted to the residuals of the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import BINARY, REGRESSION, Dataset, Encoder, MinMaxScaler
from .errors import ConfigError, SchemaError, TaskError, ValidationError
from .split import (
    ObliqueSplit,
    SplitCandidate,
    SplitSearchConfig,
    best_univariate_split,
    impurity_decrease,
    learn_oblique_split,
)

FORMAT_VERSION = 1

OBLIQUE = "oblique"
FIGS = "figs"
MODES = (OBLIQUE, FIGS)

IMPURITY_FLOOR = "ImpurityFloor"
MAX_SPLITS = "MaxSplits"
NO_VALID_SPLIT = "NoValidSplit"

FIGS_DEFAULT_MAX_SPLITS = 20


@dataclass
class Leaf:
    value: float
    rows: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class Internal:
    split: ObliqueSplit
    left: "Leaf | Internal"
    right: "Leaf | Internal"


Node = "Leaf | Internal"


def leaves(node) -> list[Leaf]:
    """Leaves in left-to-right order; this order defines leaf indices."""
    if isinstance(node, Leaf):
        return [node]
    return leaves(node.left) + leaves(node.right)


def internal_nodes(node) -> list[Internal]:
    if isinstance(node, Leaf):
        return []
    return [node] + internal_nodes(node.left) + internal_nodes(node.right)


def predict_tree(node, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    _route(node, X, np.arange(X.shape[0]), out)
    return out


def _route(node, X, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.value
        return
    go_left = node.split.goes_left(X[idx])
    _route(node.left, X, idx[go_left], out)
    _route(node.right, X, idx[~go_left], out)


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of the greedy tree-sum fit.

    ``beam_size=None`` means all features. ``max_splits=None`` means unbounded
    in oblique mode and 20 in FIGS mode. ``max_trees`` caps the number of trees
    (None for no cap). ``backfit_tol`` and ``backfit_max_passes`` control how
    long the leaf-value backfitting sweeps run after each commit.
    """

    beam_size: int | None = None
    min_imp_dec: float = 0.1
    max_splits: int | None = None
    repetitions: int = 5
    split_search: SplitSearchConfig = field(default_factory=SplitSearchConfig)
    mode: str = OBLIQUE
    seed: int = 0
    max_trees: int | None = None
    backfit_tol: float = 1e-12
    backfit_max_passes: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.min_imp_dec < 0:
            raise ConfigError("min_imp_dec must be >= 0")
        if self.max_splits is not None and self.max_splits < 1:
            raise ConfigError("max_splits must be a positive integer")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be a positive integer")
        if self.beam_size is not None and self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.max_trees is not None and self.max_trees < 1:
            raise ConfigError("max_trees must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    @property
    def split_limit(self) -> float:
        if self.max_splits is not None:
            return self.max_splits
        return FIGS_DEFAULT_MAX_SPLITS if self.mode == FIGS else math.inf

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        doc = dict(doc)
        doc["split_search"] = SplitSearchConfig(**doc.get("split_search", {}))
        return cls(**doc)


@dataclass
class IterationRecord:
    iteration: int
    tree: int | None
    leaf: int | None
    impurity_decrease: float
    repetitions: int
    beam: tuple[int, ...]
    n_candidates: int
    split: ObliqueSplit | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.split is not None:
            d["split"] = {
                "features": list(self.split.features),
                "weights": list(self.split.weights),
                "threshold": self.split.threshold,
            }
        d["target"] = "NewStump" if self.tree is None else [self.tree, self.leaf]
        d["beam"] = list(self.beam)
        return d


@dataclass
class FitReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = NO_VALID_SPLIT

    @property
    def n_splits(self) -> int:
        return len(self.iterations)

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "n_splits": self.n_splits,
            "iterations": [rec.to_dict() for rec in self.iterations],
        }


@dataclass
class TreeSumModel:
    trees: list
    task: str = BINARY
    label_offset: float = 0.5
    n_features: int = 0
    encoder: Encoder | None = None
    scaler: MinMaxScaler | None = None
    fit_config: FitConfig | None = None

    @property
    def feature_names(self) -> list[str]:
        if self.scaler is not None:
            return list(self.scaler.names)
        return [f"x{j}" for j in range(self.n_features)]

    @property
    def n_splits(self) -> int:
        return sum(len(internal_nodes(t)) for t in self.trees)

    def to_dict(self) -> dict:
        cfg = self.fit_config
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "label_offset": self.label_offset,
            "encoder": None if self.encoder is None else self.encoder.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "trees": [_node_to_dict(t) for t in self.trees],
            "n_features": self.n_features,
            "fit_config": None if cfg is None else cfg.to_dict(),
            "seed": None if cfg is None else cfg.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeSumModel":
        try:
            if doc.get("format_version") != FORMAT_VERSION:
                raise SchemaError(f"unsupported model format_version {doc.get('format_version')!r}")
            enc = doc.get("encoder")
            sc = doc.get("scaler")
            cfg = doc.get("fit_config")
            return cls(
                trees=[_node_from_dict(t) for t in doc["trees"]],
                task=doc["task"],
                label_offset=float(doc["label_offset"]),
                n_features=int(doc["n_features"]),
                encoder=None if enc is None else Encoder.from_dict(enc),
                scaler=None if sc is None else MinMaxScaler.from_dict(sc),
                fit_config=None if cfg is None else FitConfig.from_dict(cfg),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed model document: {exc!r}") from exc

    @classmethod
    def from_json(cls, text: str) -> "TreeSumModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("model file must hold a JSON object")
        return cls.from_dict(doc)


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        return {"value": node.value}
    s = node.split
    return {
        "features": list(s.features),
        "weights": list(s.weights),
        "threshold": s.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc):
    if "value" in doc:
        return Leaf(float(doc["value"]))
    split = ObliqueSplit(
        tuple(int(f) for f in doc["features"]),
        tuple(float(w) for w in doc["weights"]),
        float(doc["threshold"]),
    )
    return Internal(split, _node_from_dict(doc["left"]), _node_from_dict(doc["right"]))


def predict_raw(model: TreeSumModel, X) -> np.ndarray:
    """Sum of the trees' leaf values, accumulated in tree order."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise SchemaError(
            f"expected a matrix with {model.n_features} columns, got shape {X.shape}"
        )
    score = np.zeros(X.shape[0])
    for tree in model.trees:
        score += predict_tree(tree, X)
    return score


def predict_proba(model: TreeSumModel, X) -> np.ndarray:
    if model.task != BINARY:
        raise TaskError("predict_proba needs a binary classification model")
    z = predict_raw(model, X)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def predict_class(model: TreeSumModel, X) -> np.ndarray:
    if model.task != BINARY:
        raise TaskError("predict_class needs a binary classification model")
    return (predict_raw(model, X) > 0).astype(int)


def residuals(model: TreeSumModel, exclude, X, y_centered) -> np.ndarray:
    """``y_centered`` minus the predictions of every tree except ``exclude``."""
    X = np.asarray(X, dtype=float)
    if exclude is not None and not 0 <= exclude < len(model.trees):
        raise IndexError(f"tree index {exclude} out of range for {len(model.trees)} trees")
    r = np.array(y_centered, dtype=float)
    for t, tree in enumerate(model.trees):
        if t != exclude:
            r -= predict_tree(tree, X)
    return r


class _Fitter:
    """State of one greedy fit; trees store their training rows in the leaves."""

    def __init__(self, X, y_centered, cfg: FitConfig):
        self.X = X
        self.y = y_centered
        self.cfg = cfg
        self.n, self.d = X.shape
        self.trees: list = []
        self.preds: list[np.ndarray] = []

    # residual bookkeeping uses cached per-tree training predictions
    def _tree_preds(self, tree) -> np.ndarray:
        out = np.empty(self.n)
        for leaf in leaves(tree):
            out[leaf.rows] = leaf.value
        return out

    def _residuals(self, exclude=None) -> np.ndarray:
        r = self.y.copy()
        for t, p in enumerate(self.preds):
            if t != exclude:
                r -= p
        return r

    def _rng(self, *key) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.cfg.seed, *key]))

    def _beam(self, rng) -> tuple[int, ...]:
        k = self.cfg.beam_size or self.d
        return tuple(int(f) for f in np.sort(rng.choice(self.d, size=k, replace=False)))

    def _oblique_candidate(self, r, rows, beam, key, tree=None, leaf=None, reps=1):
        split = learn_oblique_split(
            self.X, r, rows, beam, self.cfg.split_search, rng=self._rng(*key)
        )
        if split is None:
            return None
        dec = impurity_decrease(split, self.X, r, rows)
        if not dec > 0:
            return None
        return SplitCandidate(split, dec, tree, leaf, beam, reps)

    def _univariate_candidate(self, r, rows, tree=None, leaf=None):
        cand = best_univariate_split(self.X, r, rows)
        if cand is None or not cand.impurity_decrease > 0:
            return None
        return replace(cand, tree=tree, leaf=leaf, beam=tuple(range(self.d)))

    def candidates(self, iteration: int) -> list[SplitCandidate]:
        cfg = self.cfg
        found = []
        can_grow = cfg.max_trees is None or len(self.trees) < cfg.max_trees
        all_rows = np.arange(self.n)

        if can_grow:
            r = self._residuals()
            if cfg.mode == FIGS:
                cand = self._univariate_candidate(r, all_rows)
            else:
                beam = self._beam(self._rng(iteration, 0, 0))
                cand = self._oblique_candidate(r, all_rows, beam, (iteration, 0, 0, 0, 0))
            if cand is not None:
                found.append(cand)

        for t, tree in enumerate(self.trees):
            r = self._residuals(exclude=t)
            tree_leaves = leaves(tree)
            if cfg.mode == FIGS:
                for li, leaf in enumerate(tree_leaves):
                    cand = self._univariate_candidate(r, leaf.rows, t, li)
                    if cand is not None:
                        found.append(cand)
                continue
            tree_best = None
            for rep in range(cfg.repetitions):
                beam = self._beam(self._rng(iteration, t + 1, rep + 1))
                for li, leaf in enumerate(tree_leaves):
                    key = (iteration, t + 1, rep + 1, li + 1, 1)
                    cand = self._oblique_candidate(r, leaf.rows, beam, key, t, li, rep + 1)
                    if cand is None:
                        continue
                    found.append(cand)
                    if tree_best is None or cand.impurity_decrease > tree_best:
                        tree_best = cand.impurity_decrease
                if tree_best is not None and tree_best > cfg.min_imp_dec:
                    break
        return found

    @staticmethod
    def select(found: list[SplitCandidate]) -> SplitCandidate:
        def key(c):
            tree_rank = math.inf if c.tree is None else c.tree
            return (-c.impurity_decrease, tree_rank, c.leaf if c.leaf is not None else 0)

        return min(found, key=key)

    def commit(self, cand: SplitCandidate):
        if cand.tree is None:
            r = self._residuals()
            rows = np.arange(self.n)
        else:
            r = self._residuals(exclude=cand.tree)
            rows = leaves(self.trees[cand.tree])[cand.leaf].rows
        go_left = cand.split.goes_left(self.X[rows])
        left_rows, right_rows = rows[go_left], rows[~go_left]
        node = Internal(
            cand.split,
            Leaf(float(r[left_rows].mean()), left_rows),
            Leaf(float(r[right_rows].mean()), right_rows),
        )
        if cand.tree is None:
            self.trees.append(node)
            self.preds.append(self._tree_preds(node))
        else:
            self.trees[cand.tree] = _replace_leaf(self.trees[cand.tree], cand.leaf, node)
            self.preds[cand.tree] = self._tree_preds(self.trees[cand.tree])

    def backfit(self):
        """Sweep trees in order, resetting each leaf to its residual mean."""
        for _ in range(self.cfg.backfit_max_passes):
            change = 0.0
            for t, tree in enumerate(self.trees):
                r = self._residuals(exclude=t)
                for leaf in leaves(tree):
                    new = float(r[leaf.rows].mean())
                    change = max(change, abs(new - leaf.value))
                    leaf.value = new
                self.preds[t] = self._tree_preds(tree)
            if change <= self.cfg.backfit_tol:
                break


def _replace_leaf(tree, index, new_node):
    counter = [index]

    def walk(node):
        if isinstance(node, Leaf):
            if counter[0] == 0:
                counter[0] = -1
                return new_node
            counter[0] -= 1
            return node
        node.left = walk(node.left)
        node.right = walk(node.right)
        return node

    return walk(tree)


def fit(data, cfg: FitConfig | None = None, y=None, task: str | None = None):
    """Grow a tree sum greedily; returns ``(model, report)``.

    ``data`` is a numeric :class:`Dataset`, or a matrix together with ``y``.
    Labels are centred by 0.5 for binary classification.
    """
    cfg = cfg or FitConfig()
    if isinstance(data, Dataset):
        X = data.matrix()
        y = data.labels
        task = data.task
    else:
        X = np.asarray(data, dtype=float)
        task = task or BINARY
    if y is None:
        raise ValidationError("fitting needs labels")
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"X has shape {X.shape} but y has {y.shape[0]} entries")
    n, d = X.shape
    if d == 0:
        raise ValidationError("cannot fit on a dataset without features")
    if task == BINARY and not np.isin(y, (0, 1)).all():
        raise ValidationError("binary labels must be 0 or 1")
    if cfg.mode == OBLIQUE and cfg.beam_size is not None and cfg.beam_size > d:
        raise ConfigError(f"beam_size {cfg.beam_size} exceeds the {d} available features")

    offset = 0.5 if task == BINARY else 0.0
    fitter = _Fitter(X, y - offset, cfg)
    report = FitReport()

    iteration = 0
    while n >= 2 and iteration < cfg.split_limit:
        found = fitter.candidates(iteration)
        if not found:
            report.stop_reason = IMPURITY_FLOOR if _splittable(fitter) else NO_VALID_SPLIT
            break
        best = fitter.select(found)
        if iteration > 0 and not best.impurity_decrease > cfg.min_imp_dec:
            report.stop_reason = IMPURITY_FLOOR
            break
        fitter.commit(best)
        fitter.backfit()
        report.iterations.append(
            IterationRecord(
                iteration,
                best.tree,
                best.leaf,
                best.impurity_decrease,
                best.repetitions,
                best.beam,
                len(found),
                best.split,
            )
        )
        iteration += 1
    else:
        report.stop_reason = MAX_SPLITS if n >= 2 else NO_VALID_SPLIT

    trees = fitter.trees
    if not trees:
        trees = [Leaf(float((y - offset).mean()), np.arange(n))]
    model = TreeSumModel(trees, task, offset, d, fit_config=cfg)
    return model, report


def _splittable(fitter: _Fitter) -> bool:
    if not fitter.trees:
        return fitter.n >= 2
    return any(leaf.rows.size >= 2 for t in fitter.trees for leaf in leaves(t))
