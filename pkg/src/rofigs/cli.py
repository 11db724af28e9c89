"""``rofigs`` command line: train, predict, evaluate, tune and inspect.

Settings are resolved as built-in defaults < ``--config`` file < environment
(``ROFIGS_SEED``, ``ROFIGS_JOBS``) < command-line flags, and the effective
settings are written next to every artifact.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np
import yaml

from .data import ENCODINGS, TASKS, Dataset, fit_encoder, load_csv, load_fold_file, make_folds, transform
from .errors import ConfigError, RofigsError, SchemaError
from .evaluation import (
    DEFAULT_MIN_IMP_DEC,
    GridSpec,
    cross_validate,
    default_beam_sizes,
    fit_pipeline,
    grid_search,
    model_matrix,
    model_stats,
)
from .model import MODES, FitConfig, Internal, Leaf, TreeSumModel, predict_raw
from .split import SplitSearchConfig

DEFAULTS = {
    "data": None,
    "label": "",
    "task": "binary",
    "encoding": "ohe",
    "mode": "oblique",
    "beam_size": None,
    "min_imp_dec": 0.1,
    "max_splits": None,
    "repetitions": 5,
    "C": 1.0,
    "gd_iterations": 100,
    "learning_rate": 0.05,
    "alpha": 10.0,
    "restarts": 3,
    "sparsify_epsilon": 0.05,
    "seed": 0,
    "folds": 10,
    "fold_file": None,
    "jobs": 1,
    "out_dir": ".",
    "select_on": "val",
    "grid_min_imp_dec": None,
    "grid_beam_size": None,
}

ENV = {"seed": ("ROFIGS_SEED", int), "jobs": ("ROFIGS_JOBS", int)}


def _read_config(path):
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text) if str(path).endswith((".yml", ".yaml")) else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return doc


def resolve(flags: dict, config_path=None) -> dict:
    settings = dict(DEFAULTS)
    settings.update(_read_config(config_path))
    for key, (var, cast) in ENV.items():
        if os.environ.get(var):
            try:
                settings[key] = cast(os.environ[var])
            except ValueError:
                raise ConfigError(f"{var} must be an integer") from None
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def fit_config(settings: dict) -> FitConfig:
    search = SplitSearchConfig(
        C=float(settings["C"]),
        gd_iterations=int(settings["gd_iterations"]),
        learning_rate=float(settings["learning_rate"]),
        alpha=float(settings["alpha"]),
        sparsify_epsilon=float(settings["sparsify_epsilon"]),
        restarts=int(settings["restarts"]),
        seed=int(settings["seed"]),
    )
    return FitConfig(
        beam_size=settings["beam_size"],
        min_imp_dec=float(settings["min_imp_dec"]),
        max_splits=settings["max_splits"],
        repetitions=int(settings["repetitions"]),
        split_search=search,
        mode=settings["mode"],
        seed=int(settings["seed"]),
    )


def _dataset(settings) -> Dataset:
    if not settings["data"]:
        raise ConfigError("no --data given")
    return load_csv(settings["data"], label=settings["label"], task=settings["task"])


def _fold_plan(settings, data: Dataset):
    if settings["fold_file"]:
        return load_fold_file(settings["fold_file"], data.n)
    stratify = data.task == "binary"
    return make_folds(data.n, int(settings["folds"]), data.labels, int(settings["seed"]), stratify)


@contextmanager
def _atomic(path: Path):
    """Write through a temp file in the same directory and rename on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_all(files: dict[Path, str]):
    # render everything first so a failure leaves no artifact behind
    for path, text in files.items():
        with _atomic(path) as fh:
            fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row[c] for c in columns})
    return buf.getvalue()


def _float_list(text, cast=float):
    if text is None or isinstance(text, (list, tuple)):
        return text
    return [cast(v) for v in str(text).split(",") if v.strip()]


def common_options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON or YAML settings file."),
        click.option("--data", help="CSV file with a header row."),
        click.option("--label", help="Label column name (default: last column)."),
        click.option("--task", type=click.Choice(TASKS)),
        click.option("--encoding", type=click.Choice(ENCODINGS), help="Nominal feature encoding."),
        click.option("--mode", type=click.Choice(MODES), help="oblique (RO-FIGS) or figs (univariate baseline)."),
        click.option("--beam-size", type=int, help="Features sampled per split (default: all)."),
        click.option("--min-imp-dec", type=float, help="Minimum impurity decrease to keep splitting."),
        click.option("--max-splits", type=int, help="Split budget (figs mode default: 20)."),
        click.option("--repetitions", type=int, help="Beam resamplings per tree and iteration."),
        click.option("--C", "C", type=float, help="Weight of the impurity term in the split objective."),
        click.option("--gd-iterations", type=int),
        click.option("--learning-rate", type=float),
        click.option("--alpha", type=float, help="Sigmoid steepness of the relaxed split."),
        click.option("--restarts", type=int),
        click.option("--sparsify-epsilon", type=float),
        click.option("--seed", type=int),
        click.option("--out-dir", type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def cv_options(f):
    opts = [
        click.option("--folds", type=int, help="Number of generated folds (default 10)."),
        click.option("--fold-file", type=click.Path(exists=True, dir_okay=False), help="JSON fold indices to replay."),
        click.option("--jobs", type=int, help="Worker processes."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group()
def main():
    """Additive sums of sparse oblique trees for tabular data."""


def _run(fn):
    try:
        fn()
    except RofigsError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@common_options
def train(config_path, **flags):
    """Fit a model on the whole CSV."""

    def go():
        settings = resolve(flags, config_path)
        data = _dataset(settings)
        model, report = fit_pipeline(data, fit_config(settings), settings["encoding"])
        out = Path(settings["out_dir"])
        _write_all(
            {
                out / "model.json": model.to_json(),
                out / "report.json": _dump(report.to_dict()),
                out / "config.json": _dump(settings),
            }
        )
        click.echo(f"{report.n_splits} splits in {len(model.trees)} trees ({report.stop_reason}); wrote {out / 'model.json'}")

    _run(go)


def _load_model(path) -> TreeSumModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read model file: {exc}") from exc
    return TreeSumModel.from_json(text)


def _prediction_data(model: TreeSumModel, path) -> Dataset:
    if model.encoder is None:
        raise SchemaError("model file has no encoder; it was not produced by 'train'")
    schema = model.encoder.schema()
    raw = load_csv(path, label=None, task=model.task, schema=schema)
    by_name = {c.name: c for c in raw.columns}
    for name in model.encoder.input_names:
        if name not in by_name:
            raise SchemaError(f"column {name!r} expected by the model is missing")
    cols = tuple(by_name[name] for name in model.encoder.input_names)
    return Dataset(cols, None, model.task)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Output CSV (default: stdout).")
def predict(model_path, data, out):
    """Score a CSV with a trained model."""

    def go():
        model = _load_model(model_path)
        ds = _prediction_data(model, data)
        raw = predict_raw(model, model_matrix(model, ds))
        if model.task == "binary":
            proba = 0.5 * (1.0 + np.tanh(0.5 * raw))
            rows = [
                {"row": i, "raw_score": repr(float(z)), "proba": repr(float(p)), "class": int(z > 0)}
                for i, (z, p) in enumerate(zip(raw, proba))
            ]
            text = _csv(rows, ["row", "raw_score", "proba", "class"])
        else:
            rows = [{"row": i, "prediction": repr(float(z))} for i, z in enumerate(raw)]
            text = _csv(rows, ["row", "prediction"])
        if out:
            _write_all({Path(out): text})
        else:
            click.echo(text, nl=False)

    _run(go)


@main.command()
@common_options
@cv_options
def evaluate(config_path, **flags):
    """Cross-validated test balanced accuracy and model sizes."""

    def go():
        settings = resolve(flags, config_path)
        data = _dataset(settings)
        plan = _fold_plan(settings, data)
        report = cross_validate(data, fit_config(settings), plan, settings["encoding"], int(settings["jobs"]))
        doc = report.to_dict()
        doc["config"] = settings
        rows = [
            {k: f[k] for k in ("fold", "balanced_accuracy", "n_trees", "n_splits", "avg_features_per_split")}
            for f in doc["folds"]
        ]
        out = Path(settings["out_dir"])
        _write_all(
            {
                out / "metrics.json": _dump(doc),
                out / "folds.csv": _csv(rows, list(rows[0])),
            }
        )
        click.echo(f"balanced accuracy {100 * report.mean:.1f} +- {100 * report.std:.1f} over {plan.k} folds")

    _run(go)


@main.command()
@common_options
@cv_options
@click.option("--grid-min-imp-dec", help="Comma-separated min_imp_dec values.")
@click.option("--grid-beam-size", help="Comma-separated beam sizes (default from d).")
@click.option("--select-on", type=click.Choice(["val", "test"]), help="Split used to rank grid cells.")
def tune(config_path, **flags):
    """Grid search over min_imp_dec x beam_size."""

    def go():
        settings = resolve(flags, config_path)
        data = _dataset(settings)
        plan = _fold_plan(settings, data)
        d = transform(fit_encoder(data, settings["encoding"]), data).d
        mids = _float_list(settings["grid_min_imp_dec"]) or list(DEFAULT_MIN_IMP_DEC)
        beams = _float_list(settings["grid_beam_size"], int) or list(default_beam_sizes(d))
        grid = GridSpec(tuple(mids), tuple(beams))
        best, table = grid_search(
            data, grid, plan, fit_config(settings), settings["encoding"], settings["select_on"], int(settings["jobs"])
        )
        out = Path(settings["out_dir"])
        best_doc = {
            "min_imp_dec": best.min_imp_dec,
            "beam_size": best.beam_size,
            "select_on": settings["select_on"],
            "fit_config": best.to_dict(),
            "config": settings,
        }
        _write_all({out / "grid.csv": _csv(table, list(table[0])), out / "best_config.json": _dump(best_doc)})
        click.echo(f"best: min_imp_dec={best.min_imp_dec} beam_size={best.beam_size} ({len(table)} cells)")

    _run(go)


def format_split(split, names) -> str:
    terms = [f"{w:.4f}*{names[f]}" for f, w in zip(split.features, split.weights) if w != 0.0]
    return f"{' + '.join(terms)} <= {split.threshold:.4f}"


def describe(model: TreeSumModel) -> str:
    names = model.feature_names
    lines = []

    def walk(node, depth):
        pad = "  " * (depth + 1)
        if isinstance(node, Leaf):
            lines.append(f"{pad}value {node.value:.4f}")
            return
        assert isinstance(node, Internal)
        lines.append(f"{pad}{format_split(node.split, names)}")
        walk(node.left, depth + 1)
        walk(node.right, depth + 1)

    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t}:")
        walk(tree, 0)
    stats = model_stats(model)
    lines.append("")
    lines.append(f"trees: {stats.n_trees}")
    lines.append(f"splits: {stats.n_splits}")
    lines.append(f"avg features per split: {stats.avg_features_per_split:.4f}")
    lines.append("feature co-occurrence:")
    for entry in stats.to_dict(names)["feature_cooccurrence"]:
        lines.append(f"  {entry['count']:>4}  {entry['features']}")
    return "\n".join(lines) + "\n"


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
def inspect(model_path):
    """Print the splits, size statistics and feature co-occurrence."""
    _run(lambda: click.echo(describe(_load_model(model_path)), nl=False))


if __name__ == "__main__":
    main()
