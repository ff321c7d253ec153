"""Command-line front-end: train, predict, cv, simulate, partitions, filter.

Every command resolves its full configuration (including the seed, drawn
randomly when not given) and logs it as one JSON line on stderr, so any
run can be reproduced bit-exactly from its log.  Exit codes: 0 success,
2 usage or validation problems, 3 internal numeric failure.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
import time

import click
import numpy as np

from . import __version__
from .data_io import (
    CsvSchema,
    filter_features,
    load_dataset,
    load_matrix,
    load_model,
    save_dataset,
    save_model,
)
from .errors import FormatError, NumericError, ValidationError
from .estimator import fit, predict, selected_features
from .partitions import DEFAULT_MAX_CLASSES, build_partition_set
from .simlab import (
    DEPENDENT_SCENARIOS,
    SCENARIOS,
    SimSpec,
    consistency_sweep,
    cross_validate,
    generate,
)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, FormatError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        return int.from_bytes(os.urandom(4), "little")
    return seed


def _log_config(command: str, **params) -> None:
    click.echo(
        "config: " + json.dumps({"command": command, **params}, sort_keys=True),
        err=True,
    )


def _parse_scheme(scheme: str) -> tuple[str, np.ndarray | None]:
    """Split a --scheme value into (name, optional user matrix)."""
    if scheme.startswith("user:"):
        path = scheme.split(":", 1)[1]
        if not path:
            raise ValidationError("--scheme user:<path> needs a file path")
        try:
            matrix = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
        except OSError as exc:
            raise ValidationError(f"cannot read partition matrix: {exc}") from None
        except ValueError as exc:
            raise FormatError(f"{path}: not an integer CSV matrix ({exc})") from None
        return "user", matrix
    return scheme, None


def _label_column(value: str) -> str | int:
    try:
        return int(value)
    except ValueError:
        return value


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


# shared option stacks

def _fit_options(fn):
    for deco in reversed(
        [
            click.option(
                "--penalty",
                default="ebic",
                show_default=True,
                help="Penalty: ebic, bic, aic or custom:<C>.",
            ),
            click.option(
                "--variance",
                type=click.Choice(["equal", "unequal"]),
                default="equal",
                show_default=True,
                help="equal fits multiLDA, unequal fits multiQDA.",
            ),
            click.option(
                "--scheme",
                default="exhaustive",
                show_default=True,
                help="Hypothesis scheme: exhaustive, onevsrest, ordinal or user:<csv>.",
            ),
            click.option(
                "--prior-term",
                type=click.Choice(["log", "plogp"]),
                default="log",
                show_default=True,
                help="Class-prior term in the discriminant score.",
            ),
            click.option(
                "--max-classes",
                type=int,
                default=DEFAULT_MAX_CLASSES,
                show_default=True,
                help="Guard on K for exhaustive enumeration.",
            ),
        ]
    ):
        fn = deco(fn)
    return fn


def _io_options(fn):
    for deco in reversed(
        [
            click.option("--label-col", default="label", show_default=True,
                         help="Label column name (or index for headerless files)."),
            click.option("--no-header", is_flag=True, help="Input CSV has no header row."),
            click.option("--delimiter", default=",", show_default=True),
        ]
    ):
        fn = deco(fn)
    return fn


def _run_options(fn):
    for deco in reversed(
        [
            click.option("--seed", type=int, default=None,
                         help="Random seed; drawn and logged when omitted."),
            click.option("--threads", type=int, default=1, show_default=True,
                         help="Worker threads (0 = all cores); output is thread-count independent."),
        ]
    ):
        fn = deco(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="multida")
def main():
    """multiDA: diagonal discriminant analysis with per-feature
    class-partition hypothesis weighting (multiLDA / multiQDA)."""


@main.command()
@click.argument("training_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="model.json", show_default=True,
              help="Model file to write.")
@click.option("--features-out", default="selected_features.csv", show_default=True,
              help="Selected-features CSV to write.")
@click.option("--threshold", type=float, default=0.5, show_default=True,
              help="Minimum top-hypothesis weight for the selected-features table.")
@_fit_options
@_io_options
@_run_options
@_guarded
def train(training_csv, out, features_out, threshold, penalty, variance, scheme,
          prior_term, max_classes, label_col, no_header, delimiter, seed, threads):
    """Fit a model on a labeled CSV and write it to disk."""
    seed = _resolve_seed(seed)
    scheme_name, user_matrix = _parse_scheme(scheme)
    _log_config(
        "train", input=training_csv, out=out, features_out=features_out,
        threshold=threshold, penalty=penalty, variance=variance, scheme=scheme,
        prior_term=prior_term, max_classes=max_classes, label_col=label_col,
        no_header=no_header, delimiter=delimiter, seed=seed, threads=threads,
    )
    schema = CsvSchema(
        has_header=not no_header,
        label_column=_label_column(label_col) if no_header else label_col,
        delimiter=delimiter,
    )
    data = load_dataset(training_csv, schema)
    model = fit(
        data,
        scheme=scheme_name,
        user_matrix=user_matrix,
        penalty=penalty,
        variance_mode=variance,
        prior_term_mode=prior_term,
        threads=threads,
        max_classes=max_classes,
    )
    save_model(model, out)
    rows = selected_features(model, threshold)
    _write_csv(
        features_out,
        ["feature", "hypothesis", "partition", "weight"],
        [
            (name, m, model.parts.column_label(m), _fmt(w))
            for name, m, w in rows
        ],
    )
    non_null = int(np.sum(np.argmax(model.gamma, axis=1) != 0))
    click.echo(f"n={model.n} p={model.p} K={model.K} M={model.M}")
    click.echo(f"penalty={model.penalty.kind} C={model.penalty.C:.6g} "
               f"variance={model.variance_mode} scheme={model.parts.scheme}")
    click.echo(f"features with non-null argmax: {non_null}")
    click.echo(f"selected (weight >= {threshold:g}): {len(rows)} -> {features_out}")
    click.echo(f"model -> {out}")


@main.command(name="predict")
@click.argument("query_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Fitted model file.")
@click.option("--out", default="predictions.csv", show_default=True)
@_io_options
@_run_options
@_guarded
def predict_cmd(query_csv, model_path, out, label_col, no_header, delimiter,
                seed, threads):
    """Predict labels and class probabilities for query rows."""
    seed = _resolve_seed(seed)
    _log_config(
        "predict", input=query_csv, model=model_path, out=out,
        label_col=label_col, no_header=no_header, delimiter=delimiter,
        seed=seed, threads=threads,
    )
    model = load_model(model_path)
    schema = CsvSchema(
        has_header=not no_header,
        label_column=None if no_header else label_col,
        delimiter=delimiter,
    )
    X, _ = load_matrix(query_csv, schema)
    pred = predict(model, X, threads=threads)
    header = ["label"] + [f"prob_{c}" for c in model.class_labels]
    _write_csv(
        out,
        header,
        [
            [pred.labels[i]] + [_fmt(v) for v in pred.probabilities[i]]
            for i in range(len(pred.labels))
        ],
    )
    click.echo(f"{len(pred.labels)} predictions -> {out}")


@main.command()
@click.argument("training_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--out", default="cv_results.csv", show_default=True)
@_fit_options
@_io_options
@_run_options
@_guarded
def cv(training_csv, folds, trials, out, penalty, variance, scheme, prior_term,
       max_classes, label_col, no_header, delimiter, seed, threads):
    """Repeated stratified k-fold cross-validation on a labeled CSV."""
    seed = _resolve_seed(seed)
    scheme_name, user_matrix = _parse_scheme(scheme)
    _log_config(
        "cv", input=training_csv, folds=folds, trials=trials, out=out,
        penalty=penalty, variance=variance, scheme=scheme, prior_term=prior_term,
        max_classes=max_classes, label_col=label_col, no_header=no_header,
        delimiter=delimiter, seed=seed, threads=threads,
    )
    schema = CsvSchema(
        has_header=not no_header,
        label_column=_label_column(label_col) if no_header else label_col,
        delimiter=delimiter,
    )
    data = load_dataset(training_csv, schema)
    result = cross_validate(
        data, folds, trials, seed=seed, scheme=scheme_name,
        user_matrix=user_matrix, penalty=penalty, variance_mode=variance,
        prior_term_mode=prior_term, threads=threads, max_classes=max_classes,
    )
    _write_csv(
        out,
        ["trial", "fold", "n_test", "n_wrong", "error"],
        [(r.trial, r.fold, r.n_test, r.n_wrong, _fmt(r.error)) for r in result.rows],
    )
    click.echo(f"{trials} x {folds}-fold CV on n={data.n} p={data.p} K={data.K}")
    click.echo(f"mean error {result.mean:.6f} (sd {result.sd:.6f}) -> {out}")


@main.command()
@click.option("--scenario", type=click.Choice(list(SCENARIOS)), required=True)
@click.option("--n", "n_samples", type=int, default=100, show_default=True)
@click.option("--p", "n_features", type=int, default=2000, show_default=True)
@click.option("--k", "n_classes", type=int, default=4, show_default=True)
@click.option("--n-grid", default="50,100,200,500", show_default=True,
              help="Sample sizes for the fs-consistency sweep.")
@click.option("--replicates", type=int, default=20, show_default=True,
              help="Replicates per grid point (fs-consistency).")
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--frac", type=float, default=0.10, show_default=True,
              help="Fraction of discriminative features.")
@click.option("--mean-shift", type=float, default=None,
              help="Group mean shift (default 2 for fs-consistency, else 0.5).")
@click.option("--variance-scale", type=float, default=1.0, show_default=True)
@click.option("--block-size", type=int, default=None,
              help="Covariance block size (default p/10).")
@click.option("--block-density", type=float, default=0.25, show_default=True)
@click.option("--out", default="simulation.csv", show_default=True)
@_fit_options
@_run_options
@_guarded
def simulate(scenario, n_samples, n_features, n_classes, n_grid, replicates,
             folds, trials, frac, mean_shift, variance_scale, block_size,
             block_density, out, penalty, variance, scheme, prior_term,
             max_classes, seed, threads):
    """Run a synthetic scenario: a selection-consistency sweep or a
    cross-validated prediction benchmark, written as tidy CSV."""
    seed = _resolve_seed(seed)
    _log_config(
        "simulate", scenario=scenario, n=n_samples, p=n_features, k=n_classes,
        n_grid=n_grid, replicates=replicates, folds=folds, trials=trials,
        frac=frac, mean_shift=mean_shift, variance_scale=variance_scale,
        block_size=block_size, block_density=block_density, out=out,
        penalty=penalty, variance=variance, prior_term=prior_term,
        max_classes=max_classes, seed=seed, threads=threads,
    )
    if scenario == "fs-consistency":
        try:
            n_values = [int(v) for v in n_grid.split(",") if v.strip()]
        except ValueError:
            raise ValidationError(f"cannot parse --n-grid {n_grid!r}") from None
        rows = consistency_sweep(
            n_values, p=n_features, k=n_classes, replicates=replicates,
            penalty=penalty, variance_mode=variance, mean_shift=mean_shift,
            discriminative_fraction=frac, seed=seed, threads=threads,
        )
        _write_csv(
            out,
            list(rows[0].keys()),
            [[_fmt(v) for v in r.values()] for r in rows],
        )
        click.echo(f"{len(rows)} rows ({replicates} replicates per grid point) -> {out}")
        return
    spec = SimSpec(
        scenario=scenario,
        n=n_samples,
        p=n_features,
        K=n_classes,
        discriminative_fraction=frac,
        mean_shift=mean_shift,
        variance_scale=variance_scale,
        block_size=block_size if scenario in DEPENDENT_SCENARIOS else None,
        block_density=block_density,
        seed=seed,
    )
    data, _ = generate(spec)
    t0 = time.perf_counter()
    result = cross_validate(
        data, folds, trials, seed=seed, penalty=penalty,
        variance_mode=variance, prior_term_mode=prior_term, threads=threads,
        max_classes=max_classes,
    )
    elapsed = time.perf_counter() - t0
    _write_csv(
        out,
        ["scenario", "variance_mode", "trial", "fold", "n_test", "n_wrong", "error"],
        [
            (scenario, variance, r.trial, r.fold, r.n_test, r.n_wrong, _fmt(r.error))
            for r in result.rows
        ],
    )
    click.echo(f"{scenario} n={spec.n} p={spec.p} K={spec.K} variance={variance}")
    click.echo(
        f"mean CV error {result.mean:.6f} (sd {result.sd:.6f}), "
        f"{elapsed:.1f}s -> {out}"
    )


@main.command()
@click.option("--k", "n_classes", type=int, required=True, help="Class count.")
@click.option("--scheme", default="exhaustive", show_default=True,
              help="exhaustive, onevsrest, ordinal or user:<csv>.")
@click.option("--variance", type=click.Choice(["equal", "unequal"]),
              default="equal", show_default=True)
@click.option("--max-classes", type=int, default=DEFAULT_MAX_CLASSES,
              show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the listing to a file instead of stdout.")
@_guarded
def partitions(n_classes, scheme, variance, max_classes, out):
    """Print the hypothesis matrix S with G, nu, z and the allocation
    matrix A for a class count and scheme."""
    scheme_name, user_matrix = _parse_scheme(scheme)
    _log_config("partitions", k=n_classes, scheme=scheme, variance=variance,
                max_classes=max_classes, out=out)
    ps = build_partition_set(
        n_classes, scheme_name, user_matrix=user_matrix,
        variance_mode=variance, max_classes=max_classes,
    )
    lines = [f"scheme={ps.scheme} K={ps.K} M={ps.M} variance={ps.variance_mode}", "S:"]
    for k in range(ps.K):
        lines.append(",".join(str(col[k]) for col in ps.columns))
    lines.append("G: " + ",".join(str(v) for v in ps.G))
    lines.append("nu: " + ",".join(str(v) for v in ps.nu))
    lines.append("z: " + ",".join(str(v) for v in ps.z))
    lines.append("A:")
    for k in range(ps.K):
        lines.append(",".join(str(v) for v in ps.A[k]))
    text = "\n".join(lines)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        click.echo(f"partition listing -> {out}")
    else:
        click.echo(text)


@main.command(name="filter")
@click.argument("training_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--rule", required=True,
              help="zero-mad or class-median-below:<threshold>.")
@click.option("--out", default="filtered.csv", show_default=True)
@click.option("--indices-out", default=None,
              help="Optional CSV mapping kept features to original columns.")
@_io_options
@_guarded
def filter_cmd(training_csv, rule, out, indices_out, label_col, no_header,
               delimiter):
    """Apply a feature-screening rule to a labeled CSV."""
    _log_config("filter", input=training_csv, rule=rule, out=out,
                indices_out=indices_out, label_col=label_col,
                no_header=no_header, delimiter=delimiter)
    schema = CsvSchema(
        has_header=not no_header,
        label_column=_label_column(label_col) if no_header else label_col,
        delimiter=delimiter,
    )
    data = load_dataset(training_csv, schema)
    reduced, kept = filter_features(data, rule)
    save_dataset(reduced, out,
                 label_name=label_col if not no_header else "label",
                 delimiter=delimiter)
    if indices_out:
        _write_csv(
            indices_out,
            ["kept_index", "original_column", "feature"],
            [(i + 1, j + 1, data.feature_names[j]) for i, j in enumerate(kept)],
        )
        click.echo(f"index map -> {indices_out}")
    click.echo(
        f"kept {reduced.p} of {data.p} features (rule {rule}) -> {out}"
    )


if __name__ == "__main__":
    main()
