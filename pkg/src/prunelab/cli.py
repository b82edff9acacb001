"""Command-line surface.

Exit codes: 0 artifact fully written, 2 input error, 3 statistical
undefinedness, 4 training failure cap exceeded. All randomness flows from
--seed; omitting it logs and uses the default.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import os
import sys

import click
import numpy as np

from .checkpoint import CheckpointError
from .data import DataFormatError, DatasetSpec, gen_synthetic
from .evalstats import (
    StatisticalUndefinedError,
    build_eval_report,
    report_meta_json,
    table1_csv,
    table2_csv,
)
from .measures import DEFAULT_MEASURES, parse_measure_table, UnsupportedMeasureError
from .network import ConfigurationError
from .svgplot import PlotInputError, chart_for_kind
from .sweep import (
    AXIS_NAMES,
    ManifestError,
    SweepFailedError,
    SweepManifest,
    dd_csv,
    dd_tau_csv,
    default_manifest,
    parse_models_csv,
    pvp_csv,
    read_ledger,
    run_double_descent,
    run_prune_vs_perturb,
    run_sweep,
    write_atomic,
)
from .training import TrainingDivergedError

INPUT_ERRORS = (
    ManifestError,
    DataFormatError,
    PlotInputError,
    CheckpointError,
    ConfigurationError,
    UnsupportedMeasureError,
    FileNotFoundError,
    KeyError,
    ValueError,
    json.JSONDecodeError,
)


def exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except StatisticalUndefinedError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (SweepFailedError, TrainingDivergedError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(4)
        except INPUT_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def resolve_seed(seed):
    if seed is None:
        click.echo("no --seed given; using default seed 0", err=True)
        return 0
    return int(seed)


def parse_float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def parse_int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


@click.group()
def main():
    """Train model sweeps, compute pruning-based generalization measures, and
    evaluate how well they predict the generalization gap."""


@main.command("dataset-gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--kappa", default=4, show_default=True)
@click.option("--dim", default=20, show_default=True)
@click.option("--m-train", default=256, show_default=True)
@click.option("--m-test", default=4096, show_default=True)
@click.option("--noise", default=1.0, show_default=True)
@click.option("--separation", default=1.0, show_default=True)
@click.option("--label-noise", default=0.0, show_default=True)
@click.option("--seed", default=None, type=int)
@exit_codes
def dataset_gen(out, kappa, dim, m_train, m_test, noise, separation, label_noise, seed):
    """Generate a synthetic Gaussian-mixture dataset as an .npz archive."""
    spec = DatasetSpec(
        kind="synthetic-gaussian-mixture",
        kappa=kappa, dim=dim, m_train=m_train, m_test=m_test,
        noise=noise, separation=separation, label_noise=label_noise,
        seed=resolve_seed(seed),
    )
    train, test = gen_synthetic(spec)
    buf = io.BytesIO()
    np.savez(
        buf,
        x_train=train.inputs, y_train=train.labels,
        x_test=test.inputs, y_test=test.labels,
        meta=np.array(json.dumps(spec.to_dict(), sort_keys=True)),
    )
    write_atomic(out, buf.getvalue())
    click.echo(f"wrote {out} ({train.m} train / {test.m} test samples, {kappa} classes)")


def _load_manifest(manifest_path, fast, seed):
    if manifest_path:
        return SweepManifest.from_json(open(manifest_path).read())
    return default_manifest(fast=fast, seed=resolve_seed(seed) or 2024)


@main.command("sweep-run")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--fast", is_flag=True, help="use the 36-model CI grid")
@click.option("--seed", default=None, type=int, help="base seed for the built-in manifests")
@click.option("--measures", default=None, help="comma-separated measure names")
@click.option("--beta", default=None, type=float, help="prunability tolerance override")
@click.option("--grid-size", default=None, type=int, help="pruning-grid size override")
@click.option("--workers", default=1, show_default=True)
@exit_codes
def sweep_run(manifest_path, out, fast, seed, measures, beta, grid_size, workers):
    """Train the sweep grid (resumable) and write measure/model tables."""
    manifest = _load_manifest(manifest_path, fast, seed)
    if measures:
        manifest = dataclasses.replace(manifest, measures=tuple(measures.split(",")))
    if beta is not None:
        manifest = dataclasses.replace(manifest, beta=beta)
    if grid_size is not None:
        manifest = dataclasses.replace(manifest, grid_size=grid_size)
    result = run_sweep(manifest, out, workers=workers)
    click.echo(
        f"sweep {manifest.manifest_id}: {result.n_trained} trained, "
        f"{result.n_failed} failed; tables in {out}"
    )


@main.command("measure-compute")
@click.option("--sweep", "sweep_dir", required=True, type=click.Path(exists=True))
@click.option("--measures", default=None, help="comma-separated measure names")
@click.option("--beta", default=0.1, show_default=True)
@click.option("--grid-size", default=50, show_default=True)
@click.option("--emit-curves", is_flag=True, help="write per-model pruning-curve CSVs")
@exit_codes
def measure_compute(sweep_dir, measures, beta, grid_size, emit_curves):
    """Recompute measures over an existing sweep directory's checkpoints."""
    manifest = SweepManifest.from_json(open(os.path.join(sweep_dir, "manifest.json")).read())
    manifest = dataclasses.replace(
        manifest,
        measures=tuple(measures.split(",")) if measures else tuple(DEFAULT_MEASURES),
        beta=beta,
        grid_size=grid_size,
    )
    result = run_sweep(manifest, sweep_dir, workers=1)
    if emit_curves:
        curve_dir = os.path.join(sweep_dir, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        n = 0
        for mv in result.measure_values:
            if mv.measure_name != "prunability" or "grid" not in mv.aux:
                continue
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["kept_fraction", "train_ce"])
            for frac, loss in mv.aux["grid"]:
                writer.writerow([repr(float(frac)), repr(float(loss))])
            write_atomic(os.path.join(curve_dir, f"{mv.model_id}.csv"), buf.getvalue())
            n += 1
        click.echo(f"wrote {n} pruning curves to {curve_dir}")
    click.echo(f"recomputed {len(result.measure_values)} measure values in {sweep_dir}")


@main.command("eval-report")
@click.option("--measures", "measures_path", required=True, type=click.Path(exists=True))
@click.option("--gaps", "gaps_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--axes", default=",".join(AXIS_NAMES), show_default=True)
@click.option("--folds", default=10, show_default=True)
@click.option("--min-cell-count", default=5, show_default=True)
@exit_codes
def eval_report(measures_path, gaps_path, out, axes, folds, min_cell_count):
    """Summary and granulated rank-correlation tables from measure/gap CSVs."""
    table = parse_measure_table(open(measures_path).read())
    if not table:
        raise ValueError(f"{measures_path} holds no measure rows")
    model_rows = parse_models_csv(open(gaps_path).read())
    axis_names = [a.strip() for a in axes.split(",") if a.strip()]
    for row in model_rows:
        missing = [a for a in axis_names if a not in row]
        if missing:
            raise ValueError(f"{gaps_path} is missing axis columns {missing}")
    model_ids = [row["model_id"] for row in model_rows]
    gaps = [row["gap"] for row in model_rows]
    axes_matrix = [[row[a] for a in axis_names] for row in model_rows]
    vectors = {}
    for measure, per_model in table.items():
        if all(mid in per_model for mid in model_ids):
            vectors[measure] = [per_model[mid] for mid in model_ids]
        else:
            click.echo(f"skipping {measure}: values missing for some models", err=True)
    if not vectors:
        raise ValueError("no measure covers every model in the gaps table")
    rows = build_eval_report(
        vectors, gaps, axes_matrix, axis_names, folds=folds, min_cell_count=min_cell_count
    )
    os.makedirs(out, exist_ok=True)
    settings = {"axes": axis_names, "folds": folds, "min_cell_count": min_cell_count}
    write_atomic(os.path.join(out, "table1.csv"), table1_csv(rows))
    write_atomic(os.path.join(out, "table2.csv"), table2_csv(rows))
    write_atomic(os.path.join(out, "report_meta.json"), report_meta_json(rows, settings))
    click.echo(f"wrote table1.csv, table2.csv, report_meta.json to {out}")


@main.command("dd-run")
@click.option("--out", required=True, type=click.Path())
@click.option("--widths", default=",".join(str(w) for w in range(1, 17)), show_default=True)
@click.option("--dd-seeds", default=3, show_default=True)
@click.option("--label-noise", default=0.2, show_default=True)
@click.option("--z", default=1.0, show_default=True)
@click.option("--beta", default=0.1, show_default=True)
@click.option("--grid-size", default=50, show_default=True)
@click.option("--fast", is_flag=True, help="short widths list, single seed")
@click.option("--seed", default=None, type=int)
@exit_codes
def dd_run(out, widths, dd_seeds, label_noise, z, beta, grid_size, fast, seed):
    """Width-scaling (double-descent) experiment with per-measure rank table."""
    width_list = parse_int_list(widths)
    seeds = dd_seeds
    train = None
    if fast:
        width_list = [w for w in width_list if w <= 8]
        seeds = 1
        train = {"epochs": 15, "batch_size": 32, "learning_rate": 0.05,
                 "lr_decay_epochs": [10], "lr_decay_factor": 0.1, "momentum": 0.9}
    dataset = DatasetSpec(
        kind="synthetic-gaussian-mixture",
        kappa=4, dim=20, m_train=256, m_test=4096,
        noise=1.0, separation=1.0, label_noise=label_noise, seed=21,
    )
    rows, tau_rows = run_double_descent(
        width_list, seeds, dataset=dataset, train=train, beta=beta,
        grid_size=grid_size, z=z, base_seed=resolve_seed(seed) or 77,
    )
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "dd.csv"), dd_csv(rows))
    write_atomic(os.path.join(out, "dd_tau.csv"), dd_tau_csv(tau_rows))
    click.echo(f"wrote dd.csv and dd_tau.csv to {out}")


@main.command("pvp-run")
@click.option("--sweep", "sweep_dir", required=True, type=click.Path(exists=True))
@click.option("--models", default=None, help="comma-separated model ids (default: first trained)")
@click.option("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", show_default=True)
@click.option("--match", default="norm", type=click.Choice(["norm", "coordinate"]), show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=None, type=int)
@exit_codes
def pvp_run(sweep_dir, models, fractions, match, out, seed):
    """Compare pruning against equal-size random replacement on sweep models."""
    if models:
        model_ids = [m.strip() for m in models.split(",") if m.strip()]
    else:
        ledger = read_ledger(os.path.join(sweep_dir, "ledger.jsonl"))
        trained = sorted(m for m, e in ledger.items() if e["status"] == "trained")
        if not trained:
            raise ValueError(f"no trained models in {sweep_dir}")
        model_ids = trained[:1]
    rows = run_prune_vs_perturb(
        sweep_dir, model_ids, parse_float_list(fractions),
        seed=resolve_seed(seed), match=match,
    )
    write_atomic(out, pvp_csv(rows))
    click.echo(f"wrote {len(rows)} prune-vs-perturb rows to {out}")


@main.command("plot")
@click.option("--table", "table_path", required=True, type=click.Path(exists=True))
@click.option(
    "--kind",
    required=True,
    type=click.Choice(["double-descent", "prune-vs-perturb", "prunability-curve"]),
)
@click.option("--y", "y_columns", default=None, help="columns to plot (double-descent)")
@click.option("--out", required=True, type=click.Path())
@exit_codes
def plot(table_path, kind, y_columns, out):
    """Render a table as a static SVG line chart."""
    with open(table_path) as f:
        rows = list(csv.DictReader(f))
    svg = chart_for_kind(
        rows, kind, y_columns=[c.strip() for c in y_columns.split(",")] if y_columns else None
    )
    write_atomic(out, svg)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
