"""Sweep orchestration: hyperparameter grids over small MLPs, resumable
checkpointed training, measure tables, the width-scaling (double-descent)
experiment, and the prune-vs-perturb experiment."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .data import DatasetSpec, load_dataset
from .evalstats import kendall_tau, StatisticalUndefinedError
from .measures import (
    DEFAULT_MEASURES,
    MeasureContext,
    PER_MODEL_MEASURES,
    SWEEP_MEASURES,
    compute_model_measures,
    compute_sweep_margin_measures,
    default_grid,
    margin_features,
    fit_margin_measures,
)
from .network import mlp_specs
from .pruning import prune_vs_perturb
from .training import TrainConfig, TrainingDivergedError, train_model

AXIS_NAMES = ("width", "depth", "dropout", "weight_decay", "augmentation", "seed")
SCHEMA_VERSION = 1
FAILURE_CAP = 0.2


class SweepFailedError(RuntimeError):
    """Raised when more than FAILURE_CAP of the grid fails to train."""


class ManifestError(ValueError):
    pass


def write_atomic(path, data):
    """Write-to-temporary-then-rename so outputs become visible atomically."""
    mode = "wb" if isinstance(data, bytes) else "w"
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


@dataclass(frozen=True)
class HyperparamConfig:
    width: int
    depth: int
    dropout: float
    weight_decay: float
    augmentation: bool
    seed: int

    def axis_values(self):
        return (
            float(self.width),
            float(self.depth),
            float(self.dropout),
            float(self.weight_decay),
            float(self.augmentation),
            float(self.seed),
        )

    def to_dict(self):
        return {
            "width": self.width,
            "depth": self.depth,
            "dropout": self.dropout,
            "weight_decay": self.weight_decay,
            "augmentation": self.augmentation,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SweepManifest:
    manifest_id: str
    dataset: DatasetSpec
    axes: dict
    train: dict
    measures: tuple = DEFAULT_MEASURES
    beta: float = 0.1
    grid_size: int = 50
    base_seed: int = 2024
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        missing = [a for a in AXIS_NAMES if a not in self.axes]
        if missing:
            raise ManifestError(f"manifest axes missing {missing}")
        if any(len(v) == 0 for v in self.axes.values()):
            raise ManifestError("every axis needs at least one value")
        unknown = [m for m in self.measures
                   if m not in PER_MODEL_MEASURES and m not in SWEEP_MEASURES]
        if unknown:
            raise ManifestError(f"unknown measures {unknown}")

    def grid(self):
        values = [self.axes[a] for a in AXIS_NAMES]
        return [
            HyperparamConfig(
                width=int(w), depth=int(d), dropout=float(p),
                weight_decay=float(wd), augmentation=bool(aug), seed=int(s),
            )
            for w, d, p, wd, aug, s in itertools.product(*values)
        ]

    def model_count(self):
        return int(np.prod([len(v) for v in self.axes.values()]))

    def model_id(self, hp):
        return (
            f"w{hp.width}_d{hp.depth}_p{hp.dropout:g}_wd{hp.weight_decay:g}"
            f"_aug{int(hp.augmentation)}_s{hp.seed}"
        )

    def checkpoint_name(self, hp):
        tag = hashlib.sha256(
            f"{self.manifest_id}|{self.model_id(hp)}".encode()
        ).hexdigest()[:16]
        return f"{self.model_id(hp)}_{tag}.ckpt"

    def model_seed(self, index):
        return int(np.random.SeedSequence([self.base_seed, index]).generate_state(1)[0])

    def train_config(self, hp, index):
        return TrainConfig(
            epochs=int(self.train.get("epochs", 20)),
            batch_size=int(self.train.get("batch_size", 32)),
            learning_rate=float(self.train.get("learning_rate", 0.05)),
            lr_decay_epochs=tuple(self.train.get("lr_decay_epochs", ())),
            lr_decay_factor=float(self.train.get("lr_decay_factor", 0.1)),
            momentum=float(self.train.get("momentum", 0.9)),
            weight_decay=hp.weight_decay,
            augment=hp.augmentation,
            seed=self.model_seed(index),
        )

    def to_json(self):
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "manifest_id": self.manifest_id,
                "dataset": self.dataset.to_dict(),
                "axes": self.axes,
                "train": self.train,
                "measures": list(self.measures),
                "beta": self.beta,
                "grid_size": self.grid_size,
                "base_seed": self.base_seed,
            },
            sort_keys=True,
            indent=1,
        )

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ManifestError(f"unsupported manifest schema_version {version!r}")
        return SweepManifest(
            manifest_id=d["manifest_id"],
            dataset=DatasetSpec.from_dict(d["dataset"]),
            axes={k: list(v) for k, v in d["axes"].items()},
            train=dict(d["train"]),
            measures=tuple(d.get("measures", DEFAULT_MEASURES)),
            beta=float(d.get("beta", 0.1)),
            grid_size=int(d.get("grid_size", 50)),
            base_seed=int(d.get("base_seed", 2024)),
        )


def default_manifest(fast=False, seed=2024):
    """The built-in miniature sweep: 216 MLPs (or a 36-model fast grid)."""
    dataset = DatasetSpec(
        kind="synthetic-gaussian-mixture",
        kappa=4, dim=20, m_train=256, m_test=4096,
        noise=1.0, separation=1.0, label_noise=0.1, seed=7,
    )
    if fast:
        axes = {
            "width": [16, 32, 64],
            "depth": [1, 2, 3],
            "dropout": [0.0, 0.5],
            "weight_decay": [0.0, 0.001],
            "augmentation": [False],
            "seed": [0],
        }
        train = {"epochs": 12, "batch_size": 32, "learning_rate": 0.05,
                 "lr_decay_epochs": [8], "lr_decay_factor": 0.1, "momentum": 0.9}
        manifest_id = "miniature-fast-36"
    else:
        axes = {
            "width": [16, 32, 64],
            "depth": [1, 2, 3],
            "dropout": [0.0, 0.2, 0.5],
            "weight_decay": [0.0, 0.001],
            "augmentation": [False, True],
            "seed": [0, 1],
        }
        train = {"epochs": 30, "batch_size": 32, "learning_rate": 0.05,
                 "lr_decay_epochs": [20, 27], "lr_decay_factor": 0.1, "momentum": 0.9}
        manifest_id = "miniature-216"
    return SweepManifest(
        manifest_id=manifest_id, dataset=dataset, axes=axes, train=train,
        base_seed=seed,
    )


# ---------------------------------------------------------------------------
# run ledger


def append_ledger(path, entry):
    with open(path, "a") as f:
        f.write(json.dumps(entry, sort_keys=True) + "\n")


def read_ledger(path):
    """Last entry per model id (the ledger is append-only)."""
    entries = {}
    if not os.path.exists(path):
        return entries
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                e = json.loads(line)
                entries[e["model_id"]] = e
    return entries


# ---------------------------------------------------------------------------
# training jobs


def _train_one(manifest, index, ckpt_path):
    """Train grid point ``index`` and write its checkpoint. Returns a ledger
    entry dict. Top level so a process pool can pickle it."""
    hp = manifest.grid()[index]
    model_id = manifest.model_id(hp)
    train_set, test_set = load_dataset(manifest.dataset)
    if train_set.inputs.ndim != 2:
        raise ManifestError("the MLP sweep needs flat (m, d) inputs")
    t0 = time.monotonic()
    try:
        specs = mlp_specs(
            train_set.inputs.shape[1], hp.width, hp.depth, train_set.kappa, hp.dropout
        )
        record = train_model(
            specs, train_set.inputs.shape[1:], train_set, test_set,
            manifest.train_config(hp, index),
        )
        record.hyperparams = hp.to_dict()
        record.model_id = model_id
        save_checkpoint(ckpt_path, record)
        return {
            "model_id": model_id,
            "status": "trained",
            "checkpoint": os.path.basename(ckpt_path),
            "digest": file_digest(ckpt_path),
            "wall_time": time.monotonic() - t0,
        }
    except TrainingDivergedError as exc:
        return {
            "model_id": model_id,
            "status": "failed",
            "checkpoint": "",
            "digest": "",
            "wall_time": time.monotonic() - t0,
            "error": str(exc),
        }


@dataclass
class SweepResult:
    manifest: SweepManifest
    records: list
    measure_values: list
    ledger: dict
    n_trained: int = 0
    n_failed: int = 0
    margin_info: dict = field(default_factory=dict)


def run_sweep(manifest, out_dir, workers=1):
    """Train every grid point (resuming from verified checkpoints), compute
    the configured measures, and write the sweep artifacts.

    Outputs in out_dir: manifest.json, ledger.jsonl, checkpoints/,
    measures.csv, measures_aux.json, models.csv. Raises SweepFailedError
    when more than 20% of the grid fails; the artifact CSVs are not written
    in that case.
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    ledger_path = os.path.join(out_dir, "ledger.jsonl")
    write_atomic(os.path.join(out_dir, "manifest.json"), manifest.to_json())

    grid = manifest.grid()
    ledger = read_ledger(ledger_path)
    todo = []
    for index, hp in enumerate(grid):
        model_id = manifest.model_id(hp)
        ckpt_path = os.path.join(ckpt_dir, manifest.checkpoint_name(hp))
        entry = ledger.get(model_id)
        if (
            entry
            and entry["status"] == "trained"
            and os.path.exists(ckpt_path)
            and file_digest(ckpt_path) == entry["digest"]
        ):
            continue
        todo.append((index, ckpt_path))

    if todo:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(
                    pool.map(_train_one, [manifest] * len(todo),
                             [i for i, _ in todo], [p for _, p in todo])
                )
        else:
            results = [_train_one(manifest, i, p) for i, p in todo]
        for entry in results:  # grid order regardless of completion order
            append_ledger(ledger_path, entry)
            ledger[entry["model_id"]] = entry

    n_failed = sum(1 for e in ledger.values() if e["status"] == "failed")
    n_trained = sum(1 for e in ledger.values() if e["status"] == "trained")
    if n_failed > FAILURE_CAP * len(grid):
        raise SweepFailedError(
            f"{n_failed} of {len(grid)} grid points failed to train"
        )

    train_set, test_set = load_dataset(manifest.dataset)
    grid_fracs = default_grid(manifest.grid_size)
    records = []
    contexts = []
    values = []
    for index, hp in enumerate(grid):
        model_id = manifest.model_id(hp)
        entry = ledger.get(model_id)
        if not entry or entry["status"] != "trained":
            continue
        record = load_checkpoint(os.path.join(ckpt_dir, entry["checkpoint"]))
        ctx = MeasureContext(
            train_data=train_set, test_data=test_set,
            beta=manifest.beta, grid=grid_fracs,
            model_seed=manifest.model_seed(index),
        )
        values.extend(compute_model_measures(record, manifest.measures, ctx))
        records.append(record)
        contexts.append(ctx)

    margin_info = {}
    wants_margins = any(m in SWEEP_MEASURES for m in manifest.measures)
    if wants_margins and len(records) >= 10:
        gaps = [r.gap for r in records]
        margin_values, margin_info = compute_sweep_margin_measures(records, contexts, gaps)
        values.extend(mv for mv in margin_values if mv.measure_name in manifest.measures)
    elif wants_margins:
        margin_info = {"skipped": f"only {len(records)} trained models; need >= 10"}

    from .measures import measure_aux_json, measure_table_csv

    write_atomic(os.path.join(out_dir, "measures.csv"), measure_table_csv(values))
    write_atomic(os.path.join(out_dir, "measures_aux.json"), measure_aux_json(values))
    write_atomic(os.path.join(out_dir, "models.csv"), models_csv(records))
    return SweepResult(
        manifest=manifest, records=records, measure_values=values, ledger=ledger,
        n_trained=n_trained, n_failed=n_failed, margin_info=margin_info,
    )


def models_csv(records):
    """Per-model axes, final metrics and the generalization gap."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["model_id", *AXIS_NAMES, "train_ce", "test_ce", "train_err01", "test_err01", "gap"]
    )
    for r in sorted(records, key=lambda r: r.model_id):
        hp = r.hyperparams
        writer.writerow(
            [
                r.model_id,
                hp["width"], hp["depth"], repr(float(hp["dropout"])),
                repr(float(hp["weight_decay"])), int(hp["augmentation"]), hp["seed"],
                repr(float(r.final_train_ce)), repr(float(r.final_test_ce)),
                repr(float(r.final_train_err01)), repr(float(r.final_test_err01)),
                repr(float(r.gap)),
            ]
        )
    return buf.getvalue()


def parse_models_csv(text):
    """Rows of models.csv as dicts with numeric fields."""
    reader = csv.DictReader(io.StringIO(text))
    needed = {"model_id", *AXIS_NAMES, "gap"}
    if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
        raise ValueError(f"models csv missing columns {needed - set(reader.fieldnames or [])}")
    rows = []
    for row in reader:
        parsed = {"model_id": row["model_id"]}
        for key, value in row.items():
            if key != "model_id":
                parsed[key] = float(value)
        rows.append(parsed)
    return rows


# ---------------------------------------------------------------------------
# double descent


DD_MEASURES = (
    "prunability",
    "effective_dimensionality",
    "random_perturbation",
    "frobenius_norm",
    "sum_of_train_losses",
)


def run_double_descent(widths, seeds, dataset=None, train=None, beta=0.1,
                       grid_size=50, z=1.0, base_seed=77):
    """Width-scaling experiment: train one-hidden-layer MLPs per (width, seed),
    compute the flatness/size measures plus output-layer margins, and rank
    each against test cross-entropy and test 0-1 error.

    Returns (rows, tau_rows). With a single width the taus are undefined and
    reported as nan.
    """
    widths = list(widths)
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be ascending")
    dataset = dataset or DatasetSpec(
        kind="synthetic-gaussian-mixture",
        kappa=4, dim=20, m_train=256, m_test=4096,
        noise=1.0, separation=1.0, label_noise=0.2, seed=21,
    )
    train_tpl = train or {"epochs": 40, "batch_size": 32, "learning_rate": 0.05,
                          "lr_decay_epochs": [30], "lr_decay_factor": 0.1,
                          "momentum": 0.9}
    train_set, test_set = load_dataset(dataset)
    rows = []
    records = []
    contexts = []
    index = 0
    for width in widths:
        for seed in range(seeds):
            model_seed = int(
                np.random.SeedSequence([base_seed, index]).generate_state(1)[0]
            )
            cfg = TrainConfig(
                epochs=int(train_tpl.get("epochs", 40)),
                batch_size=int(train_tpl.get("batch_size", 32)),
                learning_rate=float(train_tpl.get("learning_rate", 0.05)),
                lr_decay_epochs=tuple(train_tpl.get("lr_decay_epochs", ())),
                lr_decay_factor=float(train_tpl.get("lr_decay_factor", 0.1)),
                momentum=float(train_tpl.get("momentum", 0.9)),
                seed=model_seed,
            )
            specs = mlp_specs(train_set.inputs.shape[1], width, 1, train_set.kappa)
            record = train_model(specs, train_set.inputs.shape[1:], train_set, test_set, cfg)
            record.model_id = f"dd_w{width}_s{seed}"
            record.hyperparams = {"width": width, "seed": seed}
            ctx = MeasureContext(
                train_data=train_set, test_data=test_set, beta=beta,
                grid=default_grid(grid_size), z=z, model_seed=model_seed,
            )
            row = {
                "model_id": record.model_id,
                "width": width,
                "seed": seed,
                "train_ce": record.final_train_ce,
                "test_ce": record.final_test_ce,
                "train_err01": record.final_train_err01,
                "test_err01": record.final_test_err01,
            }
            for mv in compute_model_measures(record, DD_MEASURES, ctx):
                row[mv.measure_name] = mv.value
            rows.append(row)
            records.append(record)
            contexts.append(ctx)
            index += 1

    # output-layer margin statistics fitted against the test loss
    feats = [margin_features(r, train_set, probes=("output",))[1] for r in records]
    test_ces = [r["test_ce"] for r in rows]
    if len(records) >= 10:
        preds, _, _ = fit_margin_measures(np.vstack(feats), test_ces)
        for row, pred in zip(rows, preds):
            row["margins"] = float(pred)
    else:
        for row, f in zip(rows, feats):
            row["margins"] = float(f[2])  # median output margin

    tau_rows = []
    for name in (*DD_MEASURES, "margins"):
        mu = [row[name] for row in rows]
        try:
            tau_loss = kendall_tau(mu, test_ces)
            tau_err = kendall_tau(mu, [row["test_err01"] for row in rows])
        except StatisticalUndefinedError:
            tau_loss = tau_err = float("nan")
        if len(set(row["width"] for row in rows)) < 2:
            tau_loss = tau_err = float("nan")
        tau_rows.append({"measure": name, "tau_test_loss": tau_loss, "tau_test_error": tau_err})
    return rows, tau_rows


def dd_csv(rows):
    cols = ["model_id", "width", "seed", "train_ce", "test_ce", "train_err01",
            "test_err01", *DD_MEASURES, "margins"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([row["model_id"], row["width"], row["seed"]]
                        + [repr(float(row[c])) for c in cols[3:]])
    return buf.getvalue()


def dd_tau_csv(tau_rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "tau_test_loss", "tau_test_error"])
    for row in tau_rows:
        writer.writerow(
            [row["measure"], repr(float(row["tau_test_loss"])), repr(float(row["tau_test_error"]))]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# prune vs perturb


def run_prune_vs_perturb(sweep_dir, model_ids, fractions, seed=0, match="norm"):
    """Prune-vs-perturb rows for trained models out of a sweep directory."""
    manifest = SweepManifest.from_json(
        open(os.path.join(sweep_dir, "manifest.json")).read()
    )
    ledger = read_ledger(os.path.join(sweep_dir, "ledger.jsonl"))
    train_set, test_set = load_dataset(manifest.dataset)
    rows = []
    for model_id in model_ids:
        entry = ledger.get(model_id)
        if not entry or entry["status"] != "trained":
            raise ValueError(f"model {model_id!r} is not a trained sweep member")
        record = load_checkpoint(os.path.join(sweep_dir, "checkpoints", entry["checkpoint"]))
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, hash_id(model_id)]))
        )
        for row in prune_vs_perturb(record, train_set, test_set, fractions, rng, match=match):
            rows.append({"model_id": model_id, **row})
    return rows


def hash_id(model_id):
    return int(hashlib.sha256(model_id.encode()).hexdigest()[:8], 16)


PVP_COLUMNS = (
    "fraction", "removed_norm", "perturb_norm",
    "delta_train_ce_prune", "delta_test_ce_prune",
    "delta_train_ce_perturb", "delta_test_ce_perturb",
)


def pvp_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model_id", *PVP_COLUMNS])
    for row in rows:
        writer.writerow([row["model_id"]] + [repr(float(row[c])) for c in PVP_COLUMNS])
    return buf.getvalue()
