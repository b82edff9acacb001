"""Registry of per-model generalization measures plus the sweep-level
margin-regression measures.

Each per-model measure maps a trained ModelRecord (and the data it was
trained on) to one finite scalar; auxiliary payloads (search curves, flags)
ride along for the sidecar JSON. The two margin measures are fitted across a
sweep and are computed after the per-model phase.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .evalstats import _linfit, crossfit_linear
from .network import forward, loss_and_grad, probe_gradients
from .pruning import (
    PerturbationSearchConfig,
    PrunabilitySearchConfig,
    apply_mask,
    default_grid,
    perturbation_robustness,
    prunability,
    network_train_loss_fn,
)


class UnsupportedMeasureError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasureValue:
    measure_name: str
    model_id: str
    value: float
    aux: dict = field(default_factory=dict)


@dataclass
class MeasureContext:
    train_data: object
    test_data: object = None
    beta: float = 0.1
    grid: tuple = field(default_factory=default_grid)
    mc_samples: int = 5
    perturb_epsilon: float = 1e-3
    sigma_lo: float = 1e-3
    sigma_hi: float = 1e2
    delta: float = 0.1
    z: float = 1.0
    hessian_limit: int = 5000
    hessian_step: float = 1e-4
    margin_probes: tuple = ("input", "last_hidden")
    margin_eps: float = 1e-9
    model_seed: int = 0
    cache: dict = field(default_factory=dict)

    def prune_config(self):
        return PrunabilitySearchConfig(beta=self.beta, grid=self.grid, mc_samples=self.mc_samples)

    def rng(self, tag):
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([int(self.model_seed), tag]))
        )


# ---------------------------------------------------------------------------
# helpers


def layer_sq_norms(net):
    """Per parameterized layer: squared two-norm of all of its parameters
    (weight tensor and bias together)."""
    return [float(np.sum(p["W"] ** 2) + np.sum(p["b"] ** 2)) for p in net.params]


def _prunability_cached(record, ctx):
    if "prunability" not in ctx.cache:
        ctx.cache["prunability"] = prunability(
            record, ctx.train_data, ctx.prune_config(), method="magnitude"
        )
    return ctx.cache["prunability"]


def _random_prunability_cached(record, ctx):
    if "random_prunability" not in ctx.cache:
        ctx.cache["random_prunability"] = prunability(
            record, ctx.train_data, ctx.prune_config(), method="random", rng=ctx.rng(0x11)
        )
    return ctx.cache["random_prunability"]


def _curve_aux(result):
    return {
        "baseline_train_ce": result.baseline_train_ce,
        "achieved_train_ce": result.achieved_train_ce,
        "grid": [[float(k), float(v)] for k, v in sorted(result.grid_evaluations.items())],
    }


# ---------------------------------------------------------------------------
# per-model measures


def mu_prunability(record, ctx):
    res = _prunability_cached(record, ctx)
    return MeasureValue("prunability", record.model_id, res.kept_fraction, _curve_aux(res))


def mu_random_prunability(record, ctx):
    res = _random_prunability_cached(record, ctx)
    return MeasureValue("random_prunability", record.model_id, res.kept_fraction, _curve_aux(res))


def mu_random_perturbation(record, ctx):
    cfg = PerturbationSearchConfig(
        beta=ctx.beta,
        epsilon=ctx.perturb_epsilon,
        mc_samples=ctx.mc_samples,
        sigma_lo=ctx.sigma_lo,
        sigma_hi=ctx.sigma_hi,
        seed=ctx.model_seed,
    )
    res = perturbation_robustness(
        network_train_loss_fn(record.network, ctx.train_data),
        record.network.flatten(),
        cfg,
    )
    return MeasureValue(
        "random_perturbation",
        record.model_id,
        res.measure,
        {"sigma": res.sigma, "flag": res.flag},
    )


def mu_frobenius(record, ctx):
    """d * (prod_i ||W_i||_F^2)^(1/d) over the d parameterized layers."""
    norms = layer_sq_norms(record.network)
    d = len(norms)
    if any(v == 0.0 for v in norms):
        return MeasureValue("frobenius_norm", record.model_id, 0.0, {"degenerate": True})
    value = d * float(np.prod(norms)) ** (1.0 / d)
    return MeasureValue("frobenius_norm", record.model_id, value, {})


def mu_sum_of_train_losses(record, ctx):
    return MeasureValue(
        "sum_of_train_losses", record.model_id, -float(np.sum(record.epoch_losses)), {}
    )


def mu_train_loss(record, ctx):
    return MeasureValue("train_loss", record.model_id, float(record.final_train_ce), {})


def mu_parameter_count(record, ctx):
    return MeasureValue("parameter_count", record.model_id, float(record.network.param_count), {})


def mu_sum_two_norms(record, ctx):
    return MeasureValue(
        "sum_two_norms", record.model_id, float(sum(layer_sq_norms(record.network))), {}
    )


def mu_sum_two_norms_pruned(record, ctx):
    res = _prunability_cached(record, ctx)
    pruned = apply_mask(record.network, res.mask)
    return MeasureValue(
        "sum_two_norms_pruned",
        record.model_id,
        float(sum(layer_sq_norms(pruned))),
        {"kept_fraction": res.kept_fraction},
    )


def mu_pruned_parameter_count(record, ctx):
    res = _prunability_cached(record, ctx)
    w = record.network.flatten()
    count = int(np.count_nonzero(np.where(res.mask.kept, w, 0.0)))
    return MeasureValue(
        "pruned_parameter_count",
        record.model_id,
        float(count),
        {"kept_fraction": res.kept_fraction},
    )


# ---------------------------------------------------------------------------
# PAC-Bayes bound


@dataclass(frozen=True)
class PacBayesInputs:
    alpha: float  # fraction of weights pruned (dropout probability)
    squared_two_norm: float
    m: int
    delta: float
    c: int

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.m < 2 or self.c < 1:
            raise ValueError("need m >= 2 and c >= 1")


def pac_bayes_bound(inputs):
    """sqrt(((1 - alpha)/2 ||w||^2 + log(m/delta) + log c) / (2 (m - 1)))."""
    kl = 0.5 * (1.0 - inputs.alpha) * inputs.squared_two_norm
    return math.sqrt(
        (kl + math.log(inputs.m / inputs.delta) + math.log(inputs.c)) / (2.0 * (inputs.m - 1))
    )


def mu_pac_bayes_bound(record, ctx):
    """Bound evaluated at the random-pruning search result: alpha is the
    pruned fraction 1 - kept, matching the bound's dropout derivation."""
    res = _random_prunability_cached(record, ctx)
    w = record.network.flatten()
    inputs = PacBayesInputs(
        alpha=1.0 - res.kept_fraction,
        squared_two_norm=float(np.sum(w**2)),
        m=ctx.train_data.m,
        delta=ctx.delta,
        c=len(ctx.grid),
    )
    return MeasureValue(
        "pac_bayes_bound",
        record.model_id,
        pac_bayes_bound(inputs),
        {"alpha": inputs.alpha, "squared_two_norm": inputs.squared_two_norm},
    )


# ---------------------------------------------------------------------------
# normalized margins


MARGIN_STATS = ("min", "q1", "median", "q3", "max")


def margin_five_stats(values):
    values = np.asarray(values, dtype=np.float64)
    return np.array(
        [
            values.min(),
            np.percentile(values, 25),
            np.percentile(values, 50),
            np.percentile(values, 75),
            values.max(),
        ]
    )


def sample_margins(net, data, probes=("input", "last_hidden"), eps_den=1e-9):
    """Per-sample normalized margins at each probed activation.

    The raw margin is logit[y] minus the largest other logit (misclassified
    samples come out negative); each probe normalizes it by the per-sample
    two-norm of that logit gap's gradient at the probed activation, floored
    by eps_den. probes="per-layer" probes the input plus every hidden
    activation. Returns (raw_margins, {probe: normalized margins}).
    """
    net = net.network if hasattr(net, "network") else net
    if probes == "per-layer":
        probes = ("input", *(f"layer_in:{j}" for j in range(1, net.depth)))
    probes = tuple(probes)
    if net.depth < 2:
        probes = tuple(p for p in probes if p != "last_hidden") or ("input",)
    x = data.inputs
    y = np.asarray(data.labels)
    n = len(y)
    rows = np.arange(n)
    logits = forward(net, x, mode="eval")
    masked = logits.copy()
    masked[rows, y] = -np.inf
    j = np.argmax(masked, axis=1)
    raw = logits[rows, y] - logits[rows, j]
    seed = np.zeros_like(logits)
    seed[rows, y] = 1.0
    seed[rows, j] -= 1.0
    _, grads = probe_gradients(net, x, seed, probes)
    normalized = {}
    for probe in probes:
        gp = grads[probe].reshape(n, -1)
        norms = np.sqrt(np.sum(gp * gp, axis=1))
        normalized[probe] = raw / (norms + eps_den)
    return raw, normalized


def margin_features(record, data, probes=None, eps_den=1e-9):
    """Five order statistics of the normalized-margin distribution per probed
    activation, concatenated. probes="per-layer" probes every hidden
    activation. Returns (feature_names, feature_vector)."""
    if probes is None:
        probes = ("input", "last_hidden")
    _, normalized = sample_margins(record, data, probes=probes, eps_den=eps_den)
    names = []
    feats = []
    for probe, margins in normalized.items():
        for stat_name, value in zip(MARGIN_STATS, margin_five_stats(margins)):
            names.append(f"{probe}_{stat_name}")
            feats.append(float(value))
    return names, np.asarray(feats)


def fit_margin_measures(feature_matrix, gaps, folds=10):
    """Cross-fitted linear predictions of the gap from margin features plus
    the single best feature by absolute standardized coefficient.

    Returns (predictions, best_index, info). Each model's prediction comes
    from the fold that excluded it; the best feature is chosen on the full
    fit. Rank-deficient designs fall back to ridge and are flagged.
    """
    x = np.asarray(feature_matrix, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    if len(gaps) < 10:
        raise UnsupportedMeasureError("margin regression needs at least 10 models")
    preds, fold_ids, flagged = crossfit_linear(x, gaps, folds=folds)
    coef, intercept, flag_full = _linfit(x, gaps)
    std = x.std(axis=0)
    standardized = coef * std
    best_index = int(np.argmax(np.abs(standardized)))
    info = {
        "flagged": bool(flagged or flag_full),
        "fold_ids": fold_ids.tolist(),
        "coefficients": coef.tolist(),
        "intercept": float(intercept),
        "standardized_coefficients": standardized.tolist(),
    }
    return preds, best_index, info


# ---------------------------------------------------------------------------
# effective dimensionality


def hessian_from_grad(grad_fn, w0, step=1e-4):
    """k x k Hessian by central finite differences of an analytic gradient,
    symmetrized as (H + H^T) / 2."""
    w0 = np.asarray(w0, dtype=np.float64)
    k = w0.size
    h = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = step
        h[:, i] = (grad_fn(w0 + e) - grad_fn(w0 - e)) / (2.0 * step)
    return 0.5 * (h + h.T)


def effective_dim_from_eigs(eigs, z, k):
    """(1/k) sum_i lambda_i / (lambda_i + z); negative eigenvalues enter as computed."""
    eigs = np.asarray(eigs, dtype=np.float64)
    return float(np.sum(eigs / (eigs + z)) / k)


def effective_dimensionality(record, train_data, z=1.0, limit=5000, step=1e-4):
    """Normalized effective dimensionality of the train-loss Hessian."""
    net = record.network if hasattr(record, "network") else record
    k = net.param_count
    if k > limit:
        raise UnsupportedMeasureError(
            f"parameter count {k} exceeds the dense-Hessian limit {limit}"
        )
    x, y = train_data.inputs, train_data.labels
    probe = net.copy()

    def grad_fn(w):
        probe.set_flat(w)
        return loss_and_grad(probe, x, y, mode="eval")[1]

    hess = hessian_from_grad(grad_fn, net.flatten(), step=step)
    eigs = np.linalg.eigvalsh(hess)
    value = effective_dim_from_eigs(eigs, z, k)
    return MeasureValue(
        "effective_dimensionality",
        getattr(record, "model_id", ""),
        value,
        {"z": z, "k": k, "eig_min": float(eigs.min()), "eig_max": float(eigs.max())},
    )


def mu_effective_dimensionality(record, ctx):
    mv = effective_dimensionality(
        record, ctx.train_data, z=ctx.z, limit=ctx.hessian_limit, step=ctx.hessian_step
    )
    return MeasureValue("effective_dimensionality", record.model_id, mv.value, mv.aux)


# ---------------------------------------------------------------------------
# registry / table


PER_MODEL_MEASURES = {
    "prunability": mu_prunability,
    "random_prunability": mu_random_prunability,
    "random_perturbation": mu_random_perturbation,
    "frobenius_norm": mu_frobenius,
    "sum_of_train_losses": mu_sum_of_train_losses,
    "train_loss": mu_train_loss,
    "parameter_count": mu_parameter_count,
    "sum_two_norms": mu_sum_two_norms,
    "sum_two_norms_pruned": mu_sum_two_norms_pruned,
    "pruned_parameter_count": mu_pruned_parameter_count,
    "pac_bayes_bound": mu_pac_bayes_bound,
    "effective_dimensionality": mu_effective_dimensionality,
}

SWEEP_MEASURES = ("normalized_margins", "best_margins_variable")

DEFAULT_MEASURES = (
    "prunability",
    "random_prunability",
    "random_perturbation",
    "frobenius_norm",
    "sum_of_train_losses",
    "train_loss",
    "parameter_count",
    "sum_two_norms",
    "sum_two_norms_pruned",
    "pruned_parameter_count",
    "pac_bayes_bound",
    "normalized_margins",
    "best_margins_variable",
)


def compute_model_measures(record, names, ctx):
    """All requested per-model measures for one record (sweep-level names are
    ignored here; they need the whole sweep)."""
    out = []
    for name in names:
        if name in SWEEP_MEASURES:
            continue
        if name not in PER_MODEL_MEASURES:
            raise KeyError(f"unknown measure {name!r}")
        out.append(PER_MODEL_MEASURES[name](record, ctx))
    return out


def compute_sweep_margin_measures(records, contexts, gaps, probes=None, folds=10):
    """The two sweep-level margin measures for a list of records (aligned
    with contexts and gaps)."""
    names = None
    rows = []
    for record, ctx in zip(records, contexts):
        feat_names, feats = margin_features(
            record, ctx.train_data, probes=probes or ctx.margin_probes, eps_den=ctx.margin_eps
        )
        names = feat_names
        rows.append(feats)
    x = np.vstack(rows)
    preds, best_index, info = fit_margin_measures(x, gaps, folds=folds)
    out = []
    for i, record in enumerate(records):
        out.append(
            MeasureValue(
                "normalized_margins",
                record.model_id,
                float(preds[i]),
                {"flagged": info["flagged"], "fold": info["fold_ids"][i]},
            )
        )
        out.append(
            MeasureValue(
                "best_margins_variable",
                record.model_id,
                float(x[i, best_index]),
                {"feature": names[best_index]},
            )
        )
    return out, {"feature_names": names, "best_feature": names[best_index], **info}


# ---------------------------------------------------------------------------
# measure table serialization


def measure_table_csv(values):
    """CSV with header model_id,measure,value; rows sorted for determinism.

    (model_id, measure) pairs must be unique within a table.
    """
    keys = [(mv.model_id, mv.measure_name) for mv in values]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise ValueError(f"duplicate measure rows: {dupes[:3]}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model_id", "measure", "value"])
    for mv in sorted(values, key=lambda m: (m.model_id, m.measure_name)):
        writer.writerow([mv.model_id, mv.measure_name, repr(float(mv.value))])
    return buf.getvalue()


def measure_aux_json(values):
    aux = {
        f"{mv.model_id}/{mv.measure_name}": mv.aux
        for mv in values
        if mv.aux
    }
    return json.dumps(aux, sort_keys=True, indent=1)


def parse_measure_table(text):
    """Inverse of measure_table_csv: {measure -> {model_id -> value}}."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["model_id", "measure", "value"]:
        raise ValueError(f"bad measure table header: {header}")
    table = {}
    for row in reader:
        if len(row) != 3:
            raise ValueError(f"bad measure table row: {row}")
        table.setdefault(row[1], {})[row[0]] = float(row[2])
    return table
