"""Evaluation statistics for generalization measures.

Given per-model measure values and generalization gaps this module computes
Kendall's rank correlation (the exact O(n^2) double sum), per-axis granulated
coefficients and their mean, a normalized conditional-mutual-information
criterion over pairwise sign variables, and cross-validated / adjusted R^2.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class StatisticalUndefinedError(RuntimeError):
    """Raised when a statistic has no defined value for the given inputs."""


# ---------------------------------------------------------------------------
# Kendall's tau


def kendall_tau(mu, g):
    """sum_{i != j} sign(mu_i - mu_j) sign(g_i - g_j) / (n (n - 1)).

    Tied pairs contribute zero. This is the normative double-sum definition;
    n is small enough that no accelerated variant is needed.
    """
    mu = np.asarray(mu, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = mu.size
    if n < 2:
        raise StatisticalUndefinedError("kendall_tau needs at least 2 points")
    s = np.sign(mu[:, None] - mu[None, :]) * np.sign(g[:, None] - g[None, :])
    return float(s.sum() / (n * (n - 1)))


# ---------------------------------------------------------------------------
# granulated Kendall


@dataclass
class GranulatedKendall:
    psi: dict  # axis name -> coefficient (nan when no valid slice)
    psi_overall: float  # mean of the defined per-axis coefficients
    slice_counts: dict = field(default_factory=dict)


def granulated_kendall(mu, g, axes, axis_names, report_axes=None):
    """Per-axis Kendall coefficients: for axis i, average tau over all slices
    in which every other axis is held fixed. Slices with fewer than two
    distinct values of axis i are skipped.

    ``report_axes`` selects which axes get a coefficient; the rest (e.g. the
    seed axis) still participate in holding slices fixed.
    """
    mu = np.asarray(mu, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    axes = np.asarray(axes)
    n, n_axes = axes.shape
    if len(axis_names) != n_axes:
        raise ValueError("axis_names does not match axes width")
    report_axes = list(report_axes) if report_axes is not None else list(axis_names)
    psi = {}
    counts = {}
    for i, name in enumerate(axis_names):
        if name not in report_axes:
            continue
        others = [j for j in range(n_axes) if j != i]
        groups = defaultdict(list)
        for row in range(n):
            groups[tuple(axes[row, j] for j in others)].append(row)
        taus = []
        for idx in groups.values():
            vals = axes[idx, i]
            if len(idx) < 2 or len(set(vals.tolist())) < 2:
                continue
            taus.append(kendall_tau(mu[idx], g[idx]))
        counts[name] = len(taus)
        psi[name] = float(np.mean(taus)) if taus else float("nan")
    defined = [v for v in psi.values() if not math.isnan(v)]
    overall = float(np.mean(defined)) if defined else float("nan")
    return GranulatedKendall(psi=psi, psi_overall=overall, slice_counts=counts)


# ---------------------------------------------------------------------------
# conditional mutual information over pairwise sign variables


@dataclass
class CmiResult:
    value: float
    best_subset: tuple
    per_subset: dict
    pairs_total: int
    pairs_used: int
    dropped_ties: int


def _plugin_cmi(vmu, vg, cells, min_cell):
    """Plug-in I(Vmu; Vg | U) and H(Vg | U) from empirical pair frequencies.

    ``cells`` assigns each pair a conditioning-cell id. Cells with fewer than
    min_cell pairs are dropped from both sums.
    """
    _, inverse, counts = np.unique(cells, return_inverse=True, return_counts=True)
    keep_cell = counts >= min_cell
    total = counts[keep_cell].sum()
    if total == 0:
        return None
    info = 0.0
    entropy = 0.0
    for cid in np.nonzero(keep_cell)[0]:
        sel = inverse == cid
        n_u = counts[cid]
        p_u = n_u / total
        a = vmu[sel]
        b = vg[sel]
        h_u = 0.0
        for vb in (-1, 1):
            p_b = np.count_nonzero(b == vb) / n_u
            if p_b > 0:
                h_u -= p_b * math.log(p_b)
        i_u = 0.0
        for va in (-1, 1):
            p_a = np.count_nonzero(a == va) / n_u
            for vb in (-1, 1):
                p_ab = np.count_nonzero((a == va) & (b == vb)) / n_u
                p_b = np.count_nonzero(b == vb) / n_u
                if p_ab > 0:
                    i_u += p_ab * math.log(p_ab / (p_a * p_b))
        info += p_u * i_u
        entropy += p_u * h_u
    return info, entropy


def cmi(mu, g, axes, axis_names, *, max_subset_size=2, min_cell_count=5,
        encoding="sign-diff"):
    """Normalized CMI criterion: min over axis subsets S (|S| <= max size,
    empty set included) of I(V_mu; V_g | U_S) / H(V_g | U_S).

    V_mu and V_g are difference signs over ordered model pairs; tied pairs
    are dropped. U_S encodes, per axis in S, either the pairwise difference
    sign (default) or the raw value pair (encoding="value-pair").
    """
    mu = np.asarray(mu, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    axes = np.asarray(axes, dtype=np.float64)
    n = mu.size
    if n < 2:
        raise StatisticalUndefinedError("cmi needs at least 2 models")
    if encoding not in ("sign-diff", "value-pair"):
        raise ValueError("encoding must be 'sign-diff' or 'value-pair'")
    off = ~np.eye(n, dtype=bool)
    vmu = np.sign(mu[:, None] - mu[None, :])[off].astype(np.int64)
    vg = np.sign(g[:, None] - g[None, :])[off].astype(np.int64)
    pairs_total = vmu.size
    keep = (vmu != 0) & (vg != 0)
    dropped = pairs_total - int(keep.sum())
    if not keep.any():
        raise StatisticalUndefinedError("all pairs are ties in the measure or the gap")
    vmu = vmu[keep]
    vg = vg[keep]

    axis_codes = []
    for a in range(axes.shape[1]):
        if encoding == "sign-diff":
            col = np.sign(axes[:, a][:, None] - axes[:, a][None, :])[off][keep]
            axis_codes.append(col[:, None])
        else:
            v1 = np.broadcast_to(axes[:, a][:, None], (n, n))[off][keep]
            v2 = np.broadcast_to(axes[:, a][None, :], (n, n))[off][keep]
            axis_codes.append(np.stack([v1, v2], axis=1))

    subsets = [()]
    for size in range(1, max_subset_size + 1):
        subsets.extend(itertools.combinations(range(len(axis_names)), size))

    per_subset = {}
    best = None
    best_subset = None
    for subset in subsets:
        if subset:
            u = np.concatenate([axis_codes[a] for a in subset], axis=1)
            cells = np.unique(u, axis=0, return_inverse=True)[1]
        else:
            cells = np.zeros(vmu.size, dtype=np.int64)
        stats = _plugin_cmi(vmu, vg, cells, min_cell_count)
        if stats is None:
            continue
        info, entropy = stats
        if entropy <= 0.0:
            continue
        ratio = info / entropy
        key = tuple(axis_names[a] for a in subset)
        per_subset[key] = ratio
        if best is None or ratio < best:
            best = ratio
            best_subset = key
    if best is None:
        raise StatisticalUndefinedError("conditional entropy of the gap is zero for every subset")
    return CmiResult(
        value=float(best),
        best_subset=best_subset,
        per_subset=per_subset,
        pairs_total=pairs_total,
        pairs_used=int(keep.sum()),
        dropped_ties=dropped,
    )


# ---------------------------------------------------------------------------
# linear regression metrics


def _linfit(x, y, ridge_scale=1e-6):
    """Least-squares fit with intercept; falls back to ridge when the centered
    design is rank deficient. Returns (coef, intercept, flagged)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = x.mean(axis=0)
    ym = y.mean()
    xc = x - xm
    yc = y - ym
    p = x.shape[1]
    coef, _, rank, _ = np.linalg.lstsq(xc, yc, rcond=None)
    flagged = rank < p
    if flagged:
        gram = xc.T @ xc
        lam = max(ridge_scale * np.trace(gram) / p, 1e-12)
        coef = np.linalg.solve(gram + lam * np.eye(p), xc.T @ yc)
    return coef, ym - coef @ xm, flagged


def fold_assignments(n, folds):
    """Deterministic interleaved fold ids: model i goes to fold i % k."""
    k = min(folds, n)
    return np.arange(n) % k, k


def crossfit_linear(x, y, folds=10):
    """Held-out predictions from per-fold least-squares fits.

    Returns (predictions, fold_ids, flagged) where each model's prediction
    comes from the fold that excluded it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    fold_ids, k = fold_assignments(n, folds)
    preds = np.empty(n)
    flagged = False
    for fid in range(k):
        test = fold_ids == fid
        coef, intercept, flag = _linfit(x[~test], y[~test])
        flagged = flagged or flag
        preds[test] = x[test] @ coef + intercept
    return preds, fold_ids, flagged


@dataclass
class RegressionR2:
    cv_r2: float
    adjusted_r2: float
    full_r2: float
    dim: int
    flagged: bool


def regression_r2(x, g, folds=10):
    """(cross-validated R^2, adjusted R^2) of a linear fit from x to g.

    The CV value pools held-out predictions over k folds; the adjusted value
    applies 1 - (1 - R^2)(n - 1)/(n - dim - 1) to the full-fit R^2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    g = np.asarray(g, dtype=np.float64)
    n, p = x.shape
    if n <= p + 1:
        raise StatisticalUndefinedError("need more models than regressors plus one")
    ss_tot = float(np.sum((g - g.mean()) ** 2))
    if ss_tot == 0.0:
        raise StatisticalUndefinedError("gaps are constant; R^2 undefined")
    preds, _, flagged = crossfit_linear(x, g, folds)
    cv_r2 = 1.0 - float(np.sum((preds - g) ** 2)) / ss_tot
    coef, intercept, flag_full = _linfit(x, g)
    full_pred = x @ coef + intercept
    full_r2 = 1.0 - float(np.sum((full_pred - g) ** 2)) / ss_tot
    adjusted = 1.0 - (1.0 - full_r2) * (n - 1) / (n - p - 1)
    return RegressionR2(cv_r2, adjusted, full_r2, p, flagged or flag_full)


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class EvalRow:
    measure: str
    kendall: float
    cv_r2: float
    adjusted_r2: float
    cmi_value: float
    psi: dict
    psi_overall: float
    pairs_used: int = 0
    dropped_ties: int = 0
    notes: str = ""


def build_eval_report(measure_vectors, gaps, axes, axis_names, cmi_axis_names=None,
                      folds=10, min_cell_count=5):
    """One EvalRow per measure, sorted by measure name.

    Gap-side degeneracy (constant gaps) raises; a degenerate measure only
    marks its own row. ``cmi_axis_names`` restricts the conditioning subsets
    (the seed axis carries no ordinal meaning and is excluded by callers).
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    if np.ptp(gaps) == 0.0:
        raise StatisticalUndefinedError("generalization gaps are constant")
    axes = np.asarray(axes, dtype=np.float64)
    if cmi_axis_names is None:
        cmi_axis_names = [a for a in axis_names if a != "seed"]
    cmi_cols = [axis_names.index(a) for a in cmi_axis_names]
    psi_axes = [a for a in axis_names if a != "seed"]
    rows = []
    for name in sorted(measure_vectors):
        mu = np.asarray(measure_vectors[name], dtype=np.float64)
        tau = kendall_tau(mu, gaps)
        gran = granulated_kendall(mu, gaps, axes, axis_names, report_axes=psi_axes)
        notes = []
        try:
            reg = regression_r2(mu, gaps, folds=folds)
            cv_r2, adj_r2 = reg.cv_r2, reg.adjusted_r2
            if reg.flagged:
                notes.append("rank-deficient-regression")
        except StatisticalUndefinedError as exc:
            cv_r2 = adj_r2 = float("nan")
            notes.append(f"r2-undefined: {exc}")
        try:
            cres = cmi(mu, gaps, axes[:, cmi_cols], cmi_axis_names,
                       min_cell_count=min_cell_count)
            cmi_value, pairs_used, dropped = cres.value, cres.pairs_used, cres.dropped_ties
        except StatisticalUndefinedError as exc:
            cmi_value, pairs_used, dropped = float("nan"), 0, 0
            notes.append(f"cmi-undefined: {exc}")
        rows.append(
            EvalRow(
                measure=name,
                kendall=tau,
                cv_r2=cv_r2,
                adjusted_r2=adj_r2,
                cmi_value=cmi_value,
                psi=gran.psi,
                psi_overall=gran.psi_overall,
                pairs_used=pairs_used,
                dropped_ties=dropped,
                notes=";".join(notes),
            )
        )
    return rows


# preferred per-axis column order for the granulated table
TABLE2_AXIS_ORDER = ("width", "dropout", "augmentation", "weight_decay", "depth")


def table2_axis_columns(rows):
    present = set()
    for row in rows:
        present.update(row.psi)
    ordered = [a for a in TABLE2_AXIS_ORDER if a in present]
    ordered.extend(sorted(present - set(ordered)))
    return ordered


def table1_csv(rows):
    """Summary table: overall tau, both R^2 variants, and the CMI criterion."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "kendall_tau", "adjusted_r2", "cv_r2", "cmi"])
    for row in rows:
        writer.writerow(
            [
                row.measure,
                repr(float(row.kendall)),
                repr(float(row.adjusted_r2)),
                repr(float(row.cv_r2)),
                repr(float(row.cmi_value)),
            ]
        )
    return buf.getvalue()


def table2_csv(rows):
    """Granulated table: per-axis coefficients, overall tau, and their mean."""
    axis_cols = table2_axis_columns(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", *axis_cols, "kendall_tau", "psi"])
    for row in rows:
        writer.writerow(
            [row.measure]
            + [repr(float(row.psi.get(a, float("nan")))) for a in axis_cols]
            + [repr(float(row.kendall)), repr(float(row.psi_overall))]
        )
    return buf.getvalue()


def report_meta_json(rows, settings=None):
    import json

    meta = {
        "settings": settings or {},
        "measures": {
            row.measure: {
                "pairs_used": row.pairs_used,
                "dropped_ties": row.dropped_ties,
                "notes": row.notes,
            }
            for row in rows
        },
    }
    return json.dumps(meta, sort_keys=True, indent=1)
