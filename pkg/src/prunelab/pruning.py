"""One-shot pruning primitives and the loss-constrained searches built on them.

Prunability of a trained model is the smallest kept-fraction of parameters
(over a fixed fraction grid) whose pruned train cross-entropy stays within a
relative tolerance of the unpruned loss. The perturbation-robustness search
is the flatness analog: the largest magnitude-aware Gaussian noise scale
whose expected train loss stays within the same tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .network import cross_entropy, forward


def default_grid(size=50):
    """Kept-fraction grid {1/size, 2/size, ..., 1.0}."""
    return tuple(k / size for k in range(1, size + 1))


def kept_count(keep_fraction, omega):
    return int(round(keep_fraction * omega))


@dataclass(frozen=True)
class PruneMask:
    kept: np.ndarray  # bool, length omega
    kept_fraction: float

    @property
    def kept_count(self):
        return int(np.count_nonzero(self.kept))


def magnitude_prune(w, keep_fraction):
    """Mask keeping the round(alpha * omega) largest-|w| entries.

    Ties at the threshold break toward the lower flat index, which makes the
    mask deterministic.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    w = np.asarray(w)
    omega = w.size
    n_keep = kept_count(keep_fraction, omega)
    kept = np.zeros(omega, dtype=bool)
    if n_keep > 0:
        order = np.argsort(-np.abs(w), kind="stable")
        kept[order[:n_keep]] = True
    return PruneMask(kept, keep_fraction)


def random_prune(w, keep_fraction, rng):
    """Mask keeping a uniformly random subset of round(alpha * omega) entries."""
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    omega = np.asarray(w).size
    n_keep = kept_count(keep_fraction, omega)
    kept = np.zeros(omega, dtype=bool)
    if n_keep > 0:
        kept[rng.choice(omega, size=n_keep, replace=False)] = True
    return PruneMask(kept, keep_fraction)


def apply_mask(network, mask):
    """Fresh network with masked-out positions set to exactly 0.0."""
    if mask.kept.size != network.param_count:
        raise ValueError(
            f"mask length {mask.kept.size} does not match parameter count {network.param_count}"
        )
    pruned = network.copy()
    w = pruned.flatten()
    pruned.set_flat(np.where(mask.kept, w, 0.0))
    return pruned


# ---------------------------------------------------------------------------
# prunability search


@dataclass(frozen=True)
class PrunabilitySearchConfig:
    beta: float = 0.1
    grid: tuple = field(default_factory=default_grid)
    mc_samples: int = 5  # masks per grid point when method=random

    def __post_init__(self):
        g = tuple(self.grid)
        if not g or any(not 0.0 < v <= 1.0 for v in g):
            raise ValueError("grid values must lie in (0, 1]")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    @property
    def grid_size(self):
        return len(self.grid)


@dataclass(frozen=True)
class PrunabilityResult:
    kept_fraction: float
    achieved_train_ce: float
    baseline_train_ce: float
    grid_evaluations: dict  # kept fraction -> (mean) train cross-entropy
    method: str
    mask: PruneMask

    def to_json(self):
        return json.dumps(
            {
                "kept_fraction": self.kept_fraction,
                "achieved_train_ce": self.achieved_train_ce,
                "baseline_train_ce": self.baseline_train_ce,
                "method": self.method,
                "grid_evaluations": {repr(k): v for k, v in self.grid_evaluations.items()},
            },
            sort_keys=True,
        )


def _eval_ce(network, dataset):
    return cross_entropy(forward(network, dataset.inputs, mode="eval"), dataset.labels)


def prunability(model, train_data, config=None, method="magnitude", rng=None):
    """Smallest grid kept-fraction whose pruned train loss stays within
    (1 + beta) of the baseline; 1.0 if no grid point qualifies.

    Every grid point is evaluated (the map doubles as the pruning curve), so
    the result is the exhaustive minimum by construction. For method=random
    the constraint uses the mean loss over mc_samples masks per grid point.
    """
    config = config or PrunabilitySearchConfig()
    if method not in ("magnitude", "random"):
        raise ValueError(f"unknown pruning method {method!r}")
    if method == "random" and rng is None:
        raise ValueError("random pruning needs an rng")
    net = model.network if hasattr(model, "network") else model
    baseline = _eval_ce(net, train_data)
    if not math.isfinite(baseline):
        raise ValueError("baseline train loss is not finite")
    bound = (1.0 + config.beta) * baseline
    w = net.flatten()

    evaluations = {}
    best = None
    best_mask = None
    for alpha in config.grid:
        if method == "magnitude":
            mask = magnitude_prune(w, alpha)
            loss = _eval_ce(apply_mask(net, mask), train_data)
        else:
            losses = []
            mask = None
            for _ in range(config.mc_samples):
                mask = random_prune(w, alpha, rng)
                losses.append(_eval_ce(apply_mask(net, mask), train_data))
            loss = float(np.mean(losses))
        evaluations[alpha] = loss
        if best is None and loss <= bound:
            best = alpha
            best_mask = mask
    if best is None:
        best = 1.0
        best_mask = PruneMask(np.ones(w.size, dtype=bool), 1.0)
        achieved = baseline
    else:
        achieved = evaluations[best]
    return PrunabilityResult(
        kept_fraction=best,
        achieved_train_ce=achieved,
        baseline_train_ce=baseline,
        grid_evaluations=evaluations,
        method=method,
        mask=best_mask,
    )


# ---------------------------------------------------------------------------
# magnitude-aware random perturbation robustness


@dataclass(frozen=True)
class PerturbationSearchConfig:
    beta: float = 0.1
    epsilon: float = 1e-3
    mc_samples: int = 5
    sigma_lo: float = 1e-3
    sigma_hi: float = 1e2
    max_iterations: int = 40
    seed: int = 0
    variance_form: str = "additive"  # Var = sigma^2 |w| + eps; "scaled" uses sigma^2 (|w| + eps)

    def __post_init__(self):
        if not self.sigma_lo < self.sigma_hi:
            raise ValueError("need sigma_lo < sigma_hi")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.variance_form not in ("additive", "scaled"):
            raise ValueError("variance_form must be 'additive' or 'scaled'")


@dataclass(frozen=True)
class PerturbationResult:
    sigma: float
    measure: float  # 1 / sigma^2
    flag: str  # "", "lo-infeasible", "hi-feasible"
    baseline_loss: float


def perturbation_robustness(loss_fn, w, config=None, noise=None):
    """Largest sigma in [sigma_lo, sigma_hi] with mean perturbed loss within
    (1 + beta) of loss_fn(w), by bisection on log sigma.

    Per-coordinate noise is Gaussian with variance sigma^2 |w_i| + epsilon.
    The standard-normal draws are fixed up front (common random numbers
    across sigma candidates); pass ``noise`` with shape (mc_samples, len(w))
    to pin them explicitly.
    """
    config = config or PerturbationSearchConfig()
    w = np.asarray(w, dtype=np.float64)
    baseline = float(loss_fn(w))
    if not math.isfinite(baseline):
        raise ValueError("baseline loss is not finite")
    bound = (1.0 + config.beta) * baseline
    if noise is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0x9E])))
        noise = rng.standard_normal((config.mc_samples, w.size))
    else:
        noise = np.asarray(noise, dtype=np.float64)

    def mean_loss(sigma):
        if config.variance_form == "additive":
            std = np.sqrt(sigma * sigma * np.abs(w) + config.epsilon)
        else:
            std = sigma * np.sqrt(np.abs(w) + config.epsilon)
        total = 0.0
        for z in noise:
            total += float(loss_fn(w + std * z))
        return total / noise.shape[0]

    def feasible(sigma):
        return mean_loss(sigma) <= bound

    def result(sigma, flag):
        return PerturbationResult(sigma, 1.0 / (sigma * sigma), flag, baseline)

    if not feasible(config.sigma_lo):
        return result(config.sigma_lo, "lo-infeasible")
    if feasible(config.sigma_hi):
        return result(config.sigma_hi, "hi-feasible")
    lo, hi = math.log(config.sigma_lo), math.log(config.sigma_hi)
    for _ in range(config.max_iterations):
        mid = 0.5 * (lo + hi)
        if feasible(math.exp(mid)):
            lo = mid
        else:
            hi = mid
    return result(math.exp(lo), "")


def network_train_loss_fn(model, train_data):
    """Closure evaluating train cross-entropy at an arbitrary flat vector."""
    net = (model.network if hasattr(model, "network") else model).copy()

    def loss_fn(w):
        net.set_flat(w)
        return _eval_ce(net, train_data)

    return loss_fn


def perturbation_robustness_of_model(model, train_data, config=None):
    net = model.network if hasattr(model, "network") else model
    return perturbation_robustness(
        network_train_loss_fn(net, train_data), net.flatten(), config
    )


# ---------------------------------------------------------------------------
# pruning vs random perturbation of equal magnitude


def prune_vs_perturb(model, data_train, data_test, fractions, rng, match="norm"):
    """Compare zeroing the smallest-magnitude weights against replacing the
    same coordinates with random values of equal size.

    match="norm" replaces the removed sub-vector by a uniformly-directed
    vector of the same Euclidean norm; match="coordinate" keeps each removed
    coordinate's magnitude and randomizes its sign. Returns one row dict per
    fraction with train/test cross-entropy deltas for both edits.
    """
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ValueError("fractions must lie in (0, 1)")
    if match not in ("norm", "coordinate"):
        raise ValueError("match must be 'norm' or 'coordinate'")
    net = model.network if hasattr(model, "network") else model
    w = net.flatten()
    base_train = _eval_ce(net, data_train)
    base_test = _eval_ce(net, data_test)
    rows = []
    for fraction in fractions:
        mask = magnitude_prune(w, 1.0 - fraction)
        removed = ~mask.kept
        removed_norm = float(np.linalg.norm(w[removed]))
        pruned = apply_mask(net, mask)

        perturbed = net.copy()
        wp = w.copy()
        n_removed = int(removed.sum())
        if n_removed > 0:
            if match == "norm":
                direction = rng.standard_normal(n_removed)
                nrm = np.linalg.norm(direction)
                wp[removed] = (direction / nrm) * removed_norm if nrm > 0 else 0.0
            else:
                signs = rng.choice([-1.0, 1.0], size=n_removed)
                wp[removed] = signs * np.abs(w[removed])
        perturbed.set_flat(wp)
        perturb_norm = float(np.linalg.norm(wp[removed]))

        rows.append(
            {
                "fraction": fraction,
                "removed_norm": removed_norm,
                "perturb_norm": perturb_norm,
                "delta_train_ce_prune": _eval_ce(pruned, data_train) - base_train,
                "delta_test_ce_prune": _eval_ce(pruned, data_test) - base_test,
                "delta_train_ce_perturb": _eval_ce(perturbed, data_train) - base_train,
                "delta_test_ce_perturb": _eval_ce(perturbed, data_test) - base_test,
            }
        )
    return rows
