"""prunelab: feedforward-network sweeps, pruning-based generalization
measures, and the rank/CMI/regression statistics that evaluate them."""

__version__ = "0.1.0"

from .data import Dataset, DatasetSpec, gen_synthetic, load_dataset, load_idx
from .evalstats import (
    StatisticalUndefinedError,
    build_eval_report,
    cmi,
    granulated_kendall,
    kendall_tau,
    regression_r2,
)
from .measures import (
    DEFAULT_MEASURES,
    MeasureContext,
    MeasureValue,
    PacBayesInputs,
    effective_dimensionality,
    margin_features,
    pac_bayes_bound,
)
from .network import (
    ConfigurationError,
    Network,
    backward,
    build_network,
    conv2d,
    cross_entropy,
    dense,
    dropout,
    error01,
    forward,
    global_avg_pool,
    mlp_specs,
    relu,
)
from .pruning import (
    PerturbationSearchConfig,
    PrunabilitySearchConfig,
    apply_mask,
    default_grid,
    magnitude_prune,
    perturbation_robustness,
    prunability,
    prune_vs_perturb,
    random_prune,
)
from .sweep import (
    HyperparamConfig,
    SweepManifest,
    default_manifest,
    run_double_descent,
    run_prune_vs_perturb,
    run_sweep,
)
from .training import ModelRecord, TrainConfig, TrainingDivergedError, train, train_model
