"""Kolmogorov-Arnold networks and MLP baselines trained with DP-Adam."""

from dpkan.numerics import Rng, ShapeError, gaussian_sample, l2_norm, matmul
from dpkan.basis import (
    BSplineGrid,
    RswafGrid,
    bspline_basis,
    bspline_basis_derivative,
    phi_eval,
    rswaf_basis,
    rswaf_basis_derivative,
    silu,
    silu_derivative,
    spline_eval,
)
from dpkan.layers import (
    FasterKanLayer,
    FlatGradient,
    KanLayer,
    LinearLayer,
    Model,
    build_model,
    count_parameters,
    cross_entropy_loss,
    forward,
    mse_loss,
    per_sample_gradients,
)
from dpkan.serialize import deserialize_model, load_model, save_model, serialize_model
from dpkan.optim import (
    AdamState,
    ClippedGradient,
    DivergenceError,
    DpSgdConfig,
    TrainingLog,
    adam_step,
    clip_gradient,
    noisy_aggregate,
    train,
)
from dpkan.accountant import (
    DEFAULT_ORDERS,
    InfeasibleTargetError,
    PrivacySpend,
    calibrate_sigma,
    compute_epsilon,
    rdp_subsampled_gaussian,
    rdp_to_dp,
)
from dpkan.data import (
    Dataset,
    gen_synthetic,
    load_csv,
    load_mnist_idx,
    standardize,
    train_test_split,
)
from dpkan.metrics import accuracy, drop_percent, r2_score
from dpkan.config import ConfigError, ExperimentConfig, load_config, parse_config
from dpkan.experiment import RunReport, run_experiment, sweep

__version__ = "0.1.0"
