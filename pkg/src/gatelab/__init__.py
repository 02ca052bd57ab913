"""gatelab: attacks, spectra, and training effects on gated ReLU networks."""

from .analytic import (
    AnalyticPerturbation,
    DegenerateDecomposition,
    FitReport,
    LimitRegime,
    NormalizedRegime,
    OracleError,
    SpectralDecomposition,
    StepRegime,
    fit_report,
    perturbation_limit,
    perturbation_m_step,
    perturbation_normalized,
    predicted_gradient,
    spectral_decomposition,
)
from .attack import (
    AttackConfig,
    AttackError,
    AttackTrajectory,
    GradientRule,
    amplification_estimate,
    batch_attack,
    run_attack,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Dataset, DatasetError, load_idx, parse_dataset_spec, save_idx, synth_dataset
from .effects import (
    CosineReport,
    EffectMeasurement,
    EffectsError,
    LossExpansion,
    OscillationProbe,
    WeightGradientPair,
    cosine_report,
    loss_expansion,
    measure_effect,
    measured_effect,
    oscillation_probe,
    predicted_effect,
    spearman,
    weight_gradient_shift,
)
from .heads import (
    BinaryReduced,
    HeadError,
    LossEval,
    Quadratic,
    SigmoidBCE,
    SoftmaxCE,
    loss_eval,
    reduce_to_binary,
)
from .linalg import ConvergenceError, LinalgError, SymEigen, fd_gradient, fd_hessian, sym_eigen
from .network import (
    ForwardTrace,
    GateState,
    LinearizedModel,
    NetworkError,
    NetworkSpec,
    ReluNetwork,
    forward,
    grad_input,
    grad_weights,
    grad_weights_composite,
    linearize,
    margin_gradients,
)
from .training import TrainConfig, TrainError, TrainHistory, adversarial_train, evaluate, sgd_train

__version__ = "0.1.0"
