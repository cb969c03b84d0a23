"""Operational neural networks with synaptic-plasticity operator search."""

__version__ = "0.1.0"

from .backend import available_backends, get_backend
from .experiments import (
    CANDIDATES,
    FoldPlan,
    ImagePair,
    TaskSpec,
    build_folds,
    default_sublibrary,
    evaluate_model,
    make_pairs,
    run_experiment,
    transform_pairs,
)
from .imaging import normalize, read_pgm, salt_pepper, snr, synthetic_corpus, wgn, write_pgm
from .model import Architecture, ForwardTrace, OnnModel, resample_adjoint, resample_apply
from .operators import (
    ACT_LINCUT,
    ACT_NAMES,
    ACT_TANH,
    CNN_SET_INDEX,
    N_SETS,
    NODAL_NAMES,
    POOL_MEDIAN,
    POOL_NAMES,
    POOL_SUM,
    OperatorConstants,
    OperatorSet,
    OperatorSubLibrary,
    act_eval,
    act_grad,
    full_library,
    make_sublibrary,
    nodal_eval,
    nodal_grad_w,
    nodal_grad_y,
    pool_eval,
    pool_grad,
    set_from_index,
    set_index,
)
from .plasticity import (
    HealthLedger,
    SpmConfig,
    allocate,
    assign_layer,
    build_elite,
    build_worst,
    instantaneous_hf,
    layer_powers,
    powers_from_kernels,
    prior_bp,
    rank_operators,
    sample_operator,
    spm_session,
    weight_power,
)
from .train import (
    DivergenceError,
    LossTrace,
    TrainConfig,
    TrainState,
    adapt_lr,
    batch_gradient,
    mse,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
