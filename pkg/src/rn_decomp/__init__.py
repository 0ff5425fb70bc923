"""Range-nullspace decomposition learning for linear inverse imaging problems."""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    apply_primitive,
    backward,
    finite_diff_gradient,
    tensor,
)
from .network import Network, null_net_arch, range_net_arch  # noqa: F401
from .optim import AdamState, adam_step  # noqa: F401
from .operators import (  # noqa: F401
    ConvergenceError,
    LinearOperator,
    OperatorError,
    block_downsample,
    build_operator,
    gaussian_sensing,
    inpainting,
    power_iteration_norm,
    project_null,
    project_range,
    regularized_pinv,
    subsampled_dft,
    svd_pinv_oracle,
)
from .estimators import (  # noqa: F401
    Estimator,
    LossWeights,
    data_consistency_gap,
    ddn_loss,
    gated_reconstruct,
    make_estimator,
    reconstruct,
)
from .data import (  # noqa: F401
    Dataset,
    generate_toy_corpus,
    read_pgm,
    simulate_measurements,
    write_pgm,
)
from .metrics import MetricsRecord, evaluate, nmse, psnr  # noqa: F401
from .training import TrainingDiverged, train  # noqa: F401
from .experiment import (  # noqa: F401
    ConfigError,
    ExperimentConfig,
    parse_config,
    run_ablation,
    run_experiment,
)
