"""Randomised subspace Gauss-Newton methods for nonlinear least squares."""
from .datasets import DatasetError, load_dataset
from .problems import (
    EvaluationError,
    NlsProblem,
    SketchedJacobian,
    build_linear,
    build_logistic,
    build_test_problem,
    eval_full_gradient,
    eval_objective,
    eval_sketched_jacobian,
    make_separable_logistic,
)
from .sketch import (
    SketchKind,
    SketchOperator,
    apply_transpose,
    apply_vec,
    column_support,
    draw,
    embedding_trial,
    operator_norm_estimate,
)
from .solver import (
    ConfigError,
    IterRecord,
    QrConfig,
    RunTrace,
    TrConfig,
    compute_rho,
    rsgn_qr,
    rsgn_tr,
    validate_config,
)
from .subproblem import (
    ReducedModel,
    SubproblemResult,
    cauchy_point,
    regularized_solve,
    steihaug_cg,
    verify_cauchy,
)

__version__ = "0.1.0"
