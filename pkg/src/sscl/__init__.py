"""Supervised sparse context learning classifiers and experiment harness."""

from .baselines import KnnClassifier, SrbcClassifier, knn_predict, srbc_predict
from .context import ContextIndex, build_context_index, query_context
from .data import (
    BinaryTask,
    Dataset,
    DataError,
    FoldSplit,
    Standardizer,
    accuracy,
    apply_standardizer,
    fit_standardizer,
    kfold,
    load_csv,
    one_vs_rest_tasks,
)
from .model import (
    Hyperparams,
    SsclClassifier,
    SsclModel,
    TrainState,
    TrainTrace,
    conditional_coeffs,
    predict,
    predict_multiclass,
    train,
)
from .optim import (
    BoxQpProblem,
    ConvergenceError,
    IndefiniteProblemError,
    L1QuadraticProblem,
    SolverReport,
    boxqp_kkt_residual,
    l1q_kkt_residual,
    solve_box_qp,
    solve_l1_quadratic,
)

__version__ = "0.1.0"
