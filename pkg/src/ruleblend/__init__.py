"""Rule-ensemble regression with convex node weights.

Fits an interpretable estimator in two stages: generate a large pool of
rectangular rules from randomized trees, then select sparse nonnegative
weights for them through a constrained least-squares problem.
"""

from .data import (CATEGORICAL, NUMERIC, Dataset, Feature, FeatureSchema,
                   ResponseScaler, add_noise, dataset_from_arrays,
                   impute_rough, load_csv, load_with_schema, split_half,
                   standardize_response)
from .errors import (DataError, DegenerateColumnWarning, GenerationWarning,
                     RuleblendError, SchemaError, SolverError)
from .estimator import (CLASSIFICATION, REGRESSION, Explanation, FitConfig,
                        HarvestModel, fit, fit_regularized, smoothing_matrix)
from .matrices import DesignPair, build_design
from .nodegen import (Interval, LevelSet, NodeRule, NodeSet, generate_node_set,
                      membership_matrix)
from .qp import (QpProblem, QpSolution, assemble_reduced, kkt_residuals,
                 nullspace_basis, recover_weights, solve_qp)

__version__ = "0.1.0"

__all__ = [
    "CATEGORICAL",
    "CLASSIFICATION",
    "DataError",
    "Dataset",
    "DegenerateColumnWarning",
    "DesignPair",
    "Explanation",
    "Feature",
    "FeatureSchema",
    "FitConfig",
    "GenerationWarning",
    "HarvestModel",
    "Interval",
    "LevelSet",
    "NUMERIC",
    "NodeRule",
    "NodeSet",
    "QpProblem",
    "QpSolution",
    "REGRESSION",
    "ResponseScaler",
    "RuleblendError",
    "SchemaError",
    "SolverError",
    "add_noise",
    "assemble_reduced",
    "build_design",
    "dataset_from_arrays",
    "fit",
    "fit_regularized",
    "generate_node_set",
    "impute_rough",
    "kkt_residuals",
    "load_csv",
    "load_with_schema",
    "membership_matrix",
    "nullspace_basis",
    "recover_weights",
    "smoothing_matrix",
    "solve_qp",
    "split_half",
    "standardize_response",
    "__version__",
]
