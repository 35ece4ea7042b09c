"""Planning and evaluation of von Neumann measurement strategies.

The package models how well a sequence of ideal measurements pins down an
unknown finite-dimensional quantum state: a Gaussian posterior summarizes
the accumulated knowledge, and strategies are ranked by the posterior's
volume (det M) or mean squared deviation (Tr M^-1).  Closed-form optimal
qubit plans, twirled high-dimensional strategies, a seeded Monte Carlo
simulator, and a dimension-escalation search are exposed both as a library
and through the ``tomoplan`` command line.
"""

from .errors import SchemaError, TomoplanError
from .knowledge import (
    KnowledgeOperator,
    MeasurementRecord,
    StrategyConfig,
    build_M,
    knowledge_report,
    log_posterior,
    refine_observable,
)
from .highdim import (
    PairSchedule,
    StrategyMetrics,
    TwirledOperator,
    block_measures,
    matrix_unit_strategy,
    mub_pair_config,
    mub_pair_strategy,
    round_robin,
    twirl,
    unbiased_partner,
)
from .linalg import DensityMatrix, ObservableSpec, bloch_state, tracial_state
from .qubit import plan_qubit, qubit_M
from .simulate import (
    EnsembleStats,
    TrialResult,
    aggregate,
    dimension_escalation,
    ml_estimate,
    run_adaptive_qubit,
    run_ensemble,
    run_fixed,
)

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix",
    "EnsembleStats",
    "KnowledgeOperator",
    "MeasurementRecord",
    "ObservableSpec",
    "PairSchedule",
    "SchemaError",
    "StrategyConfig",
    "StrategyMetrics",
    "TomoplanError",
    "TrialResult",
    "TwirledOperator",
    "aggregate",
    "block_measures",
    "bloch_state",
    "build_M",
    "dimension_escalation",
    "knowledge_report",
    "log_posterior",
    "matrix_unit_strategy",
    "ml_estimate",
    "mub_pair_config",
    "mub_pair_strategy",
    "plan_qubit",
    "qubit_M",
    "refine_observable",
    "round_robin",
    "run_adaptive_qubit",
    "run_ensemble",
    "run_fixed",
    "tracial_state",
    "twirl",
    "unbiased_partner",
    "__version__",
]
