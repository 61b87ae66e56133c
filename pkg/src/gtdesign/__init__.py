"""Design planning for two-stage (Dorfman) pooled testing when pooled
sensitivity and specificity depend on the group size."""

from .model import (
    DesignMetrics,
    DorfmanDesign,
    design_metrics,
    expected_tests,
    overall_sensitivity,
    pool_positive_prob,
)
from .optimizer import (
    Constraints,
    MisspecRow,
    OptResult,
    misspec_analysis,
    optimize_constrained,
    optimize_unconstrained,
    table1,
)
from .sensitivity import (
    ExpStep,
    Hwang,
    Linear,
    MisclassModel,
    Perfect,
    Tabulated,
    evaluate,
    hwang,
    model_from_dict,
)

__version__ = "0.1.0"
