"""Change point detection and estimation for piecewise-stationary VAR
series with sparse, group-sparse, or low-rank plus sparse transitions."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BlockPartition,
    DetectionResult,
    Grouping,
    PenaltySpec,
    PiecewiseVarModel,
    TimeSeriesMatrix,
    TransitionSet,
    companion_spectral_radius,
    make_blocks,
    stack_lag_rows,
)
from .datagen import GenerationSpec, SparsityPattern, simulate  # noqa: F401
from .evalsuite import (  # noqa: F401
    SimulationSummary,
    bic_lag_select,
    hausdorff,
    run_replications,
    selection_rate,
    support_metrics,
)
from .lstsp import LstspConfig, lstsp_detect  # noqa: F401
from .tbss import TbssConfig, tbss_detect  # noqa: F401
