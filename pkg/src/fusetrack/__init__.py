"""Multi-detector tracking via correlation-clustering graph labeling.

Detections from head and full-body detectors become nodes of a sparse cost
graph; tracking reduces to assigning each node to at most one identity label
so the total unary-plus-pairwise cost is minimal.  The relaxation is solved
by Frank-Wolfe with away steps, an exact closed-form step size, a schedule
of vanishing-on-binary regularizers, exact rounding, and a hierarchical
contract-and-resolve refinement.
"""

from .affinity import (
    AffinityConfig,
    Correspondences,
    LogisticModel,
    Priors,
    RatioPrior,
    RegressionModel,
    SpatialPrior,
    StandardBox,
    barycentric,
    build_costs,
    fit_logistic,
    learn_priors,
    load_model,
    load_priors,
    map_to_standard,
    probability_to_cost,
    ratio_features,
    save_model,
    save_priors,
    spatial_head_body_features,
    temporal_features,
)
from .graph import (
    CostGraph,
    Detection,
    DetectionKind,
    Labeling,
    TrackingGraph,
    clamp_probability,
    feasibility_violation,
    labeling_to_point,
    point_to_labeling,
    read_instance,
    write_instance,
)
from .hierarchy import (
    ContractedGraph,
    CorrectionResult,
    HierarchyResult,
    contract,
    correction,
    expand,
    solve_contracted,
    solve_hierarchical,
)
from .metrics import Metrics, Trajectory, TrajectoryBox, evaluate_metrics, iou
from .oracles import (
    ExactSolution,
    enumerate_binarize,
    exact_partition_solver,
    grid_line_search,
)
from .pipeline import (
    Batch,
    PipelineConfig,
    TrackResult,
    batch_sequence,
    load_detections,
    solve_batch,
    stitch,
    track,
)
from .solver import (
    FwResult,
    ScheduleResult,
    SolverConfig,
    TraceSample,
    binarize,
    compute_lambda0,
    linear_minimization_oracle,
    optimal_step_size,
    solve_fw,
    solve_with_schedule,
)
from .synth import ScenarioData, ScenarioParams, synthesize_scenario

__version__ = "0.1.0"
