"""Hard-disk crowd simulation with projected velocities.

Disks carry a spontaneous velocity (where each would go alone); the actual
velocity is the Euclidean projection of the spontaneous one onto the set of
velocities that keep all signed gaps nonnegative, advanced in time by a
prediction-correction scheme with a Uzawa saddle-point solver.
"""

from .dynamics import (
    ExitEvent,
    RunMetrics,
    RunResult,
    StepFailureError,
    StepParams,
    TrajectoryFrame,
    run,
    step,
)
from .fields import (
    ConstantField,
    DistanceGrid,
    GeodesicField,
    PointSinkField,
    constant,
    corridor_1d,
    fmm_solve,
    geodesic_velocity,
    point_sink,
)
from .geometry import (
    Configuration,
    ContactConstraint,
    WallSegment,
    active_constraints,
    gap_and_gradient_disk_wall,
    gap_disk_disk,
    gradient_disk_disk,
    min_gap,
)
from .kernels import backend_name
from .projection import (
    ConstraintSystem,
    KKTReport,
    ProjectionResult,
    ProxRegularityReport,
    cone_project_contact,
    kkt_check,
    prox_regularity_diagnostic,
    qp_oracle_project,
    uzawa_project,
)
from .scenario import (
    Scenario,
    ScenarioParseError,
    ValidationReport,
    load_scenario,
    validate_scenario,
    write_scenario,
)

__version__ = "0.1.0"
