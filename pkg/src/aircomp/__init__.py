"""UAV-assisted edge capacity simulator."""

from .domain import (
    ApplicationProfile,
    EdgeServer,
    FifoQueue,
    Flying,
    HapSnapshot,
    Position,
    RelocationCommand,
    Task,
    TaskOutcome,
    Town,
    Uav,
    User,
    WorldState,
    horizontal_distance,
    in_uav_coverage,
)
from .engine import Event, EventKind, EventQueue, RunResult, SchedulingInPastError, \
    Simulation, run, sample_interarrival
from .metrics import MetricsLedger, compare_table, export_csv
from .policies import (
    POLICY_NAMES,
    UNSTABLE,
    PolicySpec,
    TownLoadModel,
    kmeans,
    mm1_response_time,
    plan,
    required_uavs,
)
from .scenario import (
    Scenario,
    SimConfig,
    ValidationError,
    apply_event,
    build_default_earthquake,
    load_scenario,
    save_scenario,
)

__version__ = "0.1.0"
