"""Shared domain types: geometry, users, towns, resources, controller snapshots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional


class TaskOutcome(IntEnum):
    PENDING = 0
    SUCCESS = 1
    FAILED_DEADLINE = 2
    FAILED_NO_RESOURCE = 3


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position coordinates must be finite, got ({self.x}, {self.y})")


def horizontal_distance(a: Position, b: Position) -> float:
    """Euclidean ground-plane distance in meters."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class ApplicationProfile:
    """Per-task demand and latency contract of one application type."""

    id: str
    cpu_demand: float            # CPU units per task
    worst_case_delay: float      # seconds, inclusive budget
    mean_interarrival: float     # seconds

    def __post_init__(self) -> None:
        if self.cpu_demand <= 0:
            raise ValueError("cpu_demand must be > 0")
        if self.worst_case_delay <= 0:
            raise ValueError("worst_case_delay must be > 0")
        if self.mean_interarrival <= 0:
            raise ValueError("mean_interarrival must be > 0")


@dataclass
class Task:
    id: str
    owner: str
    town: str
    cpu_demand: float
    created_at: float
    worst_case_delay: float
    completed_at: Optional[float] = None
    outcome: TaskOutcome = TaskOutcome.PENDING

    def classify(self, completed_at: float) -> TaskOutcome:
        """Record completion and derive the outcome from the latency budget."""
        if completed_at < self.created_at:
            raise ValueError("completed_at must be >= created_at")
        self.completed_at = completed_at
        if completed_at - self.created_at <= self.worst_case_delay:
            self.outcome = TaskOutcome.SUCCESS
        else:
            self.outcome = TaskOutcome.FAILED_DEADLINE
        return self.outcome

    def mark_no_resource(self, at: float) -> TaskOutcome:
        self.completed_at = at
        self.outcome = TaskOutcome.FAILED_NO_RESOURCE
        return self.outcome


@dataclass
class User:
    id: str
    town: str
    position: Position
    profile: ApplicationProfile
    active_from: float = 0.0


@dataclass(frozen=True)
class Town:
    id: str
    center: Position
    radius: float
    edge_server: Optional[str] = None

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("town radius must be > 0")

    def contains(self, p: Position) -> bool:
        return horizontal_distance(self.center, p) <= self.radius


class FifoQueue:
    """Deterministic FIFO work ledger for a single resource.

    One task is served at a time at full capacity. A task enqueued at t can
    start service no earlier than t plus one uplink delay, and its result
    lands one downlink delay after its work completes, so an idle resource
    returns a task after cpu/capacity + 2*wlan one-way delays.

    Entries are kept as parallel lists with a moving head so that bulk
    appends from the simulation engine stay cheap; completed entries are
    pruned lazily on access.
    """

    __slots__ = ("capacity", "wlan_delay", "busy_until", "size_sum",
                 "_rows", "_starts", "_ends", "_sizes", "_head")

    def __init__(self, capacity: float, wlan_delay: float):
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        if wlan_delay < 0:
            raise ValueError("wlan_delay must be >= 0")
        self.capacity = capacity
        self.wlan_delay = wlan_delay
        self.busy_until = 0.0        # sim time when all accepted work is done
        self.size_sum = 0.0          # total CPU units not yet fully served
        self._rows: list = []        # caller-chosen task keys
        self._starts: list = []
        self._ends: list = []
        self._sizes: list = []
        self._head = 0

    def enqueue(self, row, size: float, now: float) -> tuple[float, float]:
        """Append a task; returns (work_end, result_arrival) sim times."""
        ready = now + self.wlan_delay
        start = self.busy_until if self.busy_until > ready else ready
        end = start + size / self.capacity
        self._rows.append(row)
        self._starts.append(start)
        self._ends.append(end)
        self._sizes.append(size)
        self.size_sum += size
        self.busy_until = end
        return end, end + self.wlan_delay

    def prune(self, now: float) -> None:
        """Drop entries whose work finished at or before `now`."""
        h = self._head
        ends = self._ends
        sizes = self._sizes
        n = len(ends)
        while h < n and ends[h] <= now:
            self.size_sum -= sizes[h]
            h += 1
        self._head = h
        if h > 4096 and h * 2 > n:
            del self._rows[:h]
            del self._starts[:h]
            del self._ends[:h]
            del self._sizes[:h]
            self._head = 0

    def backlog_work(self, now: float) -> float:
        """Sum of remaining CPU units, including the in-service task."""
        self.prune(now)
        h = self._head
        if h >= len(self._ends):
            return 0.0
        s0 = self._starts[h]
        if s0 < now:
            return self.size_sum - (now - s0) * self.capacity
        return self.size_sum

    def queued(self, now: float) -> list[tuple[object, float]]:
        """(task key, remaining CPU units) for every unfinished entry."""
        self.prune(now)
        out = []
        for i in range(self._head, len(self._ends)):
            remaining = self._sizes[i]
            if self._starts[i] < now:
                remaining -= (now - self._starts[i]) * self.capacity
            out.append((self._rows[i], remaining))
        return out

    def drop_pending(self, now: float) -> list:
        """Clear the queue; returns the task keys that were still unfinished."""
        self.prune(now)
        dropped = self._rows[self._head:]
        self._rows = []
        self._starts = []
        self._ends = []
        self._sizes = []
        self._head = 0
        self.size_sum = 0.0
        self.busy_until = 0.0
        return dropped

    def __len__(self) -> int:
        return len(self._ends) - self._head


@dataclass
class EdgeServer:
    id: str
    town: str
    capacity: float
    wlan_delay: float            # one-way seconds
    operational: bool = True
    queue: FifoQueue = field(init=False)

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError("edge capacity must be > 0")
        self.queue = FifoQueue(self.capacity, self.wlan_delay)


@dataclass(frozen=True)
class Flying:
    destination: Position
    arrival_at: float


@dataclass
class Uav:
    id: str
    position: Position
    altitude: float              # descriptive only; does not affect delays
    capacity: float
    coverage_radius: float       # horizontal meters
    speed: float                 # meters per second
    wlan_delay: float            # one-way seconds
    flight_state: Optional[Flying] = None    # None means stationed
    queue: FifoQueue = field(init=False)

    def __post_init__(self) -> None:
        if self.capacity <= 0 or self.coverage_radius <= 0 or self.speed <= 0:
            raise ValueError("uav capacity, coverage_radius and speed must be > 0")
        self.queue = FifoQueue(self.capacity, self.wlan_delay)

    @property
    def is_stationed(self) -> bool:
        return self.flight_state is None


def in_uav_coverage(user: User, uav: Uav) -> bool:
    """True iff the UAV is stationed and the user is inside its horizontal range."""
    if not uav.is_stationed:
        return False
    return horizontal_distance(user.position, uav.position) <= uav.coverage_radius


@dataclass(frozen=True)
class RelocationCommand:
    uav: str
    destination: Position
    issued_at: float


@dataclass(frozen=True)
class HapSnapshot:
    """Aggregate world view handed to deployment policies at each tick.

    Rates and demand statistics describe the last observation window; UAV
    entries carry (position, flight state, containing town or None).
    """

    taken_at: float
    per_town_task_counts: dict[str, int]
    per_town_arrival_rate: dict[str, float]
    per_town_mean_cpu_demand: dict[str, float]
    per_town_min_required_delay: dict[str, Optional[float]]
    per_town_operational_capacity: dict[str, float]
    uncovered_users: list[tuple[str, Position]]
    uav_states: dict[str, tuple[Position, Optional[Flying], Optional[str]]]


@dataclass
class WorldState:
    towns: dict[str, Town]
    users: dict[str, User]
    edges: dict[str, EdgeServer]
    uavs: dict[str, Uav]
    clock: float = 0.0

    def town_edge(self, town_id: str) -> Optional[EdgeServer]:
        town = self.towns[town_id]
        if town.edge_server is None:
            return None
        return self.edges[town.edge_server]

    def town_of(self, p: Position) -> Optional[str]:
        for tid in sorted(self.towns):
            if self.towns[tid].contains(p):
                return tid
        return None
