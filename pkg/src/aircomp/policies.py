"""UAV deployment policies run on the controller at every tick.

Each policy consumes a HapSnapshot plus static fleet/town facts and returns
relocation commands for stationed UAVs only; a flying UAV is never redirected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import HapSnapshot, Position, RelocationCommand, Town

POLICY_NAMES = ("none", "random", "load-balancing", "emergency", "lsi")

# UAVs this close to their target are treated as already there.
ARRIVAL_EPS = 1e-9


class DegenerateInputError(ValueError):
    """Raised when k-means is asked for more clusters than points."""


class Unstable:
    """Sentinel value: the M/M/1 queue has no finite mean response time."""

    _instance: Optional["Unstable"] = None

    def __new__(cls) -> "Unstable":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Unstable"


UNSTABLE = Unstable()


@dataclass(frozen=True)
class PolicySpec:
    """Selected policy variant and its tuning knobs.

    The load-balancing decrement defaults to a fixed 500 tasks per assigned
    UAV, which spreads the fleet close to proportionally to town task counts;
    decrement=None instead derives, per town, how many tasks one UAV can
    absorb in one observation window from the measured mean demand (a much
    stickier allocation). k_override forces the emergency cluster count.
    """

    kind: str = "none"
    decrement: Optional[float] = 500.0
    window: Optional[float] = None
    kmeans_iters: int = 50
    k_override: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.kind!r}, expected one of {POLICY_NAMES}")
        if self.decrement is not None and self.decrement <= 0:
            raise ValueError("decrement must be > 0")
        if self.kmeans_iters < 1:
            raise ValueError("kmeans_iters must be >= 1")


@dataclass(frozen=True)
class TownLoadModel:
    """Per-town M/M/1 view: arrival rate, demand, capacity and delay target."""

    town: str
    lam: float                   # tasks per second
    mean_cpu: float              # CPU units per task
    capacity: float              # CPU units per second
    required_delay: float        # seconds

    @property
    def mu(self) -> float:
        """Service rate in tasks per second; infinite for zero-demand tasks."""
        if self.mean_cpu > 0:
            return self.capacity / self.mean_cpu
        return math.inf if self.capacity > 0 else 0.0


def mm1_response_time(model: TownLoadModel):
    """Mean response time 1/(mu - lambda), or UNSTABLE when mu <= lambda."""
    mu = model.mu
    if mu <= model.lam:
        return UNSTABLE
    if math.isinf(mu):
        return 0.0
    return 1.0 / (mu - model.lam)


def capacity_deficit(model: TownLoadModel) -> float:
    """CPU-units/sec the town lacks to meet its delay target, 0 when healthy."""
    if model.lam <= 0 or model.mean_cpu <= 0:
        return 0.0
    rt = mm1_response_time(model)
    load = model.lam * model.mean_cpu
    if rt is not UNSTABLE and rt <= model.required_delay and load <= model.capacity:
        return 0.0
    mu_required = model.lam + 1.0 / model.required_delay
    return max(0.0, mu_required * model.mean_cpu - model.capacity)


def required_uavs(model: TownLoadModel, uav_capacity: float) -> int:
    """UAVs needed on top of the town's current capacity.

    Zero when the estimated M/M/1 response time meets the required delay and
    the load fits the capacity; otherwise enough UAVs to cover the capacity
    shortfall of a service rate of lambda + 1/required_delay.
    """
    if uav_capacity <= 0:
        raise ValueError("uav_capacity must be > 0")
    deficit = capacity_deficit(model)
    if deficit <= 0:
        return 0
    return math.ceil(deficit / uav_capacity)


def kmeans(points, k: int, iters: int, rng: np.random.Generator) -> list[Position]:
    """Lloyd's algorithm with k initial centers drawn from the points.

    Assignment ties go to the lowest centroid index; an emptied cluster is
    re-seeded to the point farthest from its own centroid. Stops early once
    assignments are stable.
    """
    pts = np.asarray([(p.x, p.y) if isinstance(p, Position) else p for p in points],
                     dtype=float)
    n = len(pts)
    if k < 1:
        raise DegenerateInputError("k must be >= 1")
    if k > n:
        raise DegenerateInputError(f"k={k} exceeds {n} points")
    centers = pts[rng.choice(n, size=k, replace=False)].copy()
    prev = None
    for _ in range(iters):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for c in range(k):
            if not (assign == c).any():
                own = d2[np.arange(n), assign]
                far = int(own.argmax())
                centers[c] = pts[far]
                assign[far] = c
        if prev is not None and (assign == prev).all():
            break
        prev = assign.copy()
        for c in range(k):
            centers[c] = pts[assign == c].mean(axis=0)
    return [Position(float(x), float(y)) for x, y in centers]


def wcss(points, centroids: list[Position]) -> float:
    """Within-cluster sum of squares of points against their nearest centroid."""
    pts = np.asarray([(p.x, p.y) if isinstance(p, Position) else p for p in points],
                     dtype=float)
    cen = np.asarray([(c.x, c.y) for c in centroids], dtype=float)
    d2 = ((pts[:, None, :] - cen[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def uncovered_positions(snapshot: HapSnapshot) -> list[Position]:
    """Positions of the active users that currently have no eligible resource."""
    return [pos for _uid, pos in snapshot.uncovered_users]


def _stationed(snapshot: HapSnapshot) -> list[str]:
    return [uid for uid in sorted(snapshot.uav_states)
            if snapshot.uav_states[uid][1] is None]


def _flying_to_town(snapshot: HapSnapshot, towns: dict[str, Town]) -> dict[str, int]:
    inbound: dict[str, int] = {tid: 0 for tid in towns}
    for _uid, (_pos, flying, _town) in snapshot.uav_states.items():
        if flying is None:
            continue
        for tid in sorted(towns):
            if towns[tid].contains(flying.destination):
                inbound[tid] += 1
                break
    return inbound


def _command(snapshot: HapSnapshot, uav_id: str, dest: Position,
             out: list[RelocationCommand]) -> None:
    pos = snapshot.uav_states[uav_id][0]
    if math.hypot(pos.x - dest.x, pos.y - dest.y) <= ARRIVAL_EPS:
        return
    out.append(RelocationCommand(uav=uav_id, destination=dest, issued_at=snapshot.taken_at))


def plan_load_balancing(snapshot: HapSnapshot, towns: dict[str, Town],
                        uav_capacity: float, window: float,
                        decrement: Optional[float] = None) -> list[RelocationCommand]:
    """Greedy task-count balancer.

    Repeatedly picks the town with the highest working task count (ties to
    the lowest town id), assigns it one UAV and subtracts the decrement from
    the working count, floored at zero. UAVs already stationed in a chosen
    town, or flying toward it, fill its picks first and are not commanded;
    only the net moves are issued, drawn from stationed UAVs in id order.
    """
    town_ids = sorted(towns)
    working = {tid: float(snapshot.per_town_task_counts.get(tid, 0)) for tid in town_ids}
    decr: dict[str, float] = {}
    for tid in town_ids:
        if decrement is not None:
            decr[tid] = decrement
        else:
            mean_cpu = snapshot.per_town_mean_cpu_demand.get(tid, 0.0)
            decr[tid] = uav_capacity * window / mean_cpu if mean_cpu > 0 else math.inf

    in_town: dict[str, list[str]] = {tid: [] for tid in town_ids}
    free: list[str] = []
    for uid in _stationed(snapshot):
        pos = snapshot.uav_states[uid][0]
        for tid in town_ids:
            if towns[tid].contains(pos):
                in_town[tid].append(uid)
                break
        else:
            free.append(uid)
    flying_to = _flying_to_town(snapshot, towns)
    n_units = len(free) + sum(len(v) for v in in_town.values()) + sum(flying_to.values())

    targets: list[str] = []
    for _ in range(n_units):
        tid = min(town_ids, key=lambda t: (-working[t], t))
        targets.append(tid)
        working[tid] = max(0.0, working[tid] - decr[tid])

    # release stationed UAVs beyond a town's target (highest ids first)
    target_count = {tid: targets.count(tid) for tid in town_ids}
    remaining: dict[str, int] = {}
    for tid in town_ids:
        kept = min(len(in_town[tid]), target_count[tid])
        free.extend(in_town[tid][kept:])
        remaining[tid] = kept + flying_to[tid]
    free.sort()

    commands: list[RelocationCommand] = []
    for tid in targets:
        if remaining[tid] > 0:
            remaining[tid] -= 1
        elif free:
            _command(snapshot, free.pop(0), towns[tid].center, commands)
    return commands


def plan_emergency(snapshot: HapSnapshot, towns: dict[str, Town],
                   rng: np.random.Generator, kmeans_iters: int = 50,
                   k_override: Optional[int] = None) -> list[RelocationCommand]:
    """Send every stationed UAV to the uncovered users' k-means centers.

    k is the number of towns containing uncovered users (one per destroyed
    infrastructure), clamped to the stationed fleet and point count. UAVs are
    spread round-robin over the centroids in id order. No uncovered users
    means no disaster: returns no commands.
    """
    uncovered = snapshot.uncovered_users
    if not uncovered:
        return []
    stationed = _stationed(snapshot)
    if not stationed:
        return []
    pts = [pos for _uid, pos in uncovered]
    if k_override is not None:
        k = k_override
    else:
        hit = set()
        for p in pts:
            for tid in sorted(towns):
                if towns[tid].contains(p):
                    hit.add(tid)
                    break
        k = max(1, len(hit))
    k = min(k, len(stationed), len(pts))
    centroids = kmeans(pts, k, kmeans_iters, rng)
    commands: list[RelocationCommand] = []
    for i, uid in enumerate(stationed):
        _command(snapshot, uid, centroids[i % k], commands)
    return commands


def plan_lsi(snapshot: HapSnapshot, towns: dict[str, Town],
             uav_capacity: float) -> list[RelocationCommand]:
    """Location selection index: fill per-town UAV requirements by deficit.

    Each town's requirement comes from required_uavs() over its measured
    window load and strictest delay target; UAVs already flying toward a town
    count against its requirement. Towns with the largest capacity deficit are
    filled first from stationed UAVs parked outside every town; leftovers
    stay put.
    """
    town_ids = sorted(towns)
    inbound = _flying_to_town(snapshot, towns)
    needs: dict[str, int] = {}
    deficits: dict[str, float] = {}
    for tid in town_ids:
        d = snapshot.per_town_min_required_delay.get(tid)
        lam = snapshot.per_town_arrival_rate.get(tid, 0.0)
        if d is None or lam <= 0:
            needs[tid] = 0
            deficits[tid] = 0.0
            continue
        model = TownLoadModel(
            town=tid,
            lam=lam,
            mean_cpu=snapshot.per_town_mean_cpu_demand.get(tid, 0.0),
            capacity=snapshot.per_town_operational_capacity.get(tid, 0.0),
            required_delay=d,
        )
        deficits[tid] = capacity_deficit(model)
        needs[tid] = max(0, required_uavs(model, uav_capacity) - inbound[tid])

    pool: list[str] = []
    for uid in _stationed(snapshot):
        pos = snapshot.uav_states[uid][0]
        if not any(towns[tid].contains(pos) for tid in town_ids):
            pool.append(uid)

    commands: list[RelocationCommand] = []
    for tid in sorted(town_ids, key=lambda t: (-deficits[t], t)):
        for _ in range(needs[tid]):
            if not pool:
                return commands
            _command(snapshot, pool.pop(0), towns[tid].center, commands)
    return commands


def plan_random(snapshot: HapSnapshot, towns: dict[str, Town],
                rng: np.random.Generator) -> list[RelocationCommand]:
    """Baseline: assign every stationed UAV to a uniformly random town center."""
    town_ids = sorted(towns)
    commands: list[RelocationCommand] = []
    for uid in _stationed(snapshot):
        tid = town_ids[int(rng.integers(len(town_ids)))]
        _command(snapshot, uid, towns[tid].center, commands)
    return commands


def plan(policy: PolicySpec, snapshot: HapSnapshot, towns: dict[str, Town],
         uav_capacity: float, tick_period: float,
         rng: np.random.Generator) -> list[RelocationCommand]:
    """Dispatch to the selected policy; the no-UAV policy never commands."""
    if policy.kind == "none":
        return []
    if policy.kind == "random":
        return plan_random(snapshot, towns, rng)
    if policy.kind == "load-balancing":
        window = policy.window if policy.window is not None else tick_period
        return plan_load_balancing(snapshot, towns, uav_capacity, window,
                                   decrement=policy.decrement)
    if policy.kind == "emergency":
        return plan_emergency(snapshot, towns, rng,
                              kmeans_iters=policy.kmeans_iters,
                              k_override=policy.k_override)
    if policy.kind == "lsi":
        return plan_lsi(snapshot, towns, uav_capacity)
    raise ValueError(f"unknown policy kind {policy.kind!r}")
