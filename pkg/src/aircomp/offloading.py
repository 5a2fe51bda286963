"""Offloading rule: send each task to the eligible resource with the smallest
estimated response time, served FIFO without preemption."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .domain import (
    Task,
    TaskOutcome,
    User,
    WorldState,
    in_uav_coverage,
)


@dataclass(frozen=True)
class ResourceRef:
    kind: str                    # "edge" or "uav"
    id: str


def eligible_resources(user: User, world: WorldState) -> list[ResourceRef]:
    """Resources the user may offload to right now.

    The town edge server comes first when operational (edge coverage is
    membership based, every town user is in range); stationed UAVs whose
    horizontal range covers the user follow in id order.
    """
    out: list[ResourceRef] = []
    edge = world.town_edge(user.town)
    if edge is not None and edge.operational:
        out.append(ResourceRef("edge", edge.id))
    for uav_id in sorted(world.uavs):
        if in_uav_coverage(user, world.uavs[uav_id]):
            out.append(ResourceRef("uav", uav_id))
    return out


def _queue_of(ref: ResourceRef, world: WorldState):
    if ref.kind == "edge":
        return world.edges[ref.id].queue
    return world.uavs[ref.id].queue


def estimate_response_time(ref: ResourceRef, task: Union[Task, float],
                           world: WorldState) -> float:
    """backlog/capacity + demand/capacity + both WLAN legs, at the current clock."""
    cpu = task.cpu_demand if isinstance(task, Task) else float(task)
    q = _queue_of(ref, world)
    return (q.backlog_work(world.clock) + cpu) / q.capacity + 2.0 * q.wlan_delay


def offload(task: Task, world: WorldState) -> Optional[ResourceRef]:
    """Enqueue the task on the argmin-response-time eligible resource.

    Returns the chosen resource, or None after marking the task failed when
    nothing is eligible. Ties keep the eligibility order (edge first, then
    UAVs by id).
    """
    user = world.users[task.owner]
    best: Optional[ResourceRef] = None
    best_rt = float("inf")
    for ref in eligible_resources(user, world):
        rt = estimate_response_time(ref, task, world)
        if rt < best_rt:
            best = ref
            best_rt = rt
    if best is None:
        task.mark_no_resource(task.created_at)
        return None
    _queue_of(best, world).enqueue(task.id, task.cpu_demand, world.clock)
    return best


def complete(task: Task, ref: ResourceRef, world: WorldState, now: float) -> TaskOutcome:
    """Finalize the head-of-queue task whose result arrives at `now`.

    The task's work reached zero one WLAN delay earlier; the outcome compares
    the realized latency against the inclusive worst-case budget.
    """
    q = _queue_of(ref, world)
    q.prune(now - q.wlan_delay)
    return task.classify(now)
