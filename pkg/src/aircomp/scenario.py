"""Declarative scenarios: towns, populations, fleet and timed world mutations.

The built-in earthquake timeline covers three towns, destroys the first
town's edge server at 1000 s, triples application usage at the same moment,
and doubles every town's population at 2000 s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

from .domain import ApplicationProfile, Position, Town, User, WorldState

EVENT_KINDS = ("destroy_edge", "set_interarrival", "spawn_users")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    """The scenario file is not syntactically valid."""


class ValidationError(ScenarioError):
    """The scenario violates schema invariants; lists every violation."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {v}" for v in violations))


class UnknownTownError(ScenarioError):
    pass


@dataclass(frozen=True)
class SimConfig:
    duration: float = 4000.0
    policy_tick_period: float = 10.0
    metrics_bucket: float = 100.0
    seed: int = 1
    deterministic_arrivals: bool = False
    wlan_is_round_trip: bool = False


@dataclass(frozen=True)
class EdgeSpec:
    capacity: float = 100_000.0
    wlan_delay: float = 0.001


@dataclass(frozen=True)
class TownSpec:
    id: str
    center_x: float
    center_y: float
    radius: float
    edge: Optional[EdgeSpec] = None

    def town(self) -> Town:
        edge_id = f"edge-{self.id}" if self.edge is not None else None
        return Town(id=self.id, center=Position(self.center_x, self.center_y),
                    radius=self.radius, edge_server=edge_id)


@dataclass(frozen=True)
class UavFleetSpec:
    count: int = 8
    capacity: float = 50_000.0
    coverage_radius: float = 100.0
    altitude: float = 200.0
    speed: float = 20.0
    wlan_delay: float = 0.005
    depot_x: float = 3000.0
    depot_y: float = 2000.0


@dataclass(frozen=True)
class PopulationSpec:
    town: str
    count: int
    cpu_demand: float
    worst_case_delay: float
    mean_interarrival: float
    active_from: float = 0.0


@dataclass(frozen=True)
class TimedEvent:
    at: float
    kind: str
    town: Optional[str] = None
    mean_interarrival: Optional[float] = None        # set_interarrival
    population: Optional[PopulationSpec] = None      # spawn_users


@dataclass(frozen=True)
class Scenario:
    sim: SimConfig = field(default_factory=SimConfig)
    towns: tuple[TownSpec, ...] = ()
    uavs: UavFleetSpec = field(default_factory=UavFleetSpec)
    populations: tuple[PopulationSpec, ...] = ()
    events: tuple[TimedEvent, ...] = ()


# Known a priori: pre-quake mean interarrival and per-task demand; the
# earthquake triples usage (interarrival 3.33 s -> 1 s) and town 3 tolerates
# twice the latency. Post-2000 newcomers run a 1 s budget / 1 s interarrival
# profile, except town 3 where aftershock monitoring needs 12 units in 5 s.
def build_default_earthquake(users_per_town: int = 600, uav_count: int = 8,
                             seed: int = 1) -> Scenario:
    if users_per_town < 1:
        raise ValueError("users_per_town must be >= 1")
    towns = tuple(
        TownSpec(id=f"town-{i + 1}", center_x=3000.0 * i, center_y=0.0,
                 radius=80.0, edge=EdgeSpec())
        for i in range(3)
    )
    populations = (
        PopulationSpec("town-1", users_per_town, 90.0, 1.0, 3.33),
        PopulationSpec("town-2", users_per_town, 90.0, 1.0, 3.33),
        PopulationSpec("town-3", users_per_town, 90.0, 2.0, 3.33),
    )
    events = (
        TimedEvent(at=1000.0, kind="destroy_edge", town="town-1"),
        TimedEvent(at=1000.0, kind="set_interarrival", town="town-1", mean_interarrival=1.0),
        TimedEvent(at=1000.0, kind="set_interarrival", town="town-2", mean_interarrival=1.0),
        TimedEvent(at=1000.0, kind="set_interarrival", town="town-3", mean_interarrival=1.0),
        TimedEvent(at=2000.0, kind="spawn_users",
                   population=PopulationSpec("town-1", users_per_town, 90.0, 1.0, 1.0, 2000.0)),
        TimedEvent(at=2000.0, kind="spawn_users",
                   population=PopulationSpec("town-2", users_per_town, 90.0, 1.0, 1.0, 2000.0)),
        TimedEvent(at=2000.0, kind="spawn_users",
                   population=PopulationSpec("town-3", users_per_town, 12.0, 5.0, 1.0, 2000.0)),
    )
    return Scenario(
        sim=SimConfig(seed=seed),
        towns=towns,
        uavs=UavFleetSpec(count=uav_count),
        populations=populations,
        events=events,
    )


def validate(scenario: Scenario) -> list[str]:
    """Collect every violated invariant; empty list means valid."""
    bad: list[str] = []
    sim = scenario.sim
    if sim.duration <= 0:
        bad.append(f"sim.duration must be > 0, got {sim.duration}")
    if sim.policy_tick_period <= 0:
        bad.append(f"sim.policy_tick_period must be > 0, got {sim.policy_tick_period}")
    if sim.metrics_bucket <= 0:
        bad.append(f"sim.metrics_bucket must be > 0, got {sim.metrics_bucket}")

    town_ids = [t.id for t in scenario.towns]
    if len(set(town_ids)) != len(town_ids):
        bad.append("duplicate town ids")
    for t in scenario.towns:
        if t.radius <= 0:
            bad.append(f"town {t.id}: radius must be > 0")
        if not all(math.isfinite(v) for v in (t.center_x, t.center_y)):
            bad.append(f"town {t.id}: center must be finite")
        if t.edge is not None:
            if t.edge.capacity <= 0:
                bad.append(f"town {t.id}: edge.capacity must be > 0")
            if t.edge.wlan_delay < 0:
                bad.append(f"town {t.id}: edge.wlan_delay must be >= 0")
    for i, a in enumerate(scenario.towns):
        for b in scenario.towns[i + 1:]:
            if math.hypot(a.center_x - b.center_x, a.center_y - b.center_y) < a.radius + b.radius:
                bad.append(f"towns {a.id} and {b.id} overlap")

    u = scenario.uavs
    if u.count < 0:
        bad.append("uavs.count must be >= 0")
    if u.count > 0 and (u.capacity <= 0 or u.coverage_radius <= 0 or u.speed <= 0):
        bad.append("uavs capacity, coverage_radius and speed must be > 0")
    if u.wlan_delay < 0:
        bad.append("uavs.wlan_delay must be >= 0")

    known = set(town_ids)
    for p in scenario.populations:
        bad.extend(_check_population(p, known, "populations"))
    for i, ev in enumerate(scenario.events):
        where = f"events[{i}]"
        if ev.kind not in EVENT_KINDS:
            bad.append(f"{where}: unknown kind {ev.kind!r}")
            continue
        if not (0 <= ev.at <= sim.duration):
            bad.append(f"{where}: at={ev.at} outside [0, {sim.duration}]")
        if ev.kind in ("destroy_edge", "set_interarrival"):
            if ev.town not in known:
                bad.append(f"{where}: unknown town {ev.town!r}")
        if ev.kind == "set_interarrival":
            if ev.mean_interarrival is None or ev.mean_interarrival <= 0:
                bad.append(f"{where}: mean_interarrival must be > 0")
        if ev.kind == "spawn_users":
            if ev.population is None:
                bad.append(f"{where}: spawn_users needs a population")
            else:
                bad.extend(_check_population(ev.population, known, where))
                if ev.population.active_from != ev.at:
                    bad.append(f"{where}: population.active_from must equal event time")
    return bad


def _check_population(p: PopulationSpec, towns: set[str], where: str) -> list[str]:
    bad = []
    if p.town not in towns:
        bad.append(f"{where}: unknown town {p.town!r}")
    if p.count < 0:
        bad.append(f"{where}: count must be >= 0")
    if p.cpu_demand <= 0:
        bad.append(f"{where}: cpu_demand must be > 0")
    if p.worst_case_delay <= 0:
        bad.append(f"{where}: worst_case_delay must be > 0")
    if p.mean_interarrival <= 0:
        bad.append(f"{where}: mean_interarrival must be > 0")
    if p.active_from < 0:
        bad.append(f"{where}: active_from must be >= 0")
    return bad


def scenario_to_dict(scenario: Scenario) -> dict:
    d = asdict(scenario)
    d["towns"] = list(d["towns"])
    d["populations"] = list(d["populations"])
    events = []
    for ev in d["events"]:
        events.append({k: v for k, v in ev.items() if v is not None})
    d["events"] = events
    return d


def scenario_from_dict(d: dict) -> Scenario:
    try:
        sim = SimConfig(**d.get("sim", {}))
        towns = tuple(
            TownSpec(
                id=t["id"], center_x=t["center_x"], center_y=t["center_y"],
                radius=t["radius"],
                edge=EdgeSpec(**t["edge"]) if t.get("edge") is not None else None,
            )
            for t in d.get("towns", [])
        )
        uavs = UavFleetSpec(**d.get("uavs", {}))
        populations = tuple(PopulationSpec(**p) for p in d.get("populations", []))
        events = []
        for ev in d.get("events", []):
            ev = dict(ev)
            pop = ev.pop("population", None)
            events.append(TimedEvent(
                population=PopulationSpec(**pop) if pop is not None else None, **ev))
    except (TypeError, KeyError) as exc:
        raise ValidationError([f"malformed scenario structure: {exc}"]) from exc
    scenario = Scenario(sim=sim, towns=towns, uavs=uavs,
                        populations=populations, events=tuple(events))
    violations = validate(scenario)
    if violations:
        raise ValidationError(violations)
    return scenario


def load_scenario(path: str) -> Scenario:
    """Parse and validate a scenario file; `builtin:earthquake` is accepted."""
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        if name != "earthquake":
            raise ValidationError([f"unknown builtin scenario {name!r}"])
        return build_default_earthquake()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scenario_from_dict(raw)


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_event(world: WorldState, event: TimedEvent, *,
                task_registry: Optional[dict] = None,
                rng=None, next_user_id: int = 0) -> list[str]:
    """Mutate a world per one timed event at world.clock == event.at.

    destroy_edge fails every still-queued task at event time and closes the
    server. set_interarrival rewrites the mean for users existing in the
    town (later arrivals use the new mean). spawn_users creates users placed
    uniformly inside the town disk (an rng is required). Returns the ids of
    created users or dropped tasks. The simulation engine applies the same
    semantics on its compiled task columns.
    """
    if event.kind in ("destroy_edge", "set_interarrival") and event.town not in world.towns:
        raise UnknownTownError(event.town)
    if event.kind == "destroy_edge":
        edge = world.town_edge(event.town)
        if edge is None:
            return []
        edge.operational = False
        dropped = edge.queue.drop_pending(event.at)
        out = []
        for key in dropped:
            if task_registry is not None and key in task_registry:
                task_registry[key].mark_no_resource(event.at)
            out.append(str(key))
        return out
    if event.kind == "set_interarrival":
        from dataclasses import replace as _replace
        for user in world.users.values():
            if user.town == event.town:
                user.profile = _replace(user.profile,
                                        mean_interarrival=event.mean_interarrival)
        return []
    if event.kind == "spawn_users":
        pop = event.population
        if pop.town not in world.towns:
            raise UnknownTownError(pop.town)
        if rng is None:
            raise ValueError("spawn_users needs an rng for user placement")
        town = world.towns[pop.town]
        created = []
        for i in range(pop.count):
            uid = f"u{next_user_id + i:05d}"
            r = town.radius * math.sqrt(rng.random())
            theta = 2.0 * math.pi * rng.random()
            world.users[uid] = User(
                id=uid, town=pop.town,
                position=Position(town.center.x + r * math.cos(theta),
                                  town.center.y + r * math.sin(theta)),
                profile=ApplicationProfile(
                    id=f"profile-{uid}", cpu_demand=pop.cpu_demand,
                    worst_case_delay=pop.worst_case_delay,
                    mean_interarrival=pop.mean_interarrival),
                active_from=pop.active_from)
            created.append(uid)
        return created
    raise ValueError(f"unknown event kind {event.kind!r}")
