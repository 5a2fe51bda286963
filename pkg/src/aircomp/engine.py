"""Deterministic event-driven simulation core.

Discrete events (policy ticks, scenario events, UAV arrivals, metrics
flushes) dispatch in (timestamp, insertion) order from a binary heap. Task
arrivals are not heap events: each user's renewal stream is compiled up
front from its own seeded substream (the declared scenario timeline fixes
when a town's mean interarrival changes, so the draws replay exactly what an
event-per-arrival loop would produce), merged into per-town time-sorted
columns and dispatched in bulk between consecutive discrete events. Service
is FIFO at full capacity with no preemption, which makes every completion
time computable at enqueue; spans whose town sees a single eligible resource
run fully vectorized, the rest run a tight scalar dispatch loop.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import struct
import time
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .domain import (
    ApplicationProfile,
    EdgeServer,
    Flying,
    HapSnapshot,
    Position,
    Town,
    Uav,
    User,
    WorldState,
    horizontal_distance,
)
from .metrics import (
    CENSORED,
    FAILED_DEADLINE,
    FAILED_NO_RESOURCE,
    SUCCESS,
    MetricsLedger,
)
from .policies import PolicySpec, plan
from .scenario import Scenario, SimConfig, TimedEvent, ValidationError, validate

# Row keys stored in resource queues encode (town index, task row).
ROW_MOD = 100_000_000

# Seed-stream tags so adding users or policies never perturbs other draws.
_STREAM_ARRIVALS = 1
_STREAM_LAYOUT = 2
_STREAM_POLICY = 3

_RES_NONE = -1          # no eligible resource at creation
_RES_DESTROYED = -2     # purged from a destroyed edge queue


class EventKind(IntEnum):
    TASK_ARRIVAL = 0
    TASK_COMPLETION = 1
    UAV_ARRIVAL = 2
    POLICY_TICK = 3
    SCENARIO_EVENT = 4
    METRICS_FLUSH = 5


@dataclass(frozen=True)
class Event:
    at: float
    kind: EventKind
    key: object = None


class SchedulingInPastError(ValueError):
    pass


class EventQueue:
    """Timestamp-ordered queue; equal timestamps keep insertion order."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = 0
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, event: Event) -> None:
        if event.at < self.now:
            raise SchedulingInPastError(
                f"event at {event.at} is before the clock {self.now}")
        heapq.heappush(self._heap, (event.at, self._seq, event))
        self._seq += 1

    def peek_time(self) -> float:
        return self._heap[0][0]

    def pop(self) -> Event:
        at, _seq, event = heapq.heappop(self._heap)
        self.now = at
        return event


def sample_interarrival(rng, mean: float) -> float:
    """Inverse-transform exponential sample: -mean*ln(1-u), u uniform on [0,1)."""
    if mean <= 0:
        raise ValueError("mean must be > 0")
    return -mean * math.log1p(-rng.random())


@dataclass(frozen=True)
class _UserRec:
    uid: int
    id: str
    town_idx: int
    x: float
    y: float
    cpu: float
    budget: float
    mean0: float
    active_from: float
    spawn_event: Optional[int]      # scenario event index that creates the user


def _user_position(seed: int, uid: int, cx: float, cy: float, radius: float) -> tuple[float, float]:
    rng = np.random.default_rng(np.random.SeedSequence((seed, _STREAM_LAYOUT, uid)))
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return cx + r * math.cos(theta), cy + r * math.sin(theta)


def _compile_user_arrivals(seed: int, rec: _UserRec, changes: list[tuple[float, float]],
                           duration: float, deterministic: bool) -> np.ndarray:
    """All arrival times in [active_from, duration) for one user.

    `changes` lists (time, new_mean) mean switches that apply to this user.
    A gap is always drawn with the mean in force at the arrival that draws
    it, so an arrival can overshoot a switch; only later draws see it. Unit
    exponentials are drawn in chunks and scaled by the current mean, which
    reproduces, draw for draw, what an event-per-arrival loop sampling
    -mean*ln(1-u) would produce from the same substream.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, _STREAM_ARRIVALS, rec.uid)))
    out: list[np.ndarray] = []
    t = rec.active_from
    chunk = 512
    buf = np.empty(0, dtype=np.float64)

    def mean_at(when: float) -> float:
        m = rec.mean0
        for ct, cm in changes:
            if ct <= when:
                m = cm
            else:
                break
        return m

    def next_change(when: float) -> float:
        for ct, _cm in changes:
            if ct > when:
                return ct
        return math.inf

    while t < duration:
        m = mean_at(t)
        bound = min(next_change(t), duration)
        while True:
            if deterministic:
                n = max(1, int((bound - t) / m) + 2)
                cand = t + m * np.arange(1.0, n + 1.0)
            else:
                if not len(buf):
                    buf = -np.log1p(-rng.random(chunk))
                cand = t + m * np.cumsum(buf)
            j = int(np.searchsorted(cand, bound, side="left"))
            if j < len(cand):
                out.append(cand[:j + 1])
                t = float(cand[j])
                if not deterministic:
                    buf = buf[j + 1:]
                break
            out.append(cand)
            t = float(cand[-1])
            if not deterministic:
                buf = buf[:0]
    if not out:
        return np.empty(0, dtype=np.float64)
    arr = np.concatenate(out)
    return arr[arr < duration]


class _Slot:
    """One offloadable resource bound to its queue and global index."""

    __slots__ = ("index", "kind", "res_id", "queue", "uav")

    def __init__(self, index: int, kind: str, res_id: str, queue, uav: Optional[Uav] = None):
        self.index = index
        self.kind = kind
        self.res_id = res_id
        self.queue = queue
        self.uav = uav


class _TownRuntime:
    """Per-town task columns, user statics and the current eligibility view."""

    __slots__ = ("idx", "id", "cx", "cy", "radius", "edge_slot",
                 "user_ids", "ux", "uy", "uactive", "ucpu", "ubudget",
                 "delay_entries", "times", "urows", "sizes_cache",
                 "completed", "rescode", "cursor",
                 "win_count", "win_cpu", "elig_entries", "uniform_slots")

    def __init__(self, idx: int, town: Town):
        self.idx = idx
        self.id = town.id
        self.cx = town.center.x
        self.cy = town.center.y
        self.radius = town.radius
        self.edge_slot: Optional[_Slot] = None
        self.user_ids: list[str] = []
        self.delay_entries: list[tuple[float, float]] = []
        self.cursor = 0
        self.win_count = 0
        self.win_cpu = 0.0
        self.elig_entries: list[tuple[_Slot, Optional[list[bool]]]] = []
        self.uniform_slots: Optional[list[_Slot]] = None

    def active_prefix(self, now: float) -> int:
        return int(np.searchsorted(self.uactive, now, side="right"))

    def min_required_delay(self, now: float) -> Optional[float]:
        vals = [b for af, b in self.delay_entries if af <= now]
        return min(vals) if vals else None


@dataclass
class RunResult:
    ledger: MetricsLedger
    world: WorldState
    trace_hash: Optional[str]
    task_count: int
    wall_seconds: float


class Simulation:
    def __init__(self, scenario: Scenario, policy: PolicySpec,
                 seed: Optional[int] = None, keep_tasks: bool = False,
                 trace: bool = False):
        violations = validate(scenario)
        if violations:
            raise ValidationError(violations)
        self.scenario = scenario
        self.policy = policy
        self.config: SimConfig = scenario.sim if seed is None else replace(scenario.sim, seed=seed)
        self.keep_tasks = keep_tasks
        self._digest = hashlib.sha256() if trace else None
        self._flush_count = 0
        self._build()

    # -- construction ---------------------------------------------------

    def _build(self) -> None:
        sc = self.scenario
        cfg = self.config
        seed = cfg.seed
        one_way = 0.5 if cfg.wlan_is_round_trip else 1.0

        towns: dict[str, Town] = {t.id: t.town() for t in sc.towns}
        edges: dict[str, EdgeServer] = {}
        for tspec in sc.towns:
            if tspec.edge is not None:
                eid = f"edge-{tspec.id}"
                edges[eid] = EdgeServer(id=eid, town=tspec.id,
                                        capacity=tspec.edge.capacity,
                                        wlan_delay=tspec.edge.wlan_delay * one_way)
        uavs: dict[str, Uav] = {}
        fleet = sc.uavs
        for i in range(fleet.count):
            uid = f"uav-{i}"
            uavs[uid] = Uav(id=uid, position=Position(fleet.depot_x, fleet.depot_y),
                            altitude=fleet.altitude, capacity=fleet.capacity,
                            coverage_radius=fleet.coverage_radius, speed=fleet.speed,
                            wlan_delay=fleet.wlan_delay * one_way)

        self.world = WorldState(towns=towns, users={}, edges=edges, uavs=uavs)
        self._town_ids = sorted(towns)
        self._town_idx = {tid: i for i, tid in enumerate(self._town_ids)}

        # resource slot table: edges in town order, then UAVs in id order
        self.slots: list[_Slot] = []
        for tid in self._town_ids:
            edge = self.world.town_edge(tid)
            if edge is not None:
                self.slots.append(_Slot(len(self.slots), "edge", edge.id, edge.queue))
        self._uav_slots: list[_Slot] = []
        for uid in sorted(uavs):
            slot = _Slot(len(self.slots), "uav", uid, uavs[uid].queue, uavs[uid])
            self.slots.append(slot)
            self._uav_slots.append(slot)

        self.towns_rt = [_TownRuntime(i, towns[tid]) for i, tid in enumerate(self._town_ids)]
        for trt in self.towns_rt:
            edge = self.world.town_edge(trt.id)
            if edge is not None:
                for slot in self.slots:
                    if slot.kind == "edge" and slot.res_id == edge.id:
                        trt.edge_slot = slot

        self._compile_users()
        self._compile_streams()
        self._rebuild_coverage()

        # discrete event schedule
        self.queue = EventQueue()
        for i, _ev in enumerate(sc.events):
            self.queue.schedule(Event(sc.events[i].at, EventKind.SCENARIO_EVENT, i))
        if cfg.policy_tick_period <= cfg.duration:
            self.queue.schedule(Event(cfg.policy_tick_period, EventKind.POLICY_TICK))
        if cfg.metrics_bucket <= cfg.duration:
            self.queue.schedule(Event(cfg.metrics_bucket, EventKind.METRICS_FLUSH))

        self.policy_rng = np.random.default_rng(
            np.random.SeedSequence((seed, _STREAM_POLICY)))
        self._uav_capacity = fleet.capacity if fleet.count > 0 else 50_000.0

    def _compile_users(self) -> None:
        sc = self.scenario
        seed = self.config.seed
        recs: list[_UserRec] = []
        uid = 0

        def make(pop, spawn_event: Optional[int]) -> None:
            nonlocal uid
            ti = self._town_idx[pop.town]
            town = self.world.towns[pop.town]
            for _ in range(pop.count):
                x, y = _user_position(seed, uid, town.center.x, town.center.y, town.radius)
                recs.append(_UserRec(
                    uid=uid, id=f"u{uid:05d}", town_idx=ti, x=x, y=y,
                    cpu=pop.cpu_demand, budget=pop.worst_case_delay,
                    mean0=pop.mean_interarrival, active_from=pop.active_from,
                    spawn_event=spawn_event))
                uid += 1

        for pop in sc.populations:
            make(pop, None)
        for i, ev in enumerate(sc.events):
            if ev.kind == "spawn_users":
                make(ev.population, i)

        # per-town rows ordered by (active_from, creation) so the active set
        # is always a prefix of the arrays
        self._recs_by_town: list[list[_UserRec]] = [[] for _ in self.towns_rt]
        for rec in recs:
            self._recs_by_town[rec.town_idx].append(rec)
        for ti, lst in enumerate(self._recs_by_town):
            lst.sort(key=lambda r: (r.active_from, r.uid))
            trt = self.towns_rt[ti]
            trt.user_ids = [r.id for r in lst]
            trt.ux = np.array([r.x for r in lst], dtype=np.float64)
            trt.uy = np.array([r.y for r in lst], dtype=np.float64)
            trt.uactive = np.array([r.active_from for r in lst], dtype=np.float64)
            trt.ucpu = np.array([r.cpu for r in lst], dtype=np.float64)
            trt.ubudget = np.array([r.budget for r in lst], dtype=np.float64)
            seen = {}
            for r in lst:
                key = (r.active_from, r.budget)
                seen[key] = True
            trt.delay_entries = sorted({(af, b) for af, b in seen})

        # users active at t=0 exist in the world immediately
        for rec in recs:
            if rec.spawn_event is None:
                self._add_world_user(rec)
        self._all_recs = recs

    def _add_world_user(self, rec: _UserRec) -> None:
        tid = self._town_ids[rec.town_idx]
        profile = ApplicationProfile(
            id=f"profile-{rec.uid}", cpu_demand=rec.cpu,
            worst_case_delay=rec.budget, mean_interarrival=rec.mean0)
        self.world.users[rec.id] = User(
            id=rec.id, town=tid, position=Position(rec.x, rec.y),
            profile=profile, active_from=rec.active_from)

    def _compile_streams(self) -> None:
        sc = self.scenario
        cfg = self.config
        # mean switches per town: (time, event order, mean)
        switches: dict[int, list[tuple[float, int, float]]] = {}
        for i, ev in enumerate(sc.events):
            if ev.kind == "set_interarrival":
                ti = self._town_idx[ev.town]
                switches.setdefault(ti, []).append((ev.at, i, ev.mean_interarrival))
        for ti in switches:
            switches[ti].sort()

        per_town_times: list[list[np.ndarray]] = [[] for _ in self.towns_rt]
        per_town_rows: list[list[np.ndarray]] = [[] for _ in self.towns_rt]
        for ti, lst in enumerate(self._recs_by_town):
            for row, rec in enumerate(lst):
                changes = []
                for at, order, mean in switches.get(ti, ()):
                    if at > rec.active_from or (at == rec.active_from and
                                                (rec.spawn_event is None or order > rec.spawn_event)):
                        changes.append((at, mean))
                arr = _compile_user_arrivals(cfg.seed, rec, changes, cfg.duration,
                                             cfg.deterministic_arrivals)
                if len(arr):
                    per_town_times[ti].append(arr)
                    per_town_rows[ti].append(np.full(len(arr), row, dtype=np.int32))

        for ti, trt in enumerate(self.towns_rt):
            if per_town_times[ti]:
                times = np.concatenate(per_town_times[ti])
                rows = np.concatenate(per_town_rows[ti])
                order = np.argsort(times, kind="stable")
                trt.times = times[order]
                trt.urows = rows[order]
            else:
                trt.times = np.empty(0, dtype=np.float64)
                trt.urows = np.empty(0, dtype=np.int32)
            n = len(trt.times)
            trt.completed = np.empty(n, dtype=np.float64)
            trt.rescode = np.full(n, _RES_NONE, dtype=np.int16)

    # -- coverage and snapshots -------------------------------------------

    def _rebuild_coverage(self) -> None:
        """Refresh each town's ordered eligibility view (edge, then UAVs by id)."""
        for trt in self.towns_rt:
            entries: list[tuple[_Slot, Optional[list[bool]]]] = []
            edge = trt.edge_slot
            if edge is not None and self.world.edges[edge.res_id].operational:
                entries.append((edge, None))
            for slot in self._uav_slots:
                uav = slot.uav
                if not uav.is_stationed:
                    continue
                d = math.hypot(uav.position.x - trt.cx, uav.position.y - trt.cy)
                r = uav.coverage_radius
                if d + trt.radius <= r:
                    entries.append((slot, None))
                elif d - trt.radius > r:
                    continue
                else:
                    dx = trt.ux - uav.position.x
                    dy = trt.uy - uav.position.y
                    mask = (dx * dx + dy * dy) <= r * r
                    if mask.any():
                        entries.append((slot, mask.tolist()))
            trt.elig_entries = entries
            if all(m is None for _s, m in entries):
                trt.uniform_slots = [s for s, _m in entries]
            else:
                trt.uniform_slots = None

    def _snapshot(self, now: float) -> HapSnapshot:
        counts: dict[str, int] = {}
        rates: dict[str, float] = {}
        mean_cpu: dict[str, float] = {}
        min_delay: dict[str, Optional[float]] = {}
        capacity: dict[str, float] = {}
        uncovered: list[tuple[str, Position]] = []
        window = self.config.policy_tick_period
        for trt in self.towns_rt:
            tid = trt.id
            counts[tid] = trt.win_count
            rates[tid] = trt.win_count / window
            mean_cpu[tid] = trt.win_cpu / trt.win_count if trt.win_count else 0.0
            min_delay[tid] = trt.min_required_delay(now)
            edge = self.world.town_edge(tid)
            cap = edge.capacity if edge is not None and edge.operational else 0.0
            for slot in self._uav_slots:
                uav = slot.uav
                if uav.is_stationed and math.hypot(
                        uav.position.x - trt.cx, uav.position.y - trt.cy) <= trt.radius:
                    cap += uav.capacity
            capacity[tid] = cap

            edge_ok = edge is not None and edge.operational
            if not edge_ok:
                n_active = trt.active_prefix(now)
                if n_active:
                    full = any(m is None and s.kind == "uav" for s, m in trt.elig_entries)
                    if not full:
                        cov = np.zeros(n_active, dtype=bool)
                        for _s, m in trt.elig_entries:
                            if m is not None:
                                cov |= np.asarray(m[:n_active])
                        for i in np.flatnonzero(~cov):
                            uncovered.append((trt.user_ids[i],
                                              Position(float(trt.ux[i]), float(trt.uy[i]))))

        uav_states: dict[str, tuple[Position, Optional[Flying], Optional[str]]] = {}
        for uid in sorted(self.world.uavs):
            uav = self.world.uavs[uid]
            uav_states[uid] = (uav.position, uav.flight_state,
                               self.world.town_of(uav.position))
        return HapSnapshot(
            taken_at=now,
            per_town_task_counts=counts,
            per_town_arrival_rate=rates,
            per_town_mean_cpu_demand=mean_cpu,
            per_town_min_required_delay=min_delay,
            per_town_operational_capacity=capacity,
            uncovered_users=uncovered,
            uav_states=uav_states,
        )

    # -- task dispatch ------------------------------------------------------

    def _advance_tasks(self, until: float) -> None:
        """Dispatch every compiled arrival strictly before `until`."""
        for trt in self.towns_rt:
            i0 = trt.cursor
            if i0 >= len(trt.times):
                continue
            i1 = int(np.searchsorted(trt.times, until, side="left"))
            if i1 <= i0:
                continue
            trt.cursor = i1
            sizes = np.take(trt.ucpu, trt.urows[i0:i1])
            trt.win_count += i1 - i0
            trt.win_cpu += float(sizes.sum())
            uniform = trt.uniform_slots
            if uniform is not None and len(uniform) == 0:
                trt.completed[i0:i1] = trt.times[i0:i1]
                trt.rescode[i0:i1] = _RES_NONE
            elif uniform is not None and len(uniform) == 1:
                self._span_vector(trt, i0, i1, sizes, uniform[0], until)
            else:
                self._span_loop(trt, i0, i1, sizes, until)

    def _span_vector(self, trt: _TownRuntime, i0: int, i1: int,
                     sizes: np.ndarray, slot: _Slot, until: float) -> None:
        q = slot.queue
        t = trt.times[i0:i1]
        sv = sizes / q.capacity
        cum = np.cumsum(sv)
        adj = (t + q.wlan_delay) - (cum - sv)
        ends = cum + np.maximum(np.maximum.accumulate(adj), q.busy_until)
        trt.completed[i0:i1] = ends + q.wlan_delay
        trt.rescode[i0:i1] = slot.index
        q.prune(until)
        q.busy_until = float(ends[-1])
        mask = ends > until
        if mask.any():
            rows = (trt.idx * ROW_MOD + np.arange(i0, i1))[mask]
            q._rows.extend(rows.tolist())
            q._starts.extend((ends - sv)[mask].tolist())
            q._ends.extend(ends[mask].tolist())
            kept = sizes[mask]
            q._sizes.extend(kept.tolist())
            q.size_sum += float(kept.sum())

    def _span_loop(self, trt: _TownRuntime, i0: int, i1: int,
                   sizes: np.ndarray, until: float) -> None:
        entries = trt.elig_entries
        k = len(entries)
        queues = [s.queue for s, _m in entries]
        masks = [m for _s, m in entries]
        codes = [s.index for s, _m in entries]
        busy = [q.busy_until for q in queues]
        caps = [q.capacity for q in queues]
        invcap = [1.0 / q.capacity for q in queues]
        w1 = [q.wlan_delay for q in queues]
        w2 = [2.0 * q.wlan_delay for q in queues]
        heads = [q._head for q in queues]
        ssum = [q.size_sum for q in queues]
        rows_l = [q._rows for q in queues]
        starts_l = [q._starts for q in queues]
        ends_l = [q._ends for q in queues]
        sizes_l = [q._sizes for q in queues]

        T = trt.times[i0:i1].tolist()
        SZ = sizes.tolist()
        U = trt.urows[i0:i1].tolist()
        comp = [0.0] * len(T)
        res = [_RES_NONE] * len(T)
        enc = trt.idx * ROW_MOD + i0
        inf = math.inf

        for j in range(len(T)):
            t = T[j]
            sz = SZ[j]
            u = U[j]
            best = -1
            best_rt = inf
            for li in range(k):
                m = masks[li]
                if m is not None and not m[u]:
                    continue
                b = busy[li]
                if b > t:
                    h = heads[li]
                    ends = ends_l[li]
                    szl = sizes_l[li]
                    s = ssum[li]
                    while ends[h] <= t:
                        s -= szl[h]
                        h += 1
                    heads[li] = h
                    ssum[li] = s
                    s0 = starts_l[li][h]
                    bl = s - (t - s0) * caps[li] if s0 < t else s
                    rt = (bl + sz) * invcap[li] + w2[li]
                else:
                    rt = sz * invcap[li] + w2[li]
                if rt < best_rt:
                    best_rt = rt
                    best = li
            if best < 0:
                comp[j] = t
            else:
                ready = t + w1[best]
                b = busy[best]
                start = b if b > ready else ready
                end = start + sz * invcap[best]
                busy[best] = end
                comp[j] = end + w1[best]
                res[j] = codes[best]
                rows_l[best].append(enc + j)
                starts_l[best].append(start)
                ends_l[best].append(end)
                sizes_l[best].append(sz)
                ssum[best] += sz

        for li, q in enumerate(queues):
            q.busy_until = busy[li]
            q._head = heads[li]
            q.size_sum = ssum[li]
            q.prune(until)
        trt.completed[i0:i1] = comp
        trt.rescode[i0:i1] = res

    # -- discrete events ------------------------------------------------------

    def _dispatch(self, event: Event) -> None:
        if self._digest is not None:
            self._digest.update(struct.pack("<dB", event.at, int(event.kind)))
            self._digest.update(repr(event.key).encode())
        if event.kind == EventKind.POLICY_TICK:
            self._on_tick(event.at)
        elif event.kind == EventKind.SCENARIO_EVENT:
            self._on_scenario_event(event.at, event.key)
        elif event.kind == EventKind.UAV_ARRIVAL:
            self._on_uav_arrival(event.at, event.key)
        elif event.kind == EventKind.METRICS_FLUSH:
            self._flush_count += 1
            nxt = event.at + self.config.metrics_bucket
            if nxt <= self.config.duration:
                self.queue.schedule(Event(nxt, EventKind.METRICS_FLUSH))

    def _on_tick(self, now: float) -> None:
        snapshot = self._snapshot(now)
        for trt in self.towns_rt:
            trt.win_count = 0
            trt.win_cpu = 0.0
        if self.world.uavs and self.policy.kind != "none":
            commands = plan(self.policy, snapshot, self.world.towns,
                            self._uav_capacity, self.config.policy_tick_period,
                            self.policy_rng)
            moved = False
            for cmd in commands:
                uav = self.world.uavs[cmd.uav]
                if not uav.is_stationed:
                    raise AssertionError(f"policy commanded flying UAV {cmd.uav}")
                dist = horizontal_distance(uav.position, cmd.destination)
                if dist <= 1e-9:
                    continue
                arrival = now + dist / uav.speed
                uav.flight_state = Flying(cmd.destination, arrival)
                self.queue.schedule(Event(arrival, EventKind.UAV_ARRIVAL, cmd.uav))
                moved = True
            if moved:
                self._rebuild_coverage()
        nxt = now + self.config.policy_tick_period
        if nxt <= self.config.duration:
            self.queue.schedule(Event(nxt, EventKind.POLICY_TICK))

    def _on_uav_arrival(self, now: float, uav_id: str) -> None:
        uav = self.world.uavs[uav_id]
        flying = uav.flight_state
        if flying is None:
            return
        uav.position = flying.destination
        uav.flight_state = None
        self._rebuild_coverage()

    def _on_scenario_event(self, now: float, ev_index: int) -> None:
        ev: TimedEvent = self.scenario.events[ev_index]
        if ev.kind == "destroy_edge":
            edge = self.world.town_edge(ev.town)
            if edge is None:
                return
            edge.operational = False
            for enc in edge.queue.drop_pending(now):
                ti, row = divmod(enc, ROW_MOD)
                self.towns_rt[ti].completed[row] = now
                self.towns_rt[ti].rescode[row] = _RES_DESTROYED
            self._rebuild_coverage()
        elif ev.kind == "set_interarrival":
            for user in self.world.users.values():
                if user.town == ev.town:
                    user.profile = replace(user.profile,
                                           mean_interarrival=ev.mean_interarrival)
        elif ev.kind == "spawn_users":
            for rec in self._all_recs:
                if rec.spawn_event == ev_index:
                    self._add_world_user(rec)
            self._rebuild_coverage()

    # -- run -----------------------------------------------------------------

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        cfg = self.config
        duration = cfg.duration
        while len(self.queue):
            at = self.queue.peek_time()
            if at > duration:
                break
            self._advance_tasks(at)
            event = self.queue.pop()
            self.world.clock = at
            self._dispatch(event)
        self._advance_tasks(duration)
        self.world.clock = duration
        ledger = self._finalize()
        trace_hash = None
        if self._digest is not None:
            for trt in self.towns_rt:
                self._digest.update(trt.times.tobytes())
                self._digest.update(trt.completed.tobytes())
                self._digest.update(np.ascontiguousarray(trt.rescode).tobytes())
            trace_hash = self._digest.hexdigest()
        total = sum(len(trt.times) for trt in self.towns_rt)
        return RunResult(ledger=ledger, world=self.world, trace_hash=trace_hash,
                         task_count=total, wall_seconds=time.perf_counter() - t0)

    def _finalize(self) -> MetricsLedger:
        cfg = self.config
        ledger = MetricsLedger(bucket=cfg.metrics_bucket, duration=cfg.duration,
                               policy=self.policy.kind,
                               uav_count=self.scenario.uavs.count, seed=cfg.seed)
        for trt in self.towns_rt:
            created = trt.times
            completed = trt.completed
            res = trt.rescode
            budget = np.take(trt.ubudget, trt.urows) if len(created) else np.empty(0)
            served = res >= 0
            done = served & (completed <= cfg.duration)
            pending = served & (completed > cfg.duration)
            latency_ok = (completed - created) <= budget
            success = done & latency_ok
            censored = pending & ((cfg.duration - created) <= budget)
            failed_deadline = (done & ~latency_ok) | (pending & ~censored)
            outcome = np.full(len(created), FAILED_NO_RESOURCE, dtype=np.int8)
            outcome[success] = SUCCESS
            outcome[failed_deadline] = FAILED_DEADLINE
            outcome[censored] = CENSORED
            keep = None
            if self.keep_tasks:
                keep = {"created": created, "completed": completed,
                        "resource": res.copy(), "budget": budget, "outcome": outcome}
            ledger.record_town_arrays(trt.id, created, outcome, keep=keep)
        return ledger


def run(scenario: Scenario, policy: PolicySpec, seed: Optional[int] = None,
        keep_tasks: bool = False, trace: bool = False) -> RunResult:
    """Build and execute one simulation; identical inputs give identical output."""
    return Simulation(scenario, policy, seed=seed, keep_tasks=keep_tasks,
                      trace=trace).run()
