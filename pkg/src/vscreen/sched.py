"""Sub-node task scheduling over multi-resource workers.

Many small tasks are packed onto workers whose capacity is split across CPU
cores, accelerator slots and memory. Ready tasks are placed longest first
onto the worker with the most free (capacity-normalised) resources, and an
auto-allocator asks a simulated job manager for more workers whenever the
pending backlog crosses a threshold.

:class:`Scheduler` is the state machine; :func:`run_simulation` drives it
with a discrete-event loop in integer microseconds and :func:`run_live`
drives it with real callables on a thread pool.
"""

from __future__ import annotations

import heapq
import json
import queue
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

US = 1_000_000
DIMENSIONS = ("cpu", "accel", "memory")
EVENT_KINDS = ("submit", "ready", "assign", "start", "finish", "alloc_request", "alloc_grant", "worker_expire")


class SchedulerError(ValueError):
    pass


class CycleDetected(SchedulerError):
    pass


class DuplicateId(SchedulerError):
    pass


class Starvation(SchedulerError):
    """Raised when some tasks can never run; carries the partial trace."""

    def __init__(self, task_ids, trace: "Trace | None" = None):
        self.task_ids = sorted(task_ids, key=natural_key)
        self.trace = trace
        super().__init__(f"{len(self.task_ids)} task(s) can never run: {', '.join(self.task_ids[:10])}")


def natural_key(ident: str):
    """Order ids like ``w2`` before ``w10``."""
    return tuple((0, int(part)) if part.isdigit() else (1, part) for part in re.split(r"(\d+)", str(ident)) if part)


@dataclass(frozen=True)
class Resources:
    cpu: int = 0
    accel: int = 0
    memory: int = 0

    def fits_in(self, other: "Resources") -> bool:
        return self.cpu <= other.cpu and self.accel <= other.accel and self.memory <= other.memory

    def __add__(self, other: "Resources") -> "Resources":
        return Resources(self.cpu + other.cpu, self.accel + other.accel, self.memory + other.memory)

    def __sub__(self, other: "Resources") -> "Resources":
        return Resources(self.cpu - other.cpu, self.accel - other.accel, self.memory - other.memory)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.cpu, self.accel, self.memory)

    def to_dict(self) -> dict:
        return {"cpu": self.cpu, "accel": self.accel, "memory": self.memory}

    @classmethod
    def from_dict(cls, data: dict) -> "Resources":
        return cls(int(data.get("cpu", 0)), int(data.get("accel", 0)), int(data.get("memory", 0)))


@dataclass(frozen=True)
class Task:
    id: str
    request: Resources = Resources(cpu=1)
    dependencies: frozenset[str] = frozenset()
    stage: str = ""
    sim_duration: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dependencies", frozenset(self.dependencies))
        if any(v < 0 for v in self.request.as_tuple()) or not any(self.request.as_tuple()):
            raise SchedulerError(f"task {self.id}: request must be positive in at least one dimension")
        if self.sim_duration < 0:
            raise SchedulerError(f"task {self.id}: negative duration")

    @property
    def duration_us(self) -> int:
        return int(round(self.sim_duration * US))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "request": self.request.to_dict(),
            "dependencies": sorted(self.dependencies, key=natural_key),
            "stage": self.stage,
            "duration": self.sim_duration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Task":
        return cls(
            str(data["id"]),
            Resources.from_dict(data.get("request", {"cpu": 1})),
            frozenset(str(d) for d in data.get("dependencies", ())),
            data.get("stage", ""),
            float(data.get("duration", 1.0)),
        )


@dataclass
class Worker:
    id: str
    capacity: Resources
    running: dict[str, Resources] = field(default_factory=dict)
    retiring: bool = False
    spawned_us: int = 0

    @property
    def used(self) -> Resources:
        total = Resources()
        for r in self.running.values():
            total = total + r
        return total

    @property
    def free(self) -> Resources:
        return self.capacity - self.used

    def balance(self) -> float:
        """Free resources as a capacity-normalised L1 sum."""
        return _balance(self.free, self.capacity)


def _balance(free: Resources, capacity: Resources) -> float:
    return sum(f / c for f, c in zip(free.as_tuple(), capacity.as_tuple()) if c > 0)


@dataclass
class Allocation:
    id: str
    worker_count: int
    shape: Resources
    walltime: float
    state: str = "queued"  # queued -> granted -> expired
    requested_us: int = 0
    granted_us: int | None = None


@dataclass(frozen=True)
class AutoAllocPolicy:
    """When to ask the job manager for more workers, and what to ask for."""

    backlog_threshold: float
    shape: Resources
    workers_per_allocation: int = 1
    walltime: float = 3600.0
    max_queued: int = 1
    grant_delay: float = 0.0
    grant_jitter: float = 0.0

    def to_dict(self) -> dict:
        return {
            "backlog_threshold": self.backlog_threshold,
            "shape": self.shape.to_dict(),
            "workers_per_allocation": self.workers_per_allocation,
            "walltime": self.walltime,
            "max_queued": self.max_queued,
            "grant_delay": self.grant_delay,
            "grant_jitter": self.grant_jitter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AutoAllocPolicy":
        return cls(
            float(data["backlog_threshold"]),
            Resources.from_dict(data["shape"]),
            int(data.get("workers_per_allocation", 1)),
            float(data.get("walltime", 3600.0)),
            int(data.get("max_queued", 1)),
            float(data.get("grant_delay", 0.0)),
            float(data.get("grant_jitter", 0.0)),
        )


@dataclass(frozen=True)
class QueueState:
    backlog: float  # resource-seconds of submitted, not yet started tasks
    queued_allocations: int = 0


def autoalloc_tick(queue_state: QueueState, policy: AutoAllocPolicy | None, alloc_id: str = "a0") -> list[Allocation]:
    if policy is None:
        return []
    if queue_state.backlog > policy.backlog_threshold and queue_state.queued_allocations < policy.max_queued:
        return [Allocation(alloc_id, policy.workers_per_allocation, policy.shape, policy.walltime)]
    return []


def _backlog_weight(task: Task) -> float:
    # resource-seconds counted over cores plus accelerator slots
    return (task.request.cpu + task.request.accel) * task.sim_duration


@dataclass(frozen=True)
class TaskSetHandle:
    task_ids: tuple[str, ...]
    ready: tuple[str, ...]


class Scheduler:
    """Task/worker bookkeeping. Every mutator takes the instance lock."""

    def __init__(self):
        self._lock = threading.RLock()
        self.tasks: dict[str, Task] = {}
        self.status: dict[str, str] = {}  # blocked | ready | running | finished | starved
        self.missing: dict[str, int] = {}
        self.dependents: dict[str, list[str]] = {}
        self.ready: set[str] = set()
        self.workers: dict[str, Worker] = {}
        self.placement: dict[str, str] = {}

    # -- tasks --

    def submit(self, tasks) -> TaskSetHandle:
        with self._lock:
            tasks = list(tasks)
            new = {}
            for t in tasks:
                if t.id in self.tasks or t.id in new:
                    raise DuplicateId(f"task id {t.id!r} submitted twice")
                new[t.id] = t
            for t in tasks:
                for dep in t.dependencies:
                    if dep not in new and dep not in self.tasks:
                        raise SchedulerError(f"task {t.id} depends on unknown task {dep!r}")
            _check_acyclic(new)
            ready_now = []
            for t in tasks:
                self.tasks[t.id] = t
                self.dependents.setdefault(t.id, [])
            for t in tasks:
                unfinished = 0
                for dep in t.dependencies:
                    self.dependents.setdefault(dep, []).append(t.id)
                    if self.status.get(dep) != "finished":
                        unfinished += 1
                self.missing[t.id] = unfinished
                if unfinished == 0:
                    self.status[t.id] = "ready"
                    self.ready.add(t.id)
                    ready_now.append(t.id)
                else:
                    self.status[t.id] = "blocked"
            return TaskSetHandle(tuple(t.id for t in tasks), tuple(ready_now))

    def ready_order(self) -> list[str]:
        with self._lock:
            return sorted(self.ready, key=lambda tid: (-self.tasks[tid].duration_us, natural_key(tid)))

    def complete(self, task_id: str) -> list[str]:
        """Mark a running task finished and return the ids that became ready."""
        with self._lock:
            if self.status.get(task_id) != "running":
                raise SchedulerError(f"task {task_id} is not running")
            self.status[task_id] = "finished"
            worker = self.workers[self.placement.pop(task_id)]
            del worker.running[task_id]
            newly = []
            for child in sorted(self.dependents.get(task_id, ()), key=natural_key):
                if self.status[child] != "blocked":
                    continue
                self.missing[child] -= 1
                if self.missing[child] == 0:
                    self.status[child] = "ready"
                    self.ready.add(child)
                    newly.append(child)
            return newly

    def backlog(self) -> float:
        with self._lock:
            return sum(
                _backlog_weight(self.tasks[tid]) for tid, st in self.status.items() if st in ("ready", "blocked")
            )

    def unfinished(self) -> list[str]:
        with self._lock:
            return [tid for tid, st in self.status.items() if st in ("ready", "blocked", "running")]

    def mark_starved(self, task_ids) -> list[str]:
        """Starve the given tasks and everything downstream of them."""
        with self._lock:
            out = []
            stack = list(task_ids)
            while stack:
                tid = stack.pop()
                if self.status.get(tid) in ("starved", "finished", "running"):
                    continue
                self.status[tid] = "starved"
                self.ready.discard(tid)
                out.append(tid)
                stack.extend(self.dependents.get(tid, ()))
            return sorted(out, key=natural_key)

    # -- workers --

    def add_worker(self, worker: Worker) -> None:
        with self._lock:
            if worker.id in self.workers:
                raise DuplicateId(f"worker id {worker.id!r} already present")
            self.workers[worker.id] = worker

    def retire_worker(self, worker_id: str) -> bool:
        """Stop placing work on a worker; returns True if it was idle and got removed."""
        with self._lock:
            worker = self.workers[worker_id]
            worker.retiring = True
            if not worker.running:
                del self.workers[worker_id]
                return True
            return False

    def active_workers(self) -> list[Worker]:
        with self._lock:
            return sorted((w for w in self.workers.values() if not w.retiring), key=lambda w: natural_key(w.id))

    def schedule_tick(self) -> list[tuple[str, str]]:
        """Greedy longest-first placement onto the least-loaded feasible worker.

        After the tick no ready task fits on any active worker.
        """
        with self._lock:
            assignments = []
            workers = self.active_workers()
            free = {w.id: w.free for w in workers}
            for tid in self.ready_order():
                if not any(any(f.as_tuple()) for f in free.values()):
                    break
                request = self.tasks[tid].request
                best = None
                best_balance = -1.0
                for w in workers:
                    if request.fits_in(free[w.id]):
                        bal = _balance(free[w.id], w.capacity)
                        if bal > best_balance:
                            best, best_balance = w, bal
                if best is None:
                    continue
                free[best.id] = free[best.id] - request
                best.running[tid] = request
                self.placement[tid] = best.id
                self.status[tid] = "running"
                self.ready.discard(tid)
                assignments.append((tid, best.id))
            return assignments


def schedule_tick(state: Scheduler) -> list[tuple[str, str]]:
    return state.schedule_tick()


def _check_acyclic(tasks: dict[str, Task]) -> None:
    indeg = {tid: 0 for tid in tasks}
    children: dict[str, list[str]] = {tid: [] for tid in tasks}
    for t in tasks.values():
        for dep in t.dependencies:
            if dep in tasks:
                indeg[t.id] += 1
                children[dep].append(t.id)
    stack = [tid for tid, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        tid = stack.pop()
        seen += 1
        for child in children[tid]:
            indeg[child] -= 1
            if indeg[child] == 0:
                stack.append(child)
    if seen != len(tasks):
        cyclic = sorted((tid for tid, d in indeg.items() if d > 0), key=natural_key)
        raise CycleDetected(f"dependency cycle among {', '.join(cyclic[:10])}")


# -- trace ---------------------------------------------------------------------


@dataclass
class Trace:
    events: list[dict] = field(default_factory=list)
    makespan: float = 0.0
    utilization: dict[str, float] = field(default_factory=lambda: {d: 0.0 for d in DIMENSIONS})
    starved: list[str] = field(default_factory=list)

    def emit(self, time_us: int, kind: str, **fields) -> None:
        event = {"t": time_us, "kind": kind}
        event.update({k: v for k, v in fields.items() if v is not None})
        self.events.append(event)

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.events]
        summary = {
            "kind": "summary",
            "makespan": self.makespan,
            "utilization": self.utilization,
            "starved": self.starved,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    def task_events(self, kind: str) -> dict[str, dict]:
        return {e["task"]: e for e in self.events if e["kind"] == kind}


def run_simulation(
    tasks,
    workers,
    policy: AutoAllocPolicy | None = None,
    seed: int = 0,
) -> Trace:
    """Discrete-event simulation of the whole task set.

    ``workers`` is a list of :class:`Worker` (or ``(id, Resources)`` pairs).
    Raises :class:`Starvation` (with ``.trace``) if any task can never run.
    """
    rng = np.random.default_rng(seed)
    trace = Trace()
    state = Scheduler()
    tasks = list(tasks)
    handle = state.submit(tasks)
    for tid in handle.task_ids:
        trace.emit(0, "submit", task=tid, stage=state.tasks[tid].stage or None)
    for tid in handle.ready:
        trace.emit(0, "ready", task=tid)

    lifetimes: dict[str, list] = {}
    for w in workers:
        worker = w if isinstance(w, Worker) else Worker(str(w[0]), w[1])
        worker = Worker(worker.id, worker.capacity, spawned_us=0)
        state.add_worker(worker)
        lifetimes[worker.id] = [worker.capacity, 0, None]

    heap: list[tuple[int, int, str, object]] = []
    seq = 0
    allocations: list[Allocation] = []
    queued = 0
    now = 0
    busy = [0, 0, 0]
    starved: list[str] = []

    def push(t: int, kind: str, payload) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, payload))
        seq += 1

    def remove_worker(worker_id: str, t: int) -> None:
        lifetimes[worker_id][2] = t

    while True:
        # job-manager requests
        for alloc in autoalloc_tick(QueueState(state.backlog(), queued), policy, f"a{len(allocations)}"):
            alloc.requested_us = now
            allocations.append(alloc)
            queued += 1
            delay = policy.grant_delay + (rng.uniform(0, policy.grant_jitter) if policy.grant_jitter else 0.0)
            trace.emit(now, "alloc_request", alloc=alloc.id, workers=alloc.worker_count)
            push(now + int(round(delay * US)), "grant", alloc)

        for tid, wid in state.schedule_tick():
            task = state.tasks[tid]
            trace.emit(now, "assign", task=tid, worker=wid, request=task.request.to_dict())
            trace.emit(now, "start", task=tid, worker=wid)
            push(now + task.duration_us, "finish", tid)
            for k, v in enumerate(task.request.as_tuple()):
                busy[k] += v * task.duration_us

        # ready tasks no current or obtainable worker could ever hold
        shapes = [w.capacity for w in state.active_workers()]
        if policy is not None:
            shapes.append(policy.shape)
        hopeless = [tid for tid in state.ready_order() if not any(state.tasks[tid].request.fits_in(s) for s in shapes)]
        if hopeless:
            starved.extend(state.mark_starved(hopeless))

        if not state.unfinished():
            break
        if not heap:
            starved.extend(state.mark_starved([t for t in state.unfinished() if state.status[t] != "running"]))
            break

        now = heap[0][0]
        while heap and heap[0][0] == now:
            _, _, kind, payload = heapq.heappop(heap)
            if kind == "finish":
                tid = payload
                wid = state.placement[tid]
                trace.emit(now, "finish", task=tid, worker=wid)
                for child in state.complete(tid):
                    trace.emit(now, "ready", task=child)
                worker = state.workers[wid]
                if worker.retiring and not worker.running:
                    state.retire_worker(wid)
                    remove_worker(wid, now)
            elif kind == "grant":
                alloc = payload
                alloc.state = "granted"
                alloc.granted_us = now
                queued -= 1
                ids = []
                for k in range(alloc.worker_count):
                    wid = f"{alloc.id}.w{k}"
                    state.add_worker(Worker(wid, alloc.shape, spawned_us=now))
                    lifetimes[wid] = [alloc.shape, now, None]
                    ids.append(wid)
                    push(now + int(round(alloc.walltime * US)), "expire", (alloc, wid))
                trace.emit(now, "alloc_grant", alloc=alloc.id, workers=ids)
            elif kind == "expire":
                alloc, wid = payload
                alloc.state = "expired"
                trace.emit(now, "worker_expire", worker=wid, alloc=alloc.id)
                if state.retire_worker(wid):
                    remove_worker(wid, now)

    finish_times = [e["t"] for e in trace.events if e["kind"] == "finish"]
    makespan_us = max(finish_times, default=0)
    trace.makespan = makespan_us / US
    capacity_time = [0, 0, 0]
    for cap, start, end in lifetimes.values():
        end = makespan_us if end is None else min(end, makespan_us)
        span = max(0, end - start)
        for k, v in enumerate(cap.as_tuple()):
            capacity_time[k] += v * span
    trace.utilization = {
        d: (busy[k] / capacity_time[k] if capacity_time[k] else 0.0) for k, d in enumerate(DIMENSIONS)
    }
    trace.starved = sorted(starved, key=natural_key)
    if starved:
        raise Starvation(starved, trace)
    return trace


def run_live(
    tasks,
    workers,
    execute: Callable[[Task], object],
    threads: int = 1,
) -> dict[str, object]:
    """Execute tasks for real, placing them with the same scheduler.

    Completions are reported through a queue and applied in arrival order;
    results are returned keyed by task id, so callers that reduce over them
    in id order get results independent of thread timing.
    """
    state = Scheduler()
    state.submit(tasks)
    for w in workers:
        state.add_worker(w if isinstance(w, Worker) else Worker(str(w[0]), w[1]))
    results: dict[str, object] = {}
    done: queue.Queue = queue.Queue()
    in_flight = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while True:
            for tid, _ in state.schedule_tick():
                task = state.tasks[tid]
                in_flight += 1
                pool.submit(lambda t=task: done.put((t.id, _call(execute, t))))
            if in_flight == 0:
                break
            tid, (ok, value) = done.get()
            in_flight -= 1
            if not ok:
                raise value
            results[tid] = value
            state.complete(tid)
    leftover = [tid for tid in state.unfinished()]
    if leftover:
        raise Starvation(leftover)
    return results


def _call(fn, task):
    try:
        return True, fn(task)
    except BaseException as exc:  # re-raised on the scheduling thread
        return False, exc


# -- config files ----------------------------------------------------------------


def load_tasks(path: str | Path) -> list[Task]:
    data = json.loads(Path(path).read_text())
    items = data["tasks"] if isinstance(data, dict) else data
    return [Task.from_dict(t) for t in items]


def load_workers(path: str | Path) -> list[Worker]:
    """Cluster file: ``{"workers": [{"id": .., "cpu": .., "accel": .., "memory": .., "count": n}]}``."""
    return workers_from_dict(json.loads(Path(path).read_text()))


def workers_from_dict(data) -> list[Worker]:
    items = data["workers"] if isinstance(data, dict) else data
    workers = []
    for entry in items:
        count = int(entry.get("count", 1))
        base = str(entry.get("id", "w"))
        cap = Resources.from_dict(entry)
        if count == 1 and "id" in entry:
            workers.append(Worker(base, cap))
        else:
            start = len(workers)
            workers.extend(Worker(f"{base}{start + k}", cap) for k in range(count))
    return workers


def load_policy(path: str | Path | None) -> AutoAllocPolicy | None:
    if path is None:
        return None
    data = json.loads(Path(path).read_text())
    return AutoAllocPolicy.from_dict(data) if data else None
