"""Size-class batching of ligands against an abstract device model."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .chem import Ligand


class BatcherError(ValueError):
    pass


class OutOfRange(BatcherError):
    pass


class ItemTooLarge(BatcherError):
    pass


@dataclass(frozen=True)
class SizeClass:
    """Half-open atom and rotatable-bond ranges."""

    atom_lo: int
    atom_hi: int
    rotbond_lo: int
    rotbond_hi: int

    def __post_init__(self):
        if self.atom_hi <= self.atom_lo or self.rotbond_hi <= self.rotbond_lo:
            raise BatcherError(f"empty size class {self}")

    def contains(self, atoms: int, rotbonds: int) -> bool:
        return self.atom_lo <= atoms < self.atom_hi and self.rotbond_lo <= rotbonds < self.rotbond_hi

    def label(self) -> str:
        return f"a[{self.atom_lo},{self.atom_hi})r[{self.rotbond_lo},{self.rotbond_hi})"


def default_classes() -> list[SizeClass]:
    atom_ranges = [(1, 20), (20, 40), (40, 80)]
    rot_ranges = [(0, 4), (4, 12)]
    return [SizeClass(a0, a1, r0, r1) for a0, a1 in atom_ranges for r0, r1 in rot_ranges]


@dataclass(frozen=True)
class DeviceModel:
    """Synthetic accelerator model: memory budget plus launch and per-item service time.

    The per-item service time of a class is
    ``item_time_base + item_time_per_atom * atom_hi + item_time_per_rotbond * rotbond_hi``.
    Defaults are made up; no calibrated device parameters are available.
    """

    memory_capacity: float = 16000.0
    mem_fixed: float = 1000.0
    mem_per_atom: float = 2.0
    mem_per_rotbond: float = 8.0
    launch_overhead: float = 0.009
    item_time_base: float = 0.0005
    item_time_per_atom: float = 0.00001
    item_time_per_rotbond: float = 0.00002

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise BatcherError(f"{name} must be non-negative")
        if self.memory_capacity <= self.mem_fixed:
            raise BatcherError("memory_capacity must exceed mem_fixed")

    def item_memory(self, cls: SizeClass) -> float:
        return self.mem_per_atom * cls.atom_hi + self.mem_per_rotbond * cls.rotbond_hi

    def service_time_per_item(self, cls: SizeClass) -> float:
        return (
            self.item_time_base
            + self.item_time_per_atom * cls.atom_hi
            + self.item_time_per_rotbond * cls.rotbond_hi
        )

    def batch_time(self, n_items: int, cls: SizeClass) -> float:
        return self.launch_overhead + n_items * self.service_time_per_item(cls)


def size_class(ligand: Ligand, classes) -> int:
    for idx, cls in enumerate(classes):
        if cls.contains(ligand.heavy_atoms, ligand.rotatable_bonds):
            return idx
    raise OutOfRange(
        f"ligand {ligand.id} ({ligand.heavy_atoms} atoms, {ligand.rotatable_bonds} rotatable bonds) fits no size class"
    )


def target_batch_size(cls: SizeClass, dev: DeviceModel) -> int:
    budget = dev.memory_capacity - dev.mem_fixed
    per_item = dev.item_memory(cls)
    if per_item > budget:
        raise ItemTooLarge(f"worst-case item memory {per_item} exceeds the budget {budget}")
    if per_item == 0:
        raise ItemTooLarge("item memory model is zero; batch size is unbounded")
    return max(1, int(budget // per_item))


def simulate_throughput(n_items: int, cls: SizeClass, dev: DeviceModel) -> float:
    """Items per second for one launch of ``n_items``."""
    if n_items < 1:
        raise BatcherError("n_items must be >= 1")
    return n_items / dev.batch_time(n_items, cls)


@dataclass
class Batch:
    class_index: int
    ligand_ids: list[str]
    flushed_at: float
    reason: str  # "full", "timeout" or "drain"


@dataclass
class BatchQueue:
    """Per-class FIFO buffers that flush once a class reaches its target size.

    A buffer whose oldest entry is older than ``max_age`` simulated seconds is
    flushed early so rare classes do not starve.
    """

    classes: list[SizeClass]
    device: DeviceModel
    max_age: float = 1.0
    targets: list[int] = field(init=False)
    buffers: list[deque] = field(init=False)

    def __post_init__(self):
        self.targets = [target_batch_size(c, self.device) for c in self.classes]
        self.buffers = [deque() for _ in self.classes]

    def enqueue(self, ligand: Ligand, now: float = 0.0) -> list[Batch]:
        idx = size_class(ligand, self.classes)
        flushed = self.flush_stale(now)
        self.buffers[idx].append((ligand.id, now))
        if len(self.buffers[idx]) >= self.targets[idx]:
            flushed.append(self._flush(idx, now, "full"))
        return flushed

    def flush_stale(self, now: float) -> list[Batch]:
        out = []
        for idx, buf in enumerate(self.buffers):
            if buf and now - buf[0][1] > self.max_age:
                out.append(self._flush(idx, now, "timeout"))
        return out

    def drain(self, now: float = 0.0) -> list[Batch]:
        return [self._flush(idx, now, "drain") for idx, buf in enumerate(self.buffers) if buf]

    def _flush(self, idx: int, now: float, reason: str) -> Batch:
        buf = self.buffers[idx]
        take = min(len(buf), self.targets[idx])
        ids = [buf.popleft()[0] for _ in range(take)]
        return Batch(idx, ids, now, reason)

    def pending(self) -> int:
        return sum(len(b) for b in self.buffers)


def batch_ligands(ligands, classes=None, device: DeviceModel | None = None, arrival_interval: float = 0.0) -> list[Batch]:
    """Run a whole ligand stream through a :class:`BatchQueue` and drain the remainder."""
    classes = default_classes() if classes is None else classes
    device = DeviceModel() if device is None else device
    queue = BatchQueue(classes, device)
    batches: list[Batch] = []
    now = 0.0
    for ligand in ligands:
        batches.extend(queue.enqueue(ligand, now))
        now += arrival_interval
    batches.extend(queue.drain(now))
    return batches
