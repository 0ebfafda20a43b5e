"""Compound pairing, replica-until-SEM control and absolute binding estimates."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .._seeding import derive_seed
from ..chem import Ligand
from .mcs import McsMapping, mcs

RESULT_COLUMNS = ("pair_id", "ligand_a", "ligand_b", "ddg_kT", "sem_kT", "replicas", "flag")


class NotEnoughLigands(ValueError):
    pass


class EmptySamples(ValueError):
    pass


@dataclass(frozen=True)
class CompoundPair:
    a: str
    b: str
    mapping: McsMapping
    heavy_atoms_a: int
    heavy_atoms_b: int

    @property
    def perturbation_size(self) -> int:
        n = len(self.mapping)
        return (self.heavy_atoms_a - n) + (self.heavy_atoms_b - n)

    @property
    def similarity(self) -> int:
        return len(self.mapping)


def pair_compounds(ligands: Sequence[Ligand], threads: int = 1) -> list[CompoundPair]:
    """Greedy maximum-weight matching on MCS size over all ligand pairs.

    Edges are taken heaviest first, ties in ascending ``(id_a, id_b)`` order.
    With an odd count the unmatched ligand is paired again with its most
    similar partner so every compound takes part in one transformation.
    """
    if len(ligands) < 2:
        raise NotEnoughLigands(f"pairing needs at least two ligands, got {len(ligands)}")
    by_id = {lig.id: lig for lig in ligands}
    if len(by_id) != len(ligands):
        raise ValueError("ligand ids must be unique")
    ids = sorted(by_id)
    combos = [(x, y) for i, x in enumerate(ids) for y in ids[i + 1 :]]

    def solve(edge):
        x, y = edge
        return mcs(by_id[x].graph, by_id[y].graph)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            maps = list(pool.map(solve, combos))
    else:
        maps = [solve(e) for e in combos]
    edges = {
        e: CompoundPair(e[0], e[1], m, by_id[e[0]].heavy_atoms, by_id[e[1]].heavy_atoms)
        for e, m in zip(combos, maps)
    }

    order = sorted(edges, key=lambda e: (-edges[e].similarity, e))
    matched: set[str] = set()
    pairs = []
    for x, y in order:
        if x in matched or y in matched:
            continue
        matched.update((x, y))
        pairs.append(edges[(x, y)])
    leftover = [i for i in ids if i not in matched]
    if leftover:
        (odd,) = leftover
        best = min((e for e in order if odd in e), key=lambda e: (-edges[e].similarity, e))
        pairs.append(edges[best])
    return pairs


@dataclass(frozen=True)
class FreeEnergyResult:
    estimate: float
    sem: float
    replicas: int
    bias_history_length: int = 0
    target_met: bool = True
    values: tuple[float, ...] = field(default=(), repr=False)

    @property
    def flag(self) -> str:
        return "ok" if self.target_met else "TargetNotMet"


def standard_error(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return math.inf
    return float(np.std(values, ddof=1) / math.sqrt(n))


class SemController:
    """Stopping rule shared by the serial loop and round-based campaign runs.

    Values are fed in replica order; the controller is done at the first
    count ``n >= min_replicas`` whose standard error is within the target,
    or at ``max_replicas``.
    """

    def __init__(self, target_sem: float, max_replicas: int = 64, min_replicas: int = 2):
        if not target_sem > 0:
            raise ValueError("target_sem must be positive")
        if max_replicas < 2:
            raise ValueError("max_replicas must be at least 2")
        self.target_sem = target_sem
        self.max_replicas = max_replicas
        self.min_replicas = max(2, min(min_replicas, max_replicas))
        self.values: list[float] = []
        self.history = 0
        self.sem = math.inf

    @property
    def done(self) -> bool:
        return len(self.values) >= self.max_replicas or (
            len(self.values) >= self.min_replicas and self.sem <= self.target_sem
        )

    def add(self, out: float | tuple[float, int]) -> None:
        if self.done:
            raise RuntimeError("controller already stopped")
        if isinstance(out, tuple):
            value, length = out
            self.history = max(self.history, int(length))
        else:
            value = out
        self.values.append(float(value))
        if len(self.values) >= self.min_replicas:
            self.sem = standard_error(self.values)

    def result(self) -> FreeEnergyResult:
        if len(self.values) < 2:
            raise RuntimeError("at least two replicas are needed for a result")
        return FreeEnergyResult(
            estimate=float(np.mean(self.values)),
            sem=self.sem,
            replicas=len(self.values),
            bias_history_length=self.history,
            target_met=self.sem <= self.target_sem,
            values=tuple(self.values),
        )


def run_until_sem(
    estimator: Callable[[int], float | tuple[float, int]],
    target_sem: float,
    max_replicas: int = 64,
    seed: int = 0,
    min_replicas: int = 2,
) -> FreeEnergyResult:
    """Add independent replicas until the standard error reaches ``target_sem``.

    ``estimator(seed)`` returns an estimate, or ``(estimate, bias_history_length)``.
    Replica ``i`` is seeded with ``derive_seed(seed, i)``. Missing the target by
    ``max_replicas`` is reported through ``target_met`` rather than raised.
    """
    ctl = SemController(target_sem, max_replicas, min_replicas)
    while not ctl.done:
        ctl.add(estimator(derive_seed(seed, len(ctl.values))))
    return ctl.result()


def abfe_estimate(
    complex_energies: Sequence[float],
    receptor_energies: Sequence[float],
    ligand_energies: Sequence[float],
    solvation: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> float:
    """Gas-phase interaction from mean energies plus the solvation free-energy change."""
    sets = {"complex": complex_energies, "receptor": receptor_energies, "ligand": ligand_energies}
    for name, values in sets.items():
        if len(values) == 0:
            raise EmptySamples(f"no {name} energy samples")
    e_c, e_r, e_l = (float(np.mean(np.asarray(v, dtype=float))) for v in sets.values())
    s_c, s_r, s_l = solvation
    return (e_c - e_r - e_l) + (s_c - s_r - s_l)


def write_results(target, rows: Sequence[tuple[str, CompoundPair, FreeEnergyResult]]) -> None:
    """Write the results table to a path or an open text stream."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as fh:
            write_results(fh, rows)
        return
    writer = csv.writer(target, delimiter="\t", lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for pair_id, pair, res in rows:
        writer.writerow([pair_id, pair.a, pair.b, f"{res.estimate:.6f}", f"{res.sem:.6f}", res.replicas, res.flag])


def read_results(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
