"""Independent reference implementations used to check the package.

Each oracle is deliberately naive (exhaustive enumeration or dense grids) and
shares no code with the implementation it checks.
"""

from __future__ import annotations

import itertools
import math
import re

import numpy as np


# -- MCS ----------------------------------------------------------------------


def brute_force_mcs(a, b) -> tuple[int, int]:
    """(bonds, atoms) of the best connected common subgraph over all partial injective maps."""
    ea = [x.element for x in a.atoms]
    eb = [x.element for x in b.atoms]
    order_b = {}
    for x, y, o in b.bonds:
        order_b[(x, y)] = order_b[(y, x)] = o
    best = (0, 0)
    na, nb = len(ea), len(eb)

    def score(mapping: dict[int, int]) -> tuple[int, int] | None:
        common = [(x, y) for x, y, o in a.bonds if x in mapping and y in mapping and order_b.get((mapping[x], mapping[y])) == o]
        atoms = list(mapping)
        adj = {s: [] for s in atoms}
        for x, y in common:
            adj[x].append(y)
            adj[y].append(x)
        seen = {atoms[0]}
        stack = [atoms[0]]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(atoms):
            return None
        return len(common), len(atoms)

    def extend(i: int, mapping: dict[int, int], used: set[int]) -> None:
        nonlocal best
        if i == na:
            if mapping:
                s = score(mapping)
                if s is not None and s > best:
                    best = s
            return
        extend(i + 1, mapping, used)
        for j in range(nb):
            if j not in used and eb[j] == ea[i]:
                mapping[i] = j
                used.add(j)
                extend(i + 1, mapping, used)
                del mapping[i]
                used.discard(j)

    extend(0, {}, set())
    return best


def is_connected_mapping(a, pairs) -> bool:
    atoms = {i for i, _ in pairs}
    if not atoms:
        return True
    mapped = dict(pairs)
    adj = {i: set() for i in atoms}
    for x, y, _ in a.bonds:
        if x in atoms and y in atoms:
            adj[x].add(y)
            adj[y].add(x)
    start = next(iter(atoms))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u] - seen:
            seen.add(v)
            stack.append(v)
    return len(seen) == len(mapped)


# -- scheduling -----------------------------------------------------------------


def optimal_makespan(durations, n_workers: int) -> float:
    """Exact P||Cmax by enumerating every task-to-worker assignment."""
    if not durations:
        return 0.0
    best = math.inf
    for assignment in itertools.product(range(n_workers), repeat=len(durations)):
        loads = [0.0] * n_workers
        for d, w in zip(durations, assignment):
            loads[w] += d
        best = min(best, max(loads))
    return best


def check_trace_safety(trace, capacities: dict, tasks, policy_shape=None) -> None:
    """Replay assign/finish events; assert capacity and dependency safety at every instant."""
    deps = {t.id: set(t.dependencies) for t in tasks}
    caps = {w: tuple(c) for w, c in capacities.items()}
    used: dict[str, list[int]] = {w: [0, 0, 0] for w in caps}
    finished_at: dict[str, int] = {}
    requests: dict[str, tuple[int, int, int]] = {}
    placement: dict[str, str] = {}
    last_t = -1
    for e in trace.events:
        assert e["t"] >= last_t, "events out of time order"
        last_t = e["t"]
        kind = e["kind"]
        if kind == "alloc_grant":
            for wid in e["workers"]:
                caps[wid] = tuple(policy_shape)
                used[wid] = [0, 0, 0]
        elif kind == "assign":
            tid, wid = e["task"], e["worker"]
            r = e["request"]
            req = (r.get("cpu", 0), r.get("accel", 0), r.get("memory", 0))
            requests[tid] = req
            placement[tid] = wid
            for k in range(3):
                used[wid][k] += req[k]
                assert used[wid][k] <= caps[wid][k], f"worker {wid} over capacity at t={e['t']}"
        elif kind == "start":
            tid = e["task"]
            for d in deps[tid]:
                assert d in finished_at and finished_at[d] <= e["t"], f"{tid} started before {d} finished"
        elif kind == "finish":
            tid = e["task"]
            finished_at[tid] = e["t"]
            wid = placement[tid]
            for k in range(3):
                used[wid][k] -= requests[tid][k]


# -- matching -------------------------------------------------------------------


def best_perfect_matching_weight(ids, weight) -> int:
    """Maximum total weight over all perfect matchings of an even-sized id set."""
    ids = sorted(ids)
    if not ids:
        return 0
    first, rest = ids[0], ids[1:]
    best = -math.inf
    for k, other in enumerate(rest):
        remaining = rest[:k] + rest[k + 1 :]
        best = max(best, weight(first, other) + best_perfect_matching_weight(remaining, weight))
    return best


# -- docking --------------------------------------------------------------------


def grid_argmax(f, lo, hi, points: int = 9, zooms: int = 20):
    """Dense grid search with repeated zooming around the best cell."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    best = None
    for _ in range(zooms):
        axes = [np.linspace(l, h, points) for l, h in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        values = np.array([f(p) for p in grid])
        best = grid[int(np.argmax(values))]
        span = (hi - lo) / (points - 1) * 2
        lo, hi = best - span, best + span
    return best


# -- SMILES -----------------------------------------------------------------------


_TOKEN = re.compile(r"Cl|Br|%\d\d|[BCNOPSFI]|[bcnops]|[-=#()\d]")


def lexical_atom_count(text: str) -> int:
    """Atom tokens counted by a regular-expression tokenizer."""
    return sum(1 for tok in _TOKEN.findall(text) if tok[0].isalpha())


def sem_formula(values) -> float:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)
