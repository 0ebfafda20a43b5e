"""Constrained surrogate-guided search over discrete pipeline knobs.

Configurations are dicts mapping knob name to one value of its domain. Each
knob is placed on ``[0, 1]`` by domain index, so distances treat every knob
alike regardless of its units. Quality is minimized (RMSD-like) and cost is
wall-time seconds.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ._seeding import derive_seed, rng

N_WARMUP = 8
N_CANDIDATES = 1024
N_ANCHORS = 4
LENGTH_SCALE = 0.25


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class Knob:
    name: str
    values: tuple

    def __post_init__(self):
        values = tuple(self.values)
        if not values:
            raise ValueError(f"knob {self.name!r} has an empty domain")
        if len(set(values)) != len(values):
            raise ValueError(f"knob {self.name!r} has repeated values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class KnobSpace:
    knobs: tuple[Knob, ...]

    def __post_init__(self):
        object.__setattr__(self, "knobs", tuple(self.knobs))
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise ValueError("knob names must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(k.name for k in self.knobs)

    @property
    def size(self) -> int:
        return math.prod(len(k.values) for k in self.knobs)

    @property
    def dims(self) -> np.ndarray:
        return np.array([len(k.values) for k in self.knobs])

    def validate(self, config: Mapping) -> None:
        if set(config) != set(self.names):
            missing = sorted(set(self.names) - set(config))
            extra = sorted(set(config) - set(self.names))
            raise InvalidConfig(f"config keys differ from the space (missing {missing}, unknown {extra})")
        for k in self.knobs:
            if config[k.name] not in k.values:
                raise InvalidConfig(f"{config[k.name]!r} is not a value of knob {k.name!r}")

    def contains(self, config: Mapping) -> bool:
        try:
            self.validate(config)
        except InvalidConfig:
            return False
        return True

    def indices(self, config: Mapping) -> tuple[int, ...]:
        self.validate(config)
        return tuple(k.values.index(config[k.name]) for k in self.knobs)

    def config(self, indices: Sequence[int]) -> dict:
        return {k.name: k.values[int(i)] for k, i in zip(self.knobs, indices)}

    def coords(self, indices) -> np.ndarray:
        """Domain indices scaled to ``[0, 1]`` per knob (single-value knobs sit at 0)."""
        idx = np.asarray(indices, dtype=float)
        span = np.maximum(self.dims - 1, 1)
        return idx / span

    def to_dict(self) -> dict:
        return {"knobs": [{"name": k.name, "values": list(k.values)} for k in self.knobs]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "KnobSpace":
        return cls(tuple(Knob(k["name"], tuple(k["values"])) for k in data["knobs"]))

    @classmethod
    def load(cls, path: str | Path) -> "KnobSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@lru_cache(maxsize=1)
def default_space() -> KnobSpace:
    text = resources.files("vscreen").joinpath("data/space.json").read_text()
    return KnobSpace.from_dict(json.loads(text))


@dataclass(frozen=True)
class Observation:
    config: dict
    quality: float
    cost: float

    def __post_init__(self):
        if not self.cost >= 0:
            raise ValueError("cost must be non-negative")

    def key(self) -> tuple:
        return tuple(sorted(self.config.items()))

    def to_dict(self) -> dict:
        return {"config": self.config, "quality": self.quality, "cost": self.cost}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Observation":
        return cls(dict(data["config"]), float(data["quality"]), float(data["cost"]))


Objective = Callable[[dict], tuple[float, float]]


def evaluate(config: Mapping, objective: Objective, space: KnobSpace | None = None) -> Observation:
    space = space or getattr(objective, "space", None) or default_space()
    space.validate(config)
    quality, cost = objective(dict(config))
    return Observation(dict(config), float(quality), float(cost))


@dataclass
class SyntheticSurface:
    """Separable quadratic plus one pairwise interaction, with a known argmin.

    ``quality = floor + sum_i w_i d_i**2 + rho * d_a**2 * d_b**2`` where ``d_i``
    is the normalized distance of knob ``i`` from the optimum, so the minimum is
    exactly ``floor`` at ``optimum``. Noise is drawn per (seed, config) so a
    config always yields the same observation. Cost rises linearly with every
    knob index.
    """

    space: KnobSpace
    optimum: tuple[int, ...]
    weights: tuple[float, ...]
    cost_weights: tuple[float, ...]
    interaction: tuple[int, int] = (0, 1)
    rho: float = 2.0
    floor: float = 0.5
    base_cost: float = 1.0
    noise: float = 0.0
    seed: int = 0

    @classmethod
    def random(cls, space: KnobSpace, seed: int = 0, noise: float = 0.0) -> "SyntheticSurface":
        g = rng(seed, "surface")
        optimum = tuple(int(g.integers(0, d)) for d in space.dims)
        weights = tuple(float(w) for w in g.uniform(0.5, 2.0, len(space.knobs)))
        cost_weights = tuple(float(w) for w in g.uniform(0.1, 1.0, len(space.knobs)))
        pair = tuple(int(i) for i in g.choice(len(space.knobs), size=2, replace=False)) if len(space.knobs) > 1 else (0, 0)
        return cls(space, optimum, weights, cost_weights, pair, noise=noise, seed=seed)

    @property
    def minimum(self) -> float:
        return self.floor

    def optimum_config(self) -> dict:
        return self.space.config(self.optimum)

    def __call__(self, config: dict) -> tuple[float, float]:
        idx = self.space.indices(config)
        z = self.space.coords(idx)
        d = z - self.space.coords(self.optimum)
        a, b = self.interaction
        quality = self.floor + float(np.dot(self.weights, d**2)) + self.rho * d[a] ** 2 * d[b] ** 2
        if self.noise:
            quality += self.noise * float(np.random.default_rng(derive_seed(self.seed, "noise", *idx)).standard_normal())
        cost = self.base_cost + float(np.dot(self.cost_weights, z))
        return quality, cost


# -- surrogate --------------------------------------------------------------------


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


@dataclass
class KernelSurrogate:
    """Nadaraya-Watson regression with a Gaussian kernel.

    The bandwidth is the median pairwise distance between observed points and
    the kernel length scale is a fixed fraction of it; with many knobs the
    median distance alone smooths the surface almost flat. Uncertainty is the kernel-weighted spread of the targets around the
    prediction, widened towards the global spread away from the data.
    """

    x: np.ndarray
    y: np.ndarray
    bandwidth: float = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if len(self.x) > 1:
            d = _pairwise(self.x, self.x)[np.triu_indices(len(self.x), 1)]
            med = float(np.median(d))
        else:
            med = 0.0
        self.bandwidth = med if med > 0 else 1.0

    @property
    def length_scale(self) -> float:
        return self.bandwidth * LENGTH_SCALE

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = _pairwise(np.asarray(xq, dtype=float), self.x)
        logw = -0.5 * (d / self.length_scale) ** 2
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        mean = w @ self.y
        spread = np.sqrt(np.maximum(w @ self.y**2 - mean**2, 0.0))
        # distance to the nearest observation, in length scales
        far = 1.0 - np.exp(-0.5 * (d.min(axis=1) / self.length_scale) ** 2)
        sigma = np.sqrt(spread**2 + far * float(np.var(self.y)))
        return mean, sigma


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf, otypes=[float])(z / math.sqrt(2.0)))


def expected_improvement(mean: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """Expected reduction below ``best`` for a minimization target."""
    gap = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gap / sigma, 0.0)
    pdf = np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)
    ei = np.where(sigma > 0, gap * _norm_cdf(z) + sigma * pdf, np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


# -- suggestion -------------------------------------------------------------------


def _space_filling(space: KnobSpace, n_seen: int, seed: int) -> np.ndarray:
    """Point ``n_seen`` of a seeded Latin-hypercube design over ``N_WARMUP`` strata."""
    g = rng(seed, "warmup")
    dims = space.dims
    strata = np.stack([g.permutation(N_WARMUP) for _ in dims], axis=1)
    jitter = g.random((N_WARMUP, len(dims)))
    u = (strata + jitter) / N_WARMUP
    row = u[n_seen % N_WARMUP]
    return np.minimum((row * dims).astype(int), dims - 1)


def _neighbours(space: KnobSpace, center: np.ndarray) -> np.ndarray:
    """Every config that differs from ``center`` in exactly one knob."""
    rows = []
    for j, d in enumerate(space.dims):
        for v in range(d):
            if v != center[j]:
                row = center.copy()
                row[j] = v
                rows.append(row)
    return np.array(rows, dtype=int).reshape(-1, len(space.dims))


def _candidates(space: KnobSpace, anchors: np.ndarray | None, g: np.random.Generator) -> np.ndarray:
    """Random configs, the incumbent's one-knob neighbours, crossovers and small moves of the best configs."""
    dims = space.dims
    if space.size <= N_CANDIDATES:
        grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
        return np.stack([m.ravel() for m in grids], axis=1)
    n_random = N_CANDIDATES if anchors is None else N_CANDIDATES // 4
    out = [g.integers(0, dims, size=(n_random, len(dims)))]
    if anchors is not None:
        near = _neighbours(space, anchors[0])[: N_CANDIDATES - n_random]
        n_local = N_CANDIDATES - n_random - len(near)
        n_cross = n_local // 2
        # uniform crossover: each knob copied from a random anchor
        pick = g.integers(0, len(anchors), size=(n_cross, len(dims)))
        cross = anchors[pick, np.arange(len(dims))[None, :]]
        n_move = n_local - n_cross
        # half of the moves start from the incumbent, the rest from the runners-up
        which = np.where(g.random(n_move) < 0.5, 0, g.integers(0, len(anchors), n_move))
        moved = anchors[which].copy()
        n_change = g.integers(1, 4, size=n_move)
        mask = np.argsort(g.random((n_move, len(dims))), axis=1) < n_change[:, None]
        step = g.choice(np.array([-2, -1, 1, 2]), size=moved.shape)
        out += [near, cross, np.clip(moved + mask * step, 0, dims - 1)]
    return np.concatenate(out)


def _unseen(cands: np.ndarray, space: KnobSpace, seen: set[int]) -> np.ndarray:
    codes = np.ravel_multi_index(cands.T, space.dims)
    _, first = np.unique(codes, return_index=True)
    first.sort()
    keep = [i for i in first if int(codes[i]) not in seen]
    return cands[keep]


def suggest_next(
    history: Sequence[Observation],
    space: KnobSpace | None = None,
    budget: float | None = None,
    seed: int = 0,
) -> dict:
    """Next config to evaluate: warm-up design first, then constrained expected improvement."""
    space = space or default_space()
    seen = {int(np.ravel_multi_index(space.indices(o.config), space.dims)) for o in history}
    exhausted = len(seen) >= space.size
    g = rng(seed, "suggest", len(history))

    if len(history) < N_WARMUP:
        pick = _space_filling(space, len(history), seed)
        if int(np.ravel_multi_index(pick, space.dims)) in seen and not exhausted:
            pick = _unseen(_candidates(space, None, g), space, seen)[0]
        return space.config(pick)

    idx = np.array([space.indices(o.config) for o in history])
    x = space.coords(idx)
    quality = np.array([o.quality for o in history])
    cost = np.array([o.cost for o in history])
    best_i = int(np.argmin(quality))

    anchors = idx[np.argsort(quality, kind="stable")[:N_ANCHORS]]
    cands = _candidates(space, anchors, g)
    if not exhausted:
        cands = _unseen(cands, space, seen)
        while len(cands) == 0:
            cands = _unseen(_candidates(space, None, g), space, seen)
    xc = space.coords(cands)

    q_mean, q_sigma = KernelSurrogate(x, quality).predict(xc)
    if budget is not None:
        c_mean, _ = KernelSurrogate(x, cost).predict(xc)
        feasible = c_mean <= budget
        if not feasible.any():
            return space.config(cands[int(np.argmin(c_mean))])
    else:
        feasible = np.ones(len(cands), dtype=bool)

    ei = np.where(feasible, expected_improvement(q_mean, q_sigma, float(quality[best_i])), -1.0)
    if ei.max() > 0:
        return space.config(cands[int(np.argmax(ei))])
    # nothing promises improvement: explore the feasible point farthest from the data
    spread = np.where(feasible, _pairwise(xc, x).min(axis=1), -1.0)
    return space.config(cands[int(np.argmax(spread))])


# -- campaigns --------------------------------------------------------------------


def autotune(
    objective: Objective,
    evals: int,
    space: KnobSpace | None = None,
    budget: float | None = None,
    seed: int = 0,
    on_observation: Callable[[Observation], None] | None = None,
) -> list[Observation]:
    space = space or getattr(objective, "space", None) or default_space()
    history: list[Observation] = []
    for _ in range(evals):
        config = suggest_next(history, space, budget, seed)
        obs = evaluate(config, objective, space)
        history.append(obs)
        if on_observation is not None:
            on_observation(obs)
    return history


def random_search(objective: Objective, evals: int, space: KnobSpace | None = None, seed: int = 0) -> list[Observation]:
    space = space or getattr(objective, "space", None) or default_space()
    g = rng(seed, "random-search")
    return [evaluate(space.config(g.integers(0, space.dims)), objective, space) for _ in range(evals)]


def best_quality(history: Sequence[Observation]) -> float:
    return min((o.quality for o in history), default=math.inf)


def _dominates(a: Observation, b: Observation) -> bool:
    return a.quality <= b.quality and a.cost <= b.cost and (a.quality < b.quality or a.cost < b.cost)


def pareto_front(history: Sequence[Observation]) -> list[Observation]:
    """Observations no other observation beats on both quality and cost, cheapest first."""
    unique: dict[tuple[float, float], Observation] = {}
    for o in history:
        unique.setdefault((o.quality, o.cost), o)
    pts = sorted(unique.values(), key=lambda o: (o.cost, o.quality))
    front = []
    best_q = math.inf
    for o in pts:
        if o.quality < best_q:
            front.append(o)
            best_q = o.quality
    return front


def write_history(path: str | Path, history: Sequence[Observation]) -> None:
    with open(path, "w") as fh:
        for o in history:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")


def read_history(path: str | Path) -> list[Observation]:
    with open(path) as fh:
        return [Observation.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_tradeoff_csv(path: str | Path, history: Sequence[Observation]) -> None:
    front = {id(o) for o in pareto_front(history)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cost", "quality", "dominated"])
        for o in history:
            dominated = id(o) not in front and any(_dominates(p, o) for p in history)
            writer.writerow([repr(o.cost), repr(o.quality), int(dominated)])


class PipelineObjective:
    """Dock a small corpus with the knob values and score against reference poses.

    Quality is the mean RMSD between each ligand's best pose and its
    reference pose; cost is elapsed wall-clock seconds. Knobs the docking
    stage does not read are accepted and ignored.
    """

    def __init__(self, conformers, pocket, space: KnobSpace | None = None, seed: int = 0, reference=None):
        from . import dock

        self.space = space or default_space()
        self.conformers = list(conformers)
        self.pocket = pocket
        self.seed = seed
        if reference is None:
            reference = [
                dock.dock(c, pocket, restarts=8, max_steps=300, seed=derive_seed(seed, "reference", c.ligand_id))[0]
                for c in self.conformers
            ]
        self.reference = [dock.pose_coordinates(c, p) for c, p in zip(self.conformers, reference)]

    def __call__(self, config: dict) -> tuple[float, float]:
        from dataclasses import replace

        from . import dock

        pocket = self.pocket
        if "clash_penalty" in config:
            pocket = replace(pocket, clash_penalty=float(config["clash_penalty"]))
        start = time.perf_counter()
        errors = []
        for conf, ref in zip(self.conformers, self.reference):
            poses = dock.dock(
                conf,
                pocket,
                restarts=int(config.get("restarts", 4)),
                diversity_delta=float(config.get("diversity_delta", 1.0)),
                max_steps=int(config.get("max_steps", dock.MAX_STEPS)),
                seed=derive_seed(self.seed, "tune", conf.ligand_id),
            )
            best = dock.rescore_poses(conf, poses, self.pocket)
            best = max(best, key=lambda p: p.score) if best else None
            errors.append(dock.rmsd(dock.pose_coordinates(conf, best), ref) if best else math.inf)
        return float(np.mean(errors)), time.perf_counter() - start
