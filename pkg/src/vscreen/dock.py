"""Gradient-ascent docking on an analytic pocket field.

The pocket is a sum of Gaussian sites. Steric sites make up the geometric
score; hbond and lipophilic sites only enter the rescoring pass. Clashes
(non-bonded atom pairs and atoms near the box walls) are penalised with a
softplus ramp so the landscape stays differentiable.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chem import Conformer, rotatable_bond_indices

SITE_KINDS = ("steric", "hbond", "lipophilic")
CLASH_SOFTNESS = 0.1
GRAD_TOL = 1e-6
MAX_STEPS = 500
STEP0 = 0.5
SHRINK = 0.5
ARMIJO = 1e-4
MAX_BACKTRACKS = 40
MAX_START_RETRIES = 50
TORSION_FD_STEP = 1e-5


class DockingError(ValueError):
    pass


class AtomCountMismatch(DockingError):
    pass


class EmptyBounds(DockingError):
    pass


class LengthMismatch(DockingError):
    pass


@dataclass(frozen=True)
class Site:
    center: tuple[float, float, float]
    weight: float = 1.0
    width: float = 1.0
    kind: str = "steric"

    def __post_init__(self):
        if self.width <= 0:
            raise DockingError(f"site width must be positive, got {self.width}")
        if self.kind not in SITE_KINDS:
            raise DockingError(f"unknown site kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Pocket:
    sites: tuple[Site, ...]
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    clash_radius: float = 1.0
    clash_penalty: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        lo, hi = (tuple(float(v) for v in corner) for corner in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))
        if self.clash_penalty < 0:
            raise DockingError("clash_penalty must be non-negative")
        if all(h > l for l, h in zip(lo, hi)):
            for site in self.sites:
                if any(not l <= c <= h for c, l, h in zip(site.center, lo, hi)):
                    raise DockingError(f"site {site.center} lies outside the pocket bounds")

    def _arrays(self, kind: str):
        chosen = [s for s in self.sites if s.kind == kind]
        centers = np.array([s.center for s in chosen], dtype=float).reshape(-1, 3)
        weights = np.array([s.weight for s in chosen], dtype=float)
        widths = np.array([s.width for s in chosen], dtype=float)
        return centers, weights, widths

    def to_dict(self) -> dict:
        return {
            "sites": [
                {"center": list(s.center), "weight": s.weight, "width": s.width, "kind": s.kind}
                for s in self.sites
            ],
            "bounds": {"min": list(self.bounds[0]), "max": list(self.bounds[1])},
            "clash_radius": self.clash_radius,
            "clash_penalty": self.clash_penalty,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pocket":
        sites = tuple(
            Site(tuple(s["center"]), s.get("weight", 1.0), s.get("width", 1.0), s.get("kind", "steric"))
            for s in data.get("sites", [])
        )
        bounds = data["bounds"]
        return cls(
            sites,
            (tuple(bounds["min"]), tuple(bounds["max"])),
            float(data.get("clash_radius", 1.0)),
            float(data.get("clash_penalty", 1.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Pocket":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class Pose:
    ligand_id: str
    translation: tuple[float, float, float]
    rotation: tuple[float, float, float, float]
    torsions: tuple[float, ...] = ()
    geometric_score: float = float("nan")
    rescore: float | None = None

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        norm = float(np.linalg.norm(q))
        if norm == 0:
            raise DockingError("rotation quaternion must be non-zero")
        if abs(norm - 1.0) > 1e-9:
            q = q / norm
        object.__setattr__(self, "rotation", tuple(float(v) for v in q))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "torsions", tuple(float(v) for v in self.torsions))

    @property
    def score(self) -> float:
        return self.geometric_score if self.rescore is None else self.rescore

    def to_dict(self) -> dict:
        return {
            "ligand_id": self.ligand_id,
            "translation": list(self.translation),
            "rotation": list(self.rotation),
            "torsions": list(self.torsions),
            "geometric_score": self.geometric_score,
            "rescore": self.rescore,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        return cls(
            data["ligand_id"],
            tuple(data["translation"]),
            tuple(data["rotation"]),
            tuple(data.get("torsions", ())),
            data.get("geometric_score", float("nan")),
            data.get("rescore"),
        )


def write_poses(path: str | Path, poses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            fh.write(json.dumps(pose.to_dict(), sort_keys=True) + "\n")


def read_poses(path: str | Path) -> list[Pose]:
    with open(path, encoding="utf-8") as fh:
        return [Pose.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- geometry ------------------------------------------------------------------


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(p, q) -> np.ndarray:
    w1, x1, y1, z1 = p
    w2, x2, y2, z2 = q
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if angle < 1e-15:
        return np.array([1.0, *(0.5 * v)]) / math.sqrt(1.0 + 0.25 * float(v @ v))
    axis = v / angle
    return np.array([math.cos(angle / 2), *(math.sin(angle / 2) * axis)])


def _axis_rotation(axis, angle: float) -> np.ndarray:
    ax, ay, az = (float(v) for v in axis)
    norm = math.sqrt(ax * ax + ay * ay + az * az)
    ax, ay, az = ax / norm, ay / norm, az / norm
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * ax * ax + c, t * ax * ay - s * az, t * ax * az + s * ay],
            [t * ax * ay + s * az, t * ay * ay + c, t * ay * az - s * ax],
            [t * ax * az - s * ay, t * ay * az + s * ax, t * az * az + c],
        ]
    )


@dataclass
class LigandFrame:
    """Per-ligand geometry precomputed once for repeated scoring."""

    ligand_id: str
    base: np.ndarray  # conformer coordinates shifted to their centroid
    elements: tuple[str, ...]
    pair_i: np.ndarray
    pair_j: np.ndarray
    torsion_axes: list[tuple[int, int]] = field(default_factory=list)
    torsion_masks: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_conformer(cls, conformer: Conformer) -> "LigandFrame":
        coords = np.asarray(conformer.coordinates, dtype=float)
        n = len(coords)
        base = coords - coords.mean(axis=0) if n else coords.copy()
        g = conformer.graph
        if g is None:
            elements = ("C",) * n
            far = np.ones((n, n), dtype=bool)
            axes, masks = [], []
        else:
            elements = tuple(atom.element for atom in g.atoms)
            adj = g.neighbors()
            far = _topological_distance(adj, n) >= 3
            axes, masks = [], []
            for idx in rotatable_bond_indices(g):
                a, b, _ = g.bonds[idx]
                axes.append((a, b))
                masks.append(_side_of(adj, a, b, n))
        iu, ju = np.triu_indices(n, k=1)
        keep = far[iu, ju]
        return cls(conformer.ligand_id, base, elements, iu[keep], ju[keep], axes, masks)

    @property
    def n_torsions(self) -> int:
        return len(self.torsion_axes)

    def internal(self, torsions, start: int = 0, x: np.ndarray | None = None) -> np.ndarray:
        """Apply torsions ``start..`` in bond order, beginning from ``x`` (default: the base frame)."""
        x = self.base.copy() if x is None else x.copy()
        for k in range(start, len(self.torsion_axes)):
            angle = float(torsions[k])
            if angle == 0.0:
                continue
            a, b = self.torsion_axes[k]
            mask = self.torsion_masks[k]
            rot = _axis_rotation(x[b] - x[a], angle)
            x[mask] = (x[mask] - x[b]) @ rot.T + x[b]
        return x

    def prefixes(self, torsions) -> list[np.ndarray]:
        """Coordinates after applying the first k torsions, for k = 0..n_torsions."""
        out = [self.base]
        for k in range(len(self.torsion_axes)):
            out.append(self._apply_one(out[-1], k, torsions[k]))
        return out

    def _apply_one(self, x: np.ndarray, k: int, angle: float) -> np.ndarray:
        if angle == 0.0:
            return x
        a, b = self.torsion_axes[k]
        mask = self.torsion_masks[k]
        rot = _axis_rotation(x[b] - x[a], float(angle))
        y = x.copy()
        y[mask] = (x[mask] - x[b]) @ rot.T + x[b]
        return y

    def place(self, translation, rotation, torsions) -> np.ndarray:
        x = self.internal(torsions)
        return x @ quat_to_matrix(rotation).T + np.asarray(translation, dtype=float)


def _topological_distance(adj, n: int) -> np.ndarray:
    dist = np.full((n, n), n + 1, dtype=int)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if dist[src, u] >= 3:
                continue
            for v in adj[u]:
                if dist[src, v] > dist[src, u] + 1:
                    dist[src, v] = dist[src, u] + 1
                    queue.append(v)
    return dist


def _side_of(adj, a: int, b: int, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[b] = True
    queue = deque([b])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v == a and u == b:
                continue
            if not mask[v]:
                mask[v] = True
                queue.append(v)
    return mask


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Field:
    def __init__(self, pocket: Pocket):
        self.pocket = pocket
        self.steric = pocket._arrays("steric")
        self.hbond = pocket._arrays("hbond")
        self.lipo = pocket._arrays("lipophilic")
        self.lo = np.array(pocket.bounds[0])
        self.hi = np.array(pocket.bounds[1])

    @staticmethod
    def _gauss(x, centers, weights, widths, want_grad):
        if len(centers) == 0 or len(x) == 0:
            return 0.0, np.zeros_like(x)
        diff = x[:, None, :] - centers[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        terms = weights * np.exp(-r2 / (2 * widths**2))
        value = float(terms.sum())
        if not want_grad:
            return value, None
        grad = -np.einsum("ij,ijk->ik", terms / widths**2, diff)
        return value, grad

    def geometric(self, x: np.ndarray, frame: LigandFrame, want_grad: bool = False):
        value, grad = self._gauss(x, *self.steric, want_grad)
        lam = self.pocket.clash_penalty
        if lam == 0 or len(x) == 0:
            return value, grad
        r = self.pocket.clash_radius
        penalty = 0.0
        gpen = np.zeros_like(x) if want_grad else None
        if len(frame.pair_i):
            d_vec = x[frame.pair_i] - x[frame.pair_j]
            d = np.sqrt(np.einsum("ij,ij->i", d_vec, d_vec))
            z = (r - d) / CLASH_SOFTNESS
            penalty += float(_softplus(z).sum())
            if want_grad:
                # d(penalty)/dx_i = -sigmoid(z)/s * (x_i - x_j)/d
                coef = -_sigmoid(z) / CLASH_SOFTNESS / np.maximum(d, 1e-12)
                contrib = coef[:, None] * d_vec
                n = len(x)
                for axis in range(3):
                    gpen[:, axis] += np.bincount(frame.pair_i, contrib[:, axis], n)
                    gpen[:, axis] -= np.bincount(frame.pair_j, contrib[:, axis], n)
        lo_d = x - self.lo
        hi_d = self.hi - x
        z_lo = (r - lo_d) / CLASH_SOFTNESS
        z_hi = (r - hi_d) / CLASH_SOFTNESS
        penalty += float(_softplus(z_lo).sum() + _softplus(z_hi).sum())
        if want_grad:
            gpen += -_sigmoid(z_lo) / CLASH_SOFTNESS + _sigmoid(z_hi) / CLASH_SOFTNESS
            grad = grad - lam * gpen
        return value - lam * penalty, grad

    def extra(self, x: np.ndarray, frame: LigandFrame) -> float:
        elements = np.array(frame.elements)
        polar = np.isin(elements, ("N", "O"))
        carbon = elements == "C"
        bonus, _ = self._gauss(x[polar], *self.hbond, False)
        lipo, _ = self._gauss(x[carbon], *self.lipo, False)
        return bonus + lipo


def _check_atoms(conformer: Conformer, pose: Pose, frame: LigandFrame) -> None:
    if len(pose.torsions) != frame.n_torsions:
        raise AtomCountMismatch(
            f"pose has {len(pose.torsions)} torsions, ligand {conformer.ligand_id} has {frame.n_torsions}"
        )
    if pose.ligand_id and conformer.ligand_id and pose.ligand_id != conformer.ligand_id:
        raise AtomCountMismatch(f"pose for {pose.ligand_id} applied to {conformer.ligand_id}")


def pose_coordinates(conformer: Conformer, pose: Pose) -> np.ndarray:
    frame = LigandFrame.from_conformer(conformer)
    _check_atoms(conformer, pose, frame)
    return frame.place(pose.translation, pose.rotation, pose.torsions)


def geometric_score(conformer: Conformer, pose: Pose, pocket: Pocket) -> float:
    """Steric Gaussian overlap minus the softplus clash penalty; higher is better."""
    frame = LigandFrame.from_conformer(conformer)
    _check_atoms(conformer, pose, frame)
    x = frame.place(pose.translation, pose.rotation, pose.torsions)
    return _Field(pocket).geometric(x, frame)[0]


def translation_gradient(conformer: Conformer, pose: Pose, pocket: Pocket) -> np.ndarray:
    frame = LigandFrame.from_conformer(conformer)
    _check_atoms(conformer, pose, frame)
    x = frame.place(pose.translation, pose.rotation, pose.torsions)
    _, grad = _Field(pocket).geometric(x, frame, want_grad=True)
    return grad.sum(axis=0)


def rescore(conformer: Conformer, pose: Pose, pocket: Pocket) -> float:
    """Geometric score plus kind-matched hbond (N/O) and lipophilic (C) bonuses."""
    frame = LigandFrame.from_conformer(conformer)
    _check_atoms(conformer, pose, frame)
    field_ = _Field(pocket)
    x = frame.place(pose.translation, pose.rotation, pose.torsions)
    return field_.geometric(x, frame)[0] + field_.extra(x, frame)


def rmsd(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"coordinate shapes differ: {a.shape} vs {b.shape}")
    if len(a) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def filter_poses(poses, keep_top: int | float | None = None, min_score: float = -math.inf) -> list[Pose]:
    """Drop poses below ``min_score`` and keep the ``keep_top`` best (stable)."""
    survivors = [p for p in poses if p.geometric_score >= min_score]
    survivors = sorted(survivors, key=lambda p: -p.geometric_score)
    if keep_top is None or keep_top == math.inf:
        return survivors
    return survivors[: max(0, int(keep_top))]


def ligand_score(poses) -> float:
    """A ligand scores as its best pose."""
    return max((p.score for p in poses), default=-math.inf)


# -- optimisation -------------------------------------------------------------


@dataclass
class _State:
    t: np.ndarray
    q: np.ndarray
    tau: np.ndarray


class _Objective:
    def __init__(self, frame: LigandFrame, field_: _Field):
        self.frame = frame
        self.field = field_
        self.evaluations = 0

    def value(self, s: _State) -> float:
        self.evaluations += 1
        x = self.frame.place(s.t, s.q, s.tau)
        return self.field.geometric(x, self.frame)[0]

    def value_and_grad(self, s: _State) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        frame = self.frame
        prefixes = frame.prefixes(s.tau)
        rot = quat_to_matrix(s.q)
        x = prefixes[-1] @ rot.T + s.t
        value, g_atoms = self.field.geometric(x, frame, want_grad=True)
        g_t = g_atoms.sum(axis=0)
        g_rot = np.cross(x - s.t, g_atoms).sum(axis=0)
        # torsions by central differences, reusing the unchanged prefix
        g_tau = np.zeros(len(s.tau))
        h = TORSION_FD_STEP
        for k in range(len(s.tau)):
            pair = []
            for sign in (1.0, -1.0):
                tau = s.tau.copy()
                tau[k] += sign * h
                xi = frame.internal(tau, k, prefixes[k])
                self.evaluations += 1
                pair.append(self.field.geometric(xi @ rot.T + s.t, frame)[0])
            g_tau[k] = (pair[0] - pair[1]) / (2 * h)
        return value, np.concatenate([g_t, g_rot, g_tau])


def _step(s: _State, direction: np.ndarray, alpha: float) -> _State:
    t = s.t + alpha * direction[:3]
    q = quat_multiply(quat_from_rotvec(alpha * direction[3:6]), s.q)
    q = q / np.linalg.norm(q)
    tau = s.tau + alpha * direction[6:]
    tau = (tau + math.pi) % (2 * math.pi) - math.pi
    return _State(t, q, tau)


def gradient_ascent(objective: _Objective, start: _State, max_steps: int = MAX_STEPS):
    """Backtracking (Armijo) gradient ascent; returns the final state, its score and the score path."""
    s = start
    value, grad = objective.value_and_grad(s)
    path = [value]
    for _ in range(max_steps):
        gnorm2 = float(grad @ grad)
        if math.sqrt(gnorm2) < GRAD_TOL:
            break
        alpha = STEP0
        for _ in range(MAX_BACKTRACKS):
            trial = _step(s, grad, alpha)
            trial_value = objective.value(trial)
            if trial_value >= value + ARMIJO * alpha * gnorm2:
                break
            alpha *= SHRINK
        else:
            break
        s = trial
        value, grad = objective.value_and_grad(s)
        path.append(value)
    return s, value, path


def _random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def dock(
    conformer: Conformer,
    pocket: Pocket,
    restarts: int = 4,
    diversity_delta: float = 1.0,
    seed: int = 0,
    max_steps: int = MAX_STEPS,
) -> list[Pose]:
    """Multi-start gradient ascent with diversity-filtered starts and results.

    Starts closer than ``diversity_delta`` (RMSD) to an already found minimum
    are resampled up to 50 times. Converged poses are returned best first and
    are pairwise at least ``diversity_delta`` apart.
    """
    if restarts < 1:
        raise DockingError("restarts must be >= 1")
    if diversity_delta < 0:
        raise DockingError("diversity_delta must be >= 0")
    lo = np.array(pocket.bounds[0])
    hi = np.array(pocket.bounds[1])
    if np.any(hi <= lo):
        raise EmptyBounds(f"pocket bounds {pocket.bounds} enclose no volume")

    rng = np.random.default_rng(seed)
    frame = LigandFrame.from_conformer(conformer)
    objective = _Objective(frame, _Field(pocket))
    minima: list[tuple[float, _State, np.ndarray]] = []
    for _ in range(restarts):
        for _attempt in range(MAX_START_RETRIES):
            start = _State(
                rng.uniform(lo, hi),
                _random_quaternion(rng),
                rng.uniform(-math.pi, math.pi, size=frame.n_torsions),
            )
            x0 = frame.place(start.t, start.q, start.tau)
            if all(rmsd(x0, xm) >= diversity_delta for _, _, xm in minima):
                break
        final, value, _ = gradient_ascent(objective, start, max_steps)
        minima.append((value, final, frame.place(final.t, final.q, final.tau)))

    kept: list[tuple[float, _State, np.ndarray]] = []
    for value, state, coords in sorted(minima, key=lambda m: -m[0]):
        if all(rmsd(coords, other) >= diversity_delta for _, _, other in kept):
            kept.append((value, state, coords))
    return [
        Pose(conformer.ligand_id, tuple(s.t), tuple(s.q), tuple(s.tau), float(value))
        for value, s, _ in kept
    ]


def rescore_poses(conformer: Conformer, poses, pocket: Pocket) -> list[Pose]:
    frame = LigandFrame.from_conformer(conformer)
    field_ = _Field(pocket)
    out = []
    for pose in poses:
        x = frame.place(pose.translation, pose.rotation, pose.torsions)
        geo = field_.geometric(x, frame)[0]
        out.append(
            Pose(pose.ligand_id, pose.translation, pose.rotation, pose.torsions, geo, geo + field_.extra(x, frame))
        )
    return out
