"""Restricted SMILES parsing, size descriptors and a toy 3D embedding.

Only the organic subset is understood: ``B C N O P S F Cl Br I``, aromatic
``b c n o p s``, bond symbols ``- = #``, branches and ring closures (``1``-``9``
and ``%nn``). Bracket atoms, charges, isotopes, stereo marks and dot-separated
fragments are rejected with :class:`UnknownToken`. Hydrogens stay implicit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

AROMATIC = 1.5
BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3}
ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "I"}
AROMATIC_ATOMS = {"b", "c", "n", "o", "p", "s"}
_DIGITS = frozenset("0123456789")

BOND_LENGTH = 1.5
REPULSION_RADIUS = 1.0
RELAX_ITERATIONS = 200


class SmilesError(ValueError):
    """Base class for parse failures; ``position`` is a 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnbalancedBranch(SmilesError):
    pass


class UnclosedRingBond(SmilesError):
    pass


class UnknownToken(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    """A known token in a place the grammar does not allow."""


class DisconnectedGraph(ValueError):
    pass


class Atom(NamedTuple):
    element: str
    aromatic: bool = False


class Bond(NamedTuple):
    a: int
    b: int
    order: float


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    ring_bond_flags: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond {bond} references a missing atom")
            if bond.a == bond.b:
                raise ValueError(f"self-bond on atom {bond.a}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)
        if not self.ring_bond_flags:
            object.__setattr__(self, "ring_bond_flags", ring_bonds(n, self.bonds))
        elif len(self.ring_bond_flags) != len(self.bonds):
            raise ValueError("ring_bond_flags must have one entry per bond")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.atoms]
        for a, b, _ in self.bonds:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def degrees(self) -> list[int]:
        deg = [0] * len(self.atoms)
        for a, b, _ in self.bonds:
            deg[a] += 1
            deg[b] += 1
        return deg

    def is_connected(self) -> bool:
        if not self.atoms:
            return True
        adj = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(self.atoms)


def ring_bonds(n_atoms: int, bonds) -> tuple[bool, ...]:
    """Flag every bond that lies on a cycle (i.e. is not a bridge)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for idx, (a, b, _) in enumerate(bonds):
        adj[a].append((b, idx))
        adj[b].append((a, idx))
    disc = [-1] * n_atoms
    low = [0] * n_atoms
    is_bridge = [False] * len(bonds)
    counter = 0
    for root in range(n_atoms):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = counter
        counter += 1
        # (node, parent edge, iterator position)
        stack = [(root, -1, 0)]
        while stack:
            node, parent_edge, pos = stack[-1]
            if pos < len(adj[node]):
                stack[-1] = (node, parent_edge, pos + 1)
                nb, edge = adj[node][pos]
                if edge == parent_edge:
                    continue
                if disc[nb] == -1:
                    disc[nb] = low[nb] = counter
                    counter += 1
                    stack.append((nb, edge, 0))
                else:
                    low[node] = min(low[node], disc[nb])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        is_bridge[parent_edge] = True
    return tuple(not bridge for bridge in is_bridge)


def parse_smiles(text: str | bytes) -> MolecularGraph:
    """Parse one line of restricted SMILES into a :class:`MolecularGraph`.

    Never raises anything but :class:`SmilesError` subclasses, whatever the input.
    """
    if isinstance(text, (bytes, bytearray)):
        for i, byte in enumerate(text):
            if byte >= 0x80:
                raise UnknownToken(f"non-ASCII byte 0x{byte:02x}", i)
        text = bytes(text).decode("ascii")
    if not text:
        raise SmilesSyntaxError("empty SMILES", 0)

    atoms: list[Atom] = []
    bonds: list[tuple[int, int, float]] = []
    implicit: list[bool] = []
    pairs: set[tuple[int, int]] = set()
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, float | None, int]] = {}
    prev: int | None = None
    pending: float | None = None
    pending_pos = 0
    last = ""  # kind of the previous token: "", "atom", "bond", "open", "close", "ring"

    def add_bond(a: int, b: int, order: float | None, pos: int) -> None:
        key = (min(a, b), max(a, b))
        if a == b:
            raise SmilesSyntaxError("ring closure onto the same atom", pos)
        if key in pairs:
            raise SmilesSyntaxError("duplicate bond between the same atoms", pos)
        pairs.add(key)
        if order is None:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            bonds.append((a, b, AROMATIC if both_aromatic else 1))
            implicit.append(True)
        else:
            bonds.append((a, b, order))
            implicit.append(False)

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in ORGANIC or ch in AROMATIC_ATOMS:
            if ch == "C" and i + 1 < n and text[i + 1] == "l":
                symbol, aromatic, width = "Cl", False, 2
            elif ch == "B" and i + 1 < n and text[i + 1] == "r":
                symbol, aromatic, width = "Br", False, 2
            elif ch in AROMATIC_ATOMS:
                symbol, aromatic, width = ch.upper(), True, 1
            else:
                symbol, aromatic, width = ch, False, 1
            if prev is None and pending is not None:
                raise SmilesSyntaxError("bond symbol without a preceding atom", pending_pos)
            atoms.append(Atom(symbol, aromatic))
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending, i)
            prev = idx
            pending = None
            last = "atom"
            i += width
        elif ch in BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise SmilesSyntaxError(f"unexpected bond symbol {ch!r}", i)
            pending = BOND_SYMBOLS[ch]
            pending_pos = i
            last = "bond"
            i += 1
        elif ch == "(":
            if prev is None or last in ("open", "bond"):
                raise SmilesSyntaxError("branch without a preceding atom", i)
            branch_stack.append(prev)
            last = "open"
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise UnbalancedBranch("unmatched ')'", i)
            if last in ("open", "bond"):
                raise SmilesSyntaxError("empty branch or dangling bond", i)
            prev = branch_stack.pop()
            last = "close"
            i += 1
        elif ch in _DIGITS or ch == "%":
            if ch == "%":
                digits = text[i + 1 : i + 3]
                if len(digits) != 2 or any(c not in _DIGITS for c in digits):
                    raise UnknownToken("'%' must be followed by two digits", i)
                number, width = int(digits), 3
            else:
                number, width = int(ch), 1
            if ch == "0":
                raise UnknownToken("ring closure 0 is not supported", i)
            if prev is None or last in ("open", "close"):
                raise SmilesSyntaxError("ring closure without a preceding atom", i)
            if number in rings:
                opener, open_order, _ = rings.pop(number)
                if open_order is not None and pending is not None and open_order != pending:
                    raise SmilesSyntaxError("conflicting ring-closure bond orders", i)
                order = pending if pending is not None else open_order
                add_bond(opener, prev, order, i)
            else:
                rings[number] = (prev, pending, i)
            pending = None
            last = "ring"
            i += width
        else:
            raise UnknownToken(f"unknown token {ch!r}", i)

    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol", pending_pos)
    if branch_stack:
        raise UnbalancedBranch("unclosed branch", n)
    if rings:
        first = min(pos for _, _, pos in rings.values())
        raise UnclosedRingBond("unclosed ring bond", first)

    flags = ring_bonds(len(atoms), bonds)
    final = []
    for (a, b, order), flag, was_implicit in zip(bonds, flags, implicit):
        # aromatic-aromatic links outside rings (biaryls) are single bonds
        if was_implicit and order == AROMATIC and not flag:
            order = 1
        final.append(Bond(a, b, order))
    return MolecularGraph(tuple(atoms), tuple(final), flags)


def count_atom_tokens(text: str) -> int:
    """Count atom tokens lexically, independent of the parser's state machine."""
    count = 0
    i = 0
    while i < len(text):
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            count += 1
            i += 2
            continue
        if text[i] in ORGANIC or text[i] in AROMATIC_ATOMS:
            count += 1
        i += 1
    return count


def rotatable_bonds(g: MolecularGraph) -> int:
    """Acyclic single bonds whose endpoints both have degree >= 2."""
    deg = g.degrees()
    return sum(
        1
        for (a, b, order), in_ring in zip(g.bonds, g.ring_bond_flags)
        if order == 1 and not in_ring and deg[a] >= 2 and deg[b] >= 2
    )


def rotatable_bond_indices(g: MolecularGraph) -> list[int]:
    deg = g.degrees()
    return [
        i
        for i, ((a, b, order), in_ring) in enumerate(zip(g.bonds, g.ring_bond_flags))
        if order == 1 and not in_ring and deg[a] >= 2 and deg[b] >= 2
    ]


@dataclass(frozen=True)
class Ligand:
    id: str
    smiles: str
    graph: MolecularGraph
    heavy_atoms: int
    rotatable_bonds: int

    @classmethod
    def from_smiles(cls, id: str, smiles: str) -> "Ligand":
        graph = parse_smiles(smiles)
        return cls(id, smiles, graph, graph.n_atoms, rotatable_bonds(graph))


@dataclass(frozen=True, eq=False)
class Conformer:
    ligand_id: str
    coordinates: np.ndarray
    graph: MolecularGraph | None = None

    def __post_init__(self):
        coords = np.array(self.coordinates, dtype=float).reshape(-1, 3)
        coords.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)
        if self.graph is not None and self.graph.n_atoms != len(coords):
            raise ValueError("one coordinate per atom required")

    def __eq__(self, other):
        if not isinstance(other, Conformer):
            return NotImplemented
        return self.ligand_id == other.ligand_id and np.array_equal(self.coordinates, other.coordinates)

    __hash__ = None


def _lattice_directions() -> np.ndarray:
    # tetrahedral directions plus their inversions and the 6 axis directions
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    axes = np.vstack([np.eye(3), -np.eye(3)])
    dirs = np.vstack([tet, -tet, axes])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


_DIRECTIONS = _lattice_directions()


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def embed_3d(g: MolecularGraph, seed: int = 0, ligand_id: str = "") -> Conformer:
    """Deterministic spring-relaxed layout grown breadth-first on a tetrahedral lattice.

    Same ``(g, seed)`` gives bit-identical coordinates.
    """
    n = g.n_atoms
    if n == 0:
        return Conformer(ligand_id, np.zeros((0, 3)), g)
    if not g.is_connected():
        raise DisconnectedGraph("embedding needs a connected graph")
    rng = np.random.default_rng(seed)
    directions = _DIRECTIONS @ _random_rotation(rng).T
    coords = np.zeros((n, 3))
    placed = np.zeros(n, dtype=bool)
    placed[0] = True
    adj = g.neighbors()
    queue = deque([0])
    while queue:
        atom = queue.popleft()
        for nb in sorted(adj[atom]):
            if placed[nb]:
                continue
            candidates = coords[atom] + BOND_LENGTH * directions
            others = coords[placed]
            dmin = np.min(np.linalg.norm(candidates[:, None, :] - others[None, :, :], axis=2), axis=1)
            coords[nb] = candidates[int(np.argmax(dmin))]
            placed[nb] = True
            queue.append(nb)

    coords = _relax(coords, g)
    return Conformer(ligand_id, coords, g)


def _relax(coords: np.ndarray, g: MolecularGraph, step: float = 0.1) -> np.ndarray:
    n = len(coords)
    if n < 2:
        return coords
    bonded = np.zeros((n, n), dtype=bool)
    for a, b, _ in g.bonds:
        bonded[a, b] = bonded[b, a] = True
    nonbonded = ~bonded
    np.fill_diagonal(nonbonded, False)
    for _ in range(RELAX_ITERATIONS):
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, 1.0)
        unit = diff / np.maximum(dist, 1e-9)[:, :, None]
        # positive magnitude pushes i away from j
        mag = np.where(bonded, BOND_LENGTH - dist, 0.0)
        mag += np.where(nonbonded & (dist < REPULSION_RADIUS), 2.0 * (REPULSION_RADIUS - dist), 0.0)
        coords = coords + step * np.sum(mag[:, :, None] * unit, axis=1)
    return coords
