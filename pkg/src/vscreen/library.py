"""Ligand library files and a synthetic drug-like SMILES generator."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from .chem import AROMATIC, Atom, Bond, Ligand, MolecularGraph, SmilesError, parse_smiles, rotatable_bonds


class LibraryError(ValueError):
    pass


def parse_library_lines(lines) -> list[tuple[str, str]]:
    """Parse ``SMILES<TAB>ID`` records; missing ids become ``L<line-number>``."""
    records = []
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        smiles, _, ident = line.partition("\t")
        ident = ident.strip() or f"L{lineno}"
        if ident in seen:
            raise LibraryError(f"duplicate ligand id {ident!r} on line {lineno}")
        seen.add(ident)
        records.append((smiles.strip(), ident))
    return records


def read_library(path: str | Path, dictionary=None) -> list[tuple[str, str]]:
    """Read a plain or ``SMZC``-compressed library file."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == b"SMZC":
        from . import codec

        if dictionary is None:
            dictionary = codec.default_dictionary()
        lines = codec.read_compressed_library(path, dictionary)
    else:
        lines = raw.decode("utf-8").splitlines()
    return parse_library_lines(lines)


def load_ligands(records) -> list[Ligand]:
    ligands = []
    for smiles, ident in records:
        try:
            ligands.append(Ligand.from_smiles(ident, smiles))
        except SmilesError as exc:
            raise LibraryError(f"ligand {ident}: {exc}") from exc
    return ligands


def write_library(path: str | Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for smiles, ident in records:
            fh.write(f"{smiles}\t{ident}\n")


# -- SMILES writer -----------------------------------------------------------


def _bond_symbol(order: float, a: Atom, b: Atom) -> str:
    if order == 2:
        return "="
    if order == 3:
        return "#"
    if order == 1 and a.aromatic and b.aromatic:
        return "-"
    return ""


def _atom_symbol(atom: Atom) -> str:
    return atom.element.lower() if atom.aromatic else atom.element


def _ring_label(number: int) -> str:
    return str(number) if number < 10 else f"%{number:02d}"


def write_smiles(g: MolecularGraph) -> str:
    """Write a valid (non-canonical) SMILES string for a connected graph."""
    if g.n_atoms == 0:
        return ""
    order_of = {}
    for a, b, order in g.bonds:
        order_of[(a, b)] = order_of[(b, a)] = order
    adj = [sorted(nbs) for nbs in g.neighbors()]

    children: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    opens: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    closes: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    visited = [False] * g.n_atoms
    closure_edges = set()
    ring_id = 0

    def dfs(u: int, parent: int) -> None:
        nonlocal ring_id
        visited[u] = True
        for v in adj[u]:
            if v == parent:
                continue
            key = (min(u, v), max(u, v))
            if visited[v]:
                if key not in closure_edges:
                    closure_edges.add(key)
                    opens[v].append(ring_id)
                    closes[u].append(ring_id)
                    ring_id += 1
            else:
                children[u].append(v)
                dfs(v, u)

    dfs(0, -1)
    ends = {}
    for atom, ids in opens.items():
        for rid in ids:
            ends.setdefault(rid, [None, None])[0] = atom
    for atom, ids in closes.items():
        for rid in ids:
            ends[rid][1] = atom

    out: list[str] = []
    free_numbers = list(range(1, 100))
    assigned: dict[int, int] = {}

    def emit(u: int) -> None:
        out.append(_atom_symbol(g.atoms[u]))
        released = []
        for rid in closes[u]:
            out.append(_ring_label(assigned[rid]))
            released.append(assigned.pop(rid))
        for rid in opens[u]:
            number = free_numbers.pop(0)
            assigned[rid] = number
            a, b = ends[rid]
            out.append(_bond_symbol(order_of[(a, b)], g.atoms[a], g.atoms[b]) + _ring_label(number))
        free_numbers.extend(released)
        free_numbers.sort()
        kids = children[u]
        for k, v in enumerate(kids):
            branch = k < len(kids) - 1
            if branch:
                out.append("(")
            out.append(_bond_symbol(order_of[(u, v)], g.atoms[u], g.atoms[v]))
            emit(v)
            if branch:
                out.append(")")

    emit(0)
    return "".join(out)


# -- synthetic generator ------------------------------------------------------

_RINGS = [
    "c1ccccc1", "c1ccccc1", "c1ccccc1", "c1ccncc1", "c1cncnc1", "c1ccsc1", "c1ccoc1",
    "c1cscn1", "c1cocn1", "c1ccc2ccccc2c1", "C1CCCCC1", "C1CCNCC1", "C1COCCN1",
    "C1CNCCN1", "C1CC1", "C1CCOC1",
]
_LINKERS = ["C(=O)N", "NC(=O)", "C", "CC", "O", "N", "S(=O)(=O)N", "C(=O)O", "CCO", "OCC", "CN", "C=C"]
_SUBSTITUENTS = [
    "F", "Cl", "Br", "C", "C", "CC", "OC", "C(F)(F)F", "C#N", "N(C)C", "O", "N", "C(=O)C",
    "C(=O)N", "S(C)(=O)=O", "OC(F)(F)F", "C(C)C", "C(=O)O",
]
_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1}


def _free_valence(atoms, bonds) -> list[int]:
    used = [0.0] * len(atoms)
    for a, b, order in bonds:
        used[a] += order
        used[b] += order
    free = []
    for atom, u in zip(atoms, used):
        valence = _VALENCE[atom.element]
        if atom.element == "S" and u > 2:
            valence = 6
        if atom.aromatic and atom.element in ("O", "S"):
            free.append(0)
        else:
            free.append(max(0, int(valence - u)))
    return free


@lru_cache(maxsize=None)
def _fragment(smiles: str) -> MolecularGraph:
    return parse_smiles(smiles)


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.atoms: list[Atom] = []
        self.bonds: list[tuple[int, int, float]] = []

    def add(self, smiles: str) -> int:
        frag = _fragment(smiles)
        offset = len(self.atoms)
        self.atoms.extend(frag.atoms)
        self.bonds.extend((a + offset, b + offset, o) for a, b, o in frag.bonds)
        return offset

    def sites(self, lo: int = 0, hi: int | None = None) -> list[int]:
        free = _free_valence(self.atoms, self.bonds)
        hi = len(self.atoms) if hi is None else hi
        return [i for i in range(lo, hi) if free[i] > 0]

    def attach(self, smiles: str, anchor: int) -> tuple[int, int]:
        offset = self.add(smiles)
        end = len(self.atoms)
        self.bonds.append((anchor, offset, 1))
        return offset, end


def random_molecule(rng: np.random.Generator, min_atoms: int = 10, max_atoms: int = 40) -> MolecularGraph:
    """Assemble rings, linkers and substituents into one drug-like molecule."""
    target = int(rng.integers(min_atoms, max_atoms + 1))
    builder = _Builder(rng)
    builder.add(str(rng.choice(_RINGS)))
    for _ in range(64):
        if len(builder.atoms) >= target:
            break
        sites = builder.sites()
        if not sites:
            break
        anchor = int(rng.choice(sites))
        if rng.random() < 0.45 and len(builder.atoms) + 6 <= max_atoms:
            lo, hi = builder.attach(str(rng.choice(_LINKERS)), anchor)
            ends = builder.sites(lo + 1, hi) or builder.sites(lo, hi)
            if not ends:
                continue
            ring_smiles = str(rng.choice(_RINGS))
            ring = _fragment(ring_smiles)
            ring_sites = [i for i, f in enumerate(_free_valence(ring.atoms, ring.bonds)) if f > 0]
            offset = builder.add(ring_smiles)
            builder.bonds.append((ends[-1], offset + int(rng.choice(ring_sites)), 1))
        else:
            sub = str(rng.choice(_SUBSTITUENTS))
            if len(builder.atoms) + _fragment(sub).n_atoms > max_atoms:
                sub = "C"
            builder.attach(sub, anchor)
    bonds = tuple(Bond(a, b, o) for a, b, o in builder.bonds)
    return MolecularGraph(tuple(builder.atoms), bonds)


def synthetic_library(n: int, seed: int = 0, prefix: str = "LIG", max_rotatable: int = 11) -> list[tuple[str, str]]:
    """Generate ``n`` unique (SMILES, id) records deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    records = []
    seen = set()
    width = max(5, len(str(n)))
    while len(records) < n:
        g = random_molecule(rng)
        smiles = write_smiles(g)
        if smiles in seen or rotatable_bonds(parse_smiles(smiles)) > max_rotatable:
            continue
        seen.add(smiles)
        records.append((smiles, f"{prefix}{len(records) + 1:0{width}d}"))
    return records


__all__ = [
    "AROMATIC",
    "LibraryError",
    "load_ligands",
    "parse_library_lines",
    "random_molecule",
    "read_library",
    "synthetic_library",
    "write_library",
    "write_smiles",
]
