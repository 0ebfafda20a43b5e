"""Exact maximum common connected substructure by clique search.

Product vertices are *oriented bond pairs*: a bond of A mapped onto a bond of
B with matching order, together with the implied atom correspondence. Two
product vertices are adjacent when their bonds differ on both sides and their
atom correspondences merge into one injective map, so every clique is a
consistent common edge subgraph and clique size equals mapped bond count.
Connectivity is enforced by only growing a clique with vertices whose A-bond
touches an atom already mapped.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..chem import MolecularGraph

MAX_ATOMS = 64


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class McsMapping:
    pairs: tuple[tuple[int, int], ...]
    bond_count: int

    def __len__(self) -> int:
        return len(self.pairs)

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


def _bit_count(x: int) -> int:
    return bin(x).count("1")


def _vertices(a: MolecularGraph, b: MolecularGraph):
    elem_a = [atom.element for atom in a.atoms]
    elem_b = [atom.element for atom in b.atoms]
    out = []
    for ia, (a1, a2, oa) in enumerate(a.bonds):
        for ib, (b1, b2, ob) in enumerate(b.bonds):
            if oa != ob:
                continue
            for x, y in ((b1, b2), (b2, b1)):
                if elem_a[a1] == elem_b[x] and elem_a[a2] == elem_b[y]:
                    out.append((ia, ib, ((a1, x), (a2, y))))
            # both orientations coincide only if x == y, which bonds exclude
    return out


def _compatible(u, v) -> bool:
    if u[0] == v[0] or u[1] == v[1]:
        return False
    for pa, pb in u[2]:
        for qa, qb in v[2]:
            if (pa == qa) != (pb == qb):
                return False
    return True


def _touches(u, v) -> bool:
    au = {p for p, _ in u[2]}
    return any(q in au for q, _ in v[2])


def _color_bound(cand: int, compat: list[int]) -> int:
    """Number of greedy colour classes: an upper bound on any clique inside ``cand``."""
    colors = 0
    uncolored = cand
    while uncolored:
        colors += 1
        q = uncolored
        while q:
            low = q & -q
            v = low.bit_length() - 1
            uncolored &= ~low
            q &= ~low & ~compat[v]
    return colors


def mcs(a: MolecularGraph, b: MolecularGraph) -> McsMapping:
    """Maximum common connected subgraph: most mapped bonds, then most mapped atoms.

    Atoms match on element, bonds on order. Ties are broken by search order,
    which visits bond pairs in ascending (bond of A, bond of B) order.
    """
    if a.n_atoms > MAX_ATOMS or b.n_atoms > MAX_ATOMS:
        raise TooLarge(f"graphs are limited to {MAX_ATOMS} atoms ({a.n_atoms}, {b.n_atoms})")
    verts = _vertices(a, b)
    if not verts:
        for i, atom_a in enumerate(a.atoms):
            for j, atom_b in enumerate(b.atoms):
                if atom_a.element == atom_b.element:
                    return McsMapping(((i, j),), 0)
        return McsMapping((), 0)

    n = len(verts)
    compat = [0] * n
    cadj = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if _compatible(verts[i], verts[j]):
                compat[i] |= 1 << j
                compat[j] |= 1 << i
                if _touches(verts[i], verts[j]):
                    cadj[i] |= 1 << j
                    cadj[j] |= 1 << i

    best_bonds = 0
    best_atoms = 0
    best_clique: list[int] = []

    def atoms_of(clique) -> int:
        return len({p for v in clique for p, _ in verts[v][2]})

    def expand(clique: list[int], p: int, d: int) -> None:
        nonlocal best_bonds, best_atoms, best_clique
        size = len(clique)
        n_atoms = atoms_of(clique)
        if (size, n_atoms) > (best_bonds, best_atoms):
            best_bonds, best_atoms, best_clique = size, n_atoms, list(clique)
        while p:
            cand = p | d
            bound = size + _color_bound(cand, compat)
            # a connected edge set with k more bonds adds at most k atoms
            if bound < best_bonds or (bound == best_bonds and n_atoms + bound - size <= best_atoms):
                return
            low = p & -p
            v = low.bit_length() - 1
            p &= ~low
            nv = compat[v]
            expand(clique + [v], (p & nv) | (d & nv & cadj[v]), d & nv & ~cadj[v])

    remaining = (1 << n) - 1
    for v in range(n):
        remaining &= ~(1 << v)
        nv = compat[v] & remaining
        expand([v], nv & cadj[v], nv & ~cadj[v])

    pairs = sorted({pair for v in best_clique for pair in verts[v][2]})
    return McsMapping(tuple(pairs), best_bonds)


def mapped_bond_count(a: MolecularGraph, b: MolecularGraph, mapping) -> int:
    """Bonds of A whose endpoints are mapped onto a bond of B with the same order."""
    m = dict(mapping)
    orders_b = {}
    for x, y, o in b.bonds:
        orders_b[(x, y)] = orders_b[(y, x)] = o
    return sum(1 for x, y, o in a.bonds if x in m and y in m and orders_b.get((m[x], m[y])) == o)
