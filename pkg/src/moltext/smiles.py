"""SMILES subset: parsing, canonical form, and hashed fingerprints.

Supported grammar: organic-subset atoms (B C N O P S F Cl Br I), aromatic
lowercase b c n o p s, bracket atoms with optional isotope (parsed and
dropped), explicit H count and charge, bonds ``- = # :``, branches, ring
closures 1-9 and %nn, and dot-separated components.  Stereochemistry
(``/ \\ @``) and wildcards (``*``) are rejected with a pointed error, not
skipped.  There is no aromaticity perception: lowercase input is trusted,
Kekule input stays Kekule, and the two forms of the same molecule are
different graphs here.

Valence rules: B 3, C 4, N 3, O 2, P 3/5, S 2/4/6, halogens 1.  Implicit
hydrogens on bare atoms are topped up to the smallest allowed valence;
bracket atoms trust their explicit H and charge and skip the table.  A
bare aromatic atom reserves one unit of valence for the ring system, so
benzene carbons carry one H and fused junction carbons carry none.
Aromatic atoms must sit on a ring bond and aromatic bonds must join two
aromatic atoms; both are validated after parsing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "SINGLE",
    "DOUBLE",
    "TRIPLE",
    "AROMATIC",
    "Atom",
    "Bond",
    "MoleculeGraph",
    "BitFingerprint",
    "SmilesError",
    "SmilesSyntaxError",
    "UnclosedRingError",
    "ValenceError",
    "AromaticityError",
    "parse_smiles",
    "canonical_smiles",
    "randomized_smiles",
    "morgan_fingerprint",
    "path_fingerprint",
    "fnv1a64",
]

SINGLE, DOUBLE, TRIPLE, AROMATIC = 1, 2, 3, 4

_BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_BOND_SYMBOL = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}

_ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_AROMATIC_ORGANIC = {"b", "c", "n", "o", "p", "s"}

# Smallest-first allowed valences; halogens and the rest are single-valued.
_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# Element symbols accepted inside brackets.  Broad on purpose: bracket
# atoms are valence-exempt, so charged metals in salts parse fine.
_ELEMENTS = {
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn",
    "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb",
    "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta",
    "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At",
    "Rn",
}


class SmilesError(ValueError):
    """Base class for everything the SMILES layer raises."""


class SmilesSyntaxError(SmilesError):
    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"syntax error at position {position}: {reason}")


class UnclosedRingError(SmilesError):
    def __init__(self, labels: list[int]):
        self.labels = labels
        pretty = ", ".join(str(x) for x in labels)
        super().__init__(f"unclosed ring bond(s): {pretty}")


class ValenceError(SmilesError):
    def __init__(self, atom_index: int, element: str, valence: int):
        self.atom_index = atom_index
        self.element = element
        self.valence = valence
        super().__init__(
            f"valence violation at atom {atom_index} ({element}): computed valence {valence}"
        )


class AromaticityError(SmilesError):
    def __init__(self, atom_index: int, reason: str):
        self.atom_index = atom_index
        super().__init__(f"aromaticity violation at atom {atom_index}: {reason}")


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    # Total hydrogen count.  None only transiently inside the parser, before
    # implicit hydrogens have been assigned.
    hcount: int | None = 0


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int


@dataclass
class MoleculeGraph:
    """Undirected simple graph of atoms.  Bond endpoints are atom indices."""

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise SmilesError(f"bond endpoint out of range: {bond}")
            if bond.a == bond.b:
                raise SmilesError(f"self bond on atom {bond.a}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise SmilesError(f"parallel bond between atoms {key[0]} and {key[1]}")
            seen.add(key)
            if bond.order not in (SINGLE, DOUBLE, TRIPLE, AROMATIC):
                raise SmilesError(f"unknown bond order {bond.order}")

    def neighbors(self, i: int) -> list[tuple[int, int]]:
        """(neighbor index, bond order) pairs for atom ``i``."""
        return self._adjacency()[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency()[i])

    def _adjacency(self) -> list[list[tuple[int, int]]]:
        cache = getattr(self, "_adj", None)
        if cache is None or len(cache) != len(self.atoms):
            cache = [[] for _ in self.atoms]
            for bond in self.bonds:
                cache[bond.a].append((bond.b, bond.order))
                cache[bond.b].append((bond.a, bond.order))
            object.__setattr__(self, "_adj", cache)
        return cache

    def ring_bond_flags(self) -> list[bool]:
        """Per-bond flag: True when the bond lies on a cycle (is not a bridge)."""
        bridges = _find_bridges(self)
        return [
            (min(b.a, b.b), max(b.a, b.b)) not in bridges for b in self.bonds
        ]

    def atom_in_ring_flags(self) -> list[bool]:
        flags = [False] * len(self.atoms)
        for bond, is_ring in zip(self.bonds, self.ring_bond_flags()):
            if is_ring:
                flags[bond.a] = True
                flags[bond.b] = True
        return flags


def _find_bridges(g: MoleculeGraph) -> set[tuple[int, int]]:
    # Iterative Tarjan low-link; recursion depth is unbounded on long chains.
    n = len(g.atoms)
    disc = [-1] * n
    low = [0] * n
    bridges: set[tuple[int, int]] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            node, parent, edge_pos = stack.pop()
            if edge_pos == 0:
                disc[node] = low[node] = timer
                timer += 1
            nbrs = g.neighbors(node)
            if edge_pos < len(nbrs):
                stack.append((node, parent, edge_pos + 1))
                nxt = nbrs[edge_pos][0]
                if disc[nxt] == -1:
                    stack.append((nxt, node, 0))
                elif nxt != parent:
                    low[node] = min(low[node], disc[nxt])
            else:
                if parent != -1:
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        bridges.add((min(parent, node), max(parent, node)))
    return bridges


# -------------------------------------------------------------------- parser


def _implicit_hydrogens(element: str, aromatic: bool, explicit_valence: int) -> int | None:
    """Hydrogens needed to top up to the smallest allowed valence, or None
    when the explicit valence already exceeds every allowed value."""
    for v in _VALENCES[element]:
        if v >= explicit_valence:
            return v - explicit_valence
    return None


def _parse_bracket(text: str, start: int) -> tuple[Atom, int]:
    """Parse one bracket atom beginning at ``text[start] == '['``.

    Returns the atom and the index just past the closing bracket.  The
    isotope prefix is consumed and discarded.
    """
    i = start + 1
    n = len(text)

    def fail(reason: str, pos: int | None = None):
        raise SmilesSyntaxError(start if pos is None else pos, reason)

    while i < n and text[i] in "0123456789":  # isotope: parsed, ignored
        i += 1
    isotope_seen = i > start + 1
    if i >= n:
        fail("unclosed bracket atom")
    if text[i] in "@":
        fail("stereochemistry is not supported (bracket '@')", i)
    if text[i] == " ":
        fail("whitespace inside bracket atom", i)

    # Element: one uppercase + optional lowercase, or a lone aromatic letter.
    aromatic = False
    if text[i] in _AROMATIC_ORGANIC:
        element = text[i].upper()
        aromatic = True
        i += 1
    elif "A" <= text[i] <= "Z":
        if i + 1 < n and text[i : i + 2] in _ELEMENTS:
            element = text[i : i + 2]
            i += 2
        elif text[i] in _ELEMENTS:
            element = text[i]
            i += 1
        else:
            fail(f"unknown element symbol {text[i:i + 2]!r} in bracket", i)
    elif text[i] == "]":
        fail("empty bracket atom" if not isotope_seen else "isotope without an element", i)
    elif text[i] in "+-":
        fail("charge without an element", i)
    else:
        fail(f"unknown element symbol {text[i]!r} in bracket", i)

    hcount = 0
    if i < n and text[i] == "H":
        i += 1
        digits = ""
        while i < n and text[i] in "0123456789":
            digits += text[i]
            i += 1
        hcount = int(digits) if digits else 1

    charge = 0
    if i < n and text[i] in "+-":
        sign = 1 if text[i] == "+" else -1
        symbol = text[i]
        i += 1
        if i < n and text[i] in "0123456789":
            digits = ""
            while i < n and text[i] in "0123456789":
                digits += text[i]
                i += 1
            charge = sign * int(digits)
        elif i < n and text[i] == symbol:
            charge = sign * 2
            i += 1
            if i < n and text[i] in "+-":
                fail("charge run longer than two", i)
        else:
            charge = sign
        if i < n and text[i] in "+-":
            fail("mixed charge signs", i)

    if i < n and text[i] == "@":
        fail("stereochemistry is not supported (bracket '@')", i)
    if i < n and text[i] == " ":
        fail("whitespace inside bracket atom", i)
    if i >= n:
        fail("unclosed bracket atom")
    if text[i] != "]":
        fail(f"unexpected {text[i]!r} inside bracket atom", i)
    return Atom(element, aromatic, charge, hcount), i + 1


def parse_smiles(text: str) -> MoleculeGraph:
    """Parse a SMILES string into a molecule graph or raise a SmilesError.

    Parsing is total over the subset: any input either yields a graph with
    hydrogen counts assigned or raises one structured error naming the
    offending position, atom, or ring label.
    """
    if not isinstance(text, str):
        raise SmilesSyntaxError(0, f"expected a string, got {type(text).__name__}")
    if text == "":
        raise SmilesSyntaxError(0, "empty input")

    atoms: list[Atom] = []
    explicit_h: list[bool] = []  # bracket atoms keep their stated hydrogens
    bonds: list[Bond] = []
    bond_keys: set[tuple[int, int]] = set()
    component: list[int] = []  # per-atom component id, for the dot rule
    comp_id = 0

    prev: int | None = None
    pending_bond: int | None = None
    pending_bond_pos = 0
    branch_stack: list[tuple[int, int]] = []  # (return atom, '(' position)
    # ring label -> (atom index, bond order or None, position)
    open_rings: dict[int, tuple[int, int | None, int]] = {}
    expect_atom_after_dot = False

    def add_bond(a: int, b: int, order: int | None, pos: int):
        if a == b:
            raise SmilesSyntaxError(pos, "ring closure to the same atom")
        key = (min(a, b), max(a, b))
        if key in bond_keys:
            raise SmilesSyntaxError(pos, f"duplicate bond between atoms {key[0]} and {key[1]}")
        if order is None:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            order = AROMATIC if both_aromatic else SINGLE
        bond_keys.add(key)
        bonds.append(Bond(a, b, order))

    def add_atom(atom: Atom, has_explicit_h: bool, pos: int):
        nonlocal prev, pending_bond, comp_id, expect_atom_after_dot
        atoms.append(atom)
        explicit_h.append(has_explicit_h)
        idx = len(atoms) - 1
        if prev is None:
            if pending_bond is not None:
                raise SmilesSyntaxError(pending_bond_pos, "bond with no preceding atom")
            comp_id += 1
            component.append(comp_id)
        else:
            component.append(component[prev])
            add_bond(prev, idx, pending_bond, pos)
        prev = idx
        pending_bond = None
        expect_atom_after_dot = False

    def close_ring(label: int, pos: int):
        nonlocal pending_bond
        if prev is None:
            raise SmilesSyntaxError(pos, "ring closure digit before any atom")
        if label in open_rings:
            other, order_a, opened_pos = open_rings.pop(label)
            order_b = pending_bond
            pending_bond = None
            if order_a is not None and order_b is not None and order_a != order_b:
                raise SmilesSyntaxError(pos, f"ring closure bond order conflict for label {label}")
            order = order_a if order_a is not None else order_b
            if component[other] != component[prev]:
                raise SmilesSyntaxError(pos, "ring closure across disconnected components")
            add_bond(other, prev, order, pos)
        else:
            open_rings[label] = (prev, pending_bond, pos)
            pending_bond = None

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, nxt = _parse_bracket(text, i)
            add_atom(atom, has_explicit_h=True, pos=i)
            i = nxt
        elif "A" <= ch <= "Z":
            if text[i : i + 2] in ("Cl", "Br"):
                add_atom(Atom(text[i : i + 2], hcount=None), False, i)
                i += 2
            elif ch in _ORGANIC:
                add_atom(Atom(ch, hcount=None), False, i)
                i += 1
            else:
                raise SmilesSyntaxError(i, f"unknown atom symbol {ch!r}")
        elif ch in _AROMATIC_ORGANIC:
            add_atom(Atom(ch.upper(), aromatic=True, hcount=None), False, i)
            i += 1
        elif ch in _BOND_CHARS:
            if prev is None:
                raise SmilesSyntaxError(i, "bond with no preceding atom")
            if pending_bond is not None:
                raise SmilesSyntaxError(i, "two bond symbols in a row")
            pending_bond = _BOND_CHARS[ch]
            pending_bond_pos = i
            i += 1
        elif ch == "(":
            if prev is None:
                raise SmilesSyntaxError(i, "branch before any atom")
            if pending_bond is not None:
                raise SmilesSyntaxError(i, "bond before branch open")
            branch_stack.append((prev, i))
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesSyntaxError(i, "branch close with no open branch")
            if pending_bond is not None:
                raise SmilesSyntaxError(pending_bond_pos, "bond with no following atom")
            prev, _ = branch_stack.pop()
            i += 1
        elif ch in "0123456789":
            label = int(ch)
            if label == 0:
                raise SmilesSyntaxError(i, "ring closure digit 0 is outside the supported range")
            close_ring(label, i)
            i += 1
        elif ch == "%":
            if i + 2 >= n or not (text[i + 1] in "0123456789" and text[i + 2] in "0123456789"):
                raise SmilesSyntaxError(i, "percent ring closure needs exactly two digits")
            close_ring(int(text[i + 1 : i + 3]), i)
            i += 3
        elif ch == ".":
            if pending_bond is not None:
                raise SmilesSyntaxError(i, "bond before dot separator")
            if prev is None or expect_atom_after_dot:
                raise SmilesSyntaxError(i, "dot separator with an empty component")
            if branch_stack:
                raise SmilesSyntaxError(i, "dot separator inside a branch")
            prev = None
            expect_atom_after_dot = True
            i += 1
        elif ch in "/\\":
            raise SmilesSyntaxError(i, "stereochemistry is not supported ('/' and '\\')")
        elif ch == "@":
            raise SmilesSyntaxError(i, "stereochemistry is not supported ('@')")
        elif ch == "*":
            raise SmilesSyntaxError(i, "wildcard atoms are not supported")
        elif ch.isspace():
            raise SmilesSyntaxError(i, "whitespace is not allowed inside SMILES")
        else:
            raise SmilesSyntaxError(i, f"unknown character {ch!r}")

    if pending_bond is not None:
        raise SmilesSyntaxError(pending_bond_pos, "bond with no following atom")
    if expect_atom_after_dot:
        raise SmilesSyntaxError(n - 1, "dot separator with an empty component")
    if branch_stack:
        raise SmilesSyntaxError(branch_stack[0][1], "unclosed branch")
    if open_rings:
        raise UnclosedRingError(sorted(open_rings))
    if not atoms:
        raise SmilesSyntaxError(0, "no atoms in input")

    graph = MoleculeGraph(atoms, bonds)
    _validate_aromaticity(graph)
    _assign_hydrogens(graph, explicit_h)
    return graph


def _validate_aromaticity(g: MoleculeGraph) -> None:
    for bond in g.bonds:
        if bond.order == AROMATIC:
            for end in (bond.a, bond.b):
                if not g.atoms[end].aromatic:
                    raise AromaticityError(end, "aromatic bond on a non-aromatic atom")
    in_ring = g.atom_in_ring_flags()
    for idx, atom in enumerate(g.atoms):
        if atom.aromatic and not in_ring[idx]:
            raise AromaticityError(idx, "aromatic atom outside any ring")


def _explicit_valence(g: MoleculeGraph, idx: int) -> int:
    # Aromatic bonds count one unit; a bare aromatic atom reserves one more
    # for the ring system.
    total = 0
    for _, order in g.neighbors(idx):
        total += 1 if order == AROMATIC else order
    if g.atoms[idx].aromatic:
        total += 1
    return total


def _assign_hydrogens(g: MoleculeGraph, explicit_h: list[bool]) -> None:
    for idx, atom in enumerate(g.atoms):
        if explicit_h[idx]:
            continue  # bracket atom: trusted as written
        valence = _explicit_valence(g, idx)
        h = _implicit_hydrogens(atom.element, atom.aromatic, valence)
        if h is None:
            raise ValenceError(idx, atom.element, valence)
        atom.hcount = h


# ---------------------------------------------------------------- canonical


def _initial_invariants(g: MoleculeGraph) -> list[tuple]:
    return [
        (
            a.element,
            a.aromatic,
            a.charge,
            a.hcount,
            g.degree(i),
            tuple(sorted(order for _, order in g.neighbors(i))),
        )
        for i, a in enumerate(g.atoms)
    ]


def _refine_ranks(g: MoleculeGraph, ranks: list[int]) -> list[int]:
    n = len(ranks)
    while True:
        keys = [
            (ranks[i], tuple(sorted((order, ranks[j]) for j, order in g.neighbors(i))))
            for i in range(n)
        ]
        order = {k: r for r, k in enumerate(sorted(set(keys)))}
        new_ranks = [order[k] for k in keys]
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _canonical_ranks(g: MoleculeGraph) -> list[int]:
    inv = _initial_invariants(g)
    order = {k: r for r, k in enumerate(sorted(set(inv)))}
    ranks = _refine_ranks(g, [order[k] for k in inv])
    n = len(ranks)
    while len(set(ranks)) < n:
        # Deterministic tie break: split the lowest tied class at its
        # first member.  Symmetric (automorphic) members give the same
        # string either way; refinement separates the rest.
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = min(r for r, c in counts.items() if c > 1)
        chosen = min(i for i in range(n) if ranks[i] == tied)
        ranks = [r * 2 for r in ranks]
        ranks[chosen] -= 1
        order = {k: r for r, k in enumerate(sorted(set(ranks)))}
        ranks = _refine_ranks(g, [order[r] for r in ranks])
    return ranks


def _atom_token(g: MoleculeGraph, idx: int) -> str:
    atom = g.atoms[idx]
    symbol = atom.element.lower() if atom.aromatic else atom.element
    plain_ok = (
        atom.charge == 0
        and atom.element in _ORGANIC
        and (not atom.aromatic or atom.element.lower() in _AROMATIC_ORGANIC)
    )
    if plain_ok:
        recomputed = _implicit_hydrogens(atom.element, atom.aromatic, _explicit_valence(g, idx))
        if recomputed == atom.hcount:
            return symbol
    h = atom.hcount or 0
    h_part = "" if h == 0 else ("H" if h == 1 else f"H{h}")
    if atom.charge == 0:
        charge_part = ""
    elif atom.charge == 1:
        charge_part = "+"
    elif atom.charge == -1:
        charge_part = "-"
    else:
        charge_part = f"{'+' if atom.charge > 0 else '-'}{abs(atom.charge)}"
    return f"[{symbol}{h_part}{charge_part}]"


def _bond_token(g: MoleculeGraph, a: int, b: int, order: int) -> str:
    both_aromatic = g.atoms[a].aromatic and g.atoms[b].aromatic
    default = AROMATIC if both_aromatic else SINGLE
    return "" if order == default else _BOND_SYMBOL[order]


def _components(g: MoleculeGraph) -> list[list[int]]:
    seen = [False] * len(g.atoms)
    out: list[list[int]] = []
    for start in range(len(g.atoms)):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt, _ in g.neighbors(node):
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(nxt)
        out.append(comp)
    return out


def _emit_component(g: MoleculeGraph, ranks: list[int], members: list[int]) -> str:
    root = min(members, key=lambda i: (ranks[i], i))

    # Spanning DFS in rank order; non-tree edges become ring closures.
    order_key = lambda pair: (ranks[pair[0]], pair[0])
    visited: set[int] = set()
    tree_children: dict[int, list[int]] = {i: [] for i in members}
    closure_edges: list[tuple[int, int, int]] = []
    closure_keys: set[tuple[int, int]] = set()
    stack = [(root, -1)]
    while stack:
        node, parent = stack.pop()
        if node in visited:
            continue
        visited.add(node)
        nbrs = sorted(g.neighbors(node), key=order_key)
        for nxt, bond_order in reversed(nbrs):
            if nxt == parent:
                continue
            if nxt in visited:
                key = (min(node, nxt), max(node, nxt))
                if key not in closure_keys:
                    closure_keys.add(key)
                    closure_edges.append((node, nxt, bond_order))
            else:
                stack.append((nxt, node))
    # Re-walk to register children in visit order (stack pops reorder them).
    visited = {root}
    walk = [root]
    frontier = [(root, -1)]
    while frontier:
        node, parent = frontier.pop()
        nbrs = sorted(g.neighbors(node), key=order_key)
        for nxt, _ in reversed(nbrs):
            if nxt == parent or nxt in visited:
                continue
            if (min(node, nxt), max(node, nxt)) in closure_keys:
                continue
            visited.add(nxt)
            tree_children[node].append(nxt)
            frontier.append((nxt, node))
            walk.append(nxt)

    # Ring closure digits: smallest free label, released when closed.
    closure_at: dict[int, list[tuple[int, int]]] = {}
    for a, b, bond_order in closure_edges:
        closure_at.setdefault(a, []).append((b, bond_order))
        closure_at.setdefault(b, []).append((a, bond_order))
    digit_for: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_label = 1

    def closure_digit(a: int, b: int) -> tuple[int, bool]:
        nonlocal next_label
        key = (min(a, b), max(a, b))
        if key in digit_for:
            label = digit_for.pop(key)
            free.append(label)
            return label, False
        label = min(free) if free else next_label
        if free and label in free:
            free.remove(label)
        else:
            next_label += 1
        digit_for[key] = label
        return label, True

    bond_order_of: dict[tuple[int, int], int] = {
        (min(b.a, b.b), max(b.a, b.b)): b.order for b in g.bonds
    }

    out: list[str] = []

    def emit(node: int, parent: int):
        if parent != -1:
            key = (min(node, parent), max(node, parent))
            out.append(_bond_token(g, parent, node, bond_order_of[key]))
        out.append(_atom_token(g, node))
        for other, bond_order in sorted(
            closure_at.get(node, []), key=lambda t: (ranks[t[0]], t[0])
        ):
            label, first_end = closure_digit(node, other)
            if first_end:
                out.append(_bond_token(g, node, other, bond_order))
            out.append(str(label) if label <= 9 else f"%{label:02d}")
        children = tree_children[node]
        for child in children[:-1]:
            out.append("(")
            emit(child, node)
            out.append(")")
        for child in children[-1:]:
            emit(child, node)

    emit(root, -1)
    return "".join(out)


def canonical_smiles(g: MoleculeGraph) -> str:
    """Canonical SMILES of a parsed graph.

    Atom order invariance comes from iterative neighborhood-rank refinement
    with a deterministic tie break; disconnected components are emitted
    sorted, joined by dots.  The output re-parses to an isomorphic graph.
    """
    if not g.atoms:
        raise SmilesError("cannot serialize an empty molecule graph")
    ranks = _canonical_ranks(g)
    parts = [_emit_component(g, ranks, comp) for comp in _components(g)]
    return ".".join(sorted(parts))


def randomized_smiles(g: MoleculeGraph, seed: int) -> str:
    """A valid SMILES for ``g`` with a randomized atom order.

    Exists for canonicalization tests and data augmentation: the emitted
    string round-trips to the same canonical form as ``g``.
    """
    import random

    rng = random.Random(seed)
    fake_ranks = list(range(len(g.atoms)))
    rng.shuffle(fake_ranks)
    parts = [_emit_component(g, fake_ranks, comp) for comp in _components(g)]
    rng.shuffle(parts)
    return ".".join(parts)


# -------------------------------------------------------------- fingerprints


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """Seedless 64-bit FNV-1a; the stable hash behind every fingerprint bit."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class BitFingerprint:
    """Sparse fixed-width bit vector: the indices of the set bits."""

    nbits: int
    bits: frozenset[int]

    def __post_init__(self):
        if self.nbits <= 0:
            raise ValueError(f"nbits must be positive, got {self.nbits}")
        if self.bits and (min(self.bits) < 0 or max(self.bits) >= self.nbits):
            raise ValueError("bit index outside [0, nbits)")

    @property
    def count(self) -> int:
        return len(self.bits)


def _atom_invariant_id(g: MoleculeGraph, idx: int, in_ring: list[bool]) -> int:
    a = g.atoms[idx]
    payload = (
        f"a|{a.element}|{g.degree(idx)}|{a.hcount}|{a.charge}"
        f"|{int(in_ring[idx])}|{int(a.aromatic)}"
    )
    return fnv1a64(payload.encode())


def morgan_fingerprint(g: MoleculeGraph, radius: int = 2, nbits: int = 2048) -> BitFingerprint:
    """Circular environments up to ``radius`` bonds, hashed into ``nbits``.

    Round zero hashes (element, degree, total H, charge, ring flag,
    aromatic flag); each later round hashes the atom's previous identifier
    with the sorted (bond order, neighbor identifier) list.  Every
    identifier from every round sets one bit.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    in_ring = g.atom_in_ring_flags()
    ids = [_atom_invariant_id(g, i, in_ring) for i in range(len(g.atoms))]
    bits = {v % nbits for v in ids}
    for _ in range(radius):
        ids_next = []
        for i in range(len(g.atoms)):
            env = sorted((order, ids[j]) for j, order in g.neighbors(i))
            payload = f"m|{ids[i]}|" + ",".join(f"{o}:{v}" for o, v in env)
            ids_next.append(fnv1a64(payload.encode()))
        ids = ids_next
        bits.update(v % nbits for v in ids)
    return BitFingerprint(nbits, frozenset(bits))


def path_fingerprint(g: MoleculeGraph, max_len: int = 7, nbits: int = 2048) -> BitFingerprint:
    """Linear simple paths of 1..``max_len`` bonds, hashed into ``nbits``.

    A path string interleaves atom symbols (lowercase when aromatic) with
    bond characters; forward and reverse spellings hash identically via a
    lexicographic min, so each undirected path sets one bit.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    symbols = [a.element.lower() if a.aromatic else a.element for a in g.atoms]
    bits: set[int] = set()

    def extend(path_atoms: list[int], path_str: str):
        depth = len(path_atoms) - 1
        if depth >= 1:
            canon = min(path_str, _reverse_path(path_atoms, g))
            bits.add(fnv1a64(canon.encode()) % nbits)
        if depth == max_len:
            return
        last = path_atoms[-1]
        for nxt, order in g.neighbors(last):
            if nxt in path_atoms:
                continue
            extend(path_atoms + [nxt], path_str + _BOND_SYMBOL[order] + symbols[nxt])

    def _reverse_path(path_atoms: list[int], graph: MoleculeGraph) -> str:
        rev = path_atoms[::-1]
        pieces = [symbols[rev[0]]]
        for a, b in zip(rev, rev[1:]):
            key = (min(a, b), max(a, b))
            pieces.append(_BOND_SYMBOL[_order_lookup(graph)[key]] + symbols[b])
        return "".join(pieces)

    for start in range(len(g.atoms)):
        extend([start], symbols[start])
    return BitFingerprint(nbits, frozenset(bits))


def _order_lookup(g: MoleculeGraph) -> dict[tuple[int, int], int]:
    cache = getattr(g, "_order_lut", None)
    if cache is None or len(cache) != len(g.bonds):
        cache = {(min(b.a, b.b), max(b.a, b.b)): b.order for b in g.bonds}
        object.__setattr__(g, "_order_lut", cache)
    return cache
