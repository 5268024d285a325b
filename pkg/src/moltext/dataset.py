"""Paired molecule-description corpora: TSV IO, splits, synthetic data.

The on-disk shape is a tab-separated file with an optional
``CID\tSMILES\tdescription`` header row.  Malformed rows (wrong field
count, blank fields, SMILES that do not parse) are quarantined to a
sidecar file next to the input instead of aborting the load; duplicate
ids are a hard error because downstream joins key on them.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from moltext import smiles as sm

__all__ = [
    "MoleculeRecord",
    "Corpus",
    "DatasetError",
    "load_corpus",
    "save_corpus",
    "split_corpus",
    "write_splits",
    "load_splits",
    "check_disjoint",
    "make_synthetic_corpus",
    "SPLIT_NAMES",
]

log = logging.getLogger(__name__)

_HEADER = ("CID", "SMILES", "description")
SPLIT_NAMES = ("train", "validation", "test")


class DatasetError(ValueError):
    """Corpus-level integrity failure (duplicate ids, overlapping splits)."""


@dataclass(frozen=True)
class MoleculeRecord:
    pair_id: str
    smiles: str
    description: str


@dataclass(frozen=True)
class Corpus:
    records: tuple[MoleculeRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MoleculeRecord]:
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.pair_id for r in self.records]

    def by_id(self, pair_id: str) -> MoleculeRecord:
        for r in self.records:
            if r.pair_id == pair_id:
                return r
        raise KeyError(pair_id)


def load_corpus(path: str | Path) -> Corpus:
    """Read a TSV corpus, quarantining malformed rows to a sidecar file.

    The sidecar is ``<path>.quarantine.txt`` and is only written when at
    least one row was rejected.  Duplicate pair ids raise
    :class:`DatasetError` outright.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records: list[MoleculeRecord] = []
    quarantined: list[tuple[int, str, str]] = []
    seen: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if line_no == 1 and tuple(fields) == _HEADER:
            continue
        if len(fields) != 3:
            quarantined.append(
                (line_no, line, f"expected 3 tab-separated fields, got {len(fields)}")
            )
            continue
        pair_id, smiles_str, description = (f.strip() for f in fields)
        missing = [
            name
            for name, value in zip(_HEADER, (pair_id, smiles_str, description))
            if not value
        ]
        if missing:
            quarantined.append((line_no, line, f"empty field: {missing[0]}"))
            continue
        try:
            sm.parse_smiles(smiles_str)
        except sm.SmilesError as err:
            quarantined.append((line_no, line, f"invalid SMILES: {err}"))
            continue
        if pair_id in seen:
            raise DatasetError(
                f"duplicate pair id {pair_id!r} at lines {seen[pair_id]} and {line_no}"
            )
        seen[pair_id] = line_no
        records.append(MoleculeRecord(pair_id, smiles_str, description))

    if quarantined:
        sidecar = path.with_name(path.name + ".quarantine.txt")
        with sidecar.open("w", encoding="utf-8") as fh:
            for line_no, line, reason in quarantined:
                fh.write(f"line {line_no}\t{reason}\t{line}\n")
        log.warning(
            "quarantined %d row(s) from %s to %s", len(quarantined), path, sidecar
        )
    return Corpus(records=tuple(records))


def save_corpus(path: str | Path, corpus: Corpus, header: bool = True) -> None:
    path = Path(path)
    lines: list[str] = []
    if header:
        lines.append("\t".join(_HEADER))
    for r in corpus:
        for name, value in zip(_HEADER, (r.pair_id, r.smiles, r.description)):
            if "\t" in value or "\n" in value:
                raise ValueError(
                    f"record {r.pair_id!r}: {name} field contains a tab or newline"
                )
        lines.append(f"{r.pair_id}\t{r.smiles}\t{r.description}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_corpus(
    corpus: Corpus,
    seed: int,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
) -> dict[str, Corpus]:
    """Shuffle and cut into train/validation/test by floored fractions.

    The first two cuts take floor(fraction * n) records each and the test
    split absorbs the remainder, so 32 records at 80/10/10 give 25/3/4.
    """
    if len(fractions) != 3:
        raise ValueError(f"need 3 fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    order = list(corpus.records)
    random.Random(seed).shuffle(order)
    n = len(order)
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    cuts = {
        "train": order[:n_train],
        "validation": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    return {name: Corpus(records=tuple(rows)) for name, rows in cuts.items()}


def check_disjoint(splits: Mapping[str, Corpus]) -> None:
    owner: dict[str, str] = {}
    for name, corpus in splits.items():
        for pair_id in corpus.ids():
            if pair_id in owner:
                raise DatasetError(
                    f"pair id {pair_id!r} appears in both "
                    f"{owner[pair_id]!r} and {name!r} splits"
                )
            owner[pair_id] = name


def write_splits(directory: str | Path, splits: Mapping[str, Corpus]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    check_disjoint(splits)
    for name in SPLIT_NAMES:
        if name not in splits:
            raise DatasetError(f"missing split {name!r}")
        save_corpus(directory / f"{name}.txt", splits[name])


def load_splits(directory: str | Path) -> dict[str, Corpus]:
    directory = Path(directory)
    splits = {}
    for name in SPLIT_NAMES:
        file = directory / f"{name}.txt"
        if not file.exists():
            raise DatasetError(f"missing split file: {file}")
        splits[name] = load_corpus(file)
    check_disjoint(splits)
    return splits


# ------------------------------------------------- synthetic corpus


_SYN_VALENCE = {"C": 4, "N": 3, "O": 2}

_OPENINGS = (
    "The molecule is",
    "This compound is",
    "The structure shown is",
)

_ELEMENT_NAMES = {"C": "carbon", "N": "nitrogen", "O": "oxygen"}


def _count_phrase(count: int, element: str) -> str:
    name = _ELEMENT_NAMES[element]
    return f"{count} {name} atom" + ("s" if count != 1 else "")


def _formula(g: sm.MoleculeGraph) -> str:
    counts: dict[str, int] = {}
    h = 0
    for atom in g.atoms:
        counts[atom.element] = counts.get(atom.element, 0) + 1
        h += atom.hcount or 0
    parts = []
    for elem in ("C", "H", "N", "O"):
        c = h if elem == "H" else counts.get(elem, 0)
        if c > 0:
            parts.append(elem + (str(c) if c > 1 else ""))
    return "".join(parts)


def _random_molecule(rng: random.Random) -> sm.MoleculeGraph:
    """Grow a valence-respecting tree over C/N/O, maybe close one ring."""
    while True:
        g = _try_random_molecule(rng)
        if g is not None:
            return g


def _try_random_molecule(rng: random.Random) -> sm.MoleculeGraph | None:
    n_atoms = rng.randint(3, 9)
    elements = [rng.choice("CCCNO") for _ in range(n_atoms)]
    free = [_SYN_VALENCE[e] for e in elements]
    bonds: list[sm.Bond] = []
    for i in range(1, n_atoms):
        hosts = [j for j in range(i) if free[j] >= 1]
        if not hosts:
            # double bonds between low-valence atoms can spend every
            # open slot before the tree is finished; redraw
            return None
        host = rng.choice(hosts)
        order = sm.SINGLE
        if free[host] >= 2 and free[i] >= 2 and rng.random() < 0.2:
            order = sm.DOUBLE
        bonds.append(sm.Bond(a=min(host, i), b=max(host, i), order=order))
        free[host] -= order
        free[i] -= order
    if n_atoms >= 4 and rng.random() < 0.4:
        adjacent = {(b.a, b.b) for b in bonds}
        open_atoms = [j for j in range(n_atoms) if free[j] >= 1]
        rng.shuffle(open_atoms)
        for x in open_atoms:
            for y in open_atoms:
                lo, hi = min(x, y), max(x, y)
                if lo != hi and (lo, hi) not in adjacent:
                    bonds.append(sm.Bond(a=lo, b=hi, order=sm.SINGLE))
                    free[lo] -= 1
                    free[hi] -= 1
                    open_atoms = []
                    break
            if not open_atoms:
                break
    atoms = tuple(
        sm.Atom(element=e, aromatic=False, charge=0, hcount=f)
        for e, f in zip(elements, free)
    )
    return sm.MoleculeGraph(atoms=atoms, bonds=tuple(bonds))


def _describe(g: sm.MoleculeGraph, rng: random.Random) -> str:
    counts: dict[str, int] = {}
    for atom in g.atoms:
        counts[atom.element] = counts.get(atom.element, 0) + 1
    phrases = [
        _count_phrase(counts[e], e) for e in ("C", "N", "O") if counts.get(e)
    ]
    if len(phrases) > 1:
        listing = ", ".join(phrases[:-1]) + " and " + phrases[-1]
    else:
        listing = phrases[0]
    sentences = [
        f"{rng.choice(_OPENINGS)} a small organic compound with {listing}.",
        f"It has the molecular formula {_formula(g)}.",
    ]
    if any(g.ring_bond_flags()):
        sentences.append("The skeleton contains a ring.")
    doubles = sum(1 for b in g.bonds if b.order == sm.DOUBLE)
    if doubles == 1:
        sentences.append("One double bond is present.")
    elif doubles > 1:
        sentences.append(f"{doubles} double bonds are present.")
    if any(a.element == "O" and (a.hcount or 0) >= 1 for a in g.atoms):
        sentences.append("A hydroxyl group is attached.")
    if any(a.element == "N" and (a.hcount or 0) >= 2 for a in g.atoms):
        sentences.append("A primary amine is attached.")
    return " ".join(sentences)


def make_synthetic_corpus(n: int, seed: int) -> Corpus:
    """Deterministic corpus of n valid molecule-description pairs."""
    if n < 1:
        raise ValueError(f"need at least one record, got {n}")
    rng = random.Random(seed)
    records = []
    seen: set[str] = set()
    for k in range(n):
        g = _random_molecule(rng)
        smiles_str = sm.canonical_smiles(g)
        # rare duplicate structures are fine; ids must still be unique
        if smiles_str in seen:
            g = _random_molecule(rng)
            smiles_str = sm.canonical_smiles(g)
        seen.add(smiles_str)
        records.append(
            MoleculeRecord(
                pair_id=f"SYN{k:05d}",
                smiles=smiles_str,
                description=_describe(g, rng),
            )
        )
    return Corpus(records=tuple(records))
