"""Knowledge-graph vocabularies, triple arrays and TSV dataset I/O.

Triples are held as ``(n, 3)`` int32 arrays with columns head, relation,
tail.  A dataset directory contains::

    entity2id.tsv    name<TAB>id   (id must equal the 0-based line number)
    relation2id.tsv  name<TAB>id
    train.tsv        head<TAB>relation<TAB>tail   (names, not ids)
    valid.tsv
    test.tsv
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .utils import DataError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")


def as_triples(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.int32)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int32)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Vocab:
    entity_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    entity_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entity_names", tuple(self.entity_names))
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        for kind, names in (("entity", self.entity_names), ("relation", self.relation_names)):
            index = {}
            for i, name in enumerate(names):
                if name in index:
                    raise DataError(f"duplicate {kind} name {name!r}")
                index[name] = i
            object.__setattr__(self, f"{kind}_ids", index)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def encode(self, head: str, relation: str, tail: str) -> tuple[int, int, int]:
        return self.entity_ids[head], self.relation_ids[relation], self.entity_ids[tail]

    def decode(self, triple) -> tuple[str, str, str]:
        h, r, t = (int(x) for x in triple)
        return self.entity_names[h], self.relation_names[r], self.entity_names[t]


@dataclass(frozen=True)
class GraphSplits:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    vocab: Vocab

    def __post_init__(self):
        for name in SPLIT_NAMES:
            arr = as_triples(getattr(self, name))
            check_ids(arr, self.vocab.num_entities, self.vocab.num_relations, name)
            object.__setattr__(self, name, arr)


def check_ids(triples: np.ndarray, num_entities: int, num_relations: int, what: str = "triples"):
    if len(triples) == 0:
        return
    ents = triples[:, [0, 2]]
    if ents.min() < 0 or ents.max() >= num_entities:
        raise DataError(f"{what}: entity id out of range [0, {num_entities})")
    rels = triples[:, 1]
    if rels.min() < 0 or rels.max() >= num_relations:
        raise DataError(f"{what}: relation id out of range [0, {num_relations})")


def triple_keys(triples: np.ndarray, num_entities: int, num_relations: int) -> np.ndarray:
    """Encode triples as unique int64 keys, for fast set membership."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (t[:, 0] * num_relations + t[:, 1]) * num_entities + t[:, 2]


def unique_triples(triples: np.ndarray) -> tuple[np.ndarray, int]:
    """Drop repeated rows keeping first occurrences in order; returns (rows, n_dropped)."""
    triples = as_triples(triples)
    if len(triples) == 0:
        return triples, 0
    _, first = np.unique(triples, axis=0, return_index=True)
    first.sort()
    return triples[first], len(triples) - len(first)


def entities_of(triples) -> frozenset[int]:
    triples = as_triples(triples)
    return frozenset(np.unique(triples[:, [0, 2]]).tolist())


def relations_of(triples) -> frozenset[int]:
    triples = as_triples(triples)
    return frozenset(np.unique(triples[:, 1]).tolist())


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    text = path.read_text(encoding="utf-8")
    return text.split("\n")[:-1] if text.endswith("\n") else text.split("\n") if text else []


def read_vocab_file(path: Path) -> list[str]:
    names, seen = [], set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(cols)}")
        name, ident = cols
        try:
            ident = int(ident)
        except ValueError:
            raise DataError(f"{path}:{lineno}: id {cols[1]!r} is not an integer") from None
        if ident != lineno - 1:
            raise DataError(f"{path}:{lineno}: id {ident} does not match line order")
        if name in seen:
            raise DataError(f"{path}:{lineno}: duplicate entry {name!r}")
        seen.add(name)
        names.append(name)
    return names


def read_triples_file(path: Path, vocab: Vocab) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        try:
            rows.append(vocab.encode(*cols))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: unknown name {exc.args[0]!r}") from None
    return as_triples(rows)


def load_graph(dir_path) -> GraphSplits:
    """Load a dataset directory; ids follow vocabulary file line order."""
    root = Path(dir_path)
    vocab = Vocab(read_vocab_file(root / "entity2id.tsv"), read_vocab_file(root / "relation2id.tsv"))
    splits = {}
    for name in SPLIT_NAMES:
        triples, dropped = unique_triples(read_triples_file(root / f"{name}.tsv", vocab))
        if dropped:
            logger.warning("%s: dropped %d duplicate triples", name, dropped)
        splits[name] = triples
    if len(splits["train"]) == 0:
        raise DataError(f"{root / 'train.tsv'}: empty split")

    # keep the splits pairwise disjoint; earlier splits win
    seen = triple_keys(splits["train"], vocab.num_entities, vocab.num_relations)
    for name in ("valid", "test"):
        keys = triple_keys(splits[name], vocab.num_entities, vocab.num_relations)
        overlap = np.isin(keys, seen)
        if overlap.any():
            logger.warning("%s: dropped %d triples also present in an earlier split", name, int(overlap.sum()))
            splits[name] = splits[name][~overlap]
        seen = np.concatenate([seen, keys[~overlap]])

    logger.info(
        "loaded %s: %d entities, %d relations, %d/%d/%d triples",
        root, vocab.num_entities, vocab.num_relations,
        len(splits["train"]), len(splits["valid"]), len(splits["test"]),
    )
    return GraphSplits(vocab=vocab, **splits)


def write_vocab(vocab: Vocab, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for fname, names in (("entity2id.tsv", vocab.entity_names), ("relation2id.tsv", vocab.relation_names)):
        (root / fname).write_text("".join(f"{n}\t{i}\n" for i, n in enumerate(names)), encoding="utf-8")


def write_triples(path, triples: np.ndarray, vocab: Vocab) -> None:
    en, rn = vocab.entity_names, vocab.relation_names
    lines = [f"{en[h]}\t{rn[r]}\t{en[t]}\n" for h, r, t in as_triples(triples).tolist()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_splits(splits: GraphSplits, dir_path) -> None:
    root = Path(dir_path)
    write_vocab(splits.vocab, root)
    for name in SPLIT_NAMES:
        write_triples(root / f"{name}.tsv", getattr(splits, name), splits.vocab)
