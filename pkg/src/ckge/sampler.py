"""Partition a graph's training triples into learning sessions.

Each session receives an equal, disjoint, uniformly drawn slice of the
training triples.  Validation and test triples are assigned to a session
when all their ids have been observed in training so far.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import (
    GraphSplits, SPLIT_NAMES, Vocab, as_triples, entities_of, read_triples_file, read_vocab_file,
    relations_of, triple_keys, write_triples, write_vocab,
)
from .utils import DataError, make_rng

logger = logging.getLogger(__name__)

FILTER_MODES = ("cumulative", "session")


@dataclass(frozen=True)
class SessionDataset:
    index: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    new_entities: frozenset[int]
    new_relations: frozenset[int]
    seen_entities: frozenset[int]
    seen_relations: frozenset[int]

    @property
    def num_seen_entities(self) -> int:
        return len(self.seen_entities)

    @property
    def num_seen_relations(self) -> int:
        return len(self.seen_relations)


def build_sessions(trains, valid, test, num_entities, num_relations, filter_mode="cumulative"):
    """Derive per-session valid/test sets and id sets from the session train slices."""
    if filter_mode not in FILTER_MODES:
        raise ValueError(f"filter_mode must be one of {FILTER_MODES}")
    valid, test = as_triples(valid), as_triples(test)
    seen_e = np.zeros(num_entities, dtype=bool)
    seen_r = np.zeros(num_relations, dtype=bool)
    sessions = []
    seen_ents: frozenset[int] = frozenset()
    seen_rels: frozenset[int] = frozenset()
    for n, train in enumerate(trains):
        train = as_triples(train)
        ents, rels = entities_of(train), relations_of(train)
        seen_ents, seen_rels = seen_ents | ents, seen_rels | rels
        if filter_mode == "cumulative":
            seen_e[list(ents)] = True
            seen_r[list(rels)] = True
            ok_e, ok_r = seen_e, seen_r
        else:
            ok_e = np.zeros(num_entities, dtype=bool)
            ok_r = np.zeros(num_relations, dtype=bool)
            ok_e[list(ents)] = True
            ok_r[list(rels)] = True

        def keep(split):
            mask = ok_e[split[:, 0]] & ok_r[split[:, 1]] & ok_e[split[:, 2]]
            return split[mask]

        sessions.append(SessionDataset(
            index=n, train=train, valid=keep(valid), test=keep(test),
            new_entities=ents, new_relations=rels,
            seen_entities=seen_ents, seen_relations=seen_rels,
        ))
    return sessions


def sample_sessions(splits: GraphSplits, num_sessions: int, seed: int,
                    filter_mode: str = "cumulative") -> list[SessionDataset]:
    """Split ``splits.train`` uniformly without replacement into ``num_sessions`` slices.

    Every slice holds ``len(train) // num_sessions`` triples; the remainder
    goes to the last session.  Within a slice triples keep source file order.
    """
    total = len(splits.train)
    if num_sessions < 1:
        raise ValueError("num_sessions must be >= 1")
    if num_sessions > total:
        raise DataError(f"cannot split {total} training triples into {num_sessions} sessions")
    size = total // num_sessions
    perm = make_rng(seed, "sampler").permutation(total)
    trains = []
    for n in range(num_sessions):
        stop = total if n == num_sessions - 1 else (n + 1) * size
        idx = np.sort(perm[n * size:stop])
        trains.append(splits.train[idx])
    return build_sessions(trains, splits.valid, splits.test,
                          splits.vocab.num_entities, splits.vocab.num_relations, filter_mode)


@dataclass
class StatsTable:
    """Per-session counts and coverage fractions (cumulative observed / total)."""

    rows: list[dict]

    LABELS = (
        ("new_entities", "entity_coverage", "|E^n|"),
        ("new_relations", "relation_coverage", "|R^n|"),
        ("train", "train_coverage", "|D^n_Tr|"),
        ("valid", "valid_coverage", "|D^n_Va|"),
        ("test", "test_coverage", "|D^n_Te|"),
    )

    def to_tsv(self) -> str:
        header = ["stat"] + [f"LS-{r['session'] + 1}" for r in self.rows]
        lines = ["\t".join(header)]
        for count_key, cov_key, label in self.LABELS:
            cells = [f"{r[count_key]}/({100 * r[cov_key]:.0f}%)" for r in self.rows]
            lines.append("\t".join([label] + cells))
        return "\n".join(lines) + "\n"


def session_stats(sessions: list[SessionDataset], splits: GraphSplits) -> StatsTable:
    if not sessions:
        raise ValueError("no sessions")
    vocab = splits.vocab
    totals = {name: max(len(getattr(splits, name)), 1) for name in SPLIT_NAMES}
    rows = []
    seen_train = 0
    seen = {"valid": np.zeros(0, dtype=np.int64), "test": np.zeros(0, dtype=np.int64)}
    for s in sessions:
        seen_train += len(s.train)
        for name in ("valid", "test"):
            keys = triple_keys(getattr(s, name), vocab.num_entities, vocab.num_relations)
            seen[name] = np.union1d(seen[name], keys)
        rows.append({
            "session": s.index,
            "new_entities": len(s.new_entities),
            "entity_coverage": len(s.seen_entities) / vocab.num_entities,
            "new_relations": len(s.new_relations),
            "relation_coverage": len(s.seen_relations) / vocab.num_relations,
            "train": len(s.train),
            "train_coverage": seen_train / totals["train"],
            "valid": len(s.valid),
            "valid_coverage": len(seen["valid"]) / totals["valid"],
            "test": len(s.test),
            "test_coverage": len(seen["test"]) / totals["test"],
        })
    return StatsTable(rows)


def write_sessions(sessions: list[SessionDataset], splits: GraphSplits, out_dir, *,
                   seed: int | None = None, filter_mode: str = "cumulative") -> StatsTable:
    """Write ``sessions/<n>/{train,valid,test}.tsv``, the vocabulary and ``stats.tsv``."""
    root = Path(out_dir)
    write_vocab(splits.vocab, root)
    for s in sessions:
        sdir = root / "sessions" / str(s.index)
        sdir.mkdir(parents=True, exist_ok=True)
        for name in SPLIT_NAMES:
            write_triples(sdir / f"{name}.tsv", getattr(s, name), splits.vocab)
    stats = session_stats(sessions, splits)
    (root / "stats.tsv").write_text(stats.to_tsv(), encoding="utf-8")
    meta = [f"sessions={len(sessions)}", f"filter_mode={filter_mode}"]
    if seed is not None:
        meta.append(f"seed={seed}")
    (root / "sampling.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    return stats


def load_sessions(root) -> tuple[Vocab, list[SessionDataset]]:
    """Read a directory produced by :func:`write_sessions`."""
    root = Path(root)
    sessions_dir = root / "sessions"
    if not sessions_dir.is_dir():
        raise DataError(f"no sampled sessions under {root}")
    vocab = Vocab(read_vocab_file(root / "entity2id.tsv"), read_vocab_file(root / "relation2id.tsv"))
    meta = {}
    if (root / "sampling.txt").is_file():
        for line in (root / "sampling.txt").read_text().splitlines():
            key, _, value = line.partition("=")
            meta[key] = value
    filter_mode = meta.get("filter_mode", "cumulative")

    indices = sorted(int(p.name) for p in sessions_dir.iterdir() if p.name.isdigit())
    if indices != list(range(len(indices))) or not indices:
        raise DataError(f"session directories under {sessions_dir} are not 0..N-1")
    trains, valid, test = [], [], []
    for n in indices:
        sdir = sessions_dir / str(n)
        trains.append(read_triples_file(sdir / "train.tsv", vocab))
        valid.append(read_triples_file(sdir / "valid.tsv", vocab))
        test.append(read_triples_file(sdir / "test.tsv", vocab))
    sessions = build_sessions(trains, np.zeros((0, 3)), np.zeros((0, 3)),
                              vocab.num_entities, vocab.num_relations, filter_mode)
    # valid/test were fixed at sampling time; restore them verbatim
    return vocab, [
        SessionDataset(s.index, s.train, as_triples(valid[i]), as_triples(test[i]), s.new_entities,
                       s.new_relations, s.seen_entities, s.seen_relations)
        for i, s in enumerate(sessions)
    ]


@dataclass(frozen=True)
class LocalIds:
    """Row numbering for embeddings: ids ordered by first observation.

    Entities seen by session ``n`` occupy rows ``[0, entity_counts[n])``, so
    growing a model between sessions only appends rows.
    """

    entity_order: np.ndarray
    relation_order: np.ndarray
    entity_counts: tuple[int, ...]
    relation_counts: tuple[int, ...]
    entity_lut: np.ndarray
    relation_lut: np.ndarray

    def to_local(self, triples: np.ndarray) -> np.ndarray:
        """Map global ids to rows; ids never observed in training map to -1."""
        triples = as_triples(triples)
        out = np.empty_like(triples)
        out[:, 0] = self.entity_lut[triples[:, 0]]
        out[:, 1] = self.relation_lut[triples[:, 1]]
        out[:, 2] = self.entity_lut[triples[:, 2]]
        return out


def local_ids(sessions: list[SessionDataset], num_entities: int, num_relations: int) -> LocalIds:
    ent_order, rel_order = [], []
    ent_counts, rel_counts = [], []
    prev_e: frozenset[int] = frozenset()
    prev_r: frozenset[int] = frozenset()
    for s in sessions:
        ent_order.extend(sorted(s.seen_entities - prev_e))
        rel_order.extend(sorted(s.seen_relations - prev_r))
        prev_e, prev_r = s.seen_entities, s.seen_relations
        ent_counts.append(len(ent_order))
        rel_counts.append(len(rel_order))
    ent_lut = np.full(num_entities, -1, dtype=np.int32)
    ent_lut[ent_order] = np.arange(len(ent_order), dtype=np.int32)
    rel_lut = np.full(num_relations, -1, dtype=np.int32)
    rel_lut[rel_order] = np.arange(len(rel_order), dtype=np.int32)
    return LocalIds(np.asarray(ent_order, dtype=np.int32), np.asarray(rel_order, dtype=np.int32),
                    tuple(ent_counts), tuple(rel_counts), ent_lut, rel_lut)
