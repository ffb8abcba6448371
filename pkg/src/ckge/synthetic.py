"""Synthetic graphs standing in for the benchmark datasets.

``typed_graph`` builds a small, learnable graph in the spirit of a
household-scene knowledge base: typed entities fall into groups and every
relation links one type to another within a group.
``random_graph`` builds a large sparse graph with the size profile of a
lexical benchmark, with every entity used at least once in training.
"""
from __future__ import annotations

import numpy as np

from .kg import GraphSplits, Vocab, unique_triples
from .utils import make_rng


def _names(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _split(triples: np.ndarray, valid_frac: float, test_frac: float, rng) -> tuple:
    order = rng.permutation(len(triples))
    n_va = int(round(valid_frac * len(triples)))
    n_te = int(round(test_frac * len(triples)))
    va, te, tr = order[:n_va], order[n_va:n_va + n_te], order[n_va + n_te:]
    return triples[np.sort(tr)], triples[np.sort(va)], triples[np.sort(te)]


def typed_graph(type_sizes=(60, 40, 30, 30, 20, 20), num_groups: int = 4, num_relations: int = 11,
                keep: float = 0.4, valid_frac: float = 0.1, test_frac: float = 0.1,
                seed: int = 0) -> GraphSplits:
    """Typed entities split into groups; relation ``r`` links type ``a_r`` to type ``b_r``.

    Think of types as objects, locations, actions, states and so on, and of
    groups as rooms or activities.  Every (h, r, t) with ``h`` of type
    ``a_r``, ``t`` of type ``b_r`` and both in the same group is a candidate
    fact, kept with probability ``keep``.
    """
    rng = make_rng(seed, "typed")
    types = np.repeat(np.arange(len(type_sizes)), type_sizes)
    groups = rng.integers(0, num_groups, len(types))
    pairs = [(a, b) for a in range(len(type_sizes)) for b in range(len(type_sizes)) if a != b]
    if num_relations > len(pairs):
        raise ValueError("more relations than ordered type pairs")
    chosen = rng.choice(len(pairs), num_relations, replace=False)
    rows = []
    for r, k in enumerate(chosen):
        a, b = pairs[k]
        for grp in range(num_groups):
            heads = np.flatnonzero((types == a) & (groups == grp))
            tails = np.flatnonzero((types == b) & (groups == grp))
            hh, tt = np.meshgrid(heads, tails, indexing="ij")
            mask = rng.random(hh.shape) < keep
            rows.append(np.stack([hh[mask], np.full(mask.sum(), r), tt[mask]], axis=1))
    triples = np.concatenate(rows).astype(np.int32)
    triples = triples[rng.permutation(len(triples))]
    tr, va, te = _split(triples, valid_frac, test_frac, rng)
    return GraphSplits(tr, va, te, Vocab(_names("ent", len(types)), _names("rel", num_relations)))


def random_graph(num_entities: int = 40943, num_relations: int = 11, num_train: int = 86835,
                 num_valid: int = 3034, num_test: int = 3134, seed: int = 0) -> GraphSplits:
    """Uniform sparse graph; a random pairing first gives every entity one training triple."""
    rng = make_rng(seed, "random-graph")
    perm = rng.permutation(num_entities)
    half = num_entities // 2
    cover = np.stack([perm[:half], rng.integers(0, num_relations, half), perm[half:2 * half]], axis=1)
    if num_entities % 2:
        cover = np.vstack([cover, [perm[-1], 0, perm[0]]])
    total = num_train + num_valid + num_test
    extra = rng.integers(0, [num_entities, num_relations, num_entities], size=(2 * total, 3))
    extra = extra[extra[:, 0] != extra[:, 2]]
    pool, _ = unique_triples(np.vstack([cover, extra]).astype(np.int32))
    if len(pool) < total or len(cover) > num_train:
        raise ValueError("graph too dense for the requested sizes")
    rest = pool[len(cover):]
    rest = rest[rng.permutation(len(rest))]
    n_extra = num_train - len(cover)
    train = np.vstack([cover, rest[:n_extra]]).astype(np.int32)
    valid = rest[n_extra:n_extra + num_valid]
    test = rest[n_extra + num_valid:n_extra + num_valid + num_test]
    return GraphSplits(train, valid, test, Vocab(_names("e", num_entities), _names("r", num_relations)))
