"""Filtered link-prediction ranking and continual-learning summary measures."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kg import as_triples
from .models import ModelState, candidate_goodness

logger = logging.getLogger(__name__)

TIE_POLICIES = ("optimistic", "pessimistic", "mean")


class FilterIndex:
    """Known-true triples indexed for both corruption sides.

    ``tails(h, r)`` and ``heads(r, t)`` return the entity ids completing a
    known triple.
    """

    def __init__(self, triples, num_entities: int, num_relations: int):
        t = as_triples(triples).astype(np.int64)
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        E, R = self.num_entities, self.num_relations
        self._tail_keys = np.unique((t[:, 0] * R + t[:, 1]) * E + t[:, 2])
        self._head_keys = np.unique((t[:, 2] * R + t[:, 1]) * E + t[:, 0])

    @staticmethod
    def _lookup(keys, prefix, E):
        lo = np.searchsorted(keys, prefix * E)
        hi = np.searchsorted(keys, (prefix + 1) * E)
        return keys[lo:hi] - prefix * E

    def tails(self, h: int, r: int) -> np.ndarray:
        return self._lookup(self._tail_keys, h * self.num_relations + r, self.num_entities)

    def heads(self, r: int, t: int) -> np.ndarray:
        return self._lookup(self._head_keys, t * self.num_relations + r, self.num_entities)

    def contains(self, h: int, r: int, t: int) -> bool:
        return bool(np.isin(t, self.tails(h, r)))


def _rank(g_row: np.ndarray, true_idx: int, filtered: np.ndarray, tie: str) -> float:
    true_g = g_row[true_idx]
    g = g_row.copy()
    g[filtered] = -np.inf
    g[true_idx] = -np.inf
    better = np.count_nonzero(g > true_g)
    if tie == "optimistic":
        return 1.0 + better
    ties = np.count_nonzero(g == true_g)
    if tie == "pessimistic":
        return 1.0 + better + ties
    return 1.0 + better + ties / 2.0


def filtered_ranks(model: ModelState, triples, num_candidates: int, known: FilterIndex,
                   tie: str = "optimistic", chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Head and tail ranks of each triple among candidate entities ``[0, num_candidates)``.

    Corruptions that are known triples are dropped; rank is one plus the
    number of surviving corruptions with strictly higher goodness (ties are
    counted against the true triple only under the other tie policies).
    """
    if tie not in TIE_POLICIES:
        raise ValueError(f"tie policy must be one of {TIE_POLICIES}")
    if num_candidates < 2:
        raise ValueError("need at least two candidate entities")
    t = as_triples(triples)
    if len(t) and (t[:, [0, 2]].max() >= num_candidates or t.min() < 0):
        raise ValueError("triple entity outside the candidate set")
    head_ranks = np.empty(len(t))
    tail_ranks = np.empty(len(t))
    for start in range(0, len(t), chunk):
        part = t[start:start + chunk]
        gt = candidate_goodness(model, part, "tail")[:, :num_candidates]
        gh = candidate_goodness(model, part, "head")[:, :num_candidates]
        for k, (h, r, tt) in enumerate(part.tolist()):
            tails = known.tails(h, r)
            heads = known.heads(r, tt)
            tail_ranks[start + k] = _rank(gt[k], tt, tails[tails < num_candidates], tie)
            head_ranks[start + k] = _rank(gh[k], h, heads[heads < num_candidates], tie)
    return head_ranks, tail_ranks


def filtered_rank(model: ModelState, triple, num_candidates: int, known: FilterIndex,
                  tie: str = "optimistic") -> tuple[float, float]:
    h, t = filtered_ranks(model, [triple], num_candidates, known, tie)
    return float(h[0]), float(t[0])


def rank_metrics(ranks: np.ndarray) -> tuple[float, float]:
    """(MRR, Hits@10); a rank of ``inf`` counts as a miss."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks")
    return float(np.mean(1.0 / ranks)), float(np.mean(ranks <= 10))


def eval_split(model: ModelState, triples, num_candidates: int, known: FilterIndex,
               tie: str = "optimistic") -> tuple[float, float]:
    """MRR and Hits@10 over head and tail ranks of every triple.

    Triples using an entity or relation the model does not yet have rows for
    cannot be ranked and count as misses for both sides.
    """
    t = as_triples(triples)
    if len(t) == 0:
        raise ValueError("empty evaluation split")
    ok = ((t[:, [0, 2]] < num_candidates).all(axis=1) & (t[:, 1] < model.num_relations)
          & (t >= 0).all(axis=1))
    ranks = np.full(2 * len(t), np.inf)
    if ok.any():
        h, tl = filtered_ranks(model, t[ok], num_candidates, known, tie)
        idx = np.flatnonzero(ok)
        ranks[2 * idx] = h
        ranks[2 * idx + 1] = tl
    return rank_metrics(ranks)


# --- matrix summaries -----------------------------------------------------

def _square(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"performance matrix must be square, got {M.shape}")
    return M


def acc(M) -> float:
    M = _square(M)
    N = len(M)
    return float(M[np.tril_indices(N)].sum() / (N * (N + 1) / 2))


def fwt(M) -> float | None:
    M = _square(M)
    N = len(M)
    if N < 2:
        return None
    return float(M[np.triu_indices(N, 1)].sum() / (N * (N - 1) / 2))


def bwt(M) -> float | None:
    """Mean change on earlier sessions' test sets, ``M[i, j] - M[j, j]`` for ``j < i``."""
    M = _square(M)
    N = len(M)
    if N < 2:
        return None
    i, j = np.tril_indices(N, -1)
    return float((M[i, j] - M[j, j]).sum() / (N * (N - 1) / 2))


def plus_bwt(M) -> float | None:
    b = bwt(M)
    return None if b is None else max(0.0, b)


def rem(M) -> float | None:
    b = bwt(M)
    return None if b is None else 1.0 - abs(min(0.0, b))


def ms(model_bytes) -> float:
    """Model-size score ``min(1, mean_i U(theta_1) / U(theta_i))``."""
    u = np.asarray(model_bytes, dtype=np.float64)
    if u.size == 0 or np.any(u <= 0):
        raise ValueError("model sizes must be positive")
    return float(min(1.0, np.sum(u[0] / u) / len(u)))


def sss(stored_bytes, total_bytes: float) -> float:
    """Sample-storage score ``1 - min(1, mean_i U(SS_i) / U(D_Tr))``."""
    if total_bytes <= 0:
        raise ValueError("total training bytes must be positive")
    s = np.asarray(stored_bytes, dtype=np.float64)
    return float(1.0 - min(1.0, np.sum(s / total_bytes) / len(s)))


# --- learning curves ------------------------------------------------------

@dataclass
class TrainTrace:
    """Validation measures during one session.

    ``epochs[k]`` is the solver epoch of evaluation ``k`` (``epochs[0] == 0``
    is the state before training).  ``generator_epochs`` counts epochs spent
    fitting a generative model before the solver started; the solver's
    measure stays at its initial value during them.
    """

    epochs: list[int]
    mrr: list[float]
    hits10: list[float]
    generator_epochs: int = 0

    def add(self, epoch: int, mrr: float, hits10: float) -> None:
        self.epochs.append(int(epoch))
        self.mrr.append(float(mrr))
        self.hits10.append(float(hits10))

    @property
    def solver_epochs(self) -> int:
        return self.epochs[-1] if self.epochs else 0

    def to_tsv(self) -> str:
        lines = ["phase\tepoch\tmrr\thits10"]
        if self.generator_epochs and self.epochs:
            for e in range(1, self.generator_epochs + 1):
                lines.append(f"generator\t{e}\t{self.mrr[0]!r}\t{self.hits10[0]!r}")
        for e, m, h in zip(self.epochs, self.mrr, self.hits10):
            lines.append(f"solver\t{e}\t{m!r}\t{h!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "TrainTrace":
        trace = cls([], [], [])
        for line in text.splitlines()[1:]:
            phase, e, m, h = line.split("\t")
            if phase == "generator":
                trace.generator_epochs += 1
            else:
                trace.add(int(e), float(m), float(h))
        return trace

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "mrr": self.mrr, "hits10": self.hits10,
                "generator_epochs": self.generator_epochs}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainTrace":
        return cls(list(d["epochs"]), list(d["mrr"]), list(d["hits10"]), int(d.get("generator_epochs", 0)))


def lca(values, epochs=None, generator_epochs: int = 0, include_generator: bool = True) -> float:
    """Learning-curve area up to the first epoch reaching the best value.

    The curve is a step function holding each measurement until the next
    one.  Returns ``area / (best * time_to_best)``; a curve already at its
    best at time zero scores 1, an all-zero curve scores 0.  Prepended
    generator epochs (at the initial value) count as time only when
    ``include_generator`` is set.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty trace")
    e = np.arange(len(v), dtype=np.float64) if epochs is None else np.asarray(epochs, dtype=np.float64)
    if generator_epochs and include_generator:
        v = np.concatenate([[v[0]], v])
        e = np.concatenate([[0.0], e + generator_epochs])
    best = v.max()
    if best <= 0:
        return 0.0
    k = int(np.argmax(v))
    t = e[k] - e[0]
    if t <= 0:
        return 1.0
    area = float(np.sum(v[:k] * np.diff(e[:k + 1])))
    return area / (best * t)


def trace_lca(trace: TrainTrace, measure: str = "hits10", include_generator: bool = True) -> float:
    return lca(getattr(trace, measure), trace.epochs, trace.generator_epochs, include_generator)
