"""TransE and Analogy embeddings with hand-derived gradients.

Relations of an Analogy model are stored one row per relation as ``d/2``
pairs ``(a, b)``, each pair encoding the 2x2 block ``[[a, -b], [b, a]]`` of
a block-diagonal mapping ``W_r``.  Such blocks are normal and commute with
each other, so no projection is needed to keep that structure.

Both models expose a *goodness* (``-f`` for TransE, ``f`` for Analogy) so
ranking code can always sort higher-is-better.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .kg import triple_keys
from .utils import NumericalError

TRANSE = "transe"
ANALOGY = "analogy"
KINDS = (TRANSE, ANALOGY)


@dataclass
class ModelState:
    kind: str
    entity_emb: np.ndarray
    relation_emb: np.ndarray

    @property
    def dim(self) -> int:
        return self.entity_emb.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_emb.shape[0]

    @property
    def num_params(self) -> int:
        return self.entity_emb.size + self.relation_emb.size

    def copy(self) -> "ModelState":
        return ModelState(self.kind, self.entity_emb.copy(), self.relation_emb.copy())

    def equals(self, other: "ModelState") -> bool:
        return (self.kind == other.kind
                and np.array_equal(self.entity_emb, other.entity_emb)
                and np.array_equal(self.relation_emb, other.relation_emb))


@dataclass
class RowGrads:
    """Gradients for the rows a batch touched; ``*_rows`` are unique and sorted."""

    entity_rows: np.ndarray
    entity_vals: np.ndarray
    relation_rows: np.ndarray
    relation_vals: np.ndarray

    @classmethod
    def from_parts(cls, ent_rows, ent_vals, rel_rows, rel_vals, dim) -> "RowGrads":
        return cls(*_reduce_rows(ent_rows, ent_vals, dim), *_reduce_rows(rel_rows, rel_vals, dim))

    @classmethod
    def empty(cls, dim: int) -> "RowGrads":
        return cls.from_parts([], [], [], [], dim)

    def __add__(self, other: "RowGrads") -> "RowGrads":
        dim = self.entity_vals.shape[1]
        return RowGrads.from_parts(
            np.concatenate([self.entity_rows, other.entity_rows]),
            np.concatenate([self.entity_vals, other.entity_vals]),
            np.concatenate([self.relation_rows, other.relation_rows]),
            np.concatenate([self.relation_vals, other.relation_vals]),
            dim,
        )

    def dense(self, m: ModelState) -> tuple[np.ndarray, np.ndarray]:
        ge = np.zeros_like(m.entity_emb)
        gr = np.zeros_like(m.relation_emb)
        ge[self.entity_rows] = self.entity_vals
        gr[self.relation_rows] = self.relation_vals
        return ge, gr


def _reduce_rows(rows, vals, dim):
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    vals = np.asarray(vals, dtype=np.float64).reshape(-1, dim)
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, dim))
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros((len(uniq), dim))
    np.add.at(out, inv, vals)
    return uniq, out


@dataclass
class TrainBatch:
    """Positives repeated to align one-to-one with their corruptions."""

    positives: np.ndarray
    negatives: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([np.ones(len(self.positives)), -np.ones(len(self.negatives))])


# --- construction ---------------------------------------------------------

def _uniform_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    bound = 6.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=(n, d))


def init_model(kind: str, num_entities: int, num_relations: int, dim: int,
               rng: np.random.Generator) -> ModelState:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == ANALOGY and dim % 2:
        raise ValueError("Analogy needs an even dimension (2x2 blocks)")
    m = ModelState(kind, _uniform_rows(rng, num_entities, dim), _uniform_rows(rng, num_relations, dim))
    return project_constraints(m)


def expand_model(m: ModelState, num_entities: int, num_relations: int,
                 rng: np.random.Generator) -> ModelState:
    """Append freshly initialised rows; existing rows are kept bit-exactly."""
    if num_entities < m.num_entities or num_relations < m.num_relations:
        raise ValueError("expand_model cannot shrink a model")
    new_e = _uniform_rows(rng, num_entities - m.num_entities, m.dim)
    new_r = _uniform_rows(rng, num_relations - m.num_relations, m.dim)
    if m.kind == TRANSE:
        new_e, new_r = _clip_rows(new_e), _clip_rows(new_r)
    return ModelState(m.kind, np.vstack([m.entity_emb, new_e]), np.vstack([m.relation_emb, new_r]))


def _clip_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 1.0, x / np.maximum(norms, 1e-300), x)


def project_constraints(m: ModelState, frozen_entities=None, frozen_relations=None,
                        entity_rows=None, relation_rows=None) -> ModelState:
    """Rescale TransE rows with L2 norm above 1 (in place); frozen rows are skipped.

    ``entity_rows``/``relation_rows`` restrict the check to those rows.
    """
    if m.kind != TRANSE:
        return m
    for mat, frozen, rows in ((m.entity_emb, frozen_entities, entity_rows),
                              (m.relation_emb, frozen_relations, relation_rows)):
        rows = np.arange(len(mat)) if rows is None else np.asarray(rows, dtype=np.int64)
        if frozen is not None and len(rows):
            rows = rows[~frozen[rows]]
        if len(rows):
            mat[rows] = _clip_rows(mat[rows])
    return m


# --- scoring --------------------------------------------------------------

def _blocks(x):
    return x[..., 0::2], x[..., 1::2]


def analogy_left(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row vector ``h^T W`` for block-encoded ``W``."""
    h1, h2 = _blocks(h)
    a, b = _blocks(w)
    out = np.empty(np.broadcast_shapes(h.shape, w.shape))
    out[..., 0::2] = a * h1 + b * h2
    out[..., 1::2] = a * h2 - b * h1
    return out


def analogy_right(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Column vector ``W t`` for block-encoded ``W``."""
    t1, t2 = _blocks(t)
    a, b = _blocks(w)
    out = np.empty(np.broadcast_shapes(t.shape, w.shape))
    out[..., 0::2] = a * t1 - b * t2
    out[..., 1::2] = b * t1 + a * t2
    return out


def relation_matrix(w_row: np.ndarray) -> np.ndarray:
    """Dense ``d x d`` matrix for one Analogy relation row."""
    d = len(w_row)
    out = np.zeros((d, d))
    for k in range(d // 2):
        a, b = w_row[2 * k], w_row[2 * k + 1]
        out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = [[a, -b], [b, a]]
    return out


def _check_ids(m: ModelState, triples: np.ndarray):
    if len(triples) == 0:
        return
    if (triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= m.num_entities
            or triples[:, 1].min() < 0 or triples[:, 1].max() >= m.num_relations):
        raise IndexError("triple id out of range for this model")


def scores(m: ModelState, triples) -> np.ndarray:
    """Raw scores ``f`` (TransE: L1 distance, lower is better; Analogy: higher is better)."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    _check_ids(m, t)
    vh, wr, vt = m.entity_emb[t[:, 0]], m.relation_emb[t[:, 1]], m.entity_emb[t[:, 2]]
    if m.kind == TRANSE:
        return np.abs(vh + wr - vt).sum(axis=1)
    return (analogy_left(vh, wr) * vt).sum(axis=1)


def transe_score(m: ModelState, triple) -> float:
    if m.kind != TRANSE:
        raise ValueError("not a TransE model")
    return float(scores(m, triple)[0])


def analogy_score(m: ModelState, triple) -> float:
    if m.kind != ANALOGY:
        raise ValueError("not an Analogy model")
    return float(scores(m, triple)[0])


def goodness(m: ModelState, triples) -> np.ndarray:
    s = scores(m, triples)
    return -s if m.kind == TRANSE else s


def candidate_goodness(m: ModelState, triples: np.ndarray, side: str) -> np.ndarray:
    """Goodness of every entity substituted into ``side`` ('head'/'tail'); shape (B, n_entities)."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E = m.entity_emb
    vh, wr, vt = E[t[:, 0]], m.relation_emb[t[:, 1]], E[t[:, 2]]
    if m.kind == TRANSE:
        # tail: |(h + r) - e|, head: |e - (t - r)|
        q = vh + wr if side == "tail" else vt - wr
        return -np.abs(q[:, None, :] - E[None, :, :]).sum(axis=2)
    q = analogy_left(vh, wr) if side == "tail" else analogy_right(wr, vt)
    return q @ E.T


# --- losses ---------------------------------------------------------------

def transe_loss_grad(m: ModelState, batch: TrainBatch, margin: float) -> tuple[float, RowGrads]:
    """Margin ranking loss ``sum [f(pos) + margin - f(neg)]_+`` with subgradients.

    ``sign(0) = 0`` at the L1 kink; a hinge sitting exactly on its boundary
    counts as active.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    pos = np.asarray(batch.positives, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(batch.negatives, dtype=np.int64).reshape(-1, 3)
    if len(pos) != len(neg):
        raise ValueError("positives and negatives must be paired one-to-one")
    _check_ids(m, pos)
    _check_ids(m, neg)
    E, R = m.entity_emb, m.relation_emb
    dp = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
    dn = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
    hinge = np.abs(dp).sum(axis=1) + margin - np.abs(dn).sum(axis=1)
    loss = float(np.maximum(hinge, 0.0).sum())
    active = hinge >= 0
    sp = np.sign(dp[active])
    sn = np.sign(dn[active])
    p, n = pos[active], neg[active]
    ent_rows = np.concatenate([p[:, 0], p[:, 2], n[:, 0], n[:, 2]])
    ent_vals = np.concatenate([sp, -sp, -sn, sn])
    rel_rows = np.concatenate([p[:, 1], n[:, 1]])
    rel_vals = np.concatenate([sp, -sn])
    return loss, RowGrads.from_parts(ent_rows, ent_vals, rel_rows, rel_vals, m.dim)


def analogy_loss_grad(m: ModelState, batch: TrainBatch) -> tuple[float, RowGrads]:
    """Logistic loss ``sum -log sigmoid(y f)`` over positives (y=+1) and negatives (y=-1)."""
    rows = np.concatenate([np.asarray(batch.positives).reshape(-1, 3),
                           np.asarray(batch.negatives).reshape(-1, 3)]).astype(np.int64)
    y = batch.labels
    _check_ids(m, rows)
    E, R = m.entity_emb, m.relation_emb
    vh, wr, vt = E[rows[:, 0]], R[rows[:, 1]], E[rows[:, 2]]
    f = (analogy_left(vh, wr) * vt).sum(axis=1)
    loss = float(np.logaddexp(0.0, -y * f).sum())
    # d/df softplus(-y f) = -y * sigmoid(-y f)
    coef = (-y * _sigmoid(-y * f))[:, None]
    g_h = coef * analogy_right(wr, vt)
    g_t = coef * analogy_left(vh, wr)
    h1, h2 = _blocks(vh)
    t1, t2 = _blocks(vt)
    g_w = np.empty_like(wr)
    g_w[:, 0::2] = h1 * t1 + h2 * t2
    g_w[:, 1::2] = h2 * t1 - h1 * t2
    g_w *= coef
    return loss, RowGrads.from_parts(
        np.concatenate([rows[:, 0], rows[:, 2]]), np.concatenate([g_h, g_t]), rows[:, 1], g_w, m.dim)


def loss_grad(m: ModelState, batch: TrainBatch, margin: float = 1.0) -> tuple[float, RowGrads]:
    if m.kind == TRANSE:
        return transe_loss_grad(m, batch, margin)
    return analogy_loss_grad(m, batch)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- negatives ------------------------------------------------------------

def corrupt_negatives(positives: np.ndarray, num_entities: int, ratio: int, rng: np.random.Generator,
                      known_keys: np.ndarray | None = None, num_relations: int | None = None,
                      max_retries: int = 10) -> tuple[TrainBatch, np.ndarray]:
    """Corrupt head or tail (chosen uniformly) of each positive ``ratio`` times.

    Replacements are uniform over entity rows ``[0, num_entities)`` excluding
    the original.  Corruptions whose key is in ``known_keys`` (sorted int64
    keys from :func:`ckge.kg.triple_keys`) are redrawn up to ``max_retries``
    times; survivors are kept and reported in the returned flag array.
    """
    if num_entities < 2:
        raise ValueError("need at least two entities to corrupt triples")
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    pos = np.repeat(np.asarray(positives, dtype=np.int32).reshape(-1, 3), ratio, axis=0)
    neg = pos.copy()
    n = len(pos)
    slot = np.where(rng.random(n) < 0.5, 0, 2)
    todo = np.arange(n)
    flagged = np.zeros(n, dtype=bool)
    n_rel = num_relations if num_relations is not None else int(pos[:, 1].max(initial=0)) + 1
    for attempt in range(max_retries + 1):
        orig = pos[todo, slot[todo]]
        draw = rng.integers(0, num_entities - 1, size=len(todo))
        draw = draw + (draw >= orig)
        neg[todo, slot[todo]] = draw
        if known_keys is None or len(known_keys) == 0:
            break
        keys = triple_keys(neg[todo], num_entities, n_rel)
        hit = _sorted_isin(keys, known_keys)
        todo = todo[hit]
        if len(todo) == 0:
            break
        if attempt == max_retries:
            flagged[todo] = True
    return TrainBatch(pos, neg), flagged


def _sorted_isin(keys: np.ndarray, sorted_ref: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(sorted_ref, keys)
    idx[idx >= len(sorted_ref)] = 0
    return sorted_ref[idx] == keys


# --- optimisation ---------------------------------------------------------

def sgd_step(m: ModelState, grads: RowGrads, lr: float, frozen_entities=None,
             frozen_relations=None) -> ModelState:
    """In-place ``theta -= lr * grad`` on unfrozen rows, then constraint projection."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, vals in (("entity", grads.entity_vals), ("relation", grads.relation_vals)):
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite {name} gradient (max |g| = {np.nanmax(np.abs(vals))})")
    e_rows, e_vals = grads.entity_rows, grads.entity_vals
    r_rows, r_vals = grads.relation_rows, grads.relation_vals
    if frozen_entities is not None and len(e_rows):
        keep = ~frozen_entities[e_rows]
        e_rows, e_vals = e_rows[keep], e_vals[keep]
    if frozen_relations is not None and len(r_rows):
        keep = ~frozen_relations[r_rows]
        r_rows, r_vals = r_rows[keep], r_vals[keep]
    m.entity_emb[e_rows] -= lr * e_vals
    m.relation_emb[r_rows] -= lr * r_vals
    return project_constraints(m, entity_rows=e_rows, relation_rows=r_rows)


# --- persistence ----------------------------------------------------------

def save_model(path, m: ModelState, session: int | None = None, **extra_arrays) -> None:
    header = {"kind": m.kind, "dim": m.dim, "num_entities": m.num_entities,
              "num_relations": m.num_relations, "session": session}
    checkpoint.save(path, header, {"entity_emb": m.entity_emb, "relation_emb": m.relation_emb, **extra_arrays})


def load_model(path) -> tuple[ModelState, dict, dict]:
    header, arrays = checkpoint.load(path)
    m = ModelState(header["kind"], arrays.pop("entity_emb"), arrays.pop("relation_emb"))
    return m, header, arrays
