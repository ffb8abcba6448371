"""Session-update strategies: Batch, Finetune, PNN, CWR, L2R, SI and DGR.

All strategies share :func:`fit`, a mini-batch SGD loop with validation
checkpoints every ``eval_every`` epochs.  A strategy receives the model
already expanded to the session's observed ids (rows are numbered by first
observation, so earlier ids occupy the leading rows).
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .config import RunConfig
from .evaluation import FilterIndex, TrainTrace, eval_split
from .generator import (
    GeneratorParams, expand_generator, init_generator, sample_triples, train_generator,
)
from .kg import as_triples, triple_keys
from .models import (
    ModelState, RowGrads, corrupt_negatives, init_model, loss_grad, sgd_step,
)
from .utils import make_rng

logger = logging.getLogger(__name__)


@dataclass
class SessionContext:
    """Everything a strategy sees of one session, in embedding row ids."""

    index: int
    train: np.ndarray
    valid: np.ndarray
    num_entities: int
    num_relations: int
    prev_entities: int
    prev_relations: int
    valid_filter: FilterIndex
    seed: int = 0


@dataclass
class MethodState:
    method: str
    retained: np.ndarray | None = None
    snapshot: ModelState | None = None
    omega: tuple[np.ndarray, np.ndarray] | None = None
    importance: tuple[np.ndarray, np.ndarray] | None = None
    merge_counts: tuple[np.ndarray, np.ndarray] | None = None
    generator: GeneratorParams | None = None
    te_params: int = 0
    seen_train: int = 0
    sessions_done: int = 0

    @property
    def stored_triples(self) -> int:
        return 0 if self.retained is None else len(self.retained)


def init_method_state(method: str) -> MethodState:
    return MethodState(method)


# --- shared training loop -------------------------------------------------

def fit(model: ModelState, triples: np.ndarray, cfg: RunConfig, rng: np.random.Generator, *,
        evaluate, max_epochs: int, num_entities: int | None = None, known=None,
        frozen=(None, None), penalty=None, on_step=None) -> tuple[ModelState, TrainTrace]:
    """Train ``model`` in place on ``triples`` and return it with its validation trace.

    ``penalty(model) -> (value, RowGrads)`` is added to every step's loss;
    ``on_step(task_grads, delta_entity, delta_relation)`` sees the task-loss
    gradient and the resulting change of the touched rows.  With early
    stopping enabled the best-MRR parameters are restored at the end.
    """
    triples = as_triples(triples)
    n_ent = model.num_entities if num_entities is None else num_entities
    known_keys = np.unique(triple_keys(triples if known is None else known, model.num_entities,
                                       model.num_relations))
    trace = TrainTrace([], [], [])
    trace.add(0, *evaluate(model))
    best_mrr, best_model, stale = trace.mrr[0], model.copy(), 0
    if len(triples) == 0:
        return model, trace
    bs = int(cfg.batch_size)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(triples))
        for start in range(0, len(order), bs):
            pos = triples[order[start:start + bs]]
            batch, _ = corrupt_negatives(pos, n_ent, cfg.neg_ratio, rng, known_keys, model.num_relations)
            _, grads = loss_grad(model, batch, cfg.margin)
            step = grads
            if penalty is not None:
                step = grads + penalty(model)[1]
            if on_step is not None:
                before_e = model.entity_emb[grads.entity_rows].copy()
                before_r = model.relation_emb[grads.relation_rows].copy()
            sgd_step(model, step, float(cfg.lr), *frozen)
            if on_step is not None:
                on_step(grads, model.entity_emb[grads.entity_rows] - before_e,
                        model.relation_emb[grads.relation_rows] - before_r)
        if epoch % cfg.eval_every == 0 or epoch == max_epochs:
            trace.add(epoch, *evaluate(model))
            if trace.mrr[-1] > best_mrr:
                best_mrr, best_model, stale = trace.mrr[-1], model.copy(), 0
            else:
                stale += 1
                if cfg.early_stopping and stale >= cfg.patience:
                    break
    if cfg.early_stopping:
        model.entity_emb[...] = best_model.entity_emb
        model.relation_emb[...] = best_model.relation_emb
    return model, trace


def validation_fn(ctx: SessionContext, cfg: RunConfig):
    def evaluate(model: ModelState) -> tuple[float, float]:
        if len(ctx.valid) == 0:
            return 0.0, 0.0
        return eval_split(model, ctx.valid, ctx.num_entities, ctx.valid_filter, cfg.tie_policy)
    return evaluate


# --- regularisers ---------------------------------------------------------

def _old_rows(snapshot: ModelState):
    return snapshot.num_entities, snapshot.num_relations


def l2r_penalty(model: ModelState, snapshot: ModelState, lam: float) -> tuple[float, RowGrads]:
    """``lam * sum ||theta - theta_prev||^2`` over rows that existed in ``snapshot``."""
    return weighted_penalty(model, snapshot, None, lam)


def si_penalty(model: ModelState, snapshot: ModelState, importance, lam: float,
               weighting: str = "linear") -> tuple[float, RowGrads]:
    """Importance-weighted deviation penalty.

    ``weighting='linear'`` gives ``lam * sum Omega * delta^2``;
    ``'squared'`` reads the weight inside the norm: ``lam * sum (Omega * delta)^2``.
    """
    w_e, w_r = importance
    if weighting == "squared":
        w_e, w_r = w_e ** 2, w_r ** 2
    elif weighting != "linear":
        raise ValueError("weighting must be 'linear' or 'squared'")
    return weighted_penalty(model, snapshot, (w_e, w_r), lam)


def weighted_penalty(model, snapshot, weights, lam):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ne, nr = _old_rows(snapshot)
    de = model.entity_emb[:ne] - snapshot.entity_emb
    dr = model.relation_emb[:nr] - snapshot.relation_emb
    if weights is None:
        we, wr = 1.0, 1.0
    else:
        we, wr = weights[0][:ne], weights[1][:nr]
    value = lam * (float((we * de * de).sum()) + float((wr * dr * dr).sum()))
    grads = RowGrads(np.arange(ne), 2.0 * lam * we * de, np.arange(nr), 2.0 * lam * wr * dr)
    return value, grads


def si_accumulate(omega, grads: RowGrads, delta_e: np.ndarray, delta_r: np.ndarray):
    """Path-integral update ``omega += -g * delta`` on the rows in ``grads`` (in place)."""
    om_e, om_r = omega
    if delta_e.shape != grads.entity_vals.shape or delta_r.shape != grads.relation_vals.shape:
        raise ValueError("gradient and update shapes differ")
    om_e[grads.entity_rows] -= grads.entity_vals * delta_e
    om_r[grads.relation_rows] -= grads.relation_vals * delta_r
    return omega


def si_consolidate(importance, omega, start: ModelState, end: ModelState, xi: float):
    """``Omega += max(0, omega) / ((end - start)^2 + xi)``; returns (Omega, zeroed omega)."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    out = []
    for imp, om, a, b in ((importance[0], omega[0], start.entity_emb, end.entity_emb),
                          (importance[1], omega[1], start.relation_emb, end.relation_emb)):
        grown = np.zeros_like(om)
        grown[:len(imp)] = imp
        out.append(grown + np.maximum(om, 0.0) / ((b - a) ** 2 + xi))
    return (out[0], out[1]), (np.zeros_like(omega[0]), np.zeros_like(omega[1]))


def _grow(arr: np.ndarray, rows: int) -> np.ndarray:
    out = np.zeros((rows, arr.shape[1]))
    out[:len(arr)] = arr
    return out


# --- CWR ------------------------------------------------------------------

def cwr_merge(ce: ModelState, te: ModelState, te_entities: np.ndarray, te_relations: np.ndarray,
              prev_entities: int, prev_relations: int, counts=None) -> tuple[ModelState, tuple]:
    """Fold temporary embeddings into the consolidated ones.

    Rows for ids first seen this session are copied; rows that already
    existed become ``(CE + TE) / 2``.
    """
    out = ce.copy()
    counts = counts or (np.zeros(ce.num_entities, dtype=np.int64), np.zeros(ce.num_relations, dtype=np.int64))
    ce_counts = (_grow_counts(counts[0], ce.num_entities), _grow_counts(counts[1], ce.num_relations))
    for mat, te_mat, ids, prev, cnt in ((out.entity_emb, te.entity_emb, te_entities, prev_entities, ce_counts[0]),
                                        (out.relation_emb, te.relation_emb, te_relations, prev_relations, ce_counts[1])):
        ids = np.asarray(ids, dtype=np.int64)
        old = ids < prev
        mat[ids[~old]] = te_mat[~old]
        mat[ids[old]] = 0.5 * (mat[ids[old]] + te_mat[old])
        cnt[ids] += 1
    return out, ce_counts


def _grow_counts(c, n):
    out = np.zeros(n, dtype=np.int64)
    out[:len(c)] = c
    return out


# --- strategies -----------------------------------------------------------

def _train_rng(ctx: SessionContext, *purpose):
    return make_rng(ctx.seed, *purpose, ctx.index)


def _finetune(model, state, ctx, cfg):
    model, trace = fit(model, ctx.train, cfg, _train_rng(ctx, "train"),
                       evaluate=validation_fn(ctx, cfg), max_epochs=cfg.solver_epochs)
    return model, state, trace


def _batch(model, state, ctx, cfg):
    if not cfg.retains_samples:
        if ctx.index == 0:
            logger.warning("scenario %s forbids sample retention: batch behaves like finetune", cfg.scenario)
        return _finetune(model, state, ctx, cfg)
    union = ctx.train if state.retained is None else np.concatenate([state.retained, ctx.train])
    fresh = init_model(model.kind, ctx.num_entities, ctx.num_relations, model.dim, make_rng(ctx.seed, "init", ctx.index))
    fresh, trace = fit(fresh, union, cfg, _train_rng(ctx, "train"),
                       evaluate=validation_fn(ctx, cfg), max_epochs=cfg.solver_epochs)
    return fresh, dataclasses.replace(state, retained=union), trace


def _pnn(model, state, ctx, cfg):
    frozen_e = np.arange(ctx.num_entities) < ctx.prev_entities
    frozen_r = np.arange(ctx.num_relations) < ctx.prev_relations
    model, trace = fit(model, ctx.train, cfg, _train_rng(ctx, "train"), evaluate=validation_fn(ctx, cfg),
                       max_epochs=cfg.solver_epochs, frozen=(frozen_e, frozen_r))
    return model, state, trace


def _cwr(model, state, ctx, cfg):
    te_ent = np.unique(ctx.train[:, [0, 2]])
    te_rel = np.unique(ctx.train[:, 1])
    lut_e = np.full(ctx.num_entities, -1, dtype=np.int64)
    lut_e[te_ent] = np.arange(len(te_ent))
    lut_r = np.full(ctx.num_relations, -1, dtype=np.int64)
    lut_r[te_rel] = np.arange(len(te_rel))
    local = np.stack([lut_e[ctx.train[:, 0]], lut_r[ctx.train[:, 1]], lut_e[ctx.train[:, 2]]], axis=1)
    te = init_model(model.kind, len(te_ent), len(te_rel), model.dim, _train_rng(ctx, "te"))
    ce = model
    check = validation_fn(ctx, cfg)

    def evaluate(te_now):
        merged, _ = cwr_merge(ce, te_now, te_ent, te_rel, ctx.prev_entities, ctx.prev_relations)
        return check(merged)

    if len(te_ent) < 2:
        trace = TrainTrace([0], *[[v] for v in check(ce)])
    else:
        te, trace = fit(te, local, cfg, _train_rng(ctx, "train"), evaluate=evaluate,
                        max_epochs=cfg.solver_epochs)
    merged, counts = cwr_merge(ce, te, te_ent, te_rel, ctx.prev_entities, ctx.prev_relations,
                               state.merge_counts)
    return merged, dataclasses.replace(state, merge_counts=counts, te_params=te.num_params), trace


def _l2r(model, state, ctx, cfg):
    penalty = None
    if state.snapshot is not None:
        snap, lam = state.snapshot, cfg.l2r_lambda
        penalty = lambda m: l2r_penalty(m, snap, lam)  # noqa: E731
    model, trace = fit(model, ctx.train, cfg, _train_rng(ctx, "train"), evaluate=validation_fn(ctx, cfg),
                       max_epochs=cfg.solver_epochs, penalty=penalty)
    return model, dataclasses.replace(state, snapshot=model.copy()), trace


def _si(model, state, ctx, cfg):
    start = model.copy()
    omega = (np.zeros_like(model.entity_emb), np.zeros_like(model.relation_emb))
    importance = state.importance or (np.zeros((0, model.dim)), np.zeros((0, model.dim)))
    penalty = None
    if state.snapshot is not None:
        snap, imp, lam = state.snapshot, importance, cfg.si_lambda
        penalty = lambda m: si_penalty(m, snap, imp, lam, cfg.si_weighting)  # noqa: E731

    def on_step(grads, de, dr):
        si_accumulate(omega, grads, de, dr)

    model, trace = fit(model, ctx.train, cfg, _train_rng(ctx, "train"), evaluate=validation_fn(ctx, cfg),
                       max_epochs=cfg.solver_epochs, penalty=penalty, on_step=on_step)
    importance, omega = si_consolidate(importance, omega, start, model, cfg.si_xi)
    return model, dataclasses.replace(state, snapshot=model.copy(), importance=importance, omega=omega), trace


def _dgr(model, state, ctx, cfg):
    gcfg = cfg.generator_config()
    combined = ctx.train
    if state.generator is not None and state.seen_train > 0:
        # as many replayed triples as earlier sessions contributed
        replay = sample_triples(state.generator, state.seen_train, _train_rng(ctx, "replay"))
        combined = np.concatenate([replay, ctx.train])
    gen = state.generator
    if gen is None:
        gen = init_generator(ctx.num_entities, ctx.num_relations, gcfg, _train_rng(ctx, "generator-init"))
    else:
        gen = expand_generator(gen, ctx.num_entities, ctx.num_relations, _train_rng(ctx, "generator-init"))
    if gcfg.epochs > 0:
        gen, gen_trace = train_generator(gen, combined, gcfg, _train_rng(ctx, "generator"))
        logger.info("session %d generator: final recon %.4f kl %.4f", ctx.index,
                    gen_trace[-1]["recon"], gen_trace[-1]["kl"])
    model, trace = fit(model, combined, cfg, _train_rng(ctx, "train"), evaluate=validation_fn(ctx, cfg),
                       max_epochs=cfg.solver_epochs)
    trace.generator_epochs = gcfg.epochs
    return model, dataclasses.replace(state, generator=gen, seen_train=state.seen_train + len(ctx.train)), trace


STRATEGIES = {
    "batch": _batch, "finetune": _finetune, "pnn": _pnn, "cwr": _cwr,
    "l2r": _l2r, "si": _si, "dgr": _dgr,
}


def train_session(method: str, model: ModelState, state: MethodState, ctx: SessionContext,
                  cfg: RunConfig) -> tuple[ModelState, MethodState, TrainTrace]:
    """Run one session of ``method``; sessions must arrive in order."""
    if ctx.index != state.sessions_done:
        raise ValueError(f"expected session {state.sessions_done}, got {ctx.index}")
    if model.num_entities != ctx.num_entities or model.num_relations != ctx.num_relations:
        raise ValueError("model must be expanded to the session's observed ids first")
    model, state, trace = STRATEGIES[method](model, state, ctx, cfg)
    state = dataclasses.replace(state, sessions_done=ctx.index + 1)
    return model, state, trace


def method_param_count(state: MethodState, model: ModelState) -> int:
    """Parameters held by a strategy: the model plus any auxiliary stores."""
    extra = 0
    if state.snapshot is not None:
        extra += state.snapshot.num_params
    if state.importance is not None:
        extra += state.importance[0].size + state.importance[1].size
    if state.omega is not None:
        extra += state.omega[0].size + state.omega[1].size
    if state.generator is not None:
        extra += state.generator.num_params
    extra += state.te_params
    return model.num_params + extra


# --- persistence ----------------------------------------------------------

def save_method_state(path, state: MethodState) -> None:
    arrays = {}
    if state.retained is not None:
        arrays["retained"] = state.retained
    if state.snapshot is not None:
        arrays["snapshot_entity"] = state.snapshot.entity_emb
        arrays["snapshot_relation"] = state.snapshot.relation_emb
    for name in ("omega", "importance", "merge_counts"):
        pair = getattr(state, name)
        if pair is not None:
            arrays[f"{name}_entity"], arrays[f"{name}_relation"] = pair
    header = {"method": state.method, "te_params": state.te_params, "sessions_done": state.sessions_done,
              "snapshot_kind": state.snapshot.kind if state.snapshot is not None else None,
              "seen_train": state.seen_train}
    if state.generator is not None:
        header["generator"] = {"num_entities": state.generator.num_entities,
                               "num_relations": state.generator.num_relations}
        arrays.update({f"gen_{k}": v for k, v in state.generator.arrays.items()})
    checkpoint.save(path, header, arrays)


def load_method_state(path) -> MethodState:
    header, arrays = checkpoint.load(path)
    state = MethodState(header["method"], te_params=header["te_params"], seen_train=header["seen_train"],
                        sessions_done=header["sessions_done"])
    state.retained = arrays.get("retained")
    if "snapshot_entity" in arrays:
        state.snapshot = ModelState(header["snapshot_kind"], arrays["snapshot_entity"], arrays["snapshot_relation"])
    for name in ("omega", "importance", "merge_counts"):
        if f"{name}_entity" in arrays:
            setattr(state, name, (arrays[f"{name}_entity"], arrays[f"{name}_relation"]))
    if "generator" in header:
        gen_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("gen_")}
        state.generator = GeneratorParams(header["generator"]["num_entities"],
                                          header["generator"]["num_relations"], gen_arrays)
    return state
