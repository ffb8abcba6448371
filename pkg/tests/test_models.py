import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ckge.models import (
    ModelState, RowGrads, TrainBatch, analogy_loss_grad, analogy_score, candidate_goodness,
    corrupt_negatives, expand_model, goodness, init_model, load_model, project_constraints,
    relation_matrix, save_model, scores, sgd_step, transe_loss_grad, transe_score,
)
from ckge.kg import triple_keys
from ckge.utils import NumericalError, make_rng
from oracles import central_diff, rel_err


def transe(ent, rel):
    return ModelState("transe", np.array(ent, dtype=float), np.array(rel, dtype=float))


def analogy(ent, rel):
    return ModelState("analogy", np.array(ent, dtype=float), np.array(rel, dtype=float))


# --- scores ---------------------------------------------------------------

def test_transe_score_examples():
    m = transe([[0, 0], [1, 0], [0, 1]], [[1, 0]])
    assert transe_score(m, (0, 0, 1)) == 0.0
    assert transe_score(m, (0, 0, 2)) == 2.0
    assert transe_score(m, (0, 0, 0)) == 1.0
    with pytest.raises(IndexError):
        transe_score(m, (0, 0, 3))


def test_analogy_score_examples():
    # identity mapping: a=1, b=0
    m = analogy([[1, 0], [0, 1]], [[1, 0], [0, -1]])
    assert analogy_score(m, (0, 0, 0)) == 1.0
    assert analogy_score(m, (0, 0, 1)) == 0.0  # v_t orthogonal to v_h^T W
    # 90 degree rotation of v_h (row convention): [1, 0] W = [0, 1] needs b = -1
    assert analogy_score(m, (0, 1, 1)) == pytest.approx(1.0)


def test_analogy_relations_normal_and_commuting():
    m = init_model("analogy", 4, 2, 4, make_rng(0, "t"))
    W = [relation_matrix(row) for row in m.relation_emb]
    for A in W:
        assert np.allclose(A @ A.T, A.T @ A, atol=1e-10)
    assert np.allclose(W[0] @ W[1], W[1] @ W[0], atol=1e-10)
    vh, vt = m.entity_emb[0], m.entity_emb[3]
    assert analogy_score(m, (0, 1, 3)) == pytest.approx(vh @ W[1] @ vt)


def test_init_model_bounds_and_determinism():
    a = init_model("transe", 3, 1, 2, make_rng(1, "x"))
    b = init_model("transe", 3, 1, 2, make_rng(1, "x"))
    assert a.entity_emb.shape == (3, 2) and a.relation_emb.shape == (1, 2)
    assert a.equals(b)
    assert np.all(np.linalg.norm(a.entity_emb, axis=1) <= 1 + 1e-12)
    with pytest.raises(ValueError):
        init_model("analogy", 3, 1, 5, make_rng(1))


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_transe_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = transe(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)))
    before = scores(m, [(0, 1, 2)])
    shift = rng.normal(size=4)
    m.entity_emb[[0, 2]] += shift
    assert np.allclose(before, scores(m, [(0, 1, 2)]))


def test_candidate_goodness_matches_direct_scores():
    rng = np.random.default_rng(3)
    for kind in ("transe", "analogy"):
        m = ModelState(kind, rng.normal(size=(6, 4)), rng.normal(size=(2, 4)))
        tail = candidate_goodness(m, [(1, 0, 2)], "tail")[0]
        head = candidate_goodness(m, [(1, 0, 2)], "head")[0]
        assert np.allclose(tail, goodness(m, [(1, 0, e) for e in range(6)]))
        assert np.allclose(head, goodness(m, [(e, 0, 2) for e in range(6)]))


# --- losses ---------------------------------------------------------------

def test_transe_loss_examples():
    m = transe([[0, 0], [1, 0], [3, 0]], [[1, 0]])
    # f(pos) = 0, f(neg) = 2 with margin 1: inactive
    loss, g = transe_loss_grad(m, TrainBatch([(0, 0, 1)], [(0, 0, 2)]), 1.0)
    assert loss == 0.0 and len(g.entity_rows) == 0
    # f = f' with margin 0: loss 0 (boundary counts as active)
    m2 = transe([[0, 0], [1, 1], [1, -1]], [[1, 0]])
    loss, _ = transe_loss_grad(m2, TrainBatch([(0, 0, 1)], [(0, 0, 2)]), 0.0)
    assert loss == 0.0
    loss, g = transe_loss_grad(m2, TrainBatch([(0, 0, 1)], [(0, 0, 2)]), 1.0)
    assert loss == 1.0 and np.abs(g.entity_vals).sum() > 0
    with pytest.raises(ValueError):
        transe_loss_grad(m, TrainBatch([(0, 0, 1)], [(0, 0, 2)]), -1.0)


def test_analogy_loss_examples():
    m = analogy([[0, 0], [1, 0]], [[1, 0]])
    loss, _ = analogy_loss_grad(m, TrainBatch([(0, 0, 1)], np.zeros((0, 3))))
    assert loss == pytest.approx(np.log(2))
    loss, _ = analogy_loss_grad(m, TrainBatch(np.zeros((0, 3)), [(0, 0, 1)]))
    assert loss == pytest.approx(np.log(2))
    big = analogy([[1e3, 0], [1e3, 0]], [[1, 0]])
    loss, g = analogy_loss_grad(big, TrainBatch([(0, 0, 1)], np.zeros((0, 3))))
    assert loss == pytest.approx(0.0) and np.all(np.isfinite(g.entity_vals))


def random_instance(kind, seed, n_ent=5, n_rel=2, dim=4, n=6):
    rng = np.random.default_rng(seed)
    m = ModelState(kind, rng.normal(size=(n_ent, dim)), rng.normal(size=(n_rel, dim)))
    pos = np.stack([rng.integers(0, n_ent, n), rng.integers(0, n_rel, n), rng.integers(0, n_ent, n)], axis=1)
    batch, _ = corrupt_negatives(pos, n_ent, 1, make_rng(seed, "neg"), num_relations=n_rel)
    return m, batch


def loss_fd_error(kind, seed, margin=1.0):
    m, batch = random_instance(kind, seed)
    fn = (lambda: transe_loss_grad(m, batch, margin)[0]) if kind == "transe" else \
        (lambda: analogy_loss_grad(m, batch)[0])
    _, g = (transe_loss_grad(m, batch, margin) if kind == "transe" else analogy_loss_grad(m, batch))
    ge, gr = g.dense(m)
    return max(rel_err(ge, central_diff(fn, m.entity_emb)), rel_err(gr, central_diff(fn, m.relation_emb)))


@pytest.mark.parametrize("seed", range(5))
def test_analogy_gradient_matches_finite_differences(seed):
    assert loss_fd_error("analogy", seed) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_transe_gradient_matches_finite_differences(seed):
    # random Gaussian states sit away from kinks and hinge boundaries almost surely
    assert loss_fd_error("transe", seed) < 1e-4


def test_transe_loss_nonnegative_and_analogy_monotone():
    for seed in range(10):
        m, batch = random_instance("transe", seed)
        assert transe_loss_grad(m, batch, 1.0)[0] >= 0
    m = analogy([[1, 0], [1, 0]], [[1, 0]])
    losses = []
    for scale in (0.5, 1.0, 2.0):
        m.entity_emb[1] = [scale, 0]
        losses.append(analogy_loss_grad(m, TrainBatch([(0, 0, 1)], np.zeros((0, 3))))[0])
    assert losses[0] > losses[1] > losses[2]


# --- negatives ------------------------------------------------------------

def test_corrupt_negatives_structure():
    pos = np.array([[0, 0, 1]])
    batch, flagged = corrupt_negatives(pos, 5, 2, make_rng(0, "n"))
    assert batch.negatives.shape == (2, 3) and not flagged.any()
    for p, n in zip(batch.positives, batch.negatives):
        assert (p != n).sum() == 1 and p[1] == n[1]
    again, _ = corrupt_negatives(pos, 5, 2, make_rng(0, "n"))
    assert np.array_equal(batch.negatives, again.negatives)
    assert batch.labels.tolist() == [1, 1, -1, -1]


def test_corrupt_negatives_all_known_are_flagged():
    pos = np.array([[0, 0, 1]])
    known = np.sort(triple_keys(np.array([[0, 0, 0], [0, 0, 1], [1, 0, 1], [1, 0, 0]]), 2, 1))
    batch, flagged = corrupt_negatives(pos, 2, 1, make_rng(0), known, 1, max_retries=3)
    assert flagged.all() and (batch.negatives != pos).sum() == 1


def test_corrupt_negatives_avoid_known():
    rng = np.random.default_rng(0)
    pos = rng.integers(0, 20, size=(200, 3))
    pos[:, 1] = 0
    known = np.unique(triple_keys(pos, 20, 1))
    batch, flagged = corrupt_negatives(pos, 20, 1, make_rng(0), known, 1)
    ok = ~flagged
    assert not np.isin(triple_keys(batch.negatives[ok], 20, 1), known).any()
    with pytest.raises(ValueError):
        corrupt_negatives(pos, 1, 1, make_rng(0))
    with pytest.raises(ValueError):
        corrupt_negatives(pos, 20, 0, make_rng(0))


# --- constraints and updates ----------------------------------------------

def test_project_constraints():
    m = transe([[3, 4], [0.5, 0]], [[3, 4]])
    project_constraints(m)
    assert np.allclose(m.entity_emb, [[0.6, 0.8], [0.5, 0]]) and np.allclose(m.relation_emb, [[0.6, 0.8]])
    m = transe([[3, 4], [6, 8]], [[0, 0]])
    project_constraints(m, frozen_entities=np.array([True, False]))
    assert m.entity_emb[0].tolist() == [3, 4] and np.allclose(m.entity_emb[1], [0.6, 0.8])


def test_sgd_step():
    m = transe([[0.1, 0.2], [0.3, 0.0]], [[0.0, 0.1]])
    before = m.copy()
    sgd_step(m, RowGrads.empty(2), 0.1)
    assert m.equals(before)
    g = RowGrads(np.array([1]), np.array([[1.0, -2.0]]), np.zeros(0, int), np.zeros((0, 2)))
    sgd_step(m, g, 0.1)
    assert np.allclose(m.entity_emb[1], [0.2, 0.2]) and np.array_equal(m.entity_emb[0], before.entity_emb[0])
    frozen = m.copy()
    sgd_step(m, g, 0.1, frozen_entities=np.array([True, True]))
    assert m.equals(frozen)
    bad = RowGrads(np.array([0]), np.array([[np.nan, 0.0]]), np.zeros(0, int), np.zeros((0, 2)))
    with pytest.raises(NumericalError):
        sgd_step(m, bad, 0.1)
    with pytest.raises(ValueError):
        sgd_step(m, g, 0.0)


def test_expand_model():
    m = init_model("transe", 3, 1, 4, make_rng(0))
    same = expand_model(m, 3, 1, make_rng(1))
    assert same.equals(m)
    big = expand_model(m, 4, 2, make_rng(1))
    assert np.array_equal(big.entity_emb[:3], m.entity_emb) and big.num_entities == 4
    assert np.array_equal(scores(big, [(0, 0, 2)]), scores(m, [(0, 0, 2)]))
    with pytest.raises(ValueError):
        expand_model(big, 3, 2, make_rng(1))


def test_checkpoint_round_trip(tmp_path):
    m = init_model("analogy", 5, 3, 6, make_rng(2))
    save_model(tmp_path / "m.ckpt", m, session=4)
    back, header, _ = load_model(tmp_path / "m.ckpt")
    assert back.equals(m) and header["session"] == 4 and header["kind"] == "analogy"
