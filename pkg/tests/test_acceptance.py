"""Acceptance criteria 1-8.  Each test records one PASS/FAIL line, printed in the
terminal summary (see conftest.py).

Criterion 7 trains the full desk-scale grid and takes several minutes.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ckge import cli
from ckge.config import RunConfig
from ckge.evaluation import acc, bwt, fwt, lca, ms, plus_bwt, rem, sss
from ckge.experiment import collect_runs, localise, run_grid, session_context
from ckge.generator import init_generator, reconstruct, sample_triples, train_generator
from ckge.kg import load_graph
from ckge.methods import fit, init_method_state, l2r_penalty, si_penalty, train_session, validation_fn
from ckge.models import expand_model, init_model
from ckge.sampler import sample_sessions, session_stats
from ckge.synthetic import random_graph, typed_graph
from ckge.utils import make_rng
from oracles import acc_loop, bwt_loop, fwt_loop, lca_loop, ms_loop, sss_loop
from test_evaluation import brute_force_agrees
from test_generator import FIT_CFG, FIXTURE, vae_fd_error
from test_methods import penalty_fd_error
from test_models import loss_fd_error

RESULTS: dict[int, str] = {}

# Desk-scale grid for criterion 7.  Hyper-parameters were tuned once on
# sample seed 0 (see README); seeds 0-4 are the five test runs.
DESK = dict(sessions=5, model="transe", seeds=[0, 1, 2, 3, 4], lr=0.05, l2r_lambda=0.1,
            si_lambda=1e-4, gen_epochs=300)
# reference entity coverage per session for a 5-session WN18RR split, in percent
WN18RR_COVERAGE = [50, 73, 87, 95, 99]


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


def as_set(rows):
    return {tuple(r) for r in np.asarray(rows).tolist()}


# --- 1 --------------------------------------------------------------------

def test_criterion_1_sampler_set_algebra():
    t0 = time.perf_counter()
    g = random_graph()
    sessions = sample_sessions(g, 5, seed=0)
    size = len(g.train) // 5
    sizes_ok = all(len(s.train) == size for s in sessions[:4]) and len(sessions[4].train) == len(g.train) - 4 * size
    keys = [set((s.train[:, 0].astype(np.int64) * 11 + s.train[:, 1]) * g.vocab.num_entities + s.train[:, 2])
            for s in sessions]
    disjoint = all(not keys[a] & keys[b] for a in range(5) for b in range(a + 1, 5))
    all_keys = set((g.train[:, 0].astype(np.int64) * 11 + g.train[:, 1]) * g.vocab.num_entities + g.train[:, 2])
    union_ok = set().union(*keys) == all_keys
    cov = [r["entity_coverage"] for r in session_stats(sessions, g).rows]
    monotone = all(b >= a for a, b in zip(cov, cov[1:]))
    elapsed = time.perf_counter() - t0
    detail = (f"|D_Tr|={len(g.train)} sizes={[len(s.train) for s in sessions]} disjoint={disjoint} "
              f"union={union_ok} coverage={[round(100 * c, 1) for c in cov]} ({elapsed:.1f}s)")
    table = "reference coverage not checked (no WN18RR data; set CKGE_WN18RR)"
    root = os.environ.get("CKGE_WN18RR")
    table_ok = True
    if root:
        wn = load_graph(root)
        wn_cov = [100 * r["entity_coverage"] for r in session_stats(sample_sessions(wn, 5, seed=0), wn).rows]
        table_ok = all(abs(a - b) <= 3 for a, b in zip(wn_cov, WN18RR_COVERAGE))
        table = f"WN18RR coverage {[round(c, 1) for c in wn_cov]} vs {WN18RR_COVERAGE}"
    ok = sizes_ok and disjoint and union_ok and monotone and cov[-1] >= 0.99 and elapsed < 30 and table_ok
    record(1, ok, f"{detail}; {table}")


# --- 2 --------------------------------------------------------------------

def test_criterion_2_gradient_oracles():
    t0 = time.perf_counter()
    worst = {
        "transe": max(loss_fd_error("transe", 100 + s) for s in range(20)),
        "analogy": max(loss_fd_error("analogy", 100 + s) for s in range(20)),
        "l2r": max(penalty_fd_error(100 + s, "l2r") for s in range(20)),
        "si": max(penalty_fd_error(100 + s, "linear") for s in range(20)),
        "si_squared": max(penalty_fd_error(100 + s, "squared") for s in range(20)),
        "vae": max(vae_fd_error(100 + s) for s in range(20)),
    }
    elapsed = time.perf_counter() - t0
    ok = (all(worst[k] < 1e-4 for k in ("transe", "analogy", "vae"))
          and all(worst[k] < 1e-6 for k in ("l2r", "si", "si_squared")) and elapsed < 60)
    record(2, ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" ({elapsed:.1f}s)")


# --- 3 --------------------------------------------------------------------

def test_criterion_3_ranking_oracle():
    t0 = time.perf_counter()
    agree = sum(brute_force_agrees(seed) for seed in range(100))
    elapsed = time.perf_counter() - t0
    record(3, agree == 100 and elapsed < 60, f"{agree}/100 random graphs agree exactly ({elapsed:.1f}s)")


# --- 4 --------------------------------------------------------------------

def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(4)
    worst = 0.0
    for k in range(200):
        N = 3 + k % 4
        M = rng.uniform(size=(N, N))
        b = bwt_loop(M.tolist())
        u = rng.uniform(1, 100, N).tolist()
        stored = rng.uniform(0, 50, N).tolist()
        vals = rng.uniform(0, 1, N + 3).tolist()
        epochs = np.cumsum(rng.integers(1, 10, N + 3)).tolist()
        pairs = [(acc(M), acc_loop(M.tolist())), (fwt(M), fwt_loop(M.tolist())), (bwt(M), b),
                 (plus_bwt(M), max(0.0, b)), (rem(M), 1 - abs(min(0.0, b))), (ms(u), ms_loop(u)),
                 (sss(stored, 100.0), sss_loop(stored, 100.0)), (lca(vals, epochs), lca_loop(vals, epochs))]
        worst = max(worst, max(abs(a - c) for a, c in pairs))
    C = np.full((4, 4), 0.6)
    identities = (bwt(C) == 0 and rem(C) == 1 and plus_bwt(C) == 0 and ms([64, 64, 64]) == 1
                  and sss([0, 0, 0], 10.0) == 1 and lca([0.8, 0.8, 0.8]) == 1)
    record(4, worst < 1e-12 and identities, f"max |diff| {worst:.1e} over 200 matrices; identities={identities}")


# --- 5 --------------------------------------------------------------------

def test_criterion_5_freeze_and_bound_contracts():
    g = typed_graph()
    data = localise(g.vocab, sample_sessions(g, 3, seed=0))
    cfg = RunConfig(epochs=20, eval_every=5).resolved(200)
    ne, nr = data.ids.entity_counts, data.ids.relation_counts

    def run(method, upto):
        model, state = None, init_method_state(method)
        for i in range(upto + 1):
            model = (init_model("transe", ne[i], nr[i], int(cfg.dim), make_rng(0, "init", i)) if model is None
                     else expand_model(model, ne[i], nr[i], make_rng(0, "expand", i)))
            if i == upto:
                before = model.copy()
            model, state, _ = train_session(method, model, state, session_context(data, i, 0), cfg)
        return before, model

    frozen_ok = True
    for n in (1, 2):
        before, after = run("pnn", n)
        frozen_ok &= bool(np.array_equal(after.entity_emb[:ne[n - 1]], before.entity_emb[:ne[n - 1]])
                          and np.array_equal(after.relation_emb[:nr[n - 1]], before.relation_emb[:nr[n - 1]]))

    _, batch = run("batch", 2)
    ctx = session_context(data, 2, 0)
    fresh = init_model("transe", ne[2], nr[2], int(cfg.dim), make_rng(0, "init", 2))
    fresh, _ = fit(fresh, np.concatenate(data.train[:3]), cfg, make_rng(0, "train", 2),
                   evaluate=validation_fn(ctx, cfg), max_epochs=cfg.solver_epochs)
    batch_ok = batch.equals(fresh)

    rng = np.random.default_rng(5)
    si_ok = True
    for _ in range(20):
        snap = init_model("transe", 6, 2, 4, make_rng(int(rng.integers(1 << 30))))
        m = expand_model(snap.copy(), 9, 3, make_rng(1))
        m.entity_emb += rng.normal(size=m.entity_emb.shape)
        lam = float(rng.uniform(0, 5))
        ones = (np.ones_like(snap.entity_emb), np.ones_like(snap.relation_emb))
        si_ok &= si_penalty(m, snap, ones, lam)[0] == l2r_penalty(m, snap, lam)[0]
    record(5, frozen_ok and batch_ok and si_ok,
           f"pnn frozen rows identical={frozen_ok} batch==scratch={batch_ok} si(omega=1)==l2r={si_ok}")


# --- 6 --------------------------------------------------------------------

def test_criterion_6_vae_sanity():
    t0 = time.perf_counter()
    gen = init_generator(8, 3, FIT_CFG, make_rng(0, "fixture"))
    gen, _ = train_generator(gen, FIXTURE, FIT_CFG, make_rng(0, "fit"))
    recon = float(np.mean((reconstruct(gen, FIXTURE) == FIXTURE).all(axis=1)))
    samples = sample_triples(gen, 1000, make_rng(0, "prior"))
    members = as_set(FIXTURE)
    inside = float(np.mean([tuple(t) in members for t in samples.tolist()]))
    valid = bool(samples[:, [0, 2]].max() < 8 and samples[:, 1].max() < 3 and samples.min() >= 0)
    elapsed = time.perf_counter() - t0
    ok = recon == 1.0 and inside >= 0.9 and valid and elapsed < 120
    record(6, ok, f"reconstruction {recon:.0%} prior samples in fixture {inside:.1%} valid={valid} ({elapsed:.1f}s)")


# --- 7 --------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    g = typed_graph()
    sessions = sample_sessions(g, 5, seed=0)
    t0 = time.perf_counter()
    constrained = RunConfig(out=str(out), scenario="data_constrained",
                            methods=["finetune", "pnn", "cwr", "l2r", "si", "dgr"], **DESK)
    run_grid(constrained, g.vocab, sessions)
    unconstrained = RunConfig(out=str(out), scenario="unconstrained", methods=["batch"], **DESK)
    run_grid(unconstrained, g.vocab, sessions)
    elapsed = time.perf_counter() - t0
    report = collect_runs([out])
    means = {(grp["scenario"], grp["method"]): grp["measures"] for grp in report["groups"]}
    return means, elapsed


def test_criterion_7_desk_scale_orderings(desk_report):
    means, elapsed = desk_report
    A = {m: means[("data_constrained", m)]["acc_hits10"]["mean"] for m in ("finetune", "pnn", "cwr", "l2r", "si", "dgr")}
    L = {m: means[("data_constrained", m)]["lca"]["mean"] for m in ("finetune", "l2r", "si", "dgr")}
    batch = means[("unconstrained", "batch")]["acc_hits10"]["mean"]
    # only Batch depends on the scenario flag: the other strategies never
    # retain samples and both scenarios share the epoch budget and stopping rule
    a = A["dgr"] > A["finetune"] and A["l2r"] > A["finetune"] and A["si"] > A["finetune"]
    b = batch > max(A.values())
    c = A["pnn"] <= A["finetune"] and A["cwr"] <= A["finetune"]
    d = L["dgr"] < min(L[m] for m in ("finetune", "l2r", "si"))
    detail = (f"ACC batch={batch:.3f} " + " ".join(f"{m}={v:.3f}" for m, v in A.items())
              + "; LCA " + " ".join(f"{m}={v:.3f}" for m, v in L.items())
              + f"; (a)={a} (b)={b} (c)={c} (d)={d} ({elapsed / 60:.1f} min)")
    record(7, a and b and c and d and elapsed < 30 * 60, detail)


# --- 8 --------------------------------------------------------------------

def pipeline(root: Path, monkeypatch):
    monkeypatch.chdir(root)
    assert cli.main(["synth", "--out", "raw"]) == 0
    assert cli.main(["sample", "--dataset", "raw", "--sessions", "3", "--seed", "11", "--out", "sampled"]) == 0
    assert cli.main(["train", "--dataset", "sampled", "--sessions", "3", "--methods", "all", "--seeds", "0,1",
                     "--epochs", "10", "--out", "runs", "--set", "eval_every=5", "--set", "gen_epochs=5"]) == 0
    assert cli.main(["report", "runs", "--out", "report"]) == 0
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_pipeline_determinism(tmp_path, monkeypatch):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = pipeline(tmp_path / "a", monkeypatch)
    second = pipeline(tmp_path / "b", monkeypatch)
    differ = [str(k) for k in first if first[k] != second.get(k)]
    ok = first.keys() == second.keys() and not differ and Path("report/report.tsv") in first
    record(8, ok, f"{len(first)} files compared byte for byte, {len(differ)} differ")
