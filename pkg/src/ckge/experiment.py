"""Experiment grid: run (method x seed) cells over sampled sessions and summarise them.

Run layout under ``cfg.out``::

    <run-id>/config.txt                     effective (resolved) configuration
    <run-id>/<method>/session_<n>/model.ckpt
    <run-id>/<method>/session_<n>/method_state.ckpt
    <run-id>/<method>/session_<n>/generator.ckpt   (dgr only)
    <run-id>/<method>/session_<n>/trace.tsv
    <run-id>/<method>/session_<n>/row.json         written last; marks the session done
    <run-id>/<method>/result.json

``<run-id>`` is ``<model>_<scenario>_seed<k>``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import RunConfig, parse_config_text
from .generator import save_generator
from .kg import Vocab, load_graph
from .methods import (
    SessionContext, init_method_state, load_method_state, method_param_count, save_method_state,
    train_session,
)
from .models import expand_model, init_model, load_model, save_model
from .sampler import LocalIds, SessionDataset, load_sessions, local_ids, sample_sessions
from .utils import DataError, make_rng

logger = logging.getLogger(__name__)

BYTES_PER_PARAM = 8
BYTES_PER_TRIPLE = 12


def load_dataset(cfg: RunConfig) -> tuple[Vocab, list[SessionDataset]]:
    """Sampled sessions if ``cfg.dataset`` holds them, otherwise sample the raw graph."""
    root = Path(cfg.dataset)
    if (root / "sessions").is_dir():
        vocab, sessions = load_sessions(root)
        if len(sessions) != cfg.sessions:
            logger.warning("dataset has %d sessions; config asked for %d", len(sessions), cfg.sessions)
        return vocab, sessions
    splits = load_graph(root)
    return splits.vocab, sample_sessions(splits, cfg.sessions, cfg.sample_seed, cfg.filter_mode)


@dataclass
class LocalData:
    """Session splits renumbered to embedding rows (-1 marks ids not yet observed)."""

    ids: LocalIds
    train: list[np.ndarray]
    valid: list[np.ndarray]
    test: list[np.ndarray]

    @property
    def num_sessions(self) -> int:
        return len(self.train)

    @property
    def key_entities(self) -> int:
        return max(1, self.ids.entity_counts[-1])

    @property
    def key_relations(self) -> int:
        return max(1, self.ids.relation_counts[-1])

    def known(self, i: int, extra=None) -> ev.FilterIndex:
        """Filter set after session ``i``: observed train, this session's valid/test, plus ``extra``."""
        parts = self.train[:i + 1] + [self.valid[i], self.test[i]]
        if extra is not None:
            parts.append(extra)
        t = np.concatenate(parts)
        t = t[(t >= 0).all(axis=1)]
        return ev.FilterIndex(t, self.key_entities, self.key_relations)


def localise(vocab: Vocab, sessions: list[SessionDataset]) -> LocalData:
    ids = local_ids(sessions, vocab.num_entities, vocab.num_relations)
    return LocalData(ids, [ids.to_local(s.train) for s in sessions], [ids.to_local(s.valid) for s in sessions],
                     [ids.to_local(s.test) for s in sessions])


def session_context(data: LocalData, i: int, seed: int) -> SessionContext:
    ne, nr = data.ids.entity_counts, data.ids.relation_counts
    return SessionContext(
        index=i, train=data.train[i], valid=data.valid[i], num_entities=ne[i], num_relations=nr[i],
        prev_entities=ne[i - 1] if i else 0, prev_relations=nr[i - 1] if i else 0,
        valid_filter=data.known(i), seed=seed,
    )


def matrix_row(model, data: LocalData, i: int, tie: str) -> tuple[list[float], list[float]]:
    """MRR and Hits@10 on every session's test set after training session ``i``."""
    mrr, hits = [], []
    for j in range(data.num_sessions):
        if len(data.test[j]) == 0:
            mrr.append(math.nan)
            hits.append(math.nan)
            continue
        m, h = ev.eval_split(model, data.test[j], data.ids.entity_counts[i], data.known(i, data.test[j]), tie)
        mrr.append(m)
        hits.append(h)
    return mrr, hits


def run_id(cfg: RunConfig, seed: int) -> str:
    return f"{cfg.model}_{cfg.scenario}_seed{seed}"


def run_cell(method: str, seed: int, cfg: RunConfig, data: LocalData, out_dir) -> dict:
    """Train ``method`` through every session, resuming finished sessions from disk."""
    out_dir = Path(out_dir)
    N = data.num_sessions
    ne, nr = data.ids.entity_counts, data.ids.relation_counts
    model = None
    state = init_method_state(method)
    rows, traces = [], []
    for i in range(N):
        sdir = out_dir / f"session_{i}"
        if (sdir / "row.json").is_file():
            model = load_model(sdir / "model.ckpt")[0]
            state = load_method_state(sdir / "method_state.ckpt")
            traces.append(ev.TrainTrace.from_tsv((sdir / "trace.tsv").read_text()))
            rows.append(json.loads((sdir / "row.json").read_text()))
            logger.info("%s seed %d session %d: resumed", method, seed, i)
            continue
        if model is None:
            model = init_model(cfg.model, ne[i], nr[i], int(cfg.dim), make_rng(seed, "init", i))
        else:
            model = expand_model(model, ne[i], nr[i], make_rng(seed, "expand", i))
        ctx = session_context(data, i, seed)
        stored_before = state.stored_triples  # samples kept from earlier sessions
        model, state, trace = train_session(method, model, state, ctx, cfg)
        mrr, hits = matrix_row(model, data, i, cfg.tie_policy)
        row = {"mrr": mrr, "hits10": hits,
               "model_bytes": BYTES_PER_PARAM * method_param_count(state, model),
               "stored_bytes": BYTES_PER_TRIPLE * stored_before}
        save_model(sdir / "model.ckpt", model, session=i)
        save_method_state(sdir / "method_state.ckpt", state)
        if state.generator is not None:
            save_generator(sdir / "generator.ckpt", state.generator, session=i)
        (sdir / "trace.tsv").write_text(trace.to_tsv(), encoding="utf-8")
        (sdir / "row.json").write_text(json.dumps(row), encoding="utf-8")
        rows.append(row)
        traces.append(trace)
        logger.info("%s seed %d session %d: diag hits10 %.4f mrr %.4f (%d epochs)",
                    method, seed, i, hits[i], mrr[i], trace.solver_epochs)
    result = {
        "method": method, "seed": seed, "sessions": N,
        "mrr": [r["mrr"] for r in rows], "hits10": [r["hits10"] for r in rows],
        "model_bytes": [r["model_bytes"] for r in rows],
        "stored_bytes": [r["stored_bytes"] for r in rows],
        "total_train_bytes": BYTES_PER_TRIPLE * int(sum(len(t) for t in data.train)),
        "traces": [t.to_dict() for t in traces],
    }
    (out_dir / "result.json").write_text(json.dumps(result, indent=1), encoding="utf-8")
    return result


def run_grid(cfg: RunConfig, vocab: Vocab | None = None, sessions: list[SessionDataset] | None = None) -> list[Path]:
    """Run every (method, seed) cell; returns the run directories written."""
    if sessions is None:
        vocab, sessions = load_dataset(cfg)
    data = localise(vocab, sessions)
    cfg = cfg.resolved(vocab.num_entities)
    dirs = []
    for seed in cfg.seeds:
        rdir = Path(cfg.out) / run_id(cfg, seed)
        rdir.mkdir(parents=True, exist_ok=True)
        (rdir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        for method in cfg.methods:
            run_cell(method, seed, cfg, data, rdir / method)
        dirs.append(rdir)
    return dirs


def build_matrix(method_dir, data: LocalData, tie: str = "optimistic") -> tuple[np.ndarray, np.ndarray]:
    """Recompute the (MRR, Hits@10) matrices from saved per-session checkpoints."""
    method_dir = Path(method_dir)
    mrr, hits = [], []
    for i in range(data.num_sessions):
        path = method_dir / f"session_{i}" / "model.ckpt"
        if not path.is_file():
            raise DataError(f"missing checkpoint {path}")
        m, h = matrix_row(load_model(path)[0], data, i, tie)
        mrr.append(m)
        hits.append(h)
    return np.array(mrr), np.array(hits)


# --- summaries ------------------------------------------------------------

MEASURES = ("acc", "fwt", "bwt", "plus_bwt", "rem")


def cell_measures(result: dict) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for kind in ("hits10", "mrr"):
        M = np.asarray(result[kind], dtype=np.float64)
        for name in MEASURES:
            out[f"{name}_{kind}"] = getattr(ev, name)(M)
    out["ms"] = ev.ms(result["model_bytes"])
    out["sss"] = ev.sss(result["stored_bytes"], result["total_train_bytes"])
    traces = [ev.TrainTrace.from_dict(t) for t in result["traces"]]
    out["lca"] = float(np.mean([ev.trace_lca(t, "hits10", True) for t in traces]))
    out["lca_solver_only"] = float(np.mean([ev.trace_lca(t, "hits10", False) for t in traces]))
    out["lca_mrr"] = float(np.mean([ev.trace_lca(t, "mrr", True) for t in traces]))
    return out


def _mean_std(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def collect_runs(roots) -> dict:
    """Aggregate every ``result.json`` below ``roots`` into the report structure."""
    groups: dict[tuple[str, str, str], dict] = {}
    configs = {}
    for root in roots:
        root = Path(root)
        run_dirs = [root] if (root / "config.txt").is_file() else sorted(p.parent for p in root.glob("*/config.txt"))
        for rdir in run_dirs:
            cfg = RunConfig().update(_read_config(rdir / "config.txt"))
            configs[rdir.name] = cfg.to_dict()
            for method in cfg.methods:
                key = (cfg.model, cfg.scenario, method)
                g = groups.setdefault(key, {"seeds": [], "cells": [], "incomplete": []})
                res_path = rdir / method / "result.json"
                seed = int(rdir.name.rsplit("seed", 1)[-1]) if "seed" in rdir.name else None
                if res_path.is_file():
                    result = json.loads(res_path.read_text())
                    g["seeds"].append(result["seed"])
                    g["cells"].append(result)
                else:
                    done = len(list((rdir / method).glob("session_*/row.json")))
                    g["incomplete"].append({"run": rdir.name, "seed": seed, "sessions_done": done})
    report = {"configs": configs, "groups": []}
    for (model, scenario, method), g in sorted(groups.items()):
        per_seed = [cell_measures(c) for c in g["cells"]]
        names = list(per_seed[0]) if per_seed else []
        summary = {}
        for name in names:
            mean, std = _mean_std([p[name] for p in per_seed])
            summary[name] = {"mean": mean, "std": std}
        matrices = {}
        for kind in ("hits10", "mrr"):
            if g["cells"]:
                stack = np.array([c[kind] for c in g["cells"]], dtype=np.float64)
                matrices[kind] = {"mean": stack.mean(axis=0).tolist(), "std": stack.std(axis=0).tolist()}
        report["groups"].append({
            "model": model, "scenario": scenario, "method": method, "seeds": g["seeds"],
            "measures": summary, "per_seed": per_seed, "matrices": matrices,
            "traces": {str(c["seed"]): c["traces"] for c in g["cells"]},
            "model_bytes": {str(c["seed"]): c["model_bytes"] for c in g["cells"]},
            "stored_bytes": {str(c["seed"]): c["stored_bytes"] for c in g["cells"]},
            "incomplete": g["incomplete"],
        })
    return report


def _read_config(path: Path) -> dict:
    return parse_config_text(path.read_text(encoding="utf-8"))


def _fmt(v) -> str:
    return "NA" if v is None else repr(v)


def report_tsv(report: dict) -> str:
    lines = ["model\tscenario\tmethod\tmeasure\tmean\tstd\tn_seeds"]
    for g in report["groups"]:
        if not g["measures"]:
            lines.append(f"{g['model']}\t{g['scenario']}\t{g['method']}\tNA\tNA\tNA\t0")
        for name, ms in g["measures"].items():
            lines.append(f"{g['model']}\t{g['scenario']}\t{g['method']}\t{name}\t{_fmt(ms['mean'])}\t"
                         f"{_fmt(ms['std'])}\t{len(g['seeds'])}")
    return "\n".join(lines) + "\n"


def matrices_tsv(report: dict) -> str:
    lines = ["model\tscenario\tmethod\tmeasure\ttrain_session\ttest_session\tmean\tstd"]
    for g in report["groups"]:
        for kind, mat in g["matrices"].items():
            for i, row in enumerate(mat["mean"]):
                for j, v in enumerate(row):
                    lines.append(f"{g['model']}\t{g['scenario']}\t{g['method']}\t{kind}\t{i}\t{j}\t"
                                 f"{v!r}\t{mat['std'][i][j]!r}")
    return "\n".join(lines) + "\n"


def write_report(roots, out_dir) -> dict:
    """Write ``report.json``, ``report.tsv`` and ``matrices.tsv`` into ``out_dir``."""
    report = collect_runs(roots)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True, allow_nan=True),
                                         encoding="utf-8")
    (out_dir / "report.tsv").write_text(report_tsv(report), encoding="utf-8")
    (out_dir / "matrices.tsv").write_text(matrices_tsv(report), encoding="utf-8")
    gaps = [(g["method"], x) for g in report["groups"] for x in g["incomplete"]]
    for method, gap in gaps:
        logger.warning("incomplete: %s %s (%d sessions done)", gap["run"], method, gap["sessions_done"])
    return report
