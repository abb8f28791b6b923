"""Acceptance checks covering the whole pipeline, one verdict line each.

Every test prints ``ACCEPTANCE <n> (<name>): PASS|FAIL`` before asserting,
and conftest repeats the collected lines in a terminal summary section so
the per-check outcome is visible even under output capture.

Check 9 compares ingestion counts on the full benchmark dataset; it needs
the data on disk and is skipped unless the FB15K_DIR environment variable
points at a directory with train.txt / valid.txt / test.txt.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_graph, random_triples
from oracles import all_witnessed_paths, full_rank_oracle
from pathkge import cli
from pathkge.cli import SyntheticKGSpec, generate_synthetic_kg
from pathkge.evaluator import evaluate, rank_entities
from pathkge.kgdata import augment_inverse, load_dataset
from pathkge.models import (
    ModelParams,
    grad_score_transr,
    path_energy,
    path_energy_and_grads,
    score_transr,
)
from pathkge.paths import PathTable, build_path_table, enumerate_paths, pcra_resource
from pathkge.trainer import TrainConfig, init_transe, train

GRID = 2.0 ** -10  # exact in float32, so central differences stay exact


def record(n: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {n:2d} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def record_skip(n: int, name: str, why: str) -> None:
    line = f"ACCEPTANCE {n:2d} ({name}): SKIP ({why})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip(why)


def load_graph_dir(d: Path):
    return augment_inverse(
        load_dataset(d / "train.txt", d / "valid.txt", d / "test.txt")
    )


def test_01_resource_allocation_matches_walk_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    worst = 0.0
    ok = True
    for _ in range(500):
        triples, n_ent, n_rel = random_triples(rng, max_entities=8, max_relations=4)
        g = make_graph(triples, n_entities=n_ent, n_relations=n_rel)
        edges = [tuple(int(x) for x in row) for row in g.train]
        for h in range(n_ent):
            for t in range(n_ent):
                if h == t:
                    continue
                mined = dict(enumerate_paths(g, h, t))
                oracle = all_witnessed_paths(edges, h, t, g.n_relations)
                ok = ok and set(mined) == set(oracle)
                for path, v_ref in oracle.items():
                    err = abs(pcra_resource(g, h, path, t) - v_ref)
                    worst = max(worst, err)
                    checked += 1
    elapsed = time.perf_counter() - t0
    ok = ok and worst <= 1e-12 and elapsed < 10.0
    record(
        1, "resource-vs-walk-oracle", ok,
        f"{checked} path values, max err {worst:.2e}, {elapsed:.1f}s",
    )


def test_02_resource_conservation():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(200):
        n_ent = int(rng.integers(3, 9))
        n_rel = int(rng.integers(1, 4))
        triples = {
            (int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent)))
            for _ in range(rng.integers(2, 2 * n_ent + 1))
        }
        h = int(rng.integers(n_ent))
        r1 = int(rng.integers(n_rel))
        r2 = int(rng.integers(n_rel))
        # Patch the graph so no resource leaks: the start node has an r1
        # edge and every r1 child has at least one r2 edge.
        if not any(hh == h and rr == r1 for hh, rr, _ in triples):
            triples.add((h, r1, int(rng.integers(n_ent))))
        for y in {t for hh, rr, t in triples if hh == h and rr == r1}:
            if not any(hh == y and rr == r2 for hh, rr, _ in triples):
                triples.add((y, r2, int(rng.integers(n_ent))))
        g = make_graph(sorted(triples), n_entities=n_ent, n_relations=n_rel)
        mids = {t for hh, rr, t in triples if hh == h and rr == r1}
        ends = {t for hh, rr, t in triples if hh in mids and rr == r2}
        total = sum(pcra_resource(g, h, (r1, r2), t) for t in sorted(ends))
        worst = max(worst, abs(total - 1.0))
    record(2, "resource-conservation", worst <= 1e-12, f"max |sum-1| {worst:.2e}")


def grid_params(rng: np.random.Generator, n_ent: int, n_rel: int, d: int) -> ModelParams:
    def draw(*shape):
        return (rng.integers(-512, 512, size=shape) * GRID).astype(np.float32)

    return ModelParams(draw(n_ent, d), draw(n_rel, d), draw(n_rel, d, d))


def central_diff(f, arr: np.ndarray, idx, delta: float = GRID) -> float:
    orig = arr[idx]
    arr[idx] = orig + delta
    hi = f()
    arr[idx] = orig - delta
    lo = f()
    arr[idx] = orig
    return (hi - lo) / (2.0 * delta)


def test_03_analytic_gradients_match_central_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    worst = 0.0

    def check(analytic: float, numeric: float) -> None:
        nonlocal worst
        worst = max(worst, abs(analytic - numeric) / max(abs(numeric), 1.0))

    for i in range(100):
        d = 5 if i < 50 else 20
        params = grid_params(rng, 4, 3, d)
        h, t = 0, 1
        r = int(rng.integers(3))

        score = lambda: score_transr(params, h, r, t)
        gh, gt, gr, gM = grad_score_transr(params, h, r, t)
        for j in range(d):
            check(gh[j], central_diff(score, params.entity_emb, (h, j)))
            check(gt[j], central_diff(score, params.entity_emb, (t, j)))
            check(gr[j], central_diff(score, params.relation_emb, (r, j)))
        for a in range(d):
            for b in range(d):
                check(gM[a, b], central_diff(score, params.proj, (r, a, b)))

        # Path energy: include repeated relations and paths containing the
        # target so accumulation over occurrences is exercised too.
        if i % 3 == 0:
            path = (r, (r + 1) % 3)
        elif i % 3 == 1:
            path = ((r + 1) % 3, (r + 1) % 3)
        else:
            path = ((r + 1) % 3, (r + 2) % 3)
        rel = float(rng.integers(0, 512) * GRID)
        energy = lambda: path_energy(params, path, r, rel)
        _, gp, grel = path_energy_and_grads(params, path, r, rel)
        for j in range(d):
            for rid in {r, *path}:
                total = path.count(rid) * gp[j] + (grel[j] if rid == r else 0.0)
                check(total, central_diff(energy, params.relation_emb, (rid, j)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 5.0
    record(3, "gradients-vs-differences", ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def synth_graph(tmp: Path, seed: int = 21):
    spec = SyntheticKGSpec(
        n_entities=20, base_facts_per_relation=40, seed=seed
    )
    generate_synthetic_kg(spec, tmp)
    return load_graph_dir(tmp)


def test_04_norm_constraints_hold_after_training(tmp_path):
    g = synth_graph(tmp_path / "data")
    table = build_path_table(g)
    cfg = TrainConfig(
        stage="ptransr", dim_entity=8, dim_relation=8, lr=0.01,
        batch_size=100, epochs=6, warm_epochs=4, warm_lr=0.05, seed=29,
    )
    params, _ = train(g, table, cfg)
    rows = np.vstack(
        [params.entity_emb.astype(np.float64), params.relation_emb.astype(np.float64)]
    )
    rng = np.random.default_rng(5)
    sample = rows[rng.integers(len(rows), size=1000)]
    worst = float(np.abs(np.linalg.norm(sample, axis=1) - 1.0).max())
    record(4, "norm-constraints", worst <= 1e-5, f"max |norm-1| {worst:.2e}")


def test_05_empty_table_reduces_to_projected_baseline(tmp_path):
    g = synth_graph(tmp_path / "data")
    cfg = TrainConfig(
        stage="transr", dim_entity=8, dim_relation=8, lr=0.01,
        batch_size=100, epochs=10, warm_epochs=3, warm_lr=0.05, seed=3,
    )
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    train(g, None, cfg, out_dir=out_a)
    train(
        g, PathTable.empty(g.n_entities), replace(cfg, stage="ptransr"),
        out_dir=out_b,
    )
    pa = ModelParams.load(out_a / "model.ptrm")
    pb = ModelParams.load(out_b / "model.ptrm")
    same = (
        np.array_equal(pa.entity_emb, pb.entity_emb)
        and np.array_equal(pa.relation_emb, pb.relation_emb)
        and np.array_equal(pa.proj, pb.proj)
    )
    record(5, "empty-table-equivalence", same, "10 epochs, models bitwise equal")


def test_06_windowed_ranking_matches_exhaustive():
    rng = np.random.default_rng(17)
    train_triples = [
        (int(rng.integers(10)), int(rng.integers(3)), int(rng.integers(10)))
        for _ in range(30)
    ]
    test_triples = [
        (int(rng.integers(10)), int(rng.integers(3)), int(rng.integers(10)))
        for _ in range(6)
    ]
    g = make_graph(train_triples, test=test_triples, n_entities=10, n_relations=3)
    table = build_path_table(g, reliability_floor=0.0)
    params = ModelParams.random(g.n_entities, g.n_relations, 5, 4, rng)
    ok = True
    for h, r, t in test_triples:
        for slot in ("head", "tail"):
            res = rank_entities(params, table, g, (h, r, t), slot, rerank_k=10)
            raw, filt = full_rank_oracle(params, table, g, h, r, t, slot)
            ok = ok and res.raw_rank == raw and res.filtered_rank == filt
    record(6, "full-window-vs-exhaustive", ok, "12 instances, raw and filtered")


def test_07_paths_beat_projected_baseline_on_synthetic_kg(tmp_path):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(1, 6):
        d = tmp_path / f"kg{seed}"
        generate_synthetic_kg(SyntheticKGSpec(seed=seed), d)
        g = load_graph_dir(d)
        table = build_path_table(g)
        base = TrainConfig(
            stage="transr", dim_entity=20, dim_relation=20,
            lr=0.01, margin1=1.0, margin2=0.5, batch_size=100, epochs=40,
            seed=seed, warm_lr=0.05, warm_epochs=100,
        )
        warm = init_transe(g, replace(base, stage="transe", lr=0.05, epochs=100))
        plain, _ = train(g, None, base, init_params=warm)
        pathful, _ = train(g, table, replace(base, stage="ptransr"), init_params=warm)
        r_plain = evaluate(
            plain, PathTable.empty(g.n_entities), g, split="test",
            rerank_k=g.n_entities,
        )
        r_path = evaluate(pathful, table, g, split="test", rerank_k=g.n_entities)
        gaps.append(r_path.hits10_filter - r_plain.hits10_filter)
    elapsed = time.perf_counter() - t0
    mean_gap = float(np.mean(gaps))
    ok = mean_gap >= 5.0 and elapsed < 300.0
    per_seed = "/".join(f"{gap:+.1f}" for gap in gaps)
    record(
        7, "paths-beat-baseline", ok,
        f"Hits@10 gap {per_seed}, mean {mean_gap:+.2f} pts, {elapsed:.0f}s",
    )


def test_08_filtered_metrics_never_worse(tmp_path):
    g = synth_graph(tmp_path / "data", seed=33)
    table = build_path_table(g)
    cfg = TrainConfig(
        stage="ptransr", dim_entity=6, dim_relation=6, lr=0.01,
        batch_size=100, epochs=2, warm_epochs=2, warm_lr=0.05, seed=1,
    )
    params, _ = train(g, table, cfg)
    # evaluate() itself asserts these inequalities on every filtered run;
    # this check makes the guarantee visible on a concrete report.
    report = evaluate(params, table, g, split="test", rerank_k=g.n_entities)
    ok = (
        report.hits10_filter >= report.hits10_raw
        and report.mean_rank_filter <= report.mean_rank_raw
    )
    record(
        8, "filter-invariants", ok,
        f"hits {report.hits10_raw:.1f}->{report.hits10_filter:.1f}, "
        f"mr {report.mean_rank_raw:.1f}->{report.mean_rank_filter:.1f}",
    )


def test_09_fb15k_ingestion_counts():
    root = os.environ.get("FB15K_DIR")
    if not root:
        record_skip(9, "fb15k-counts", "FB15K_DIR not set")
    d = Path(root)
    missing = [f for f in ("train.txt", "valid.txt", "test.txt") if not (d / f).is_file()]
    if missing:
        record(9, "fb15k-counts", False, f"missing {', '.join(missing)} under {d}")
    g = load_graph_dir(d)
    counts = {
        "entities": g.n_entities,
        "relations": g.n_relations_orig,
        "train": len(g.original_train),
        "valid": len(g.valid),
        "test": len(g.test),
        "train_augmented": len(g.train),
    }
    expected = {
        "entities": 14951,
        "relations": 1345,
        "train": 483142,
        "valid": 50000,
        "test": 59071,
        "train_augmented": 966284,
    }
    record(9, "fb15k-counts", counts == expected, f"{counts}")


def test_10_rerun_artifacts_byte_identical(tmp_path, monkeypatch):
    def pipeline(root: Path) -> None:
        root.mkdir()
        monkeypatch.chdir(root)
        assert cli.main(
            [
                "synth-kg", "--entities", "20", "--base-facts", "40",
                "--seed", "5", "--out", "data",
            ]
        ) == 0
        assert cli.main(["prepare", "--data", "data", "--out", "prep"]) == 0
        assert cli.main(
            ["extract-paths", "--data", "data", "--out", "paths.ptbl",
             "--dump-tsv", "paths.tsv"]
        ) == 0
        assert cli.main(
            [
                "train", "--data", "data", "--stage", "ptransr",
                "--table", "paths.ptbl", "--dim-entity", "6",
                "--dim-relation", "6", "--warm-epochs", "2", "--epochs", "2",
                "--seed", "11", "--out", "run",
            ]
        ) == 0
        assert cli.main(
            [
                "evaluate", "--data", "data", "--model", "run/model.ptrm",
                "--table", "paths.ptbl", "--rerank-k", "15", "--out", "eval",
            ]
        ) == 0

    pipeline(tmp_path / "first")
    pipeline(tmp_path / "second")
    artifacts = [
        "data/train.txt", "data/valid.txt", "data/test.txt", "data/spec.json",
        "prep/stats.json", "prep/entity2id.tsv", "prep/relation2id.tsv",
        "paths.ptbl", "paths.tsv",
        "run/model.ptrm", "run/config.txt",
        "eval/report.txt", "eval/report.json", "eval/ranks.csv",
    ]
    differing = [
        name
        for name in artifacts
        if (tmp_path / "first" / name).read_bytes()
        != (tmp_path / "second" / name).read_bytes()
    ]
    record(
        10, "rerun-determinism", not differing,
        "all artifacts byte-identical" if not differing else f"differ: {differing}",
    )
