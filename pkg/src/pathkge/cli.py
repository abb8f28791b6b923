"""Command-line pipeline for the embedding engine.

Verbs: prepare (ingest + vocab dumps), extract-paths (mine the path
table), train (staged SGD), evaluate (entity-prediction report),
synth-kg (desk-scale dataset generator), inspect (qualitative probes).

Every verb validates its inputs before touching the filesystem, exits
nonzero with a one-line message on error, and is byte-deterministic
given identical inputs, seed, and a single worker.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pathkge.evaluator import (
    DEFAULT_RERANK_K,
    EvalError,
    evaluate,
    write_ranks_csv,
    write_report_json,
    write_report_text,
)
from pathkge.kgdata import (
    CATEGORY_LABELS,
    FREQUENCY_BUCKETS,
    DatasetError,
    KnowledgeGraph,
    augment_inverse,
    classify_relations,
    frequency_bucket,
    load_dataset,
    relation_train_counts,
    write_vocab_dumps,
)
from pathkge.models import ModelError, ModelParams, compose_path
from pathkge.paths import (
    DEFAULT_PAIR_CAP,
    DEFAULT_RELIABILITY_FLOOR,
    PathError,
    PathTable,
    build_path_table,
)
from pathkge.trainer import (
    TrainConfig,
    TrainError,
    load_config_file,
    train,
)

DATA_DIR_ENV = "PATHKGE_DATA_DIR"
SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


class SynthError(ValueError):
    """Infeasible or malformed synthetic-KG request."""


# -- synthetic dataset generator ---------------------------------------------


@dataclass(frozen=True)
class SyntheticKGSpec:
    """Recipe for a small KG whose target relation is path-predictable.

    Facts of every non-target relation are sampled uniformly; each
    composition rule (a, b -> c) then materializes (x, c, z) wherever a
    chain x -a-> y -b-> z exists.  A fraction of the composed facts is
    held out for valid/test, so a model that exploits 2-hop paths has a
    real advantage on them.  Noise facts are uniform random triples.
    """

    n_entities: int = 50
    n_relations: int = 3
    composition_rules: tuple[tuple[int, int, int], ...] = ((0, 1, 2),)
    base_facts_per_relation: int = 120
    noise_rate: float = 0.1
    holdout: float = 0.2
    seed: int = 7

    def validate(self) -> None:
        if self.n_entities < 3:
            raise SynthError("need at least 3 entities to form 2-hop chains")
        if self.n_relations < 1:
            raise SynthError("need at least 1 relation")
        if not 0.0 <= self.noise_rate < 1.0:
            raise SynthError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        if not 0.0 < self.holdout < 1.0:
            raise SynthError(f"holdout must be in (0, 1), got {self.holdout}")
        if self.base_facts_per_relation < 1:
            raise SynthError("base_facts_per_relation must be >= 1")
        max_pairs = self.n_entities * (self.n_entities - 1)
        if self.base_facts_per_relation > max_pairs:
            raise SynthError(
                f"{self.base_facts_per_relation} base facts exceed the "
                f"{max_pairs} distinct ordered entity pairs"
            )
        targets = set()
        for rule in self.composition_rules:
            if len(rule) != 3:
                raise SynthError(f"rule {rule!r} must be (r1, r2, r3)")
            for rid in rule:
                if not 0 <= rid < self.n_relations:
                    raise SynthError(
                        f"rule {rule!r} references relation {rid}, but only "
                        f"{self.n_relations} relations exist"
                    )
            targets.add(rule[2])
        for a, b, _ in self.composition_rules:
            if a in targets or b in targets:
                raise SynthError(
                    "a composed relation cannot feed another rule; chains of "
                    "rules would lose their train witnesses to the holdout"
                )
        if len(targets) == len(set(range(self.n_relations))):
            raise SynthError(
                "every relation is a composition target; no base facts possible"
            )

    def as_dict(self) -> dict:
        return {
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "composition_rules": [list(r) for r in self.composition_rules],
            "base_facts_per_relation": self.base_facts_per_relation,
            "noise_rate": self.noise_rate,
            "holdout": self.holdout,
            "seed": self.seed,
        }


def _sample_pairs(rng: np.random.Generator, n: int, count: int) -> list[tuple[int, int]]:
    """Distinct ordered (h, t) pairs with h != t, in sorted order."""
    codes = rng.choice(n * (n - 1), size=count, replace=False)
    out = []
    for code in np.sort(codes).tolist():
        h, rem = divmod(code, n - 1)
        t = rem + (rem >= h)  # skip the diagonal
        out.append((h, t))
    return out


def generate_synthetic_kg(spec: SyntheticKGSpec, out_dir: str | Path) -> dict:
    """Write train/valid/test TSVs plus a spec.json echo; return the summary."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_entities
    targets = {c for _, _, c in spec.composition_rules}
    base_rels = [r for r in range(spec.n_relations) if r not in targets]

    base: set[tuple[int, int, int]] = set()
    pairs_of: dict[int, set[tuple[int, int]]] = {}
    for r in base_rels:
        pairs = _sample_pairs(rng, n, spec.base_facts_per_relation)
        pairs_of[r] = set(pairs)
        base.update((h, r, t) for h, t in pairs)

    composed: set[tuple[int, int, int]] = set()
    for a, b, c in spec.composition_rules:
        succ: dict[int, list[int]] = {}
        for y, z in pairs_of[b]:
            succ.setdefault(y, []).append(z)
        produced = {
            (x, c, z)
            for x, y in pairs_of[a]
            for z in succ.get(y, ())
            if x != z
        }
        if not produced:
            raise SynthError(
                f"rule ({a},{b}->{c}) produced no composed facts; the spec is "
                f"infeasible at this density"
            )
        composed |= produced

    composed_list = sorted(composed)
    n_eval = int(round(spec.holdout * len(composed_list)))
    if n_eval < 2:
        raise SynthError(
            "holdout selects fewer than 2 composed facts; raise the density "
            "or the holdout fraction"
        )
    perm = rng.permutation(len(composed_list))
    eval_facts = [composed_list[i] for i in perm[:n_eval].tolist()]
    train_comp = sorted(composed_list[i] for i in perm[n_eval:].tolist())
    n_valid = max(1, n_eval // 3)
    valid_facts = sorted(eval_facts[:n_valid])
    test_facts = sorted(eval_facts[n_valid:])

    clean_train = sorted(base) + train_comp
    clean_train.sort()
    n_clean = len(clean_train)
    n_noise = int(round(spec.noise_rate / (1.0 - spec.noise_rate) * n_clean))
    taken = base | composed
    noise: set[tuple[int, int, int]] = set()
    attempts = 0
    while len(noise) < n_noise:
        attempts += 1
        if attempts > 100 * max(n_noise, 1):
            raise SynthError("noise sampling failed to find enough free triples")
        h = int(rng.integers(n))
        t = int(rng.integers(n))
        r = int(rng.integers(spec.n_relations))
        cand = (h, r, t)
        if h == t or cand in taken or cand in noise:
            continue
        noise.add(cand)
    train_facts = sorted(clean_train + sorted(noise))

    # Every held-out composed fact must keep a 2-hop witness in train.
    train_set = set(train_facts)
    witness_pairs: dict[int, set[tuple[int, int]]] = {
        r: {(h, t) for h, rr, t in train_set if rr == r}
        for r in range(spec.n_relations)
    }
    for x, c, z in valid_facts + test_facts:
        ok = any(
            rc == c
            and any(
                (x, y) in witness_pairs[a] and (y, z) in witness_pairs[b]
                for y in range(n)
            )
            for a, b, rc in spec.composition_rules
        )
        if not ok:
            raise SynthError(
                f"held-out fact ({x},{c},{z}) lost its 2-hop train witness"
            )

    width = len(str(n - 1))
    ename = [f"e{i:0{width}d}" for i in range(n)]
    rname = [f"r{j}" for j in range(spec.n_relations)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fname, rows in (
        ("train.txt", train_facts),
        ("valid.txt", valid_facts),
        ("test.txt", test_facts),
    ):
        with open(out / fname, "w", encoding="utf-8") as fh:
            for h, r, t in rows:
                fh.write(f"{ename[h]}\t{rname[r]}\t{ename[t]}\n")

    summary = {
        "spec": spec.as_dict(),
        "counts": {
            "base_facts": len(base),
            "composed_facts": len(composed_list),
            "train": len(train_facts),
            "valid": len(valid_facts),
            "test": len(test_facts),
            "noise": len(noise),
        },
        "column_order": "head\trelation\ttail",
    }
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


# -- shared plumbing ---------------------------------------------------------


def _data_dir(args: argparse.Namespace) -> Path:
    raw = args.data or os.environ.get(DATA_DIR_ENV)
    if not raw:
        raise DatasetError(
            f"no dataset directory given (pass --data or set {DATA_DIR_ENV})"
        )
    d = Path(raw)
    missing = [f for f in SPLIT_FILES if not (d / f).is_file()]
    if missing:
        raise DatasetError(f"dataset dir {d} is missing {', '.join(missing)}")
    return d


def _load_graph(args: argparse.Namespace) -> KnowledgeGraph:
    d = _data_dir(args)
    order = getattr(args, "order", "hrt").upper()
    g = load_dataset(
        d / "train.txt", d / "valid.txt", d / "test.txt", column_order=order
    )
    return augment_inverse(g)


def _run_dir(args: argparse.Namespace, verb: str, seed: int) -> Path:
    if args.out:
        return Path(args.out)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path("runs") / f"{verb}-{stamp}-seed{seed}"


def _load_table(path: str, n_entities: int) -> PathTable:
    table = PathTable.load(path)
    if table.n_entities != n_entities:
        raise PathError(
            f"path table covers {table.n_entities} entities but the dataset "
            f"has {n_entities}"
        )
    return table


# -- verbs -------------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    out = _run_dir(args, "prepare", 0)
    out.mkdir(parents=True, exist_ok=True)
    write_vocab_dumps(g, out)

    counts = relation_train_counts(g)
    categories = classify_relations(g)
    cat_hist = {label: 0 for label in CATEGORY_LABELS}
    for cat in categories.values():
        if cat is not None:
            cat_hist[cat.category] += 1
    freq_hist = {b: 0 for b in FREQUENCY_BUCKETS}
    for r in range(g.n_relations_orig):
        if counts[r] >= 1:
            freq_hist[frequency_bucket(int(counts[r]))] += 1

    stats = {
        "entities": g.n_entities,
        "relations": g.n_relations_orig,
        "relations_with_inverses": g.n_relations,
        "train": len(g.original_train),
        "train_augmented": len(g.train),
        "valid": len(g.valid),
        "test": len(g.test),
        "relation_categories": cat_hist,
        "relation_frequency_buckets": freq_hist,
    }
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")

    print(f"entities:       {g.n_entities}")
    print(f"relations:      {g.n_relations_orig} ({g.n_relations} with inverses)")
    print(f"train triples:  {len(g.original_train)} ({len(g.train)} augmented)")
    print(f"valid triples:  {len(g.valid)}")
    print(f"test triples:   {len(g.test)}")
    print(f"wrote vocab dumps and stats.json under {out}")
    return 0


def cmd_extract_paths(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    out_file = Path(args.out) if args.out else None
    if out_file is None:
        d = _run_dir(args, "paths", 0)
        d.mkdir(parents=True, exist_ok=True)
        out_file = d / "paths.ptbl"
    stats: dict = {}
    table = build_path_table(
        g, reliability_floor=args.floor, cap=args.cap, workers=args.workers,
        stats=stats,
    )
    out_file.parent.mkdir(parents=True, exist_ok=True)
    table.save(out_file)
    if args.dump_tsv:
        table.dump_tsv(args.dump_tsv)
    print(f"pairs:     {stats['n_pairs']}")
    print(f"paths:     {stats['n_paths']}")
    print(f"entries:   {stats['n_entries']} (of {stats['n_entries_prefilter']} mined)")
    print(f"drop rate: {stats['drop_rate']:.4f} at floor {table.reliability_floor}")
    print(f"wrote {out_file}")
    return 0


_TRAIN_FLAG_KEYS = (
    "stage", "dim_entity", "dim_relation", "lr", "margin", "margin1",
    "margin2", "batch_size", "epochs", "norm", "neg_mode", "seed", "workers",
    "warm_lr", "warm_margin", "warm_epochs", "patience", "checkpoint_every",
)


def cmd_train(args: argparse.Namespace) -> int:
    file_updates: dict[str, str] = {}
    if args.config:
        file_updates = load_config_file(args.config)
    stage = args.stage or file_updates.get("stage", "ptransr")
    cfg = TrainConfig.defaults_for_stage(stage).with_updates(file_updates)
    flag_updates = {
        key: getattr(args, key)
        for key in _TRAIN_FLAG_KEYS
        if getattr(args, key) is not None
    }
    if args.lr_decay:
        flag_updates["lr_decay"] = True
    if args.early_stop:
        flag_updates["early_stop"] = True
    cfg = cfg.with_updates(flag_updates)
    cfg.validate()

    g = _load_graph(args)
    table = None
    if cfg.stage == "ptransr":
        if not args.table:
            raise TrainError(
                "stage ptransr needs a path table (pass --table <file.ptbl>, "
                "produced by extract-paths)"
            )
        if not Path(args.table).is_file():
            raise TrainError(f"path table not found: {args.table}")
        table = _load_table(args.table, g.n_entities)
    init = None
    if args.init:
        if not Path(args.init).is_file():
            raise TrainError(f"warm-start model not found: {args.init}")
        init = ModelParams.load(args.init)

    out = _run_dir(args, "train", cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    params, records = train(g, table, cfg, out_dir=out, init_params=init)
    losses = [rec for rec in records if "loss" in rec]
    if losses:
        last = losses[-1]
        print(
            f"stage {cfg.stage}: {len(losses)} epochs, "
            f"final loss {last['loss']:.6f}, violations {last['violations']}"
        )
    print(f"wrote model.ptrm, config.txt, train_log.jsonl under {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    if not Path(args.model).is_file():
        raise EvalError(f"model file not found: {args.model}")
    params = ModelParams.load(args.model)
    if args.table:
        if not Path(args.table).is_file():
            raise EvalError(f"path table not found: {args.table}")
        table = _load_table(args.table, g.n_entities)
    else:
        table = PathTable.empty(g.n_entities)
    protocol = "raw" if args.protocol == "raw" else "filter"

    report = evaluate(
        params,
        table,
        g,
        split=args.split,
        rerank_k=args.rerank_k,
        tie_policy=args.tie_policy,
        protocol=protocol,
        workers=args.workers,
        category_cutoff=args.category_cutoff,
    )
    out = _run_dir(args, "evaluate", 0)
    out.mkdir(parents=True, exist_ok=True)
    config_echo = {
        "model": str(args.model),
        "table": str(args.table) if args.table else None,
        "split": args.split,
        "rerank_k": args.rerank_k,
        "tie_policy": args.tie_policy,
        "protocol": args.protocol,
        "category_cutoff": args.category_cutoff,
    }
    write_report_text(report, out / "report.txt")
    write_report_json(report, out / "report.json", config=config_echo)
    write_ranks_csv(report, out / "ranks.csv")
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    print(f"wrote report.txt, report.json, ranks.csv under {out}")
    return 0


def cmd_synth_kg(args: argparse.Namespace) -> int:
    rules = []
    for raw in args.rule or ["0,1,2"]:
        parts = raw.split(",")
        if len(parts) != 3:
            raise SynthError(f"--rule expects 'r1,r2,r3', got {raw!r}")
        try:
            rules.append(tuple(int(p) for p in parts))
        except ValueError:
            raise SynthError(f"--rule expects integer relation ids, got {raw!r}")
    spec = SyntheticKGSpec(
        n_entities=args.entities,
        n_relations=args.relations,
        composition_rules=tuple(rules),
        base_facts_per_relation=args.base_facts,
        noise_rate=args.noise,
        holdout=args.holdout,
        seed=args.seed,
    )
    out = _run_dir(args, "synth", spec.seed)
    summary = generate_synthetic_kg(spec, out)
    counts = summary["counts"]
    print(
        f"train {counts['train']} (noise {counts['noise']}), "
        f"valid {counts['valid']}, test {counts['test']} "
        f"({counts['composed_facts']} composed facts total)"
    )
    print(f"wrote dataset under {out}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    if not Path(args.model).is_file():
        raise ModelError(f"model file not found: {args.model}")
    params = ModelParams.load(args.model)
    if params.n_entities != g.n_entities or params.n_relations != g.n_relations:
        raise ModelError("model shape does not match the dataset")
    ent_id = {name: i for i, name in enumerate(g.vocab.entity_names)}
    rel_id = {name: i for i, name in enumerate(g.vocab.relation_names)}

    did_something = False
    if args.entity is not None:
        if args.entity not in ent_id:
            raise DatasetError(f"unknown entity {args.entity!r}")
        e = ent_id[args.entity]
        emb = params.entity_emb.astype(np.float64)
        dist = np.sqrt(np.square(emb - emb[e]).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        print(f"nearest neighbors of {args.entity}:")
        shown = 0
        for idx in order.tolist():
            if idx == e:
                continue
            print(f"  {g.vocab.entity_names[idx]}  {dist[idx]:.6f}")
            shown += 1
            if shown >= args.top:
                break
        did_something = True

    table = None
    if args.table:
        table = _load_table(args.table, g.n_entities)

    def _path_names(rels: tuple[int, ...]) -> str:
        return ",".join(g.vocab.relation_names[r] for r in rels)

    if args.pair is not None:
        if table is None:
            raise PathError("--pair needs --table")
        names = args.pair.split(",")
        if len(names) != 2:
            raise DatasetError(f"--pair expects 'head,tail', got {args.pair!r}")
        for name in names:
            if name not in ent_id:
                raise DatasetError(f"unknown entity {name!r}")
        h, t = ent_id[names[0]], ent_id[names[1]]
        ids, flows = table.paths_for(h, t)
        print(f"stored paths for ({names[0]}, {names[1]}): {len(ids)}")
        r = rel_id.get(args.relation) if args.relation else None
        if args.relation and r is None:
            raise DatasetError(f"unknown relation {args.relation!r}")
        for pid, v in zip(ids.tolist(), flows.tolist()):
            rels = table.path_rels[pid]
            line = f"  {_path_names(rels)}  v={v:.6f}"
            if r is not None:
                rel = table.relatedness(r, pid)
                p = compose_path(params, rels)
                gap = float(
                    np.sqrt(
                        np.square(p - params.relation_emb[r].astype(np.float64)).sum()
                    )
                )
                line += f"  P(r|p)={rel:.6f}  R={rel * v:.6f}  |p-r|={gap:.6f}"
            print(line)
        did_something = True
    elif args.relation is not None:
        if table is None:
            raise PathError("--relation needs --table")
        if args.relation not in rel_id:
            raise DatasetError(f"unknown relation {args.relation!r}")
        r = rel_id[args.relation]
        rows = []
        for pid, rels in enumerate(table.path_rels):
            relatedness = table.relatedness(r, pid)
            if relatedness <= 0.0:
                continue
            p = compose_path(params, rels)
            gap = float(
                np.sqrt(
                    np.square(p - params.relation_emb[r].astype(np.float64)).sum()
                )
            )
            rows.append((relatedness, gap, rels))
        rows.sort(key=lambda row: (-row[0], row[2]))
        print(f"paths related to {args.relation}: {len(rows)}")
        for relatedness, gap, rels in rows[: args.top]:
            print(f"  {_path_names(rels)}  P(r|p)={relatedness:.6f}  |p-r|={gap:.6f}")
        did_something = True

    if not did_something:
        raise DatasetError(
            "nothing to inspect (pass --entity, --pair, or --relation)"
        )
    return 0


# -- argument parsing --------------------------------------------------------


def _add_data_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--data",
        help=f"dataset dir with train/valid/test.txt (default ${DATA_DIR_ENV})",
    )
    sub.add_argument(
        "--order",
        choices=("hrt", "htr"),
        default="hrt",
        help="column order of the TSV files (default hrt)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathkge",
        description="knowledge-graph embeddings with path regularization",
    )
    subs = parser.add_subparsers(dest="verb", required=True)

    p = subs.add_parser("prepare", help="validate a dataset and dump vocab + stats")
    _add_data_args(p)
    p.add_argument("--out", help="output dir (default runs/<stamp>)")
    p.set_defaults(func=cmd_prepare)

    p = subs.add_parser("extract-paths", help="mine the 2-hop path table")
    _add_data_args(p)
    p.add_argument("--floor", type=float, default=DEFAULT_RELIABILITY_FLOOR,
                   help="reliability floor in [0,1) (default %(default)s)")
    p.add_argument("--cap", type=int, default=DEFAULT_PAIR_CAP,
                   help="max stored paths per pair (default %(default)s)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output .ptbl file (default under runs/)")
    p.add_argument("--dump-tsv", help="also write a human-readable TSV dump")
    p.set_defaults(func=cmd_extract_paths)

    p = subs.add_parser("train", help="train one stage of the pipeline")
    _add_data_args(p)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--stage", choices=("transe", "transr", "ptransr"))
    p.add_argument("--table", help="path table (.ptbl), required for ptransr")
    p.add_argument("--init", help="warm-start model file (.ptrm)")
    p.add_argument("--dim-entity", dest="dim_entity", type=int)
    p.add_argument("--dim-relation", dest="dim_relation", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--margin1", type=float)
    p.add_argument("--margin2", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--norm", choices=("L1", "L2"))
    p.add_argument("--neg-mode", dest="neg_mode", choices=("uniform", "bernoulli"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--warm-lr", dest="warm_lr", type=float)
    p.add_argument("--warm-margin", dest="warm_margin", type=float)
    p.add_argument("--warm-epochs", dest="warm_epochs", type=int)
    p.add_argument("--lr-decay", action="store_true", default=None)
    p.add_argument("--early-stop", action="store_true", default=None)
    p.add_argument("--patience", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--out", help="run dir (default runs/train-<stamp>-seed<seed>)")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="entity-prediction metrics for a model")
    _add_data_args(p)
    p.add_argument("--model", required=True, help="model file (.ptrm)")
    p.add_argument("--table", help="path table (.ptbl); omit for a path-free model")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--rerank-k", dest="rerank_k", type=int, default=DEFAULT_RERANK_K)
    p.add_argument("--tie-policy", dest="tie_policy",
                   choices=("pessimistic", "mean"), default="pessimistic")
    p.add_argument("--protocol", choices=("raw", "filter", "both"), default="both")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--category-cutoff", dest="category_cutoff", type=float,
                   default=1.5)
    p.add_argument("--out", help="run dir (default runs/evaluate-<stamp>)")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("synth-kg", help="generate a composition-rule dataset")
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--rule", action="append",
                   help="composition rule 'r1,r2,r3' (repeatable; default 0,1,2)")
    p.add_argument("--base-facts", dest="base_facts", type=int, default=120,
                   help="facts per non-composed relation (default %(default)s)")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", help="dataset dir (default runs/synth-<stamp>-seed<seed>)")
    p.set_defaults(func=cmd_synth_kg)

    p = subs.add_parser("inspect", help="qualitative probes of a trained model")
    _add_data_args(p)
    p.add_argument("--model", required=True, help="model file (.ptrm)")
    p.add_argument("--table", help="path table (.ptbl) for path probes")
    p.add_argument("--entity", help="entity name: print nearest neighbors")
    p.add_argument("--pair", help="'head,tail': print stored paths for the pair")
    p.add_argument("--relation", help="relation name: path-vs-relation distances")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        DatasetError,
        PathError,
        ModelError,
        TrainError,
        EvalError,
        SynthError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
