"""Two-hop relation-path mining with resource-flow reliability scores.

For every ordered entity pair that appears as a train fact, this module
finds the relation sequences (length 1 or 2) connecting the pair and
scores each with the fraction of a unit resource that flows from head to
tail when every node splits its resource evenly among its children along
the next relation.  Globally aggregated flows give, for each path, how
strongly it predicts each direct relation; the product of that
relatedness and the per-pair flow is the path's reliability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from pathkge.kgdata import DatasetError, KnowledgeGraph

RelPath = tuple[int, ...]

MAGIC = b"PTBL"
FORMAT_VERSION = 1
DEFAULT_RELIABILITY_FLOOR = 0.01
DEFAULT_PAIR_CAP = 200


class PathError(ValueError):
    """Invalid path query or path-table configuration."""


def enumerate_paths(
    g: KnowledgeGraph, h: int, t: int, max_hops: int = 2
) -> list[tuple[RelPath, int]]:
    """All distinct relation sequences with a witness walk from h to t.

    Returns (path, witness count) pairs in lexicographic path order; the
    witness count is the number of distinct walks realizing the path
    (for two hops: distinct intermediate entities per edge combination).
    """
    if max_hops not in (1, 2):
        raise PathError("only 1- or 2-hop paths are supported")
    found: dict[RelPath, int] = {}
    rels1, dsts1, _ = g.unique_out_edges(h)
    for r1, e in zip(rels1.tolist(), dsts1.tolist()):
        if e == t:
            key = (r1,)
            found[key] = found.get(key, 0) + 1
    if max_hops == 2:
        for r1, e in zip(rels1.tolist(), dsts1.tolist()):
            rels2, dsts2, _ = g.unique_out_edges(e)
            for r2, d in zip(rels2.tolist(), dsts2.tolist()):
                if d == t:
                    key = (r1, r2)
                    found[key] = found.get(key, 0) + 1
    return sorted(found.items())


def pcra_resource(g: KnowledgeGraph, h: int, p: RelPath, t: int) -> float:
    """Resource reaching t when 1.0 starts at h and flows along path p.

    At each hop every entity holding resource splits it evenly among its
    distinct children under that hop's relation; entities with no such
    children keep nothing (their share of the resource is lost).
    """
    if len(p) == 0:
        raise PathError("path must have at least one relation")
    resource: dict[int, float] = {h: 1.0}
    for r in p:
        nxt: dict[int, float] = {}
        for e in sorted(resource):
            kids = g.children(e, r)
            if len(kids) == 0:
                continue
            share = resource[e] / len(kids)
            for c in kids.tolist():
                nxt[c] = nxt.get(c, 0.0) + share
        resource = nxt
    if t not in resource:
        raise PathError(f"no witness walk from {h} to {t} along {p}")
    return resource[t]


@dataclass
class PathTable:
    """Per-pair reliable paths plus the global path statistics.

    Storage is flat and sorted: pairs by (h, t) key, entries within a pair
    by path id, and the path dictionary lexicographically, so that two
    builds over the same graph serialize byte-for-byte identically.
    """

    n_entities: int
    reliability_floor: float
    cap: int
    path_rels: tuple[RelPath, ...]
    support: np.ndarray          # f64 (n_paths,) total flow admitting each path
    relat_offsets: np.ndarray    # int64 (n_paths + 1,)
    relat_rel: np.ndarray        # int32, relation ids per path, sorted
    relat_val: np.ndarray        # f64, P(relation | path)
    pair_keys: np.ndarray        # int64 sorted, key = h * n_entities + t
    pair_offsets: np.ndarray     # int64 (n_pairs + 1,)
    entry_path: np.ndarray       # int32 path id per stored entry
    entry_v: np.ndarray          # f64 flow v(p | h, t) per stored entry

    @classmethod
    def empty(cls, n_entities: int, reliability_floor: float = DEFAULT_RELIABILITY_FLOOR,
              cap: int = DEFAULT_PAIR_CAP) -> "PathTable":
        return cls(
            n_entities=n_entities,
            reliability_floor=reliability_floor,
            cap=cap,
            path_rels=(),
            support=np.zeros(0, dtype=np.float64),
            relat_offsets=np.zeros(1, dtype=np.int64),
            relat_rel=np.zeros(0, dtype=np.int32),
            relat_val=np.zeros(0, dtype=np.float64),
            pair_keys=np.zeros(0, dtype=np.int64),
            pair_offsets=np.zeros(1, dtype=np.int64),
            entry_path=np.zeros(0, dtype=np.int32),
            entry_v=np.zeros(0, dtype=np.float64),
        )

    # -- queries -------------------------------------------------------

    @property
    def n_paths(self) -> int:
        return len(self.path_rels)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_keys)

    @property
    def n_entries(self) -> int:
        return len(self.entry_path)

    def paths_for(self, h: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Stored (path id, flow) entries for the pair (h, t)."""
        key = np.int64(h) * self.n_entities + t
        i = np.searchsorted(self.pair_keys, key)
        if i == len(self.pair_keys) or self.pair_keys[i] != key:
            return np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.float64)
        lo, hi = self.pair_offsets[i], self.pair_offsets[i + 1]
        return self.entry_path[lo:hi], self.entry_v[lo:hi]

    def relatedness(self, r: int, path_id: int) -> float:
        """P(direct relation r | path), 0.0 when the pair never co-occurred."""
        lo, hi = self.relat_offsets[path_id], self.relat_offsets[path_id + 1]
        rels = self.relat_rel[lo:hi]
        i = np.searchsorted(rels, r)
        if i < len(rels) and rels[i] == r:
            return float(self.relat_val[lo + i])
        return 0.0

    def reliability(self, path_id: int, r: int, v: float) -> float:
        return self.relatedness(r, path_id) * v

    def pair_items(self) -> Iterator[tuple[int, int, np.ndarray, np.ndarray]]:
        """Yield (h, t, path ids, flows) per stored pair in key order."""
        for i in range(self.n_pairs):
            key = int(self.pair_keys[i])
            lo, hi = self.pair_offsets[i], self.pair_offsets[i + 1]
            yield key // self.n_entities, key % self.n_entities, \
                self.entry_path[lo:hi], self.entry_v[lo:hi]

    # -- persistence ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<dII", self.reliability_floor, self.cap, self.n_paths))
            fh.write(struct.pack("<QQQQ", self.n_entities, self.n_pairs,
                                 self.n_entries, len(self.relat_rel)))
            for rels in self.path_rels:
                fh.write(struct.pack("<B", len(rels)))
                fh.write(np.asarray(rels, dtype="<i4").tobytes())
            fh.write(self.support.astype("<f8").tobytes())
            fh.write(self.relat_offsets.astype("<i8").tobytes())
            fh.write(self.relat_rel.astype("<i4").tobytes())
            fh.write(self.relat_val.astype("<f8").tobytes())
            fh.write(self.pair_keys.astype("<i8").tobytes())
            fh.write(self.pair_offsets.astype("<i8").tobytes())
            fh.write(self.entry_path.astype("<i4").tobytes())
            fh.write(self.entry_v.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "PathTable":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise PathError(f"{path}: not a path-table file (bad magic {magic!r})")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != FORMAT_VERSION:
                raise PathError(f"{path}: unsupported path-table version {version}")
            floor, cap, n_paths = struct.unpack("<dII", fh.read(16))
            n_entities, n_pairs, n_entries, n_relat = struct.unpack("<QQQQ", fh.read(32))
            path_rels = []
            for _ in range(n_paths):
                raw_len = fh.read(1)
                if len(raw_len) != 1:
                    raise PathError(f"{path}: truncated path-table file")
                (ln,) = struct.unpack("<B", raw_len)
                rels = np.frombuffer(fh.read(4 * ln), dtype="<i4")
                if rels.size != ln:
                    raise PathError(f"{path}: truncated path-table file")
                path_rels.append(tuple(int(x) for x in rels))

            def arr(dtype: str, count: int) -> np.ndarray:
                raw = np.frombuffer(fh.read(np.dtype(dtype).itemsize * count), dtype=dtype)
                if raw.size != count:
                    raise PathError(f"{path}: truncated path-table file")
                return raw.astype(dtype.lstrip("<"))

            support = arr("<f8", n_paths)
            relat_offsets = arr("<i8", n_paths + 1)
            relat_rel = arr("<i4", n_relat)
            relat_val = arr("<f8", n_relat)
            pair_keys = arr("<i8", n_pairs)
            pair_offsets = arr("<i8", n_pairs + 1)
            entry_path = arr("<i4", n_entries)
            entry_v = arr("<f8", n_entries)
            if fh.read(1):
                raise PathError(f"{path}: trailing bytes after path-table payload")
        return cls(
            n_entities=int(n_entities),
            reliability_floor=floor,
            cap=int(cap),
            path_rels=tuple(path_rels),
            support=support,
            relat_offsets=relat_offsets,
            relat_rel=relat_rel,
            relat_val=relat_val,
            pair_keys=pair_keys,
            pair_offsets=pair_offsets,
            entry_path=entry_path,
            entry_v=entry_v,
        )

    def dump_tsv(self, path: str | Path) -> None:
        """Debug dump: h<TAB>t<TAB>r1[,r2]<TAB>v, sorted for diffing."""
        with open(path, "w", encoding="utf-8") as fh:
            for h, t, ids, vs in self.pair_items():
                for pid, v in zip(ids.tolist(), vs.tolist()):
                    rels = ",".join(str(r) for r in self.path_rels[pid])
                    fh.write(f"{h}\t{t}\t{rels}\t{v:.17g}\n")


# -- construction --------------------------------------------------------


def _collect_head(g: KnowledgeGraph, h: int, cap: int) -> list[tuple[int, list[tuple[RelPath, float]]]]:
    """Per-tail capped (path, flow) lists for all train pairs headed at h."""
    n_ent = g.n_entities
    n_rel = g.n_relations
    pair_keys = g.train_pairs()
    lo = np.searchsorted(pair_keys, np.int64(h) * n_ent)
    hi = np.searchsorted(pair_keys, np.int64(h + 1) * n_ent)
    tails = (pair_keys[lo:hi] % n_ent).astype(np.int64)
    if len(tails) == 0:
        return []
    tail_set = set(tails.tolist())

    per_tail: dict[int, list[tuple[RelPath, float]]] = {int(t): [] for t in tails}

    rels1, dsts1, w1 = g.unique_out_edges(h)
    for r1, e, w in zip(rels1.tolist(), dsts1.tolist(), w1.tolist()):
        if e in tail_set:
            per_tail[e].append(((r1,), w))

    if len(rels1):
        # Expand every two-hop walk at once, then sum flows per
        # (r1, r2, target) with a stable sort so summation order is fixed.
        uoff, urel, udst, ushare = g.unique_adjacency()
        spans = [np.arange(uoff[e], uoff[e + 1]) for e in dsts1.tolist()]
        sizes = np.array([len(s) for s in spans], dtype=np.int64)
        if sizes.sum() > 0:
            cat = np.concatenate([s for s in spans if len(s)])
            r1k = np.repeat(rels1.astype(np.int64), sizes)
            wk = np.repeat(w1, sizes)
            r2k = urel[cat].astype(np.int64)
            t2 = udst[cat].astype(np.int64)
            val = wk * ushare[cat]
            keep = np.isin(t2, tails)
            if keep.any():
                r1k, r2k, t2, val = r1k[keep], r2k[keep], t2[keep], val[keep]
                key = (r1k * n_rel + r2k) * n_ent + t2
                order = np.argsort(key, kind="stable")
                key, val = key[order], val[order]
                firsts = np.ones(len(key), dtype=bool)
                firsts[1:] = key[1:] != key[:-1]
                starts = np.flatnonzero(firsts)
                sums = np.add.reduceat(val, starts)
                ukey = key[starts]
                for k, v in zip(ukey.tolist(), sums.tolist()):
                    t = k % n_ent
                    r2 = (k // n_ent) % n_rel
                    r1 = k // (n_ent * n_rel)
                    per_tail[t].append(((r1, r2), v))

    out = []
    for t in sorted(per_tail):
        entries = per_tail[t]
        if not entries:
            continue
        if len(entries) > cap:
            # Memory guard: keep the strongest flows; break flow ties by
            # path order so the selection is deterministic.
            entries = sorted(entries, key=lambda pv: (-pv[1], pv[0]))[:cap]
        entries.sort(key=lambda pv: pv[0])
        out.append((t, entries))
    return out


_BUILD_GRAPH: KnowledgeGraph | None = None
_BUILD_CAP = 0


def _collect_head_worker(h: int):
    return _collect_head(_BUILD_GRAPH, h, _BUILD_CAP)


def build_path_table(
    g: KnowledgeGraph,
    reliability_floor: float = DEFAULT_RELIABILITY_FLOOR,
    cap: int = DEFAULT_PAIR_CAP,
    workers: int = 1,
    stats: dict | None = None,
) -> PathTable:
    """Mine per-pair paths and reliability statistics over the train facts.

    A path's flow contributes to the statistics of every train relation
    linking its pair, except that a single-relation path never counts as
    evidence for that same relation (regularizing a relation with itself
    is vacuous).  After statistics are fixed, stored entries whose
    reliability stays below ``reliability_floor`` for every linking
    relation are dropped; a floor of 0 disables the filter.
    """
    if not g.augmented:
        raise PathError("path mining requires an inverse-augmented graph")
    if not 0.0 <= reliability_floor < 1.0:
        raise PathError(
            f"reliability_floor must be in [0, 1), got {reliability_floor}"
        )
    if cap < 1:
        raise PathError(f"pair cap must be >= 1, got {cap}")

    pair_keys_all = g.train_pairs()
    heads = np.unique(pair_keys_all // g.n_entities).tolist()

    if workers > 1:
        global _BUILD_GRAPH, _BUILD_CAP
        _BUILD_GRAPH, _BUILD_CAP = g, cap
        try:
            ctx = get_context("fork")
            with ctx.Pool(workers) as pool:
                per_head = pool.map(_collect_head_worker, heads, chunksize=64)
        finally:
            _BUILD_GRAPH, _BUILD_CAP = None, 0
    else:
        per_head = [_collect_head(g, h, cap) for h in heads]

    # Assign provisional path ids in encounter order; remapped to
    # lexicographic order after filtering.
    path_ids: dict[RelPath, int] = {}
    pair_key_list: list[int] = []
    pair_sizes: list[int] = []
    entry_path: list[int] = []
    entry_v: list[float] = []
    stat_path: list[int] = []
    stat_rel: list[int] = []
    stat_val: list[float] = []

    for h, groups in zip(heads, per_head):
        for t, entries in groups:
            rels_here = g.pair_relations(h, t).tolist()
            pair_key_list.append(h * g.n_entities + t)
            pair_sizes.append(len(entries))
            for rels, v in entries:
                pid = path_ids.setdefault(rels, len(path_ids))
                entry_path.append(pid)
                entry_v.append(v)
                for r in rels_here:
                    if len(rels) == 1 and rels[0] == r:
                        continue  # a relation is not evidence for itself
                    stat_path.append(pid)
                    stat_rel.append(r)
                    stat_val.append(v)

    n_prov = len(path_ids)
    id_to_path: list[RelPath] = [()] * n_prov
    for rels, pid in path_ids.items():
        id_to_path[pid] = rels
    support = np.zeros(n_prov, dtype=np.float64)
    joint: dict[tuple[int, int], float] = {}
    if stat_path:
        sp = np.asarray(stat_path, dtype=np.int64)
        sr = np.asarray(stat_rel, dtype=np.int64)
        sv = np.asarray(stat_val, dtype=np.float64)
        key = sp * g.n_relations + sr
        order = np.argsort(key, kind="stable")
        key, sv = key[order], sv[order]
        firsts = np.ones(len(key), dtype=bool)
        firsts[1:] = key[1:] != key[:-1]
        starts = np.flatnonzero(firsts)
        sums = np.add.reduceat(sv, starts)
        for k, v in zip(key[starts].tolist(), sums.tolist()):
            pid, r = divmod(k, g.n_relations)
            joint[(pid, r)] = v
            support[pid] += v

    def relatedness_of(pid: int, r: int) -> float:
        num = joint.get((pid, r))
        if num is None or support[pid] == 0.0:
            return 0.0
        return num / support[pid]

    # Reliability filter over stored entries.
    pair_offsets_prov = np.concatenate(([0], np.cumsum(pair_sizes))).astype(np.int64)
    keep = np.ones(len(entry_path), dtype=bool)
    if reliability_floor > 0.0:
        for i, pkey in enumerate(pair_key_list):
            h, t = divmod(pkey, g.n_entities)
            rels_here = g.pair_relations(h, t).tolist()
            for j in range(pair_offsets_prov[i], pair_offsets_prov[i + 1]):
                pid = entry_path[j]
                rels = id_to_path[pid]
                best = 0.0
                for r in rels_here:
                    if len(rels) == 1 and rels[0] == r:
                        continue
                    rel = relatedness_of(pid, r)
                    if rel * entry_v[j] > best:
                        best = rel * entry_v[j]
                keep[j] = best >= reliability_floor
    kept_entry_path = np.asarray(entry_path, dtype=np.int64)[keep]
    kept_entry_v = np.asarray(entry_v, dtype=np.float64)[keep]

    # Final path dictionary: lexicographic over paths that survived.
    used = sorted({id_to_path[pid] for pid in kept_entry_path.tolist()})
    final_id = {rels: i for i, rels in enumerate(used)}
    remap = np.full(n_prov, -1, dtype=np.int64)
    for rels, pid in path_ids.items():
        if rels in final_id:
            remap[pid] = final_id[rels]
    final_entry_path = remap[kept_entry_path].astype(np.int32)

    # Pair layout after the filter (pairs left with no entries vanish).
    kept_per_pair = np.add.reduceat(keep.astype(np.int64), pair_offsets_prov[:-1]) \
        if len(keep) else np.zeros(len(pair_key_list), dtype=np.int64)
    nonempty = kept_per_pair > 0
    pair_keys = np.asarray(pair_key_list, dtype=np.int64)[nonempty]
    pair_offsets = np.concatenate(([0], np.cumsum(kept_per_pair[nonempty]))).astype(np.int64)

    n_paths = len(used)
    final_support = np.zeros(n_paths, dtype=np.float64)
    relat_counts = np.zeros(n_paths, dtype=np.int64)
    relat_entries: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n_paths)}
    for (pid, r), v in joint.items():
        fid = remap[pid]
        if fid < 0 or support[pid] == 0.0:
            continue
        relat_entries[int(fid)].append((r, v / support[pid]))
    for rels, fid in final_id.items():
        final_support[fid] = support[path_ids[rels]]
        relat_entries[fid].sort()
        relat_counts[fid] = len(relat_entries[fid])
    relat_offsets = np.concatenate(([0], np.cumsum(relat_counts))).astype(np.int64)
    relat_rel = np.asarray(
        [r for fid in range(n_paths) for r, _ in relat_entries[fid]], dtype=np.int32
    )
    relat_val = np.asarray(
        [v for fid in range(n_paths) for _, v in relat_entries[fid]], dtype=np.float64
    )

    if stats is not None:
        stats.update(
            n_pairs=int(len(pair_keys)),
            n_paths=int(n_paths),
            n_entries=int(kept_entry_path.size),
            n_entries_prefilter=int(len(keep)),
            drop_rate=(
                1.0 - kept_entry_path.size / len(keep) if len(keep) else 0.0
            ),
        )

    return PathTable(
        n_entities=g.n_entities,
        reliability_floor=reliability_floor,
        cap=cap,
        path_rels=tuple(used),
        support=final_support,
        relat_offsets=relat_offsets,
        relat_rel=relat_rel,
        relat_val=relat_val,
        pair_keys=pair_keys,
        pair_offsets=pair_offsets,
        entry_path=final_entry_path,
        entry_v=kept_entry_v,
    )
