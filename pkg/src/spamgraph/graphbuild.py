"""Review-graph construction: clique expansion over grouping keys, CSR assembly.

Edges connect reviews that share a user, a product+rating, or a product+month
(QA variant: same question, same asker+month, same answerer+month). Relations
are unioned into one homogeneous neighbor set; per-edge tags record which
rules fired. Every node gets a self-loop so neighbor attention is always
well-defined.
"""

from __future__ import annotations

import struct
import time
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .records import UNKNOWN, QARecord, ReviewRecord, labels_array

# Relation tag bits (per directed CSR entry).
TAG_SAME_USER = 1          # QA: same question
TAG_PRODUCT_RATING = 2     # QA: same asker + month
TAG_PRODUCT_MONTH = 4      # QA: same answerer + month
TAG_SELF_LOOP = 8

_RGPH_MAGIC = b"RGPH"
_RGPH_VERSION = 1


@dataclass(frozen=True)
class ReviewGraph:
    n_nodes: int
    offsets: np.ndarray    # uint64, length n+1
    neighbors: np.ndarray  # uint32, sorted ascending within each row
    tags: np.ndarray       # uint8 per directed entry
    labels: np.ndarray     # int8, 0/1/UNKNOWN per node

    def neighbor_slice(self, i: int) -> np.ndarray:
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    def contains(self, i: int, j: int) -> bool:
        row = self.neighbor_slice(i)
        pos = np.searchsorted(row, j)
        return pos < len(row) and row[pos] == j

    @property
    def n_directed_entries(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_relation_edges(self) -> int:
        """Undirected relation edges, self-loops excluded."""
        return (self.n_directed_entries - self.n_nodes) // 2

    def undirected_edges(self) -> set[tuple[int, int]]:
        """Relation edge set as (i, j) pairs with i < j; self-loops excluded."""
        src = np.repeat(np.arange(self.n_nodes), np.diff(self.offsets).astype(np.int64))
        mask = src < self.neighbors
        return set(zip(src[mask].tolist(), self.neighbors[mask].astype(int).tolist()))


def utc_month(timestamp: int) -> tuple[int, int]:
    """(year, month) of an epoch-seconds timestamp on the UTC calendar."""
    t = time.gmtime(timestamp)
    return (t.tm_year, t.tm_mon)


def group_clique_edges(key_to_members: dict) -> list[tuple[int, int]]:
    """Expand each group into all C(g,2) pairs (i < j)."""
    edges = []
    for members in key_to_members.values():
        members = sorted(set(members))
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                edges.append((members[a], members[b]))
    return edges


def _assemble(n: int, edge_tags: dict[tuple[int, int], int], labels: np.ndarray) -> ReviewGraph:
    """Build sorted CSR arrays from undirected tagged edges plus self-loops."""
    rows: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for (i, j), tag in edge_tags.items():
        rows[i].append((j, tag))
        rows[j].append((i, tag))
    for i in range(n):
        rows[i].append((i, TAG_SELF_LOOP))
        rows[i].sort()
    offsets = np.zeros(n + 1, dtype=np.uint64)
    total = sum(len(r) for r in rows)
    neighbors = np.empty(total, dtype=np.uint32)
    tags = np.empty(total, dtype=np.uint8)
    pos = 0
    for i, row in enumerate(rows):
        for j, tag in row:
            neighbors[pos] = j
            tags[pos] = tag
            pos += 1
        offsets[i + 1] = pos
    return ReviewGraph(n_nodes=n, offsets=offsets, neighbors=neighbors, tags=tags, labels=labels)


def _tagged_edges(groupings: list[tuple[dict, int]]) -> dict[tuple[int, int], int]:
    edge_tags: dict[tuple[int, int], int] = defaultdict(int)
    for key_to_members, tag in groupings:
        for edge in group_clique_edges(key_to_members):
            edge_tags[edge] |= tag
    return dict(edge_tags)


def build_review_graph(records: list[ReviewRecord]) -> ReviewGraph:
    """Union of the three review relations, deduplicated and symmetrized."""
    if not records:
        raise ValueError("records must be nonempty")
    by_user = defaultdict(list)
    by_product_rating = defaultdict(list)
    by_product_month = defaultdict(list)
    for r in records:
        by_user[r.user_id].append(r.review_id)
        by_product_rating[(r.product_id, r.rating)].append(r.review_id)
        by_product_month[(r.product_id, utc_month(r.timestamp))].append(r.review_id)
    edge_tags = _tagged_edges([
        (by_user, TAG_SAME_USER),
        (by_product_rating, TAG_PRODUCT_RATING),
        (by_product_month, TAG_PRODUCT_MONTH),
    ])
    return _assemble(len(records), edge_tags, labels_array(records))


def build_qa_graph(records: list[QARecord]) -> ReviewGraph:
    """Union of the three QA relations (same question, asker+month, answerer+month)."""
    if not records:
        raise ValueError("records must be nonempty")
    by_question = defaultdict(list)
    by_asker_month = defaultdict(list)
    by_answerer_month = defaultdict(list)
    for r in records:
        by_question[r.question_id].append(r.qa_id)
        by_asker_month[(r.asker_id, utc_month(r.question_time))].append(r.qa_id)
        by_answerer_month[(r.answerer_id, utc_month(r.answer_time))].append(r.qa_id)
    edge_tags = _tagged_edges([
        (by_question, TAG_SAME_USER),
        (by_asker_month, TAG_PRODUCT_RATING),
        (by_answerer_month, TAG_PRODUCT_MONTH),
    ])
    return _assemble(len(records), edge_tags, labels_array(records))


def save_graph(graph: ReviewGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_RGPH_MAGIC)
        fh.write(struct.pack("<IQQ", _RGPH_VERSION, graph.n_nodes, graph.n_directed_entries))
        fh.write(graph.offsets.astype("<u8").tobytes())
        fh.write(graph.neighbors.astype("<u4").tobytes())
        fh.write(graph.tags.astype("u1").tobytes())
        fh.write(graph.labels.astype("i1").tobytes())


def load_graph(path) -> ReviewGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _RGPH_MAGIC:
            raise ValueError(f"bad graph file magic: {magic!r}")
        version, n, m = struct.unpack("<IQQ", fh.read(20))
        if version != _RGPH_VERSION:
            raise ValueError(f"unsupported graph file version {version}")
        offsets = np.frombuffer(fh.read(8 * (n + 1)), dtype="<u8")
        neighbors = np.frombuffer(fh.read(4 * m), dtype="<u4")
        tags = np.frombuffer(fh.read(m), dtype="u1")
        labels = np.frombuffer(fh.read(n), dtype="i1")
    if len(offsets) != n + 1 or len(neighbors) != m or len(tags) != m or len(labels) != n:
        raise ValueError("truncated graph file")
    return ReviewGraph(
        n_nodes=int(n),
        offsets=offsets.copy(),
        neighbors=neighbors.copy(),
        tags=tags.copy(),
        labels=labels.copy(),
    )


def graph_stats(graph: ReviewGraph) -> dict:
    """Node/edge/spam-ratio counts; relation edges, directed entries, and
    self-loops are reported separately."""
    labeled = graph.labels[graph.labels != UNKNOWN]
    spam_ratio = float(np.mean(labeled == 1)) if len(labeled) else float("nan")
    return {
        "nodes": graph.n_nodes,
        "relation_edges": graph.n_relation_edges,
        "directed_entries": graph.n_directed_entries,
        "self_loops": graph.n_nodes,
        "labeled_nodes": int(len(labeled)),
        "spam_ratio": spam_ratio,
    }
