"""Review/QA corpus ingestion, label handling, and train/valid/test splits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNKNOWN = -1  # label value for unlabeled nodes

TRAIN, VALID, TEST = 0, 1, 2
_SPLIT_NAMES = {TRAIN: "train", VALID: "valid", TEST: "test"}


class IngestError(ValueError):
    """Raised when a corpus file cannot be parsed into records."""


@dataclass(frozen=True)
class ReviewRecord:
    review_id: int
    user_id: str
    product_id: str
    rating: int
    timestamp: int
    text: str
    label: int = UNKNOWN  # 0 normal, 1 spam, UNKNOWN


@dataclass(frozen=True)
class QARecord:
    qa_id: int
    question_id: str
    asker_id: str
    answerer_id: str
    question_time: int
    answer_time: int
    text: str
    label: int = UNKNOWN


@dataclass(frozen=True)
class SplitAssignment:
    tags: np.ndarray  # int8, values TRAIN/VALID/TEST
    seed: int
    ratios: tuple[float, float, float]

    @property
    def n_nodes(self) -> int:
        return len(self.tags)

    def nodes(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(np.sum(self.tags == t)) for t in (TRAIN, VALID, TEST))


_REVIEW_FIELDS = ("user_id", "product_id", "rating", "timestamp", "text")
_QA_FIELDS = ("question_id", "asker_id", "answerer_id", "question_time", "answer_time", "text")


def _parse_label(raw, row_num: int) -> int:
    if raw is None or raw == "":
        return UNKNOWN
    try:
        label = int(raw)
    except (TypeError, ValueError):
        raise IngestError(f"bad label at row {row_num}: {raw!r}")
    if label not in (0, 1):
        raise IngestError(f"label must be 0 or 1 at row {row_num}, got {label}")
    return label


def _review_from_row(row: dict, row_num: int) -> ReviewRecord:
    for key in _REVIEW_FIELDS:
        if key not in row or row[key] is None or row[key] == "":
            raise IngestError(f"missing field {key!r} at row {row_num}")
    try:
        rating = int(row["rating"])
    except (TypeError, ValueError):
        raise IngestError(f"bad rating at row {row_num}: {row['rating']!r}")
    if not 1 <= rating <= 5:
        raise IngestError(f"rating out of range at row {row_num}: {rating}")
    try:
        timestamp = int(row["timestamp"])
    except (TypeError, ValueError):
        raise IngestError(f"bad timestamp at row {row_num}: {row['timestamp']!r}")
    return ReviewRecord(
        review_id=row_num,
        user_id=str(row["user_id"]),
        product_id=str(row["product_id"]),
        rating=rating,
        timestamp=timestamp,
        text=str(row["text"]),
        label=_parse_label(row.get("label"), row_num),
    )


def _qa_from_row(row: dict, row_num: int) -> QARecord:
    for key in _QA_FIELDS:
        if key not in row or row[key] is None or row[key] == "":
            raise IngestError(f"missing field {key!r} at row {row_num}")
    try:
        q_time = int(row["question_time"])
        a_time = int(row["answer_time"])
    except (TypeError, ValueError):
        raise IngestError(f"bad time field at row {row_num}")
    if a_time < q_time:
        raise IngestError(f"answer_time before question_time at row {row_num}")
    return QARecord(
        qa_id=row_num,
        question_id=str(row["question_id"]),
        asker_id=str(row["asker_id"]),
        answerer_id=str(row["answerer_id"]),
        question_time=q_time,
        answer_time=a_time,
        text=str(row["text"]),
        label=_parse_label(row.get("label"), row_num),
    )


def _iter_rows(path: Path, format: str):
    if format == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    yield i, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"malformed JSON at row {i}: {exc}") from exc
    elif format == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for i, row in enumerate(reader):
                yield i, row
    else:
        raise IngestError(f"unknown format {format!r} (expected jsonl or csv)")


def ingest_reviews(path: str | Path, format: str = "jsonl") -> list[ReviewRecord]:
    """Read a review corpus; records come back in file order with dense ids.

    Rows missing the optional ``label`` key are tagged UNKNOWN.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    records = []
    next_id = 0
    for _, row in _iter_rows(path, format):
        records.append(_review_from_row(row, next_id))
        next_id += 1
    return records


def ingest_qa(path: str | Path, format: str = "jsonl") -> list[QARecord]:
    """Read a QA corpus (answers acting as reviews); dense ids in file order."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    records = []
    next_id = 0
    for _, row in _iter_rows(path, format):
        records.append(_qa_from_row(row, next_id))
        next_id += 1
    return records


def write_reviews(records: list[ReviewRecord], path: str | Path) -> None:
    """Write records as JSONL (the canonical corpus format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {
                "user_id": r.user_id,
                "product_id": r.product_id,
                "rating": r.rating,
                "timestamp": r.timestamp,
                "text": r.text,
            }
            if r.label != UNKNOWN:
                row["label"] = r.label
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def make_split(
    n_nodes: int,
    ratios: tuple[float, float, float],
    seed: int,
    stratify_labels: np.ndarray | None = None,
) -> SplitAssignment:
    """Seeded uniform split; sizes are floor(r_train*N), floor(r_valid*N), rest.

    When ``stratify_labels`` is given, the shuffle interleaves classes so each
    split's class mix approximates the corpus mix (off by default).
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three nonnegative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    if stratify_labels is None:
        perm = rng.permutation(n_nodes)
    else:
        if len(stratify_labels) != n_nodes:
            raise ValueError("stratify_labels length must equal n_nodes")
        # Shuffle within each class, then order by a per-node uniform quantile
        # so classes interleave proportionally.
        keys = np.empty(n_nodes)
        for cls in np.unique(stratify_labels):
            idx = np.flatnonzero(stratify_labels == cls)
            ranks = rng.permutation(len(idx))
            keys[idx] = (ranks + 0.5) / len(idx)
        perm = np.argsort(keys, kind="stable")
    n_train = int(ratios[0] * n_nodes)
    n_valid = int(ratios[1] * n_nodes)
    tags = np.empty(n_nodes, dtype=np.int8)
    tags[perm[:n_train]] = TRAIN
    tags[perm[n_train:n_train + n_valid]] = VALID
    tags[perm[n_train + n_valid:]] = TEST
    return SplitAssignment(tags=tags, seed=seed, ratios=tuple(float(r) for r in ratios))


def save_split(split: SplitAssignment, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"seed": split.seed, "ratios": list(split.ratios), "tags": split.tags.tolist()},
            fh,
        )
        fh.write("\n")


def load_split(path: str | Path) -> SplitAssignment:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    tags = np.asarray(obj["tags"], dtype=np.int8)
    if not np.all(np.isin(tags, [TRAIN, VALID, TEST])):
        raise ValueError("split tags must be 0/1/2")
    return SplitAssignment(tags=tags, seed=int(obj["seed"]), ratios=tuple(obj["ratios"]))


def labels_array(records) -> np.ndarray:
    """Per-node labels as int8 (UNKNOWN for unlabeled)."""
    return np.array([r.label for r in records], dtype=np.int8)
