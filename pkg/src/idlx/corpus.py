"""Corpus data model: filtering, proximity scoring, author-disjoint splits.

A corpus is a flat list of pre-segmented sentences carrying provenance
metadata (author, comment, community). The filter cascade guarantees the
structural minimums the batch sampler relies on: every surviving comment
has >= 2 sentences and every surviving author has >= 2 comments.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, UsageError

log = logging.getLogger(__name__)

SPLITS = ("pretrain", "train", "dev", "test")

# Account names that aggregate many users and carry no consistent style.
RESERVED_AUTHORS = frozenset({"[deleted]", "[removed]", "AutoModerator"})

MIN_TOKENS = 5
MIN_SENTENCES_PER_COMMENT = 2
MIN_COMMENTS_PER_AUTHOR = 2

_RECORD_KEYS = ("id", "text", "author_id", "comment_id", "community_id", "split")


@dataclass(frozen=True)
class SentenceRecord:
    """One sentence plus the provenance metadata all sampling keys off."""

    id: str
    text: str
    author_id: str
    comment_id: str
    community_id: str
    split: str = "pretrain"


@dataclass
class CorpusSplit:
    """Immutable-after-build sentence collection with a provenance index.

    ``index`` maps community_id -> author_id -> comment_id -> [sentence ids].
    """

    records: list[SentenceRecord]
    index: dict[str, dict[str, dict[str, list[str]]]] = field(default_factory=dict)
    by_id: dict[str, SentenceRecord] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = _build_index(self.records)
        if not self.by_id:
            self.by_id = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def communities(self) -> list[str]:
        return sorted(self.index)

    def authors(self, community_id: str) -> list[str]:
        return sorted(self.index[community_id])

    def subset(self, splits) -> "CorpusSplit":
        """New corpus holding only records whose split tag is in ``splits``."""
        wanted = {splits} if isinstance(splits, str) else set(splits)
        unknown = wanted - set(SPLITS)
        if unknown:
            raise UsageError(f"unknown split tags: {sorted(unknown)}")
        return CorpusSplit([r for r in self.records if r.split in wanted])

    def pretrain_view(self) -> "CorpusSplit":
        """Stage-1 training data: the train tag is a subset of pretrain."""
        return self.subset(("pretrain", "train"))


def _build_index(records) -> dict:
    index: dict[str, dict[str, dict[str, list[str]]]] = {}
    for r in records:
        index.setdefault(r.community_id, {}).setdefault(r.author_id, {}).setdefault(
            r.comment_id, []
        ).append(r.id)
    return index


def token_count(text: str) -> int:
    """Words are maximal runs of non-whitespace characters."""
    return len(text.split())


def ingest_and_filter(raw_records) -> CorpusSplit:
    """Validate raw rows and apply the filter cascade.

    Cascade order: reserved authors -> short sentences -> comments with
    < 2 surviving sentences -> authors with < 2 surviving comments. The
    author rule is applied last so it is evaluated against the comments
    that actually survive. Malformed rows (missing fields, duplicate ids,
    comment ids claimed by two authors) are dropped with a warning.
    """
    seen_ids: set[str] = set()
    comment_owner: dict[str, str] = {}
    kept: list[SentenceRecord] = []
    dropped_malformed = 0

    for raw in raw_records:
        rec = _coerce_record(raw)
        if rec is None:
            dropped_malformed += 1
            continue
        if rec.id in seen_ids:
            log.warning("duplicate sentence id %r dropped", rec.id)
            dropped_malformed += 1
            continue
        owner = comment_owner.setdefault(rec.comment_id, rec.author_id)
        if owner != rec.author_id:
            log.warning(
                "comment %r claimed by authors %r and %r; dropping the later row",
                rec.comment_id, owner, rec.author_id,
            )
            dropped_malformed += 1
            continue
        seen_ids.add(rec.id)
        kept.append(rec)

    if dropped_malformed:
        log.warning("ingest: dropped %d malformed rows", dropped_malformed)

    kept = [r for r in kept if r.author_id not in RESERVED_AUTHORS]
    kept = [r for r in kept if token_count(r.text) >= MIN_TOKENS]

    sentences_per_comment: dict[str, int] = {}
    for r in kept:
        sentences_per_comment[r.comment_id] = sentences_per_comment.get(r.comment_id, 0) + 1
    kept = [r for r in kept if sentences_per_comment[r.comment_id] >= MIN_SENTENCES_PER_COMMENT]

    comments_per_author: dict[str, set[str]] = {}
    for r in kept:
        comments_per_author.setdefault(r.author_id, set()).add(r.comment_id)
    kept = [r for r in kept if len(comments_per_author[r.author_id]) >= MIN_COMMENTS_PER_AUTHOR]

    return CorpusSplit(kept)


def _coerce_record(raw) -> SentenceRecord | None:
    if isinstance(raw, SentenceRecord):
        raw = {
            "id": raw.id, "text": raw.text, "author_id": raw.author_id,
            "comment_id": raw.comment_id, "community_id": raw.community_id,
            "split": raw.split,
        }
    if not isinstance(raw, dict):
        return None
    try:
        split = raw.get("split", "pretrain")
        if split not in SPLITS:
            return None
        rec = SentenceRecord(
            id=str(raw["id"]),
            text=str(raw["text"]),
            author_id=str(raw["author_id"]),
            comment_id=str(raw["comment_id"]),
            community_id=str(raw["community_id"]),
            split=split,
        )
    except (KeyError, TypeError):
        return None
    if not rec.id or not rec.text:
        return None
    return rec


def proximity_score(a: SentenceRecord, b: SentenceRecord) -> int:
    """Most exclusive shared provenance category, 3 (same comment) .. 0."""
    if a.id == b.id:
        raise UsageError(f"self-proximity undefined (id {a.id!r})")
    if a.comment_id == b.comment_id:
        return 3
    if a.author_id == b.author_id:
        return 2
    if a.community_id == b.community_id:
        return 1
    return 0


def proximity_matrix(records) -> np.ndarray:
    """Pairwise proximity with -1 sentinels on the diagonal."""
    n = len(records)
    out = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = proximity_score(records[i], records[j])
    return out


def split_by_author(
    corpus: CorpusSplit,
    heldout_per_dialect: int = 10,
    train_authors_cap: int = 200,
    seed: int = 0,
) -> CorpusSplit:
    """Assign author-disjoint split tags.

    Per community: ``heldout_per_dialect`` authors go to dev and the same
    number to test (disjoint); every remaining author is pre-train, of
    which up to ``train_authors_cap`` are additionally tagged train.
    Communities that cannot withhold 2 * heldout_per_dialect authors
    abort with an error naming the community.
    """
    if heldout_per_dialect < 0 or train_authors_cap < 0:
        raise UsageError("holdout and cap must be nonnegative")
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for community in corpus.communities():
        authors = corpus.authors(community)
        need = 2 * heldout_per_dialect
        if len(authors) < need:
            raise DataError(
                f"community {community!r} has {len(authors)} authors; "
                f"{need} needed for dev/test holdouts"
            )
        order = list(rng.permutation(len(authors)))
        shuffled = [authors[i] for i in order]
        dev = shuffled[:heldout_per_dialect]
        test = shuffled[heldout_per_dialect:need]
        rest = shuffled[need:]
        train = rest[: min(train_authors_cap, len(rest))]
        for a in dev:
            assignment[a] = "dev"
        for a in test:
            assignment[a] = "test"
        for a in rest:
            assignment[a] = "pretrain"
        for a in train:
            assignment[a] = "train"
    tagged = [replace(r, split=assignment[r.author_id]) for r in corpus.records]
    return CorpusSplit(tagged)


# -- JSON-lines corpus file format -------------------------------------------


def read_corpus_jsonl(path) -> list[dict]:
    """Read raw corpus rows; unknown keys are ignored downstream."""
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from e
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from e
    return rows


def load_corpus(path) -> CorpusSplit:
    return ingest_and_filter(read_corpus_jsonl(path))


def write_corpus_jsonl(path, records) -> None:
    """Write records with keys in the canonical order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {
                "id": r.id, "text": r.text, "author_id": r.author_id,
                "comment_id": r.comment_id, "community_id": r.community_id,
                "split": r.split,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
