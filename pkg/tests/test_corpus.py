"""Filtering cascade, proximity scoring, and author-disjoint splits."""

import numpy as np
import pytest

from idlx.corpus import (
    CorpusSplit,
    SentenceRecord,
    ingest_and_filter,
    load_corpus,
    proximity_matrix,
    proximity_score,
    split_by_author,
    write_corpus_jsonl,
)
from idlx.errors import DataError, UsageError


def rec(i, author="a1", comment="m1", community="c1", text="uno dos tres cuatro cinco"):
    return {
        "id": f"s{i}", "text": text, "author_id": author,
        "comment_id": comment, "community_id": community,
    }


def small_raw():
    rows = []
    k = 0
    for community in ("c1", "c2"):
        for a in range(3):
            author = f"{community}-a{a}"
            for m in range(2):
                comment = f"{author}-m{m}"
                for _ in range(2):
                    rows.append(rec(k, author, comment, community))
                    k += 1
    return rows


class TestIngestAndFilter:
    def test_short_sentence_dropped(self):
        rows = small_raw() + [rec(99, "c1-a0", "c1-a0-m0", "c1", text="hola que tal")]
        corpus = ingest_and_filter(rows)
        assert "s99" not in corpus.by_id

    def test_reserved_authors_dropped(self):
        rows = small_raw()
        for i in range(10):
            rows.append(rec(100 + i, "[deleted]", f"dm{i // 2}", "c1"))
        corpus = ingest_and_filter(rows)
        assert all(r.author_id != "[deleted]" for r in corpus.records)

    def test_empty_input_gives_empty_corpus(self):
        corpus = ingest_and_filter([])
        assert len(corpus) == 0

    def test_comment_with_one_surviving_sentence_dropped(self):
        rows = small_raw()
        # comment with one long and one short sentence: both must go
        rows.append(rec(200, "c1-a0", "c1-a0-mX", "c1"))
        rows.append(rec(201, "c1-a0", "c1-a0-mX", "c1", text="corto"))
        corpus = ingest_and_filter(rows)
        assert "s200" not in corpus.by_id and "s201" not in corpus.by_id

    def test_author_with_one_surviving_comment_dropped(self):
        rows = []
        # one author, two comments, but one comment loses all sentences
        rows.append(rec(0, "solo", "m0", "c1"))
        rows.append(rec(1, "solo", "m0", "c1"))
        rows.append(rec(2, "solo", "m1", "c1", text="x"))
        rows.append(rec(3, "solo", "m1", "c1", text="y"))
        corpus = ingest_and_filter(rows)
        assert len(corpus) == 0

    def test_min_counts_hold_after_filter(self):
        corpus = ingest_and_filter(small_raw())
        for community, authors in corpus.index.items():
            for author, comments in authors.items():
                assert len(comments) >= 2
                for comment, sids in comments.items():
                    assert len(sids) >= 2

    def test_idempotent(self):
        first = ingest_and_filter(small_raw())
        again = ingest_and_filter(first.records)
        assert [r.id for r in again.records] == [r.id for r in first.records]

    def test_malformed_rows_tolerated(self):
        rows = small_raw() + [{"text": "sin id aqui cinco tokens"}, "not a dict", None]
        corpus = ingest_and_filter(rows)
        assert len(corpus) == len(small_raw())

    def test_conflicting_comment_owner_dropped(self):
        rows = small_raw() + [rec(300, "c1-a1", "c1-a0-m0", "c1")]
        corpus = ingest_and_filter(rows)
        assert "s300" not in corpus.by_id

    def test_duplicate_ids_dropped(self):
        rows = small_raw()
        rows.append(dict(rows[0]))
        corpus = ingest_and_filter(rows)
        assert len(corpus) == len(small_raw())


class TestProximity:
    def make(self, comment="m1", author="a1", community="c1", i=0):
        return SentenceRecord(
            id=f"p{i}", text="t", author_id=author, comment_id=comment, community_id=community
        )

    def test_levels(self):
        a = self.make(i=0)
        assert proximity_score(a, self.make(i=1)) == 3
        assert proximity_score(a, self.make(comment="m2", i=2)) == 2
        assert proximity_score(a, self.make(comment="m3", author="a2", i=3)) == 1
        assert proximity_score(a, self.make(comment="m4", author="a3", community="c9", i=4)) == 0

    def test_symmetric_over_random_metadata(self):
        rng = np.random.default_rng(7)
        recs = [
            self.make(
                comment=f"m{rng.integers(3)}",
                author=f"a{rng.integers(3)}",
                community=f"c{rng.integers(2)}",
                i=i,
            )
            for i in range(20)
        ]
        for i in range(len(recs)):
            for j in range(i + 1, len(recs)):
                assert proximity_score(recs[i], recs[j]) == proximity_score(recs[j], recs[i])

    def test_hierarchy_nesting(self):
        # r = 3 implies same author; r >= 2 implies same community, given
        # consistent metadata (comment ids owned by single authors).
        corpus = ingest_and_filter(small_raw())
        rs = corpus.records
        for i in range(len(rs)):
            for j in range(i + 1, len(rs)):
                r = proximity_score(rs[i], rs[j])
                if r == 3:
                    assert rs[i].author_id == rs[j].author_id
                if r >= 2:
                    assert rs[i].community_id == rs[j].community_id

    def test_self_proximity_rejected(self):
        a = self.make()
        with pytest.raises(UsageError):
            proximity_score(a, a)

    def test_matrix_agrees_with_scores(self):
        corpus = ingest_and_filter(small_raw())
        rs = corpus.records[:6]
        mat = proximity_matrix(rs)
        assert (np.diag(mat) == -1).all()
        for i in range(6):
            for j in range(6):
                if i != j:
                    assert mat[i, j] == proximity_score(rs[i], rs[j])


def bigger_corpus(authors_per_community=30):
    rows = []
    k = 0
    for community in ("c1", "c2"):
        for a in range(authors_per_community):
            author = f"{community}-a{a}"
            for m in range(2):
                comment = f"{author}-m{m}"
                for _ in range(2):
                    rows.append(rec(k, author, comment, community))
                    k += 1
    return ingest_and_filter(rows)


class TestSplitByAuthor:
    def test_counts_and_disjointness(self):
        corpus = bigger_corpus(30)
        tagged = split_by_author(corpus, heldout_per_dialect=10, train_authors_cap=200, seed=3)
        by_split = {}
        for r in tagged.records:
            by_split.setdefault(r.split, set()).add(r.author_id)
        for community in ("c1", "c2"):
            dev_c = {a for a in by_split["dev"] if a.startswith(community)}
            test_c = {a for a in by_split["test"] if a.startswith(community)}
            assert len(dev_c) == 10 and len(test_c) == 10
        held = by_split["dev"] | by_split["test"]
        rest = by_split.get("pretrain", set()) | by_split.get("train", set())
        assert not (by_split["dev"] & by_split["test"])
        assert not (held & rest)

    def test_train_cap(self):
        corpus = bigger_corpus(30)
        tagged = split_by_author(corpus, heldout_per_dialect=5, train_authors_cap=7, seed=0)
        train_authors = {r.author_id for r in tagged.records if r.split == "train"}
        for community in ("c1", "c2"):
            assert len({a for a in train_authors if a.startswith(community)}) == 7

    def test_cap_above_population_takes_everyone(self):
        corpus = bigger_corpus(12)
        tagged = split_by_author(corpus, heldout_per_dialect=2, train_authors_cap=200, seed=0)
        pretrain_only = {r.author_id for r in tagged.records if r.split == "pretrain"}
        assert not pretrain_only  # every non-heldout author fits under the cap

    def test_seeded_determinism(self):
        corpus = bigger_corpus(20)
        t1 = split_by_author(corpus, 5, 10, seed=42)
        t2 = split_by_author(corpus, 5, 10, seed=42)
        assert [(r.id, r.split) for r in t1.records] == [(r.id, r.split) for r in t2.records]

    def test_insufficient_authors_names_community(self):
        corpus = bigger_corpus(5)
        with pytest.raises(DataError, match="c1"):
            split_by_author(corpus, heldout_per_dialect=10, train_authors_cap=10, seed=0)


class TestJsonlRoundTrip:
    def test_round_trip_and_key_order(self, tmp_path):
        corpus = split_by_author(bigger_corpus(12), 2, 5, seed=1)
        path = tmp_path / "corpus.jsonl"
        write_corpus_jsonl(path, corpus.records)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        keys = list(__import__("json").loads(first))
        assert keys == ["id", "text", "author_id", "comment_id", "community_id", "split"]
        reloaded = load_corpus(path)
        assert [r.id for r in reloaded.records] == [r.id for r in corpus.records]
        assert [r.split for r in reloaded.records] == [r.split for r in corpus.records]

    def test_unknown_keys_ignored(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        rows = small_raw()
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                row = dict(row, extra_key="ignored")
                fh.write(json.dumps(row) + "\n")
        corpus = load_corpus(path)
        assert len(corpus) == len(rows)

    def test_unreadable_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_corpus(tmp_path / "missing.jsonl")

    def test_invalid_json_is_data_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_corpus(path)
