"""Anchor-group mini-batch construction with the fixed proximity mix.

Each group holds 16 sentences: a seed anchor plus, relative to it,
1 same-comment, 2 same-author, 4 same-community, and 8 cross-community
sentences (2^(3-n) sentences at proximity n). Sampling is uniform at each
hierarchy level: comment within author, author within community,
community within corpus. The full pairwise proximity matrix is computed
from metadata so every group member can act as an anchor in the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusSplit, SentenceRecord, proximity_matrix
from .errors import DataError, UsageError

GROUP_SIZE = 16
SEED_COUNTS = {3: 1, 2: 2, 1: 4, 0: 8}
MAX_ANCHOR_ATTEMPTS = 100
_MAX_DRAWS = 30


@dataclass
class ProximityBatch:
    """A 16-sentence anchor group; sentences[0] is the seed anchor."""

    sentences: list[SentenceRecord]
    proximity: np.ndarray
    seed_counts: dict[int, int]

    def ids(self) -> list[str]:
        return [s.id for s in self.sentences]


class _GroupImpossible(Exception):
    """The drawn anchor's neighborhood cannot supply the required counts."""


def sample_anchor_group(corpus: CorpusSplit, rng_seed) -> ProximityBatch:
    """Draw one anchor group; ``rng_seed`` is an int seed or a Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if len(corpus.communities()) < 2:
        raise DataError("anchor groups need at least 2 communities")
    if len(corpus) < GROUP_SIZE:
        raise DataError(f"corpus has {len(corpus)} sentences; groups need {GROUP_SIZE}")
    for _ in range(MAX_ANCHOR_ATTEMPTS):
        anchor = corpus.records[int(rng.integers(0, len(corpus)))]
        try:
            members = _fill_group(corpus, anchor, rng)
        except _GroupImpossible:
            continue
        prox = proximity_matrix(members)
        counts = {n: int((prox[0] == n).sum()) for n in (0, 1, 2, 3)}
        return ProximityBatch(sentences=members, proximity=prox, seed_counts=counts)
    raise DataError(
        f"no anchor produced a valid group after {MAX_ANCHOR_ATTEMPTS} attempts; "
        "corpus too small or communities too thin"
    )


def _fill_group(corpus: CorpusSplit, anchor: SentenceRecord, rng) -> list[SentenceRecord]:
    used = {anchor.id}
    members = [anchor]
    idx = corpus.index
    communities = corpus.communities()

    # proximity 3: another sentence of the anchor's comment
    same_comment = idx[anchor.community_id][anchor.author_id][anchor.comment_id]
    members += _draw(corpus, rng, used, SEED_COUNTS[3], lambda: _pick(rng, same_comment))

    # proximity 2: the anchor's author, a different comment
    author_comments = [
        c for c in sorted(idx[anchor.community_id][anchor.author_id]) if c != anchor.comment_id
    ]
    if not author_comments:
        raise _GroupImpossible

    def draw_author():
        comment = _pick(rng, author_comments)
        return _pick(rng, idx[anchor.community_id][anchor.author_id][comment])

    members += _draw(corpus, rng, used, SEED_COUNTS[2], draw_author)

    # proximity 1: same community, a different author
    other_authors = [a for a in sorted(idx[anchor.community_id]) if a != anchor.author_id]
    if not other_authors:
        raise _GroupImpossible

    def draw_community():
        author = _pick(rng, other_authors)
        comment = _pick(rng, sorted(idx[anchor.community_id][author]))
        return _pick(rng, idx[anchor.community_id][author][comment])

    members += _draw(corpus, rng, used, SEED_COUNTS[1], draw_community)

    # proximity 0: a different community
    other_communities = [c for c in communities if c != anchor.community_id]

    def draw_cross():
        community = _pick(rng, other_communities)
        author = _pick(rng, sorted(idx[community]))
        comment = _pick(rng, sorted(idx[community][author]))
        return _pick(rng, idx[community][author][comment])

    members += _draw(corpus, rng, used, SEED_COUNTS[0], draw_cross)
    return members


def _pick(rng, items):
    return items[int(rng.integers(0, len(items)))]


def _draw(corpus, rng, used, count, sample_one) -> list[SentenceRecord]:
    """Rejection-sample ``count`` distinct sentence ids from one category."""
    out = []
    for _ in range(count):
        for _ in range(_MAX_DRAWS):
            sid = sample_one()
            if sid not in used:
                used.add(sid)
                out.append(corpus.by_id[sid])
                break
        else:
            raise _GroupImpossible
    return out


def assemble_training_batch(
    corpus: CorpusSplit, groups_per_batch: int, rng_seed
) -> list[ProximityBatch]:
    """Independent anchor groups; losses never pair across groups."""
    if groups_per_batch < 1:
        raise UsageError("groups_per_batch must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return [sample_anchor_group(corpus, rng) for _ in range(groups_per_batch)]
