"""Synthetic corpora with planted community/author feature structure.

Every sentence surface-realizes its active binary features as reserved
marker tokens (``FEAT_k``) disjoint from the filler vocabulary, so a
rule-based extractor recovers the ground truth exactly and every
training/evaluation claim can be checked against a known answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusSplit, SentenceRecord
from .errors import ConfigError
from .features import FeatureInventory, FeatureVector

MARKER_PREFIX = "FEAT_"


@dataclass
class SynthConfig:
    n_communities: int = 5
    authors_per_community: int = 20
    comments_per_author: int = 3
    sentences_per_comment: int = 3
    feature_inventory_size: int = 8
    community_feature_priors: list[list[float]] | None = None
    author_perturbation: float = 0.8
    # Probability that a sentence reuses its comment's feature draw for a
    # given feature; gives same-comment pairs strictly higher expected
    # overlap than same-author pairs.
    comment_share_prob: float = 0.5
    vocab_size: int = 40
    seed: int = 0

    def validate(self) -> None:
        if self.n_communities < 1:
            raise ConfigError(f"n_communities must be >= 1, got {self.n_communities}")
        counts = {
            "authors_per_community": self.authors_per_community,
            "comments_per_author": self.comments_per_author,
            "sentences_per_comment": self.sentences_per_comment,
            "vocab_size": self.vocab_size,
        }
        for name, value in counts.items():
            if value < 2:
                raise ConfigError(f"{name} must be >= 2, got {value}")
        if self.feature_inventory_size < 1:
            raise ConfigError("feature_inventory_size must be >= 1")
        if self.author_perturbation < 0:
            raise ConfigError("author_perturbation must be >= 0")
        if not 0.0 <= self.comment_share_prob <= 1.0:
            raise ConfigError("comment_share_prob must lie in [0, 1]")
        if self.community_feature_priors is not None:
            priors = self.community_feature_priors
            if len(priors) != self.n_communities:
                raise ConfigError(
                    f"got {len(priors)} prior vectors for {self.n_communities} communities"
                )
            for c, vec in enumerate(priors):
                if len(vec) != self.feature_inventory_size:
                    raise ConfigError(
                        f"community {c} prior has length {len(vec)}, "
                        f"inventory size is {self.feature_inventory_size}"
                    )
                if any(not 0.0 <= p <= 1.0 for p in vec):
                    raise ConfigError(f"community {c} prior leaves [0, 1]")


def synthetic_inventory(size: int) -> FeatureInventory:
    return FeatureInventory(
        names=tuple(f"{MARKER_PREFIX}{k}" for k in range(size)),
        language_tag="synthetic",
    )


def default_community_priors(
    n_communities: int, size: int, seed: int, low: float = 0.05, high: float = 0.6
) -> list[list[float]]:
    """Distinct per-community feature priors drawn from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    return rng.uniform(low, high, size=(n_communities, size)).tolist()


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(p / (1.0 - p))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def generate_corpus(config: SynthConfig) -> tuple[CorpusSplit, dict[str, FeatureVector]]:
    """Generate a corpus plus the per-sentence ground-truth feature vectors.

    Per-sentence features are Bernoulli draws from the author's
    logit-perturbed community prior, with per-comment sharing (see
    ``comment_share_prob``). Output is deterministic given the config.
    """
    config.validate()
    F = config.feature_inventory_size
    priors = config.community_feature_priors
    if priors is None:
        priors = default_community_priors(config.n_communities, F, config.seed)
        config = SynthConfig(**{**config.__dict__, "community_feature_priors": priors})
        config.validate()

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0]))
    fillers = [f"w{i:03d}" for i in range(config.vocab_size)]
    markers = [f"{MARKER_PREFIX}{k}" for k in range(F)]

    records: list[SentenceRecord] = []
    truth: dict[str, FeatureVector] = {}
    for ci in range(config.n_communities):
        community = f"c{ci}"
        base_logits = _logit(np.asarray(priors[ci], dtype=np.float64))
        for ai in range(config.authors_per_community):
            author = f"{community}a{ai}"
            author_probs = _sigmoid(
                base_logits + config.author_perturbation * rng.normal(size=F)
            )
            for mi in range(config.comments_per_author):
                comment = f"{author}m{mi}"
                comment_draw = rng.random(F) < author_probs
                for si in range(config.sentences_per_comment):
                    fresh = rng.random(F) < author_probs
                    share = rng.random(F) < config.comment_share_prob
                    bits = np.where(share, comment_draw, fresh).astype(np.uint8)
                    sid = f"{comment}s{si}"
                    text = _render_sentence(bits, markers, fillers, rng)
                    records.append(
                        SentenceRecord(
                            id=sid, text=text, author_id=author,
                            comment_id=comment, community_id=community,
                        )
                    )
                    truth[sid] = FeatureVector(bits=bits, source="ground_truth")
    return CorpusSplit(records), truth


def _render_sentence(bits, markers, fillers, rng) -> str:
    tokens = [markers[k] for k in np.flatnonzero(bits)]
    n_fill = max(2, 5 - len(tokens)) + int(rng.integers(0, 3))
    tokens.extend(fillers[i] for i in rng.integers(0, len(fillers), size=n_fill))
    order = rng.permutation(len(tokens))
    return " ".join(tokens[i] for i in order)
