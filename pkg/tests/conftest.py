"""Shared fixtures: a small split synthetic corpus with ground-truth features."""

import pytest

from idlx.corpus import split_by_author
from idlx.features import FeatureCache
from idlx.synth import SynthConfig, generate_corpus, synthetic_inventory


def make_synth_world(seed=0, **overrides):
    """Split synthetic corpus + ground-truth feature cache + inventory."""
    cfg = SynthConfig(
        n_communities=4,
        authors_per_community=8,
        comments_per_author=3,
        sentences_per_comment=3,
        feature_inventory_size=6,
        author_perturbation=0.8,
        vocab_size=30,
        seed=seed,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    corpus, truth = generate_corpus(cfg)
    corpus = split_by_author(corpus, heldout_per_dialect=2, train_authors_cap=200, seed=seed)
    inv = synthetic_inventory(cfg.feature_inventory_size)
    cache = FeatureCache(inv.fingerprint(), len(inv))
    for sid, vec in truth.items():
        cache.put(sid, vec)
    return cfg, corpus, cache, inv


@pytest.fixture(scope="session")
def synth_world():
    return make_synth_world(seed=0)
