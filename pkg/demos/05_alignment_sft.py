"""Embedding-alignment SFT on the toy character LM.

A briefly trained style encoder provides target embeddings for every
response; the toy LM is then fine-tuned with cross-entropy plus the
cosine alignment term, and held-out alignment is compared before/after
against a plain-SFT run with the same seed and schedule.
"""

from idlx.align import (
    AlignConfig,
    AlignmentSample,
    ToyLMConfig,
    build_embedding_cache,
    run_alignment_sft,
)
from idlx.corpus import split_by_author
from idlx.encoder import EncoderConfig
from idlx.synth import SynthConfig, default_community_priors, generate_corpus
from idlx.trainer import TrainConfig, init_train_state, run_pretrain_stage

synth = SynthConfig(
    n_communities=4,
    authors_per_community=12,
    comments_per_author=3,
    sentences_per_comment=3,
    feature_inventory_size=8,
    community_feature_priors=default_community_priors(4, 8, seed=33),
    author_perturbation=1.0,
    vocab_size=30,
    seed=33,
)
corpus, _ = generate_corpus(synth)
corpus = split_by_author(corpus, heldout_per_dialect=2, train_authors_cap=200, seed=33)

print("training a quick ranking-only style encoder for the targets")
tcfg = TrainConfig(learning_rate=3e-3, pretrain_epochs=10, validate_every=100,
                   groups_per_batch=2, rng_seed=33, dev_groups=4)
encoder = run_pretrain_stage(
    corpus, tcfg, state=init_train_state(corpus, tcfg, EncoderConfig(2, 32, 32))
)

samples = [
    AlignmentSample(id=r.id, prompt=f"[{r.community_id}] responde: ", response=r.text)
    for r in corpus.records
]
cache = build_embedding_cache([(s.id, s.response) for s in samples], encoder)
print(f"cached {len(cache)} target embeddings of dimension {cache.dim}")

for alpha in (0.5, 0.0):
    cfg = AlignConfig(
        alpha=alpha, learning_rate=1e-3, epochs=2, batch_size=16, seed=4,
        lm=ToyLMConfig(n_layers=2, hidden_dim=32, max_len=96),
    )
    _, _, metrics = run_alignment_sft(samples, cache, cfg)
    before, after = metrics["before"], metrics["after"]
    print(
        f"alpha={alpha}: held-out mean cos {before['mean_cos']:+.3f} -> {after['mean_cos']:+.3f}"
        f"   held-out CE {before['ce']:.3f} -> {after['ce']:.3f}"
        f"   ({metrics['steps']} steps)"
    )
print("the alignment term buys style-space cosine without breaking the CE budget")
