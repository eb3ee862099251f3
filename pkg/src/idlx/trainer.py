"""Two-stage representation training with validation and checkpointing.

Stage 1 (pretrain) optimizes the ranking loss plus anti-collapse
regularizers over the full pre-train split with a linearly warmed margin.
Stage 2 (feature) continues on the feature-annotated train subset, adding
the feature-prediction BCE and the Jaccard-weighted contrastive loss,
with the margin held at its final value. Both stages validate on the dev
split at a fixed cadence and early-stop on the dev objective.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import CorpusSplit
from .encoder import (
    EncoderConfig,
    RunningMean,
    Vocab,
    center_and_normalize,
    embed_records,
    encode_layers,
    init_encoder_params,
    init_layer_attention,
    layer_attention_pool,
    pad_batch,
)
from .errors import DataError, NumericError, UsageError
from .features import FeatureCache
from .objectives import (
    LossConfig,
    apply_feature_head,
    apply_projection_head,
    combined_objective,
    feature_bce_loss,
    init_feature_head,
    init_projection_head,
    margin_ranking_loss,
    margin_schedule,
    ranking_triples,
    supcon_loss,
    variance_decorrelation_loss,
)
from .optim import Adam, warmup_constant_lr
from .sampler import GROUP_SIZE, assemble_training_batch
from .serialize import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

PROJECTION_DIM = 256


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    warmup_steps: int | None = None  # default: min(25000, 10% of total steps)
    pretrain_epochs: int = 3
    feature_epochs: int = 10
    validate_every: int = 250
    patience: int = 25
    groups_per_batch: int = 2
    rng_seed: int = 0
    dev_groups: int = 16
    mean_momentum: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        for name in ("pretrain_epochs", "feature_epochs"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        for name in ("validate_every", "patience", "groups_per_batch", "dev_groups"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        self.loss.validate()


@dataclass
class TrainState:
    step: int
    stage: str
    params: dict[str, Tensor]
    mean: RunningMean
    vocab: Vocab
    encoder_config: EncoderConfig
    config_fingerprint: str
    n_features: int | None = None
    best_dev_metric: float | None = None
    validations_since_best: int = 0
    history: list = field(default_factory=list)


def config_fingerprint(cfg: TrainConfig, enc: EncoderConfig) -> str:
    payload = json.dumps({"train": asdict(cfg), "encoder": asdict(enc)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def init_train_state(
    corpus: CorpusSplit, cfg: TrainConfig, encoder_config: EncoderConfig | None = None
) -> TrainState:
    """Fresh parameters; the vocabulary comes from the non-heldout splits."""
    cfg.validate()
    enc = encoder_config or EncoderConfig()
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(5)
    vocab = Vocab.from_records(corpus.subset(("pretrain", "train")).records)
    enc = EncoderConfig(
        n_layers=enc.n_layers, hidden_dim=enc.hidden_dim,
        max_tokens=enc.max_tokens, vocab_size=len(vocab),
    )
    rng = np.random.default_rng(seeds[0])
    params = init_encoder_params(enc, rng)
    params["attn.logits"] = init_layer_attention(enc.n_layers)
    return TrainState(
        step=0,
        stage="pretrain",
        params=params,
        mean=RunningMean(mu=np.zeros(enc.hidden_dim), momentum=cfg.mean_momentum),
        vocab=vocab,
        encoder_config=enc,
        config_fingerprint=config_fingerprint(cfg, enc),
    )


def _steps_per_epoch(n_sentences: int, groups_per_batch: int) -> int:
    return max(1, math.ceil(n_sentences / (GROUP_SIZE * groups_per_batch)))


def _encode_batch(state: TrainState, records, training: bool) -> Tensor:
    ids = pad_batch(
        [state.vocab.encode(r.text, state.encoder_config.max_tokens) for r in records]
    )
    states, mask = encode_layers(ids, state.params, state.encoder_config)
    pooled = layer_attention_pool(states, mask, state.params["attn.logits"])
    return center_and_normalize(pooled, state.mean, training=training)


def _group_losses(state, groups, cfg, stage, cache, lam, training):
    """Embeddings plus the stage's loss breakdown for one batch of groups."""
    records = [s for g in groups for s in g.sentences]
    emb = _encode_batch(state, records, training)
    n = len(groups)
    mrl = ad.tensor(0.0)
    for gi, g in enumerate(groups):
        seg = emb[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE]
        mrl = mrl + margin_ranking_loss(seg, g.proximity, lam)
    mrl = mrl * (1.0 / n)
    var, cov = variance_decorrelation_loss(emb)
    if stage == "pretrain":
        return emb, combined_objective(cfg.loss, "pretrain", mrl=mrl, var=var, cov=cov)
    bits = cache.bits_for([r.id for r in records])
    logits = apply_feature_head(state.params, emb)
    bce = feature_bce_loss(logits, bits.astype(np.float64))
    z = apply_projection_head(state.params, emb)
    supcon = ad.tensor(0.0)
    for gi, g in enumerate(groups):
        z_seg = z[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE]
        supcon = supcon + supcon_loss(z_seg, bits[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE], cfg.loss)
    supcon = supcon * (1.0 / n)
    return emb, combined_objective(
        cfg.loss, "feature", mrl=mrl, var=var, cov=cov, supcon=supcon, bce=bce
    )


def validate(
    state: TrainState,
    dev: CorpusSplit,
    cache: FeatureCache | None,
    cfg: TrainConfig,
) -> dict[str, float]:
    """Deterministic dev metrics on a fixed set of sampled anchor groups.

    Always reports dev_mrl (at the final margin). With a cache covering
    the dev sentences it adds the feature objective and the feature-head
    macro F1. Pure with respect to parameters and the running mean.
    """
    if len(dev) == 0:
        raise UsageError("dev split is empty")
    dev_seed = np.random.SeedSequence([cfg.rng_seed, 0xDE]).spawn(1)[0]
    groups = assemble_training_batch(dev, cfg.dev_groups, np.random.default_rng(dev_seed))
    lam = cfg.loss.margin_final
    metrics: dict[str, float] = {}
    with ad.no_grad():
        records = [s for g in groups for s in g.sentences]
        emb = _encode_batch(state, records, training=False)
        mrl = 0.0
        mrl_norm = 0.0
        for gi, g in enumerate(groups):
            seg = emb[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE]
            value = margin_ranking_loss(seg, g.proximity, lam).item()
            mrl += value
            mrl_norm += value / max(1, ranking_triples(g.proximity)[0].size)
        metrics["dev_mrl"] = mrl / len(groups)
        # per-triple scale, so it can be composed with per-element losses
        metrics["dev_mrl_per_triple"] = mrl_norm / len(groups)
        has_feats = cache is not None and all(r.id in cache for r in records)
        if has_feats and "feat.w1" in state.params:
            bits = cache.bits_for([r.id for r in records])
            logits = apply_feature_head(state.params, emb)
            bce = feature_bce_loss(logits, bits.astype(np.float64)).item()
            z = apply_projection_head(state.params, emb)
            sc = 0.0
            for gi in range(len(groups)):
                z_seg = z[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE]
                sc += supcon_loss(
                    z_seg, bits[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE], cfg.loss
                ).item()
            sc /= len(groups)
            metrics["dev_bce"] = bce
            metrics["dev_supcon"] = sc
            metrics["dev_feat_f1"] = feature_macro_f1(logits.data, bits)
    return metrics


def feature_macro_f1(logits: np.ndarray, bits: np.ndarray, threshold: float = 0.5) -> float:
    """Per-feature F1 at a fixed sigmoid threshold, macro-averaged."""
    probs = 1.0 / (1.0 + np.exp(-np.asarray(logits)))
    pred = (probs > threshold).astype(int)
    gold = np.asarray(bits).astype(int)
    scores = []
    for f in range(gold.shape[1]):
        tp = int(((pred[:, f] == 1) & (gold[:, f] == 1)).sum())
        fp = int(((pred[:, f] == 1) & (gold[:, f] == 0)).sum())
        fn = int(((pred[:, f] == 0) & (gold[:, f] == 1)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 1.0)
    return float(np.mean(scores))


def _stage_metric(metrics: dict[str, float], stage: str, loss_cfg: LossConfig) -> float:
    # the ranking term enters at per-triple scale so the feature losses
    # (already per-element means) are not drowned out
    if stage == "feature" and "dev_bce" in metrics:
        feat = loss_cfg.bce_weight * metrics["dev_bce"] + metrics["dev_supcon"]
        return (1.0 - loss_cfg.alpha) * metrics["dev_mrl_per_triple"] + loss_cfg.alpha * feat
    return metrics["dev_mrl_per_triple"]


def run_pretrain_stage(
    corpus: CorpusSplit,
    cfg: TrainConfig,
    state: TrainState | None = None,
    log_path=None,
    checkpoint_path=None,
) -> TrainState:
    """Stage 1: ranking loss only, margin warmed from 0."""
    cfg.validate()
    if state is None:
        state = init_train_state(corpus, cfg)
    split = corpus.pretrain_view()
    if len(split) == 0:
        raise DataError("pretrain split is empty")
    total = cfg.pretrain_epochs * _steps_per_epoch(len(split), cfg.groups_per_batch)
    warm = cfg.loss.margin_warm_steps or max(1, total)
    return _run_stage(
        state, split, corpus, cfg, "pretrain", None, total,
        margin_for=lambda step: margin_schedule(step, warm, cfg.loss.margin_final),
        sampler_seed=np.random.SeedSequence([cfg.rng_seed, 1]),
        log_path=log_path, checkpoint_path=checkpoint_path,
    )


def run_feature_stage(
    corpus: CorpusSplit,
    cache: FeatureCache,
    cfg: TrainConfig,
    init: TrainState,
    log_path=None,
    checkpoint_path=None,
) -> TrainState:
    """Stage 2: add feature BCE and weighted contrastive loss on the train split."""
    cfg.validate()
    state = init
    split = corpus.subset("train")
    if len(split) == 0:
        raise DataError("train split is empty")
    if "feat.w1" not in state.params:
        head_rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 4]))
        d = state.encoder_config.hidden_dim
        state.params.update(init_feature_head(d, cache.size, head_rng))
        state.params.update(init_projection_head(d, head_rng, out_dim=PROJECTION_DIM))
        state.n_features = cache.size
    state.stage = "feature"
    state.best_dev_metric = None
    state.validations_since_best = 0
    total = cfg.feature_epochs * _steps_per_epoch(len(split), cfg.groups_per_batch)
    return _run_stage(
        state, split, corpus, cfg, "feature", cache, total,
        margin_for=lambda step: cfg.loss.margin_final,
        sampler_seed=np.random.SeedSequence([cfg.rng_seed, 2]),
        log_path=log_path, checkpoint_path=checkpoint_path,
    )


def _run_stage(
    state, split, corpus, cfg, stage, cache, total_steps, margin_for,
    sampler_seed, log_path=None, checkpoint_path=None,
):
    dev = corpus.subset("dev")
    warmup = cfg.warmup_steps
    if warmup is None:
        warmup = min(25_000, max(1, total_steps // 10))
    sampler_rng = np.random.default_rng(sampler_seed)
    opt = Adam(state.params, lr=cfg.learning_rate)
    best_snapshot = None
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for local_step in range(1, total_steps + 1):
            state.step += 1
            lam = margin_for(local_step - 1)
            lr = warmup_constant_lr(local_step, cfg.learning_rate, warmup)
            groups = assemble_training_batch(split, cfg.groups_per_batch, sampler_rng)
            try:
                _, bd = _group_losses(state, groups, cfg, stage, cache, lam, training=True)
                total_val = float(bd.total)
            except NumericError:
                total_val = float("nan")
            if not np.isfinite(total_val):
                if best_snapshot is not None:
                    _restore(state, best_snapshot)
                    _save_state(state, checkpoint_path)
                raise NumericError(
                    f"non-finite loss at step {state.step}; last good state restored"
                )
            opt.zero_grad()
            bd.total.backward()
            opt.step(lr=lr)
            alphas = ad.softmax(state.params["attn.logits"], axis=-1).data
            record = {
                "kind": "step", "step": state.step, "stage": stage,
                "margin": lam, "lr": lr,
                "mrl": float(bd.mrl), "supcon": float(bd.supcon), "bce": float(bd.bce),
                "var": float(bd.var), "cov": float(bd.cov), "total": total_val,
                "alpha_sum": float(alphas.sum()),
            }
            _emit(state, record, log_fh)
            if len(dev) > 0 and (
                local_step % cfg.validate_every == 0 or local_step == total_steps
            ):
                metrics = validate(state, dev, cache, cfg)
                metric = _stage_metric(metrics, stage, cfg.loss)
                improved = state.best_dev_metric is None or metric < state.best_dev_metric
                if improved:
                    state.best_dev_metric = metric
                    state.validations_since_best = 0
                    best_snapshot = _snapshot(state)
                    _save_state(state, checkpoint_path)
                else:
                    state.validations_since_best += 1
                vrecord = {
                    "kind": "validation", "step": state.step, "stage": stage,
                    "metric": metric, "best": state.best_dev_metric,
                    "since_best": state.validations_since_best, **metrics,
                }
                _emit(state, vrecord, log_fh)
                if state.validations_since_best >= cfg.patience:
                    log.info("early stopping at step %d (patience exhausted)", state.step)
                    break
    finally:
        if log_fh:
            log_fh.close()
    if best_snapshot is not None:
        _restore(state, best_snapshot)
    _save_state(state, checkpoint_path)
    return state


def _emit(state, record, log_fh):
    state.history.append(record)
    if log_fh:
        log_fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _snapshot(state: TrainState) -> dict:
    return {
        "params": {k: v.data.copy() for k, v in state.params.items()},
        "mu": state.mean.mu.copy(),
    }


def _restore(state: TrainState, snapshot: dict) -> None:
    for k, v in snapshot["params"].items():
        state.params[k].data = v.copy()
    state.mean.mu = snapshot["mu"].copy()


def _save_state(state: TrainState, path) -> None:
    if path is not None:
        save_train_state(state, path)


# -- persistence ---------------------------------------------------------------


def save_train_state(state: TrainState, path) -> None:
    meta = {
        "kind": "style_encoder",
        "stage": state.stage,
        "step": state.step,
        "encoder": asdict(state.encoder_config),
        "mean_momentum": state.mean.momentum,
        "vocab": state.vocab.words,
        "config_fingerprint": state.config_fingerprint,
        "n_features": state.n_features,
        "best_dev_metric": state.best_dev_metric,
        "validations_since_best": state.validations_since_best,
    }
    params = {k: v.data for k, v in state.params.items()}
    params["mu"] = state.mean.mu
    save_checkpoint(path, meta, params)


def load_train_state(path) -> TrainState:
    meta, blocks = load_checkpoint(path)
    if meta.get("kind") != "style_encoder":
        raise DataError(f"{path} is not a style-encoder checkpoint")
    mu = blocks.pop("mu")
    params = {k: Tensor(v, requires_grad=True) for k, v in blocks.items()}
    enc = EncoderConfig(**meta["encoder"])
    return TrainState(
        step=int(meta["step"]),
        stage=meta["stage"],
        params=params,
        mean=RunningMean(mu=mu, momentum=meta["mean_momentum"]),
        vocab=Vocab(meta["vocab"]),
        encoder_config=enc,
        config_fingerprint=meta["config_fingerprint"],
        n_features=meta.get("n_features"),
        best_dev_metric=meta.get("best_dev_metric"),
        validations_since_best=int(meta.get("validations_since_best", 0)),
    )


def embed_corpus(state: TrainState, records, batch_size: int = 64) -> tuple[list[str], np.ndarray]:
    """Finalized embeddings (frozen running mean) for a list of records."""
    matrix = embed_records(
        records,
        state.params,
        state.params["attn.logits"],
        state.encoder_config,
        state.vocab,
        state.mean,
        batch_size=batch_size,
    )
    return [r.id for r in records], matrix
