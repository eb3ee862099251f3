"""Embedding-alignment objective for supervised fine-tuning.

A trained style encoder provides one target embedding per ground-truth
response, precomputed into a cache. During SFT the language model's
final-layer hidden states are mean-pooled over response tokens, projected
into the style space by a small two-layer head, and pulled toward the
target with a cosine term added to the token cross-entropy. The LM here
is a toy character-level causal transformer; the loss mechanics are the
point, not the model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError, UsageError
from .optim import Adam, warmup_constant_lr
from .serialize import read_embeddings, write_embeddings

log = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1


@dataclass(frozen=True)
class AlignmentSample:
    """One instruction pair; the response is what alignment targets."""

    id: str
    prompt: str
    response: str


def read_samples_jsonl(path) -> list[AlignmentSample]:
    samples = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    samples.append(
                        AlignmentSample(
                            id=str(row["id"]), prompt=str(row["prompt"]),
                            response=str(row["response"]),
                        )
                    )
                except (json.JSONDecodeError, KeyError) as e:
                    raise DataError(f"{path}:{lineno}: bad sample row ({e})") from e
    except OSError as e:
        raise DataError(f"cannot read samples {path}: {e}") from e
    return samples


def write_samples_jsonl(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {"id": s.id, "prompt": s.prompt, "response": s.response},
                    ensure_ascii=False,
                )
                + "\n"
            )


# -- embedding cache -------------------------------------------------------------


class EmbeddingCache:
    """Write-once mapping from sample id to its target style embedding."""

    def __init__(self, vectors: dict[str, np.ndarray] | None = None):
        self._vectors = dict(vectors or {})

    def __contains__(self, sid: str) -> bool:
        return sid in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    @property
    def dim(self) -> int:
        if not self._vectors:
            raise UsageError("empty cache has no dimension")
        return next(iter(self._vectors.values())).shape[0]

    def get(self, sid: str) -> np.ndarray:
        try:
            return self._vectors[sid]
        except KeyError:
            raise DataError(f"no cached embedding for sample {sid!r}") from None

    def matrix_for(self, sids) -> np.ndarray:
        return np.stack([self.get(s) for s in sids])

    def save(self, bin_path, ids_path) -> None:
        ids = list(self._vectors)
        matrix = (
            np.stack([self._vectors[i] for i in ids]) if ids else np.zeros((0, 0), dtype=np.float64)
        )
        write_embeddings(bin_path, ids_path, ids, matrix)

    @classmethod
    def load(cls, bin_path, ids_path) -> "EmbeddingCache":
        ids, matrix = read_embeddings(bin_path, ids_path)
        return cls({sid: matrix[i] for i, sid in enumerate(ids)})


def build_embedding_cache(responses, encoder_state) -> EmbeddingCache:
    """One style embedding per (id, text) response, frozen running mean."""
    from .trainer import embed_corpus

    class _Text:
        __slots__ = ("id", "text")

        def __init__(self, sid, text):
            self.id = sid
            self.text = text

    records = [_Text(sid, text) for sid, text in responses]
    ids, matrix = embed_corpus(encoder_state, records)
    return EmbeddingCache({sid: matrix[i] for i, sid in enumerate(ids)})


# -- toy causal language model -----------------------------------------------------


class CharVocab:
    def __init__(self, chars: list[str]):
        self.chars = list(chars)
        self._ids = {c: i + 2 for i, c in enumerate(self.chars)}

    @classmethod
    def from_samples(cls, samples) -> "CharVocab":
        seen = set()
        for s in samples:
            seen.update(s.prompt)
            seen.update(s.response)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.chars) + 2

    def encode(self, text: str) -> list[int]:
        return [self._ids[c] for c in text if c in self._ids]


@dataclass
class ToyLMConfig:
    n_layers: int = 2
    hidden_dim: int = 64
    max_len: int = 160
    vocab_size: int = 0


def init_lm_params(cfg: ToyLMConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    H = cfg.hidden_dim
    s = 0.02

    def w(*shape):
        return Tensor(rng.normal(0, s, size=shape), requires_grad=True)

    params = {
        "lm.embed": w(cfg.vocab_size, H),
        "lm.pos": w(cfg.max_len, H),
    }
    for i in range(cfg.n_layers):
        p = f"lm.layer{i}."
        params[p + "wq"] = w(H, H)
        params[p + "wk"] = w(H, H)
        params[p + "wv"] = w(H, H)
        params[p + "wo"] = w(H, H)
        params[p + "ln1.g"] = Tensor(np.ones(H), requires_grad=True)
        params[p + "ln1.b"] = Tensor(np.zeros(H), requires_grad=True)
        params[p + "w1"] = w(H, 2 * H)
        params[p + "b1"] = Tensor(np.zeros(2 * H), requires_grad=True)
        params[p + "w2"] = w(2 * H, H)
        params[p + "b2"] = Tensor(np.zeros(H), requires_grad=True)
        params[p + "ln2.g"] = Tensor(np.ones(H), requires_grad=True)
        params[p + "ln2.b"] = Tensor(np.zeros(H), requires_grad=True)
    params["lm.lnf.g"] = Tensor(np.ones(H), requires_grad=True)
    params["lm.lnf.b"] = Tensor(np.zeros(H), requires_grad=True)
    params["lm.wout"] = w(H, cfg.vocab_size)
    params["lm.bout"] = Tensor(np.zeros(cfg.vocab_size), requires_grad=True)
    return params


def _layer_norm(x, gamma, beta, eps=1e-5):
    m = x.mean(axis=-1, keepdims=True)
    c = x - m
    v = (c * c).mean(axis=-1, keepdims=True)
    return c * (1.0 / ad.sqrt(v + eps)) * gamma + beta


def lm_forward(params: dict[str, Tensor], ids: np.ndarray, cfg: ToyLMConfig):
    """Hidden states (B, T, H) after the final norm, plus logits (B, T, V)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, T = ids.shape
    if T > cfg.max_len:
        raise UsageError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise DataError("token id out of vocabulary")
    x = params["lm.embed"][ids] + params["lm.pos"][:T]
    causal = np.triu(np.full((T, T), -1e30), k=1)
    H = cfg.hidden_dim
    scale = 1.0 / np.sqrt(H)
    for i in range(cfg.n_layers):
        p = f"lm.layer{i}."
        h = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = h @ params[p + "wq"]
        k = h @ params[p + "wk"]
        v = h @ params[p + "wv"]
        scores = (q @ ad.transpose(k, (0, 2, 1))) * scale + causal
        probs = ad.softmax(scores, axis=-1)
        x = x + (probs @ v) @ params[p + "wo"]
        h = _layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        x = x + ad.relu(h @ params[p + "w1"] + params[p + "b1"]) @ params[p + "w2"] + params[p + "b2"]
    hidden = _layer_norm(x, params["lm.lnf.g"], params["lm.lnf.b"])
    logits = hidden @ params["lm.wout"] + params["lm.bout"]
    return hidden, logits


def response_cross_entropy(logits, ids: np.ndarray, response_mask: np.ndarray):
    """Mean next-token cross-entropy over response positions only."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(response_mask, dtype=bool)
    if mask.shape != ids.shape:
        raise UsageError("response mask shape does not match token ids")
    b_idx, t_idx = np.nonzero(mask)
    keep = t_idx >= 1  # the first position has no preceding context
    b_idx, t_idx = b_idx[keep], t_idx[keep]
    if b_idx.size == 0:
        raise DataError("no response tokens to score")
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[(b_idx, t_idx - 1, ids[b_idx, t_idx])]
    return -picked.mean()


def pooled_response_state(hidden_states, response_mask):
    """Mean of final-layer states over response positions; prompts excluded."""
    h = ad.as_tensor(hidden_states)
    mask = np.asarray(response_mask, dtype=np.float64)
    single = h.ndim == 2
    if single:
        h = h.reshape((1,) + tuple(h.shape))
        mask = mask[None, :]
    counts = mask.sum(axis=1)
    if not (counts > 0).all():
        raise DataError("a sample has an empty response mask")
    pooled = (h * mask[:, :, None]).sum(axis=1) * (1.0 / counts[:, None])
    return pooled[0] if single else pooled


# -- projection head and losses -------------------------------------------------


def init_projection_head(lm_dim: int, style_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Two-layer map from LM width H to style width d, unit-norm output."""
    return {
        "head.w1": Tensor(rng.normal(0, 1.0 / np.sqrt(lm_dim), size=(lm_dim, lm_dim)), requires_grad=True),
        "head.b1": Tensor(np.zeros(lm_dim), requires_grad=True),
        "head.w2": Tensor(rng.normal(0, 1.0 / np.sqrt(lm_dim), size=(lm_dim, style_dim)), requires_grad=True),
        "head.b2": Tensor(np.zeros(style_dim), requires_grad=True),
    }


def apply_projection_head(params: dict[str, Tensor], h, eps: float = 1e-12) -> Tensor:
    x = ad.relu(ad.as_tensor(h) @ params["head.w1"] + params["head.b1"])
    out = x @ params["head.w2"] + params["head.b2"]
    norms = ad.sqrt((out * out).sum(axis=-1, keepdims=True))
    return out * (1.0 / (norms + eps))


def alignment_loss(h_bar, target_embedding, head_params: dict[str, Tensor]) -> Tensor:
    """1 - cos(g(h_bar), e); averaged when a batch is passed."""
    e = np.asarray(target_embedding, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise NumericError("non-finite target embedding")
    e = e / np.maximum(np.linalg.norm(e, axis=-1, keepdims=True), 1e-12)
    g = apply_projection_head(head_params, h_bar)
    if not np.all(np.isfinite(g.data)):
        raise NumericError("projection head produced non-finite output")
    cos = (g * e).sum(axis=-1)
    return (1.0 - cos).mean() if cos.ndim > 0 else 1.0 - cos


def combined_sft_loss(ce, align, alpha: float):
    """Token cross-entropy plus alpha times the alignment term."""
    if alpha < 0:
        raise UsageError("alpha must be >= 0")
    return ce + align * alpha


# -- SFT loop --------------------------------------------------------------------


@dataclass
class AlignConfig:
    alpha: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 2
    batch_size: int = 16
    holdout_frac: float = 0.1
    warmup_steps: int = 20
    seed: int = 0
    lm: ToyLMConfig = field(default_factory=ToyLMConfig)


def _tokenize(samples, vocab: CharVocab, max_len: int):
    """(B, T) padded ids plus a boolean response mask per sample."""
    encoded = []
    for s in samples:
        prompt = [BOS_ID] + vocab.encode(s.prompt)
        response = vocab.encode(s.response)
        ids = (prompt + response)[:max_len]
        start = min(len(prompt), len(ids))
        if start >= len(ids):
            raise DataError(f"sample {s.id!r} has no response tokens within max_len")
        encoded.append((ids, start))
    T = max(len(ids) for ids, _ in encoded)
    batch = np.full((len(encoded), T), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(encoded), T), dtype=bool)
    for i, (ids, start) in enumerate(encoded):
        batch[i, : len(ids)] = ids
        mask[i, start : len(ids)] = True
    return batch, mask


def _holdout_eval(params, head, samples, cache, vocab, cfg):
    ces, coss = [], []
    with ad.no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start : start + cfg.batch_size]
            ids, mask = _tokenize(chunk, vocab, cfg.lm.max_len)
            hidden, logits = lm_forward(params, ids, cfg.lm)
            ces.append(response_cross_entropy(logits, ids, mask).item() * len(chunk))
            pooled = pooled_response_state(hidden, mask)
            targets = cache.matrix_for([s.id for s in chunk])
            align = alignment_loss(pooled, targets, head).item()
            coss.append((1.0 - align) * len(chunk))
    n = len(samples)
    return {"ce": sum(ces) / n, "mean_cos": sum(coss) / n}


def run_alignment_sft(
    samples,
    cache: EmbeddingCache,
    cfg: AlignConfig | None = None,
    log_path=None,
):
    """Jointly optimize the toy LM and projection head on the combined loss.

    Returns (lm_params, head_params, metrics); metrics include held-out
    cross-entropy and mean cosine before and after training, plus the
    per-step log. Deterministic given cfg.seed.
    """
    cfg = cfg or AlignConfig()
    if cfg.alpha < 0:
        raise UsageError("alpha must be >= 0")
    samples = list(samples)
    missing = [s.id for s in samples if s.id not in cache]
    if missing:
        raise DataError(f"embedding cache misses sample ids: {missing[:5]}")
    if len(samples) < 2:
        raise DataError("alignment needs at least 2 samples")
    vocab = CharVocab.from_samples(samples)
    lm_cfg = ToyLMConfig(
        n_layers=cfg.lm.n_layers, hidden_dim=cfg.lm.hidden_dim,
        max_len=cfg.lm.max_len, vocab_size=len(vocab),
    )
    cfg = AlignConfig(**{**cfg.__dict__, "lm": lm_cfg})
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    params = init_lm_params(lm_cfg, rng)
    head = init_projection_head(lm_cfg.hidden_dim, cache.dim, np.random.default_rng(seeds[1]))
    order = np.random.default_rng(seeds[2]).permutation(len(samples))
    n_holdout = max(1, int(len(samples) * cfg.holdout_frac))
    holdout = [samples[i] for i in order[:n_holdout]]
    train = [samples[i] for i in order[n_holdout:]]
    trainable = dict(params)
    trainable.update(head)
    opt = Adam(trainable, lr=cfg.learning_rate)
    before = _holdout_eval(params, head, holdout, cache, vocab, cfg)
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        batch_rng = np.random.default_rng(seeds[2])
        for epoch in range(cfg.epochs):
            order = batch_rng.permutation(len(train))
            for start in range(0, len(train), cfg.batch_size):
                step += 1
                chunk = [train[i] for i in order[start : start + cfg.batch_size]]
                ids, mask = _tokenize(chunk, vocab, cfg.lm.max_len)
                hidden, logits = lm_forward(params, ids, cfg.lm)
                ce = response_cross_entropy(logits, ids, mask)
                pooled = pooled_response_state(hidden, mask)
                targets = cache.matrix_for([s.id for s in chunk])
                align = alignment_loss(pooled, targets, head)
                total = combined_sft_loss(ce, align, cfg.alpha) if cfg.alpha > 0 else ce
                if not np.isfinite(float(total)):
                    raise NumericError(f"non-finite SFT loss at step {step}")
                opt.zero_grad()
                total.backward()
                opt.step(lr=warmup_constant_lr(step, cfg.learning_rate, cfg.warmup_steps))
                record = {
                    "kind": "step", "step": step, "epoch": epoch,
                    "ce": float(ce), "align": float(align), "total": float(total),
                }
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    after = _holdout_eval(params, head, holdout, cache, vocab, cfg)
    metrics = {
        "before": before,
        "after": after,
        "holdout_size": len(holdout),
        "steps": step,
        "history": history,
    }
    return params, head, metrics
