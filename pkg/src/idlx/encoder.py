"""Style embeddings: toy encoder, layer attention pooling, centering.

The reference encoder is a small trainable stack standing in for a
pretrained transformer: learned token embeddings plus learned position
vectors, then per-layer context mixing (each token combines its own state
with the masked mean over the sequence through two linear maps and a
tanh). Sentence vectors are produced by softmax-weighted mixing of all
layer states followed by masked mean pooling, then centered against a
running mean and L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError, UsageError

PAD_ID = 0
UNK_ID = 1

NORM_EPS = 1e-12


@dataclass
class EncoderConfig:
    n_layers: int = 2
    hidden_dim: int = 32
    max_tokens: int = 512
    vocab_size: int = 0

    def validate(self) -> None:
        if self.n_layers < 1:
            raise UsageError("n_layers must be >= 1")
        if self.hidden_dim < 2:
            raise UsageError("hidden_dim must be >= 2")
        if self.max_tokens < 1:
            raise UsageError("max_tokens must be >= 1")


class Vocab:
    """Whitespace-token vocabulary with reserved pad/unk slots."""

    def __init__(self, words: list[str]):
        self.words = list(words)
        self._ids = {w: i + 2 for i, w in enumerate(self.words)}

    @classmethod
    def from_records(cls, records) -> "Vocab":
        seen = set()
        for r in records:
            seen.update(r.text.split())
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.words) + 2

    def encode(self, text: str, max_tokens: int = 512) -> list[int]:
        tokens = text.split()[:max_tokens]
        return [self._ids.get(t, UNK_ID) for t in tokens]


@dataclass
class RunningMean:
    """Momentum estimate of the global embedding mean."""

    mu: np.ndarray
    momentum: float = 0.01

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if not 0.0 < self.momentum < 1.0:
            raise UsageError("momentum must lie in (0, 1)")

    def update(self, batch_mean: np.ndarray) -> None:
        batch_mean = np.asarray(batch_mean, dtype=np.float64)
        if not np.all(np.isfinite(batch_mean)):
            raise NumericError("running mean update with non-finite batch mean")
        self.mu = (1.0 - self.momentum) * self.mu + self.momentum * batch_mean


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Encoder parameters; names define checkpoint block order."""
    config.validate()
    if config.vocab_size < 2:
        raise UsageError("vocab_size must cover pad and unk")
    d = config.hidden_dim
    scale = 1.0 / np.sqrt(d)
    params: dict[str, Tensor] = {
        "enc.embed": Tensor(rng.normal(0, scale, size=(config.vocab_size, d)), requires_grad=True),
        "enc.pos": Tensor(rng.normal(0, scale, size=(config.max_tokens, d)), requires_grad=True),
    }
    for layer in range(config.n_layers):
        params[f"enc.layer{layer}.w_self"] = Tensor(
            rng.normal(0, scale, size=(d, d)), requires_grad=True
        )
        params[f"enc.layer{layer}.w_ctx"] = Tensor(
            rng.normal(0, scale, size=(d, d)), requires_grad=True
        )
        params[f"enc.layer{layer}.bias"] = Tensor(np.zeros(d), requires_grad=True)
    return params


def encode_layers(
    token_ids, params: dict[str, Tensor], config: EncoderConfig
) -> tuple[Tensor, np.ndarray]:
    """Run the encoder, returning all layer states plus the pad mask.

    ``token_ids`` is (T,) or (B, T) of integer ids (PAD_ID marks padding).
    Returns states of shape (L+1, B, T, d) (B = 1 for a single sequence)
    and a float mask (B, T). Deterministic given parameters and
    differentiable with respect to them.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise UsageError("token ids must be (T,) or (B, T)")
    if ids.shape[1] == 0:
        raise DataError("empty token sequence (nothing to encode)")
    if ids.shape[1] > config.max_tokens:
        raise UsageError(f"sequence length {ids.shape[1]} exceeds max_tokens {config.max_tokens}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise DataError(
            f"token id out of vocabulary: ids span [{ids.min()}, {ids.max()}], "
            f"vocab size {config.vocab_size}"
        )
    mask = (ids != PAD_ID).astype(np.float64)
    if not mask.any(axis=1).all():
        raise DataError("a sequence is entirely padding")

    T = ids.shape[1]
    h = params["enc.embed"][ids] + params["enc.pos"][:T]
    states = [h]
    counts = mask.sum(axis=1)[:, None, None]
    mask3 = mask[:, :, None]
    for layer in range(config.n_layers):
        ctx = (h * mask3).sum(axis=1, keepdims=True) * (1.0 / counts)
        update = ad.tanh(
            h @ params[f"enc.layer{layer}.w_self"]
            + ctx @ params[f"enc.layer{layer}.w_ctx"]
            + params[f"enc.layer{layer}.bias"]
        )
        h = h + update * mask3
        states.append(h)
    return ad.stack(states, axis=0), mask


def init_layer_attention(n_layers: int) -> Tensor:
    """Scalar mixing logits over the embedding layer plus each block."""
    return Tensor(np.zeros(n_layers + 1), requires_grad=True)


def layer_attention_weights(logits) -> Tensor:
    return ad.softmax(ad.as_tensor(logits), axis=-1)


def layer_attention_pool(states, mask, logits) -> Tensor:
    """Softmax-weighted layer mix followed by masked mean pooling.

    ``states`` is (L+1, ..., T, d); ``mask`` is (..., T). Returns (..., d).
    """
    states = ad.as_tensor(states)
    logits = ad.as_tensor(logits)
    if states.shape[0] != logits.shape[0]:
        raise UsageError(
            f"{logits.shape[0]} layer logits for {states.shape[0]} layer states"
        )
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=-1)
    if not (counts > 0).all():
        raise DataError("all tokens masked; nothing to pool")
    alphas = ad.softmax(logits, axis=-1)
    shaped = alphas.reshape((states.shape[0],) + (1,) * (states.ndim - 1))
    mixed = (states * shaped).sum(axis=0)
    pooled = (mixed * mask[..., None]).sum(axis=-2) * (1.0 / counts[..., None])
    return pooled


def center_and_normalize(
    vectors, mean: RunningMean, training: bool = False, eps: float = NORM_EPS
) -> Tensor:
    """(v - mu) / (||v - mu|| + eps); optionally update mu afterwards.

    The running mean is a buffer, not a graph node: gradients flow through
    the centering but not into mu. The eps guard makes the degenerate
    v == mu case return a near-zero vector instead of raising.
    """
    v = ad.as_tensor(vectors)
    if not np.all(np.isfinite(v.data)):
        raise NumericError("non-finite input to center_and_normalize")
    centered = v - mean.mu
    norms = ad.sqrt((centered * centered).sum(axis=-1, keepdims=True))
    out = centered * (1.0 / (norms + eps))
    if training:
        batch_mean = v.data.mean(axis=0) if v.ndim > 1 else v.data
        mean.update(batch_mean)
    return out


def embed_records(
    records,
    params: dict[str, Tensor],
    logits: Tensor,
    config: EncoderConfig,
    vocab: Vocab,
    mean: RunningMean,
    batch_size: int = 64,
) -> np.ndarray:
    """Finalized (unit-norm) style embeddings for records, frozen mu."""
    out = []
    with ad.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            ids = pad_batch([vocab.encode(r.text, config.max_tokens) for r in chunk])
            states, mask = encode_layers(ids, params, config)
            pooled = layer_attention_pool(states, mask, logits)
            out.append(center_and_normalize(pooled, mean, training=False).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, config.hidden_dim))


def pad_batch(sequences: list[list[int]]) -> np.ndarray:
    """Right-pad integer id sequences with PAD_ID into a (B, T) array."""
    if not sequences:
        raise UsageError("empty batch")
    if any(len(s) == 0 for s in sequences):
        raise DataError("empty token sequence in batch")
    T = max(len(s) for s in sequences)
    out = np.full((len(sequences), T), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
    return out
