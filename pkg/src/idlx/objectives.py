"""Training objectives: margin ranking, weighted contrastive, feature BCE,
variance/decorrelation regularizers, and their staged composition.

All losses accept autodiff tensors and return scalar tensors, so they can
be combined and backpropagated; plain numpy arrays are accepted wherever
a value is constant with respect to the graph (proximity matrices,
feature bits).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import UsageError
from .features import jaccard_matrix

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-4


@dataclass
class LossConfig:
    margin_final: float = 0.5
    margin_warm_steps: int | None = None  # default: length of stage 1
    alpha: float = 0.5
    bce_weight: float = 0.25
    tau: float = 0.07
    topk_positives: int = 5
    var_weight: float = 1.0
    cov_weight: float = 0.04

    def validate(self) -> None:
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError("alpha must lie in [0, 1]")
        if self.margin_final < 0:
            raise UsageError("margin_final must be >= 0")
        if self.topk_positives < 1:
            raise UsageError("topk_positives must be >= 1")


@dataclass
class LossBreakdown:
    """Per-step loss values; ``total`` obeys the stage composition formula."""

    mrl: float = 0.0
    supcon: float = 0.0
    bce: float = 0.0
    var: float = 0.0
    cov: float = 0.0
    total: float = 0.0

    def to_floats(self) -> "LossBreakdown":
        return LossBreakdown(*(float(getattr(self, f)) for f in
                               ("mrl", "supcon", "bce", "var", "cov", "total")))


def margin_schedule(step: int, warm_steps: int, margin_final: float = 0.5) -> float:
    """Linear warmup of the ranking margin from 0 to margin_final."""
    if step < 0:
        raise UsageError("step must be >= 0")
    if warm_steps < 1:
        raise UsageError("warm_steps must be >= 1")
    return margin_final * min(1.0, step / warm_steps)


def ranking_triples(proximity: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays (a, i, j) of all ordered pairs with r(a,i) > r(a,j).

    Anchors range over every item; i, j, a are pairwise distinct and
    equal-proximity pairs are excluded (they would contribute a constant
    hinge offset with no ordering signal).
    """
    r = np.asarray(proximity)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise UsageError("proximity must be a square matrix")
    n = r.shape[0]
    ra = r[:, :, None]  # r(a, i)
    rb = r[:, None, :]  # r(a, j)
    valid = ra > rb
    idx = np.arange(n)
    valid &= idx[:, None, None] != idx[None, :, None]  # i != a
    valid &= idx[:, None, None] != idx[None, None, :]  # j != a
    valid &= idx[None, :, None] != idx[None, None, :]  # i != j
    a, i, j = np.nonzero(valid)
    return a, i, j


def margin_ranking_loss(embeddings, proximity: np.ndarray, lam: float) -> Tensor:
    """Hinge on ordered proximity pairs around every anchor.

    For each anchor a and pair (i, j) with r(a,i) > r(a,j), adds
    max(0, -(r(a,i) - r(a,j)) * (s(a,i) - s(a,j)) + lam) where s is
    cosine similarity. Summed over all qualifying triples.
    """
    e = ad.as_tensor(embeddings)
    if e.ndim != 2:
        raise UsageError("embeddings must be (B, d)")
    if e.shape[0] != np.asarray(proximity).shape[0]:
        raise UsageError("embedding count does not match proximity matrix")
    norms = np.linalg.norm(e.data, axis=1)
    if np.abs(norms - 1.0).max() > NORM_TOLERANCE:
        log.warning(
            "margin_ranking_loss: embeddings off unit norm by %.3g; "
            "cosine uses normalized dot products regardless",
            float(np.abs(norms - 1.0).max()),
        )
    row_norms = ad.sqrt((e * e).sum(axis=1, keepdims=True))
    unit = e * (1.0 / (row_norms + 1e-12))
    a, i, j = ranking_triples(proximity)
    if a.size == 0:
        return ad.tensor(0.0)
    sims = unit @ ad.transpose(unit)
    s_ai = sims[(a, i)]
    s_aj = sims[(a, j)]
    dr = (np.asarray(proximity)[a, i] - np.asarray(proximity)[a, j]).astype(np.float64)
    hinge = ad.relu((s_ai - s_aj) * (-dr) + float(lam))
    return hinge.sum()


def topk_weight_mask(weights: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the k largest off-diagonal weights per row.

    Ties break toward the lower column index. The diagonal never counts
    as a candidate.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    n = w.shape[0]
    np.fill_diagonal(w, -np.inf)
    kept = np.zeros_like(w)
    k = min(k, n - 1)
    for row in range(n):
        order = np.argsort(-w[row], kind="stable")[:k]
        kept[row, order] = np.maximum(w[row, order], 0.0)
    np.fill_diagonal(kept, 0.0)
    return kept


def supcon_loss(projections, feature_bits: np.ndarray, cfg: LossConfig) -> Tensor:
    """Jaccard-weighted supervised contrastive loss over a batch.

    Weights w(x_i, x_j) are Jaccard similarities of the binary feature
    vectors, truncated to the ``topk_positives`` largest per anchor. The
    loss is the negated weighted log-softmax of pairwise similarities at
    temperature tau, with the self term excluded from the denominator,
    normalized by the number of items carrying any positive weight.
    """
    z = ad.as_tensor(projections)
    if z.ndim != 2:
        raise UsageError("projections must be (B, m)")
    B = z.shape[0]
    if B < 2:
        raise UsageError("supervised contrastive loss needs a batch of >= 2")
    bits = np.asarray(feature_bits)
    if bits.shape[0] != B:
        raise UsageError("feature rows do not match batch size")
    weights = topk_weight_mask(jaccard_matrix(bits), cfg.topk_positives)
    active = (weights.sum(axis=1) > 0).sum()
    if active == 0:
        return ad.tensor(0.0)
    logits = (z @ ad.transpose(z)) * (1.0 / cfg.tau)
    # exclude k = i from every denominator
    diag_block = np.zeros((B, B))
    np.fill_diagonal(diag_block, -1e30)
    denom = ad.logsumexp(logits + diag_block, axis=1, keepdims=True)
    log_probs = logits - denom
    weighted = (log_probs * weights).sum()
    return -weighted * (1.0 / float(active))


def feature_bce_loss(logits, targets) -> Tensor:
    """Mean binary cross-entropy with logits over all B x F entries."""
    x = ad.as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if x.shape != t.shape:
        raise UsageError(f"logits shape {x.shape} does not match targets {t.shape}")
    per_entry = ad.softplus(x) - x * t
    return per_entry.mean()


def variance_decorrelation_loss(embeddings) -> tuple[Tensor, Tensor]:
    """Anti-collapse regularizers over a batch.

    var: mean over dimensions of max(0, 1 - std_d), std with the unbiased
    B-1 denominator. cov: mean over dimensions of the squared off-diagonal
    entries of the batch covariance matrix.
    """
    x = ad.as_tensor(embeddings)
    if x.ndim != 2:
        raise UsageError("embeddings must be (B, d)")
    B, d = x.shape
    if B < 2:
        raise UsageError("variance/decorrelation needs a batch of >= 2")
    centered = x - x.mean(axis=0, keepdims=True)
    var_d = (centered * centered).sum(axis=0) * (1.0 / (B - 1))
    std_d = ad.sqrt(var_d)
    var_term = ad.relu(1.0 - std_d).mean()
    cov = (ad.transpose(centered) @ centered) * (1.0 / (B - 1))
    cov_sq = cov * cov
    diag = cov_sq[(np.arange(d), np.arange(d))]
    cov_term = (cov_sq.sum() - diag.sum()) * (1.0 / d)
    return var_term, cov_term


def combined_objective(
    cfg: LossConfig,
    stage: str,
    *,
    mrl,
    var,
    cov,
    supcon=None,
    bce=None,
) -> LossBreakdown:
    """Compose per-part losses into the staged objective.

    pretrain: total = mrl + var_weight * var + cov_weight * cov
    feature:  total = (1 - alpha) * mrl
                      + alpha * (bce_weight * bce + supcon)
                      + var_weight * var + cov_weight * cov

    Parts may be floats or tensors; the breakdown keeps whatever type was
    passed, so ``total`` stays differentiable when tensors come in.
    """
    if stage not in ("pretrain", "feature"):
        raise UsageError(f"unknown stage {stage!r}")
    if mrl is None or var is None or cov is None:
        raise UsageError("mrl, var, and cov are required in every stage")
    reg = var * cfg.var_weight + cov * cfg.cov_weight
    if stage == "pretrain":
        if supcon is not None or bce is not None:
            raise UsageError("pretrain stage takes only mrl and regularizers")
        total = mrl + reg
        return LossBreakdown(mrl=mrl, supcon=0.0, bce=0.0, var=var, cov=cov, total=total)
    if supcon is None or bce is None:
        raise UsageError("feature stage requires supcon and bce")
    feat = bce * cfg.bce_weight + supcon
    total = mrl * (1.0 - cfg.alpha) + feat * cfg.alpha + reg
    return LossBreakdown(mrl=mrl, supcon=supcon, bce=bce, var=var, cov=cov, total=total)


# -- auxiliary heads ----------------------------------------------------------


def init_projection_head(d: int, rng: np.random.Generator, out_dim: int = 256) -> dict[str, Tensor]:
    """Two-layer projection d -> d -> out_dim for the contrastive space."""
    s1, s2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(d)
    return {
        "proj.w1": Tensor(rng.normal(0, s1, size=(d, d)), requires_grad=True),
        "proj.b1": Tensor(np.zeros(d), requires_grad=True),
        "proj.w2": Tensor(rng.normal(0, s2, size=(d, out_dim)), requires_grad=True),
        "proj.b2": Tensor(np.zeros(out_dim), requires_grad=True),
    }


def apply_projection_head(params: dict[str, Tensor], x, eps: float = 1e-12) -> Tensor:
    """Project and L2-normalize; rows land on the unit sphere."""
    h = ad.relu(ad.as_tensor(x) @ params["proj.w1"] + params["proj.b1"])
    out = h @ params["proj.w2"] + params["proj.b2"]
    norms = ad.sqrt((out * out).sum(axis=-1, keepdims=True))
    return out * (1.0 / (norms + eps))


def init_feature_head(d: int, n_features: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Two-layer feature predictor d -> 2d -> F (logits out)."""
    return {
        "feat.w1": Tensor(rng.normal(0, 1.0 / np.sqrt(d), size=(d, 2 * d)), requires_grad=True),
        "feat.b1": Tensor(np.zeros(2 * d), requires_grad=True),
        "feat.w2": Tensor(
            rng.normal(0, 1.0 / np.sqrt(2 * d), size=(2 * d, n_features)), requires_grad=True
        ),
        "feat.b2": Tensor(np.zeros(n_features), requires_grad=True),
    }


def apply_feature_head(params: dict[str, Tensor], x) -> Tensor:
    h = ad.relu(ad.as_tensor(x) @ params["feat.w1"] + params["feat.b1"])
    return h @ params["feat.w2"] + params["feat.b2"]
