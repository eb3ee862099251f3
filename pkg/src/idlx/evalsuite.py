"""Evaluation machinery over frozen embeddings.

Similarity scoring, style-vs-semantics correlation, nearest-centroid and
k-means baselines, retrieval separation, open-set thresholding, a
character n-gram TF-IDF lexical baseline, probability ensembling, and
linear probes trained on top of style embeddings.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, UsageError
from .optim import Adam, clip_grad_norm, warmup_linear_decay_lr

log = logging.getLogger(__name__)

UNK = "<UNK>"


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    config_fingerprint: str = ""
    seed: int | None = None
    predictions: list | None = None

    def to_json(self, include_predictions: bool = False) -> str:
        payload = {
            "task": self.task,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
        }
        if include_predictions and self.predictions is not None:
            payload["predictions"] = self.predictions
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)


# -- metrics -------------------------------------------------------------------


def accuracy(gold, pred) -> float:
    if len(gold) != len(pred):
        raise UsageError("gold/pred length mismatch")
    if not gold:
        raise UsageError("empty evaluation set")
    return sum(1 for g, p in zip(gold, pred) if g == p) / len(gold)


def macro_f1(gold, pred, labels=None) -> float:
    """Unweighted mean of per-class F1 over the label universe."""
    if len(gold) != len(pred):
        raise UsageError("gold/pred length mismatch")
    if labels is None:
        labels = sorted(set(gold) | set(pred))
    scores = []
    for c in labels:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def multilabel_macro_f1(gold_sets, pred_sets, labels) -> float:
    scores = []
    for c in labels:
        tp = sum(1 for g, p in zip(gold_sets, pred_sets) if c in g and c in p)
        fp = sum(1 for g, p in zip(gold_sets, pred_sets) if c not in g and c in p)
        fn = sum(1 for g, p in zip(gold_sets, pred_sets) if c in g and c not in p)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def exact_match(gold_sets, pred_sets) -> float:
    """Fraction of items whose full predicted label set equals the gold set."""
    if len(gold_sets) != len(pred_sets):
        raise UsageError("gold/pred length mismatch")
    if not gold_sets:
        raise UsageError("empty evaluation set")
    return sum(1 for g, p in zip(gold_sets, pred_sets) if set(g) == set(p)) / len(gold_sets)


# -- similarity ----------------------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("cosine of a zero vector is defined as 0")
        return 0.0
    return float(a @ b / (na * nb))


@dataclass
class CorrelationReport:
    rho: float
    rows: list[tuple] = field(default_factory=list)  # (pair_id, style, semantic, proximity)

    def write_scatter_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("pair_id\tstyle_sim\tsemantic_sim\tproximity\n")
            for pid, style, semantic, prox in self.rows:
                fh.write(f"{pid}\t{style:.6f}\t{semantic:.6f}\t{prox}\n")


def correlation_report(pairs, pair_ids=None, proximity=None) -> CorrelationReport:
    """Sample Pearson correlation of (style, semantic) similarity pairs."""
    pairs = [(float(s), float(m)) for s, m in pairs]
    if len(pairs) < 3:
        raise UsageError("correlation needs at least 3 pairs")
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        raise DataError("correlation undefined: zero variance in similarities")
    rho = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    ids = pair_ids if pair_ids is not None else [f"p{i}" for i in range(len(pairs))]
    prox = proximity if proximity is not None else ["-"] * len(pairs)
    rows = [(ids[i], x[i], y[i], prox[i]) for i in range(len(pairs))]
    return CorrelationReport(rho=rho, rows=rows)


# -- geometric baselines ---------------------------------------------------------


def centroid_classify(train_embeddings, train_labels, test_embeddings):
    """Nearest per-class mean centroid under Euclidean distance.

    Distance ties resolve to the lexicographically smallest label.
    """
    X = np.asarray(train_embeddings, dtype=np.float64)
    T = np.asarray(test_embeddings, dtype=np.float64)
    labels = list(train_labels)
    if X.shape[0] != len(labels):
        raise UsageError("train embeddings and labels disagree")
    if not labels:
        raise UsageError("no training classes")
    classes = sorted(set(labels))
    centroids = np.stack([X[np.array([l == c for l in labels])].mean(axis=0) for c in classes])
    d2 = ((T[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    # argmin picks the first (smallest-label) column on exact ties
    pred = [classes[int(k)] for k in d2.argmin(axis=1)]
    return pred, centroids, classes


def centroid_report(train_embeddings, train_labels, test_embeddings, test_labels) -> EvalReport:
    pred, _, classes = centroid_classify(train_embeddings, train_labels, test_embeddings)
    gold = list(test_labels)
    return EvalReport(
        task="centroid",
        metrics={
            "accuracy": accuracy(gold, pred),
            "exact_match": accuracy(gold, pred),
            "macro_f1": macro_f1(gold, pred, labels=classes),
        },
        predictions=pred,
    )


def kmeans_cluster_eval(
    train_embeddings, test_embeddings, test_labels, k: int | None = None, seed: int = 0
) -> EvalReport:
    """Fit k-means on train, map clusters to dominant test labels, score.

    Seeding is k-means++ with a fixed iteration cap of 300 and tolerance
    1e-4; cluster-to-label ties resolve to the smaller label.
    """
    from sklearn.cluster import KMeans

    X = np.asarray(train_embeddings, dtype=np.float64)
    gold = list(test_labels)
    if k is None:
        k = len(set(gold))
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > X.shape[0]:
        raise UsageError(f"k={k} exceeds the {X.shape[0]} training points")
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, max_iter=300, tol=1e-4,
                random_state=seed)
    km.fit(X)
    assign = km.predict(np.asarray(test_embeddings, dtype=np.float64))
    mapping = {}
    for cluster in range(k):
        members = [gold[i] for i in range(len(gold)) if assign[i] == cluster]
        if members:
            counts = {}
            for m in members:
                counts[m] = counts.get(m, 0) + 1
            best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        else:
            best = sorted(set(gold))[0]
        mapping[cluster] = best
    pred = [mapping[int(c)] for c in assign]
    return EvalReport(
        task="kmeans",
        metrics={
            "accuracy": accuracy(gold, pred),
            "macro_f1": macro_f1(gold, pred, labels=sorted(set(gold))),
        },
        seed=seed,
        predictions=pred,
    )


def retrieval_accuracy(embeddings, labels, trials: int = 1000, seed: int = 0) -> EvalReport:
    """Accuracy*: fraction of trials where all 3 same-label candidates
    outrank all 3 different-label candidates by cosine similarity.

    Boundary ties count as failures. Anchors whose label cannot supply 3
    positives (or with fewer than 3 negatives available) are ineligible.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if X.shape[0] != len(labels):
        raise UsageError("embeddings and labels disagree")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    unit = X / np.maximum(norms, 1e-12)
    counts = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    n = len(labels)
    eligible = [i for i, l in enumerate(labels) if counts[l] >= 4 and (n - counts[l]) >= 3]
    if not eligible:
        raise DataError("no anchor has 3 same-label and 3 different-label candidates")
    by_label: dict = {}
    for i, l in enumerate(labels):
        by_label.setdefault(l, []).append(i)
    rng = np.random.default_rng(seed)
    successes = 0
    for _ in range(trials):
        anchor = eligible[int(rng.integers(0, len(eligible)))]
        same = [i for i in by_label[labels[anchor]] if i != anchor]
        pos = rng.choice(same, size=3, replace=False)
        other = [i for i in range(n) if labels[i] != labels[anchor]]
        neg = rng.choice(other, size=3, replace=False)
        sims_pos = unit[pos] @ unit[anchor]
        sims_neg = unit[neg] @ unit[anchor]
        if sims_pos.min() > sims_neg.max():
            successes += 1
    return EvalReport(
        task="retrieval",
        metrics={"accuracy_star": successes / trials, "trials": trials},
        seed=seed,
    )


# -- open-set and ensembling -----------------------------------------------------


def open_set_predict(class_probabilities, threshold: float, classes=None):
    """Argmax label unless the top-two probability gap falls below threshold."""
    p = np.asarray(class_probabilities, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise UsageError("probabilities must be a nonempty vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise UsageError(f"probabilities sum to {p.sum():.8f}, not 1")
    order = np.argsort(-p, kind="stable")
    top = int(order[0])
    second = float(p[order[1]]) if p.size > 1 else 0.0
    if (float(p[top]) - second) < threshold:
        return UNK
    return classes[top] if classes is not None else top


def ensemble_predict(p_lex, p_neural, omega: float) -> np.ndarray:
    """Convex combination omega * P_lex + (1 - omega) * P_neural."""
    a = np.asarray(p_lex, dtype=np.float64)
    b = np.asarray(p_neural, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"probability matrices disagree: {a.shape} vs {b.shape}")
    if not 0.0 <= omega <= 1.0:
        raise UsageError("omega must lie in [0, 1]")
    return omega * a + (1.0 - omega) * b


def tune_unk_threshold(probabilities, gold, classes, grid_size: int = 21) -> tuple[float, float]:
    """Sweep thresholds in [0, 1], maximizing macro F1 (UNK as a class)."""
    best_t, best_f1 = 0.0, -1.0
    universe = sorted(set(classes) | set(gold) | {UNK})
    for t in np.linspace(0.0, 1.0, grid_size):
        pred = [open_set_predict(row, float(t), classes) for row in probabilities]
        f1 = macro_f1(list(gold), pred, labels=universe)
        if f1 > best_f1 + 1e-12:
            best_t, best_f1 = float(t), f1
    return best_t, best_f1


def tune_ensemble_weight(p_lex, p_neural, gold, classes, grid_size: int = 21) -> tuple[float, float]:
    """Sweep omega in [0, 1], maximizing macro F1 of argmax predictions."""
    best_w, best_f1 = 0.0, -1.0
    for w in np.linspace(0.0, 1.0, grid_size):
        mixed = ensemble_predict(p_lex, p_neural, float(w))
        pred = [classes[int(i)] for i in mixed.argmax(axis=1)]
        f1 = macro_f1(list(gold), pred, labels=sorted(set(classes) | set(gold)))
        if f1 > best_f1 + 1e-12:
            best_w, best_f1 = float(w), f1
    return best_w, best_f1


# -- lexical baseline -------------------------------------------------------------


@dataclass
class LexicalModel:
    vectorizer: object
    classifier: object
    classes: list

    def predict_proba(self, texts) -> np.ndarray:
        return self.classifier.predict_proba(self.vectorizer.transform(list(texts)))


def lexical_classifier(
    train_texts,
    train_labels,
    test_texts,
    ngram_range: tuple[int, int] = (2, 5),
    seed: int = 0,
    C: float = 1.0,
) -> tuple[np.ndarray, LexicalModel]:
    """Character n-gram TF-IDF + multinomial logistic regression.

    Returns the test probability matrix (columns ordered by sorted class
    label) and the fitted model. Texts sharing no n-grams with the train
    set get the model's zero-feature (bias-driven) distribution.
    """
    from sklearn.feature_extraction.text import TfidfVectorizer
    from sklearn.linear_model import LogisticRegression

    labels = list(train_labels)
    if len(set(labels)) < 2:
        raise UsageError("lexical classifier needs at least 2 classes")
    vec = TfidfVectorizer(analyzer="char", ngram_range=ngram_range)
    X = vec.fit_transform(list(train_texts))
    clf = LogisticRegression(
        solver="saga", C=C, tol=1e-4, max_iter=2000, random_state=seed
    )
    clf.fit(X, labels)
    model = LexicalModel(vectorizer=vec, classifier=clf, classes=list(clf.classes_))
    return model.predict_proba(test_texts), model


# -- linear probes -----------------------------------------------------------------


@dataclass
class ProbeConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 25
    patience: int = 3  # epochs without dev improvement
    warmup_ratio: float = 0.1
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    label_smoothing: float = 0.0
    multi_label_threshold: float = 0.5
    seed: int = 0


@dataclass
class ProbeResult:
    weights: np.ndarray
    bias: np.ndarray
    classes: list
    mode: str
    report: EvalReport
    history: list = field(default_factory=list)

    def logits(self, embeddings) -> np.ndarray:
        return np.asarray(embeddings, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, embeddings) -> np.ndarray:
        z = self.logits(embeddings)
        if self.mode == "single_label":
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, embeddings):
        probs = self.predict_proba(embeddings)
        if self.mode == "single_label":
            return [self.classes[int(i)] for i in probs.argmax(axis=1)]
        return [
            {self.classes[j] for j in np.flatnonzero(row > 0.5)} for row in probs
        ]


def _single_label_targets(labels, classes, smoothing):
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((len(labels), len(classes)))
    for i, l in enumerate(labels):
        if l not in index:
            raise UsageError(f"label {l!r} absent from the training classes")
        onehot[i, index[l]] = 1.0
    if smoothing:
        onehot = (1.0 - smoothing) * onehot + smoothing / len(classes)
    return onehot


def _multi_label_targets(label_sets, classes):
    index = {c: i for i, c in enumerate(classes)}
    hot = np.zeros((len(label_sets), len(classes)))
    for i, ls in enumerate(label_sets):
        for l in ls:
            if l not in index:
                raise UsageError(f"label {l!r} absent from the training classes")
            hot[i, index[l]] = 1.0
    return hot


def train_probe(
    embeddings,
    labels,
    dev_embeddings,
    dev_labels,
    mode: str = "single_label",
    cfg: ProbeConfig | None = None,
) -> ProbeResult:
    """Linear head over frozen style embeddings.

    single_label: softmax cross-entropy with optional label smoothing.
    multi_label: per-class sigmoid; labels are sets, assignment threshold
    0.5. Optimized with decoupled weight decay, linear warmup then linear
    decay, early stopping on dev macro F1 (patience in epochs).
    """
    cfg = cfg or ProbeConfig()
    if mode not in ("single_label", "multi_label"):
        raise UsageError(f"unknown probe mode {mode!r}")
    X = np.asarray(embeddings, dtype=np.float64)
    Xd = np.asarray(dev_embeddings, dtype=np.float64)
    if mode == "single_label":
        classes = sorted(set(labels))
        targets = _single_label_targets(list(labels), classes, cfg.label_smoothing)
        gold_dev = list(dev_labels)
        unseen = set(gold_dev) - set(classes)
    else:
        classes = sorted({l for ls in labels for l in ls})
        targets = _multi_label_targets(list(labels), classes)
        gold_dev = [set(ls) for ls in dev_labels]
        unseen = {l for ls in gold_dev for l in ls} - set(classes)
    if unseen:
        raise UsageError(f"dev labels absent from train: {sorted(unseen)[:5]}")
    n, d = X.shape
    rng = np.random.default_rng(cfg.seed)
    params = {
        "probe.w": Tensor(rng.normal(0, 1.0 / np.sqrt(d), size=(d, len(classes))), requires_grad=True),
        "probe.b": Tensor(np.zeros(len(classes)), requires_grad=True),
    }
    opt = Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    steps_per_epoch = max(1, int(np.ceil(n / cfg.batch_size)))
    total_steps = cfg.max_epochs * steps_per_epoch
    warmup = max(1, int(cfg.warmup_ratio * total_steps))

    def dev_f1(result_w, result_b):
        probe = ProbeResult(result_w, result_b, classes, mode, report=None)
        if mode == "single_label":
            return macro_f1(gold_dev, probe.predict(Xd), labels=classes)
        return multilabel_macro_f1(gold_dev, probe.predict(Xd), classes)

    best = (-1.0, None, None)
    since_best = 0
    history = []
    step = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            step += 1
            rows = order[start : start + cfg.batch_size]
            xb = ad.Tensor(X[rows])
            logits = xb @ params["probe.w"] + params["probe.b"]
            if mode == "single_label":
                logp = ad.log_softmax(logits, axis=1)
                loss = -(logp * targets[rows]).sum() * (1.0 / len(rows))
            else:
                loss = (ad.softplus(logits) - logits * targets[rows]).mean()
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, cfg.grad_clip)
            lr = warmup_linear_decay_lr(step, cfg.learning_rate, warmup, total_steps)
            opt.step(lr=lr)
            epoch_loss += loss.item() * len(rows)
        f1 = dev_f1(params["probe.w"].data, params["probe.b"].data)
        history.append({"epoch": epoch, "train_loss": epoch_loss / n, "dev_macro_f1": f1})
        if f1 > best[0] + 1e-12:
            best = (f1, params["probe.w"].data.copy(), params["probe.b"].data.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    f1, w, b = best
    report = EvalReport(task=f"probe_{mode}", metrics={"dev_macro_f1": f1}, seed=cfg.seed)
    result = ProbeResult(weights=w, bias=b, classes=classes, mode=mode, report=report, history=history)
    if mode == "single_label":
        report.metrics["dev_accuracy"] = accuracy(gold_dev, result.predict(Xd))
    else:
        report.metrics["dev_exact_match"] = exact_match(gold_dev, result.predict(Xd))
    return result
