"""Evaluation machinery on constructed embeddings: baselines, open-set,
ensembling, the lexical model, and a linear probe."""

import numpy as np

from idlx.evalsuite import (
    UNK,
    ProbeConfig,
    centroid_report,
    correlation_report,
    ensemble_predict,
    kmeans_cluster_eval,
    lexical_classifier,
    open_set_predict,
    retrieval_accuracy,
    train_probe,
    tune_ensemble_weight,
    tune_unk_threshold,
)

rng = np.random.default_rng(5)

# three dialect clusters on the unit sphere, mildly overlapping
centers = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])
labels = ["ar", "cl", "mx"]


def draw(n, spread):
    X, y = [], []
    for c, lab in zip(centers, labels):
        pts = c + rng.normal(0, spread, size=(n, 4))
        X.append(pts / np.linalg.norm(pts, axis=1, keepdims=True))
        y += [lab] * n
    return np.concatenate(X), y


train_X, train_y = draw(40, 0.35)
test_X, test_y = draw(15, 0.35)

rep = centroid_report(train_X, train_y, test_X, test_y)
print("centroid baseline:", {k: round(v, 3) for k, v in rep.metrics.items()})

rep = kmeans_cluster_eval(train_X, test_X, test_y, seed=0)
print("k-means baseline: ", {k: round(v, 3) for k, v in rep.metrics.items()})

rep = retrieval_accuracy(test_X, test_y, trials=2000, seed=0)
print(f"retrieval Accuracy*: {rep.metrics['accuracy_star']:.3f} (random baseline 0.05)")

# open-set prediction: confident vs ambiguous distributions
print("\nopen-set at threshold 0.3:")
for probs in ([0.85, 0.10, 0.05], [0.45, 0.40, 0.15]):
    outcome = open_set_predict(np.array(probs), threshold=0.3, classes=labels)
    print(f"  {probs} -> {outcome}")

# lexical model + ensemble with a (here: synthetic) neural distribution
texts_a = ["che vos sabes que onda", "vos tenes razon che boludo"] * 10
texts_b = ["vale tio que guay es esto", "tio vale venga hasta luego"] * 10
lex_probs, lex_model = lexical_classifier(
    texts_a + texts_b, ["ar"] * 20 + ["es"] * 20, ["che vos que onda", "venga tio vale"], seed=0
)
print("\nlexical probabilities:", np.round(lex_probs, 3).tolist())
neural = np.array([[0.6, 0.4], [0.5, 0.5]])
mixed = ensemble_predict(lex_probs, neural, omega=0.5)
print("ensemble at omega 0.5: ", np.round(mixed, 3).tolist())

omega, f1 = tune_ensemble_weight(lex_probs, neural, ["ar", "es"], lex_model.classes)
print(f"tuned omega {omega:.2f} with macro F1 {f1:.3f}")

# UNK threshold tuning on a small development half
dev_probs = np.array([[0.9, 0.1], [0.55, 0.45], [0.52, 0.48], [0.2, 0.8]])
dev_gold = ["ar", UNK, UNK, "es"]
threshold, f1 = tune_unk_threshold(dev_probs, dev_gold, ["ar", "es"])
print(f"tuned UNK threshold {threshold:.2f} with macro F1 {f1:.3f}")

# linear probe over frozen embeddings
probe = train_probe(train_X, train_y, test_X, test_y, mode="single_label",
                    cfg=ProbeConfig(seed=0))
print("\nprobe dev metrics:", {k: round(v, 3) for k, v in probe.report.metrics.items()})

# style-vs-semantics correlation on synthetic similarity pairs
style = rng.uniform(0, 1, size=200)
semantic = 0.15 * style + rng.normal(0, 0.2, size=200)
rep = correlation_report(list(zip(style, semantic)))
print(f"pearson correlation of weakly coupled similarities: {rep.rho:.3f}")
