"""Evaluation suite: baselines, open-set, ensembling, probes, metrics."""

import json
import math

import numpy as np
import pytest

from idlx.errors import DataError, UsageError
from idlx.evalsuite import (
    UNK,
    CorrelationReport,
    EvalReport,
    ProbeConfig,
    accuracy,
    centroid_classify,
    centroid_report,
    correlation_report,
    cosine_similarity,
    ensemble_predict,
    exact_match,
    kmeans_cluster_eval,
    lexical_classifier,
    macro_f1,
    multilabel_macro_f1,
    open_set_predict,
    retrieval_accuracy,
    train_probe,
    tune_ensemble_weight,
    tune_unk_threshold,
)


class TestMetrics:
    def test_macro_f1_matches_sklearn(self):
        from sklearn.metrics import f1_score

        rng = np.random.default_rng(0)
        for _ in range(30):
            labels = ["a", "b", "c", "d"]
            gold = rng.choice(labels, size=40).tolist()
            pred = rng.choice(labels, size=40).tolist()
            ours = macro_f1(gold, pred, labels=labels)
            theirs = f1_score(gold, pred, labels=labels, average="macro", zero_division=0)
            assert ours == pytest.approx(theirs, abs=1e-12)

    def test_exact_match_multilabel(self):
        gold = [{"a"}, {"a", "b"}, set()]
        pred = [{"a"}, {"a"}, set()]
        assert exact_match(gold, pred) == pytest.approx(2 / 3)

    def test_single_label_exact_match_equals_accuracy(self):
        gold = ["x", "y", "x", "z"]
        pred = ["x", "x", "x", "z"]
        assert accuracy(gold, pred) == exact_match([{g} for g in gold], [{p} for p in pred])


class TestCosine:
    def test_self_similarity(self):
        assert cosine_similarity([0.6, 0.8], [0.6, 0.8]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_direct_dot(self):
        assert cosine_similarity([0.6, 0.8], [1.0, 0.0]) == pytest.approx(0.6)

    def test_zero_vector_defined_as_zero(self, caplog):
        with caplog.at_level("WARNING"):
            assert cosine_similarity([0.0, 0.0], [1.0, 0.0]) == 0.0


class TestCorrelation:
    def test_perfect_linear(self):
        pairs = [(i, 2 * i + 1) for i in range(5)]
        assert correlation_report(pairs).rho == pytest.approx(1.0)

    def test_perfect_anti_linear(self):
        pairs = [(i, -3 * i) for i in range(5)]
        assert correlation_report(pairs).rho == pytest.approx(-1.0)

    def test_textbook_formula_on_fixed_points(self):
        xs = [0.1, 0.4, 0.2, 0.9, 0.5]
        ys = [0.3, 0.1, 0.6, 0.8, 0.2]
        mx, my = sum(xs) / 5, sum(ys) / 5
        cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / 5
        sx = math.sqrt(sum((a - mx) ** 2 for a in xs) / 5)
        sy = math.sqrt(sum((b - my) ** 2 for b in ys) / 5)
        expected = cov / (sx * sy)
        assert correlation_report(list(zip(xs, ys))).rho == pytest.approx(expected, abs=1e-12)

    def test_too_few_pairs_rejected(self):
        with pytest.raises(UsageError):
            correlation_report([(1, 2), (3, 4)])

    def test_zero_variance_rejected(self):
        with pytest.raises(DataError):
            correlation_report([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)])

    def test_scatter_export_format(self, tmp_path):
        rep = correlation_report(
            [(0.1, 0.2), (0.3, 0.4), (0.5, 0.1)], pair_ids=["a", "b", "c"], proximity=[3, 1, 0]
        )
        path = tmp_path / "scatter.tsv"
        rep.write_scatter_tsv(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "pair_id\tstyle_sim\tsemantic_sim\tproximity"
        assert lines[1].startswith("a\t0.100000\t0.200000\t3")


class TestCentroid:
    def test_zero_distance_test_point(self):
        train = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        labels = ["a", "b", "c"]
        pred, _, _ = centroid_classify(train, labels, np.array([[10.0, 0.0]]))
        assert pred == ["b"]

    def test_tie_breaks_to_smaller_label(self):
        train = np.array([[-1.0, 0.0], [1.0, 0.0]])
        pred, _, _ = centroid_classify(train, ["b", "a"], np.array([[0.0, 0.0]]))
        assert pred == ["a"]

    def test_three_class_hand_distances(self):
        # centroids: a -> (0,0), b -> (4,0), c -> (0,4)
        train = np.array([[0, 0], [0, 0], [4, 0], [0, 4]], dtype=float)
        labels = ["a", "a", "b", "c"]
        tests = np.array([[1.0, 0.0], [3.0, 0.1], [0.5, 3.0]])
        pred, _, _ = centroid_classify(train, labels, tests)
        assert pred == ["a", "b", "c"]

    def test_translation_and_rotation_invariant(self):
        rng = np.random.default_rng(1)
        train = rng.normal(size=(20, 4))
        labels = rng.choice(["x", "y", "z"], size=20).tolist()
        tests = rng.normal(size=(10, 4))
        base, _, _ = centroid_classify(train, labels, tests)
        shift = rng.normal(size=4)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        moved, _, _ = centroid_classify((train + shift) @ q, labels, (tests + shift) @ q)
        assert base == moved

    def test_empty_train_rejected(self):
        with pytest.raises(UsageError):
            centroid_classify(np.zeros((0, 2)), [], np.zeros((1, 2)))

    def test_report_metrics(self):
        train = np.array([[0.0, 0.0], [10.0, 10.0]])
        rep = centroid_report(train, ["a", "b"], np.array([[0.1, 0.0], [9.0, 9.0]]), ["a", "b"])
        assert rep.metrics["accuracy"] == 1.0
        assert rep.metrics["exact_match"] == 1.0


class TestKMeans:
    def test_separated_clusters_score_one(self):
        rng = np.random.default_rng(2)
        train = np.concatenate([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
        test = np.concatenate([rng.normal(0, 0.1, (10, 2)), rng.normal(10, 0.1, (10, 2))])
        gold = ["a"] * 10 + ["b"] * 10
        rep = kmeans_cluster_eval(train, test, gold, seed=0)
        assert rep.metrics["accuracy"] == 1.0

    def test_k_one_gives_majority_fraction(self):
        rng = np.random.default_rng(3)
        train = rng.normal(size=(12, 3))
        test = rng.normal(size=(10, 3))
        gold = ["a"] * 7 + ["b"] * 3
        rep = kmeans_cluster_eval(train, test, gold, k=1, seed=0)
        assert rep.metrics["accuracy"] == pytest.approx(0.7)

    def test_seeded_determinism(self):
        rng = np.random.default_rng(4)
        train = rng.normal(size=(30, 4))
        test = rng.normal(size=(12, 4))
        gold = rng.choice(["a", "b", "c"], size=12).tolist()
        r1 = kmeans_cluster_eval(train, test, gold, seed=9)
        r2 = kmeans_cluster_eval(train, test, gold, seed=9)
        assert r1.metrics == r2.metrics and r1.predictions == r2.predictions

    def test_k_exceeding_train_rejected(self):
        with pytest.raises(UsageError):
            kmeans_cluster_eval(np.zeros((3, 2)), np.zeros((2, 2)), ["a", "b"], k=10)


class TestRetrieval:
    def test_perfect_separation(self):
        emb = np.concatenate([np.tile([1.0, 0.0], (5, 1)), np.tile([0.0, 1.0], (5, 1))])
        labels = ["a"] * 5 + ["b"] * 5
        rep = retrieval_accuracy(emb, labels, trials=100, seed=0)
        assert rep.metrics["accuracy_star"] == 1.0

    def test_random_embeddings_near_combinatorial_baseline(self):
        rng = np.random.default_rng(5)
        emb = rng.normal(size=(120, 16))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        labels = (["a"] * 40 + ["b"] * 40 + ["c"] * 40)
        rep = retrieval_accuracy(emb, labels, trials=20000, seed=1)
        # all orderings of 3 positives among 6 candidates are equally
        # likely: 1 / C(6,3) = 0.05
        assert rep.metrics["accuracy_star"] == pytest.approx(0.05, abs=0.012)

    def test_boundary_tie_counts_as_failure(self):
        emb = np.tile([1.0, 0.0], (10, 1))  # every similarity identical
        labels = ["a"] * 5 + ["b"] * 5
        rep = retrieval_accuracy(emb, labels, trials=50, seed=0)
        assert rep.metrics["accuracy_star"] == 0.0

    def test_no_eligible_anchor_rejected(self):
        emb = np.eye(4)
        labels = ["a", "a", "b", "b"]  # only 1 same-label candidate each
        with pytest.raises(DataError):
            retrieval_accuracy(emb, labels, trials=10, seed=0)


class TestOpenSet:
    def test_wide_gap_returns_top(self):
        assert open_set_predict([0.9, 0.1], threshold=0.5, classes=["x", "y"]) == "x"

    def test_zero_gap_returns_unk(self):
        assert open_set_predict([0.5, 0.5], threshold=0.1) == UNK

    def test_threshold_zero_never_unk(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = rng.dirichlet(np.ones(4))
            assert open_set_predict(p, threshold=0.0) != UNK

    def test_threshold_one_always_unk_below_certainty(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = rng.dirichlet(np.ones(3))
            if p.max() < 1.0:
                assert open_set_predict(p, threshold=1.0) == UNK

    def test_empty_vector_rejected(self):
        with pytest.raises(UsageError):
            open_set_predict([], threshold=0.1)

    def test_non_simplex_rejected(self):
        with pytest.raises(UsageError):
            open_set_predict([0.9, 0.9], threshold=0.1)

    def test_threshold_tuning_grid(self):
        probs = np.array([[0.9, 0.1], [0.55, 0.45], [0.5, 0.5]])
        gold = ["a", "b", UNK]
        t, f1 = tune_unk_threshold(probs, gold, ["a", "b"])
        pred = [open_set_predict(row, t, ["a", "b"]) for row in probs]
        assert pred[2] == UNK
        assert f1 > 0


class TestEnsemble:
    def test_endpoints_bit_exact(self):
        rng = np.random.default_rng(8)
        a = rng.dirichlet(np.ones(3), size=5)
        b = rng.dirichlet(np.ones(3), size=5)
        np.testing.assert_array_equal(ensemble_predict(a, b, 0.0), b)
        np.testing.assert_array_equal(ensemble_predict(a, b, 1.0), a)

    def test_midpoint(self):
        a = np.array([[0.8, 0.2]])
        b = np.array([[0.2, 0.8]])
        np.testing.assert_allclose(ensemble_predict(a, b, 0.5), [[0.5, 0.5]], atol=1e-12)

    def test_rows_stay_on_simplex(self):
        rng = np.random.default_rng(9)
        a = rng.dirichlet(np.ones(4), size=20)
        b = rng.dirichlet(np.ones(4), size=20)
        for w in np.linspace(0, 1, 7):
            mixed = ensemble_predict(a, b, float(w))
            np.testing.assert_allclose(mixed.sum(axis=1), 1.0, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(UsageError):
            ensemble_predict(np.ones((2, 3)) / 3, np.ones((3, 2)) / 2, 0.5)

    def test_omega_tuning_prefers_better_model(self):
        gold = ["a", "b"] * 10
        classes = ["a", "b"]
        good = np.array([[0.9, 0.1] if g == "a" else [0.1, 0.9] for g in gold])
        bad = np.array([[0.4, 0.6] if g == "a" else [0.6, 0.4] for g in gold])
        w, f1 = tune_ensemble_weight(good, bad, gold, classes)
        assert f1 == pytest.approx(1.0)
        pred = [classes[int(i)] for i in ensemble_predict(good, bad, w).argmax(axis=1)]
        assert pred == gold


class TestLexical:
    def test_separable_texts_fit(self):
        train = ["aaaa bbb aaaa", "aaaa aaa aaab", "zzzz yyy zzzz", "zzzz zzz yyyz"] * 3
        labels = ["a", "a", "z", "z"] * 3
        probs, model = lexical_classifier(train, labels, train, seed=0)
        pred = [model.classes[int(i)] for i in probs.argmax(axis=1)]
        assert pred == labels

    def test_unseen_ngrams_get_bias_distribution(self):
        train = ["aaaa bbb", "aaab bba", "zzzz yyy", "zzzy yyz"]
        labels = ["a", "a", "z", "z"]
        probs, model = lexical_classifier(train, labels, ["@@@@ ####"], seed=0)
        zero_row = model.classifier.predict_proba(model.vectorizer.transform([""]))
        np.testing.assert_allclose(probs, zero_row, atol=1e-12)

    def test_seeded_determinism(self):
        train = ["aa bb cc", "bb cc dd", "xx yy zz", "yy zz ww"] * 2
        labels = ["p", "p", "q", "q"] * 2
        p1, _ = lexical_classifier(train, labels, ["aa zz"], seed=3)
        p2, _ = lexical_classifier(train, labels, ["aa zz"], seed=3)
        np.testing.assert_array_equal(p1, p2)

    def test_single_class_rejected(self):
        with pytest.raises(UsageError):
            lexical_classifier(["abc", "abd"], ["a", "a"], ["x"], seed=0)


class TestProbe:
    def test_linearly_separable_single_label(self):
        rng = np.random.default_rng(10)
        centers = np.array([[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]])
        X = np.concatenate([rng.normal(c, 0.2, size=(30, 3)) for c in centers])
        y = ["a"] * 30 + ["b"] * 30 + ["c"] * 30
        Xd = np.concatenate([rng.normal(c, 0.2, size=(10, 3)) for c in centers])
        yd = ["a"] * 10 + ["b"] * 10 + ["c"] * 10
        probe = train_probe(X, y, Xd, yd, mode="single_label", cfg=ProbeConfig(seed=0))
        assert probe.report.metrics["dev_macro_f1"] == pytest.approx(1.0)

    def test_multi_label_threshold_assignment(self):
        rng = np.random.default_rng(11)
        # two independent binary factors encoded on separate axes
        X, y = [], []
        for _ in range(120):
            has_a = rng.random() < 0.5
            has_b = rng.random() < 0.5
            X.append([3.0 * has_a + rng.normal(0, 0.1), 3.0 * has_b + rng.normal(0, 0.1)])
            y.append({l for l, h in (("a", has_a), ("b", has_b)) if h})
        probe = train_probe(
            X[:100], y[:100], X[100:], y[100:], mode="multi_label", cfg=ProbeConfig(seed=1)
        )
        pred = probe.predict(X[100:])
        assert multilabel_macro_f1(y[100:], pred, probe.classes) > 0.9
        both = probe.predict([[3.0, 3.0]])[0]
        assert both == {"a", "b"}

    def test_label_smoothing_changes_training_loss(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(40, 4))
        y = rng.choice(["a", "b"], size=40).tolist()
        plain = train_probe(X, y, X, y, cfg=ProbeConfig(seed=2, label_smoothing=0.0, max_epochs=2))
        smooth = train_probe(X, y, X, y, cfg=ProbeConfig(seed=2, label_smoothing=0.1, max_epochs=2))
        assert plain.history[0]["train_loss"] != smooth.history[0]["train_loss"]

    def test_unseen_dev_label_rejected(self):
        with pytest.raises(UsageError):
            train_probe(
                np.ones((4, 2)), ["a", "b", "a", "b"], np.ones((1, 2)), ["zzz"],
                cfg=ProbeConfig(max_epochs=1),
            )


class TestEvalReport:
    def test_json_round_trip(self):
        rep = EvalReport(task="demo", metrics={"accuracy": 0.5}, config_fingerprint="abc", seed=7)
        payload = json.loads(rep.to_json())
        assert payload == {
            "task": "demo", "metrics": {"accuracy": 0.5},
            "config_fingerprint": "abc", "seed": 7,
        }
