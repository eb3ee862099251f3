"""Two-stage training: staging contracts, schedules, checkpoints, determinism."""

import numpy as np
import pytest
from conftest import make_synth_world

from idlx import autodiff as ad
from idlx.encoder import EncoderConfig
from idlx.errors import DataError, NumericError
from idlx.objectives import LossConfig, margin_ranking_loss
from idlx.sampler import GROUP_SIZE, assemble_training_batch
from idlx.trainer import (
    TrainConfig,
    _encode_batch,
    init_train_state,
    load_train_state,
    run_feature_stage,
    run_pretrain_stage,
    save_train_state,
    validate,
)

ENC = EncoderConfig(n_layers=2, hidden_dim=16, max_tokens=32)


def quick_cfg(**overrides):
    base = dict(
        learning_rate=3e-3,
        pretrain_epochs=2,
        feature_epochs=2,
        validate_every=10,
        patience=25,
        groups_per_batch=2,
        rng_seed=0,
        dev_groups=4,
        loss=LossConfig(),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def world():
    return make_synth_world(seed=1)


class TestPretrainStage:
    def test_zero_epochs_returns_initialization(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(pretrain_epochs=0)
        init = init_train_state(corpus, cfg, ENC)
        before = {k: v.data.copy() for k, v in init.params.items()}
        out = run_pretrain_stage(corpus, cfg, state=init)
        for k in before:
            np.testing.assert_array_equal(out.params[k].data, before[k])
        assert out.step == 0

    def test_stage_one_logs_have_zero_feature_losses(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg()
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        steps = [r for r in state.history if r["kind"] == "step"]
        assert steps
        assert all(r["supcon"] == 0.0 and r["bce"] == 0.0 for r in steps)

    def test_margin_follows_schedule(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(loss=LossConfig(margin_warm_steps=8))
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        steps = [r for r in state.history if r["kind"] == "step"]
        for i, r in enumerate(steps):
            assert r["margin"] == pytest.approx(0.5 * min(1.0, i / 8))

    def test_learning_rate_warmup_then_constant(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(warmup_steps=5)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        steps = [r for r in state.history if r["kind"] == "step"]
        for i, r in enumerate(steps, start=1):
            assert r["lr"] == pytest.approx(cfg.learning_rate * min(1.0, i / 5))

    def test_layer_weights_sum_to_one_every_step(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg()
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        for r in state.history:
            if r["kind"] == "step":
                assert abs(r["alpha_sum"] - 1.0) < 1e-6

    def test_dev_mrl_improves_on_synthetic_corpus(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(pretrain_epochs=10, validate_every=5, learning_rate=5e-3)
        init = init_train_state(corpus, cfg, ENC)
        first = validate(init, corpus.subset("dev"), None, cfg)["dev_mrl"]
        state = run_pretrain_stage(corpus, cfg, state=init)
        final = validate(state, corpus.subset("dev"), None, cfg)["dev_mrl"]
        assert final < first

    def test_nonfinite_loss_aborts_with_numeric_error(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(learning_rate=1e200, pretrain_epochs=5)
        with np.errstate(all="ignore"):
            with pytest.raises(NumericError):
                run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))


class TestFeatureStage:
    def test_feature_losses_nonzero_in_logs(self, world):
        _, corpus, cache, _ = world
        cfg = quick_cfg()
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        state = run_feature_stage(corpus, cache, cfg, state)
        steps = [r for r in state.history if r["kind"] == "step" and r["stage"] == "feature"]
        assert steps
        assert any(r["bce"] > 0 for r in steps)
        assert all(r["margin"] == pytest.approx(0.5) for r in steps)

    def test_alpha_zero_totals_match_pretrain_composition(self, world):
        _, corpus, cache, _ = world
        cfg = quick_cfg(loss=LossConfig(alpha=0.0))
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        state = run_feature_stage(corpus, cache, cfg, state)
        steps = [r for r in state.history if r["kind"] == "step" and r["stage"] == "feature"]
        for r in steps:
            expected = r["mrl"] + cfg.loss.var_weight * r["var"] + cfg.loss.cov_weight * r["cov"]
            assert r["total"] == pytest.approx(expected, abs=1e-9)

    def test_missing_feature_names_sentence(self, world):
        _, corpus, cache, inv = world
        from idlx.features import FeatureCache

        sparse = FeatureCache(cache.inventory_fingerprint, cache.size)
        # cover only a few sentences: the first sampled uncovered id aborts
        for sid in cache.ids()[:3]:
            sparse.put(sid, cache.get(sid))
        cfg = quick_cfg()
        state = run_pretrain_stage(corpus, quick_cfg(pretrain_epochs=0))
        with pytest.raises(DataError):
            run_feature_stage(corpus, sparse, cfg, state)

    def test_feature_stage_only_touches_train_split(self, world):
        # a cache covering just the train split suffices: the stage never
        # samples pretrain-only or heldout sentences
        _, corpus, cache, _ = world
        from idlx.features import FeatureCache

        train_ids = {r.id for r in corpus.subset("train").records}
        train_only = FeatureCache(cache.inventory_fingerprint, cache.size)
        for sid in train_ids:
            train_only.put(sid, cache.get(sid))
        cfg = quick_cfg(feature_epochs=1)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        run_feature_stage(corpus, train_only, cfg, state)

    def test_feature_head_f1_improves_over_untrained(self, world):
        _, corpus, cache, _ = world
        cfg = quick_cfg(pretrain_epochs=4, feature_epochs=12, learning_rate=5e-3)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        state = run_feature_stage(corpus, cache, cfg, state)
        vrecords = [r for r in state.history if r["kind"] == "validation" and "dev_feat_f1" in r]
        assert vrecords
        assert vrecords[-1]["dev_feat_f1"] > vrecords[0]["dev_feat_f1"] or (
            vrecords[-1]["dev_feat_f1"] > 0.7
        )


class TestValidate:
    def test_deterministic(self, world):
        _, corpus, cache, _ = world
        cfg = quick_cfg()
        state = init_train_state(corpus, cfg, ENC)
        a = validate(state, corpus.subset("dev"), None, cfg)
        b = validate(state, corpus.subset("dev"), None, cfg)
        assert a == b

    def test_matches_objectives_module_on_same_batches(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg()
        state = init_train_state(corpus, cfg, ENC)
        metrics = validate(state, corpus.subset("dev"), None, cfg)
        dev_seed = np.random.SeedSequence([cfg.rng_seed, 0xDE]).spawn(1)[0]
        groups = assemble_training_batch(
            corpus.subset("dev"), cfg.dev_groups, np.random.default_rng(dev_seed)
        )
        with ad.no_grad():
            records = [s for g in groups for s in g.sentences]
            emb = _encode_batch(state, records, training=False)
            total = 0.0
            for gi, g in enumerate(groups):
                seg = emb[gi * GROUP_SIZE : (gi + 1) * GROUP_SIZE]
                total += margin_ranking_loss(seg, g.proximity, cfg.loss.margin_final).item()
        assert metrics["dev_mrl"] == pytest.approx(total / len(groups), abs=1e-9)

    def test_early_stopping_halts_and_restores_best(self, world):
        _, corpus, _, _ = world
        cfg = quick_cfg(
            learning_rate=1e-12, pretrain_epochs=50, validate_every=1, patience=2
        )
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        validations = [r for r in state.history if r["kind"] == "validation"]
        # halted long before the configured epoch budget
        total_budget = 50 * max(1, len(corpus.pretrain_view()) // (16 * 2))
        assert state.step < total_budget
        assert validations[-1]["since_best"] >= 2


class TestCheckpointing:
    def test_save_load_save_byte_identical(self, world, tmp_path):
        _, corpus, cache, _ = world
        cfg = quick_cfg(pretrain_epochs=1, feature_epochs=1)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        state = run_feature_stage(corpus, cache, cfg, state)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_train_state(state, p1)
        loaded = load_train_state(p1)
        save_train_state(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_state_embeds_identically(self, world, tmp_path):
        _, corpus, _, _ = world
        from idlx.trainer import embed_corpus

        cfg = quick_cfg(pretrain_epochs=1)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        path = tmp_path / "model.ckpt"
        save_train_state(state, path)
        loaded = load_train_state(path)
        records = corpus.subset("test").records[:10]
        _, m1 = embed_corpus(state, records)
        _, m2 = embed_corpus(loaded, records)
        # float32 storage rounds the parameters, so embeddings agree only
        # to storage precision
        np.testing.assert_allclose(m1, m2, atol=1e-5)

    def test_full_run_reproducible(self, world):
        _, corpus, cache, _ = world
        cfg1 = quick_cfg(pretrain_epochs=2, feature_epochs=2)
        cfg2 = quick_cfg(pretrain_epochs=2, feature_epochs=2)
        s1 = run_feature_stage(
            corpus, cache, cfg1, run_pretrain_stage(corpus, cfg1, state=init_train_state(corpus, cfg1, ENC))
        )
        s2 = run_feature_stage(
            corpus, cache, cfg2, run_pretrain_stage(corpus, cfg2, state=init_train_state(corpus, cfg2, ENC))
        )
        assert s1.history == s2.history
        for k in s1.params:
            np.testing.assert_array_equal(s1.params[k].data, s2.params[k].data)

    def test_unit_norm_embeddings_from_trained_model(self, world):
        _, corpus, _, _ = world
        from idlx.trainer import embed_corpus

        cfg = quick_cfg(pretrain_epochs=1)
        state = run_pretrain_stage(corpus, cfg, state=init_train_state(corpus, cfg, ENC))
        _, matrix = embed_corpus(state, corpus.subset("dev").records)
        np.testing.assert_allclose(np.linalg.norm(matrix, axis=1), 1.0, atol=1e-5)
