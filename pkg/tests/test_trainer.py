import math

import numpy as np
import pytest

import modnmt.autodiff as ad
from modnmt.bpe import train_bpe
from modnmt.corpus import default_toy_specs, generate_toy_corpus, make_batches
from modnmt.model import ModelConfig, init_modules
from modnmt.schedule import (Direction, FreezeMode, TrainingSchedule,
                             basic_schedule)
from modnmt.trainer import (BOTH, DECODER, ENCODER, ModuleOptimizers,
                            OptimizerState, TrainRunConfig, add_language,
                            adam_step, direction_loss,
                            multilingual_training_step, train,
                            validation_loss)

TINY = ModelConfig(num_layers=1, num_heads=2, d_model=16, d_ff=32,
                   dropout=0.0, max_len=32, vocab_size=0)


def tiny_world(n_langs=2, n_sentences=60, seed=0, merges=60):
    specs = default_toy_specs(n_langs)
    corpus = generate_toy_corpus(specs, n_sentences, (3, 6), seed=seed)
    toks = {s.lang: train_bpe(corpus.lines(s.lang, "train"), merges, s.lang)
            for s in specs}
    registry = init_modules([s.lang for s in specs], TINY, seed=seed,
                            tokenizers=toks)
    return registry, corpus, toks


def snapshot(pair):
    return [t.data.copy() for t in pair.all_params()]


def changed(before, pair):
    return [not (a == t.data).all()
            for a, t in zip(before, pair.all_params())]


def one_batch(corpus, direction, toks, budget=64):
    return next(iter(make_batches(corpus, direction, budget, 0, toks)))


class TestOptimizerState:
    def test_warmup_schedule(self):
        s = OptimizerState(base_lr=1e-3, warmup_steps=100)
        assert s.lr(50) == pytest.approx(5e-4)
        assert s.lr(100) == pytest.approx(1e-3)
        assert s.lr(2000) == pytest.approx(1e-3)  # constant after warmup

    def test_zero_warmup(self):
        assert OptimizerState(base_lr=2e-3, warmup_steps=0).lr(1) == 2e-3


class TestAdamStep:
    def test_first_step_matches_analytic_adam(self):
        p = ad.Tensor(np.array([1.0], dtype=np.float64), trainable=True)
        g = np.array([0.3])
        state = OptimizerState(base_lr=1e-2, warmup_steps=0)
        adam_step([p], {p: g}, state)
        b1, b2, eps = 0.9, 0.999, 1e-8
        m_hat = (1 - b1) * 0.3 / (1 - b1)
        v_hat = (1 - b2) * 0.3 ** 2 / (1 - b2)
        want = 1.0 - 1e-2 * m_hat / (math.sqrt(v_hat) + eps)
        assert p.data[0] == pytest.approx(want, rel=1e-12)
        # approximately -lr * sign(g) thanks to bias correction
        assert p.data[0] == pytest.approx(1.0 - 1e-2, rel=1e-4)

    def test_zero_grad_no_change(self):
        p = ad.Tensor(np.array([1.0, 2.0]), trainable=True)
        state = OptimizerState()
        adam_step([p], {p: np.zeros(2)}, state)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_frozen_param_untouched(self):
        p = ad.Tensor(np.array([1.0]), trainable=False)
        adam_step([p], {p: np.array([5.0])}, OptimizerState())
        assert p.data[0] == 1.0

    def test_shape_mismatch(self):
        p = ad.Tensor(np.array([1.0, 2.0]), trainable=True)
        with pytest.raises(ValueError, match="shape"):
            adam_step([p], {p: np.zeros(3)}, OptimizerState())


class TestFreezing:
    def setup_method(self):
        self.registry, self.corpus, self.toks = tiny_world()
        self.opts = ModuleOptimizers()

    def run_direction(self, mode):
        d = Direction("de", "en", mode)
        sched = TrainingSchedule(("de", "en"), (d,))
        before = {(l, r): snapshot_part(self.registry, l, r)
                  for l in ("de", "en") for r in ("encoder", "decoder")}
        multilingual_training_step(
            self.registry, sched,
            lambda dd: one_batch(self.corpus, dd, self.toks),
            self.opts, step_index=1)
        after = {}
        for (l, r), arrays in before.items():
            mod = getattr(self.registry.pair(l), r)
            after[(l, r)] = any(
                not (a == t.data).all()
                for a, t in zip(arrays, mod.params()))
        return after  # (lang, role) -> changed?

    def test_none_updates_both(self):
        delta = self.run_direction(FreezeMode.NONE)
        assert delta[("de", "encoder")] and delta[("en", "decoder")]
        assert not delta[("de", "decoder")] and not delta[("en", "encoder")]

    def test_freeze_tgt_decoder(self):
        delta = self.run_direction(FreezeMode.FREEZE_TGT_DECODER)
        assert delta[("de", "encoder")]
        assert not delta[("en", "decoder")]

    def test_freeze_src_encoder(self):
        delta = self.run_direction(FreezeMode.FREEZE_SRC_ENCODER)
        assert not delta[("de", "encoder")]
        assert delta[("en", "decoder")]

    def test_gradient_flows_through_frozen_decoder(self):
        d = Direction("de", "en", FreezeMode.FREEZE_TGT_DECODER)
        batch = one_batch(self.corpus, d, self.toks)
        loss, to_update = direction_loss(self.registry, d, batch, train=False)
        assert [(l, r) for l, r, _ in to_update] == [("de", "encoder")]
        enc_params = self.registry.pair("de").encoder.params()
        grads = ad.backward(loss, params=enc_params)
        norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        assert norm > 0


def snapshot_part(registry, lang, role):
    return [t.data.copy()
            for t in getattr(registry.pair(lang), role).params()]


class TestMultilingualStep:
    def test_twelve_directions_in_order(self):
        registry, corpus, toks = tiny_world(4)
        sched = basic_schedule(registry.languages)
        losses = multilingual_training_step(
            registry, sched, lambda d: one_batch(corpus, d, toks),
            ModuleOptimizers(), step_index=1)
        assert list(losses) == [(d.src, d.tgt) for d in sched.directions]
        assert len(losses) == 12
        assert all(math.isfinite(v) for v in losses.values())

    def test_missing_language_rejected(self):
        registry, corpus, toks = tiny_world(2)
        sched = basic_schedule(("de", "zz"))
        with pytest.raises(KeyError, match="zz"):
            multilingual_training_step(
                registry, sched, lambda d: one_batch(corpus, d, toks),
                ModuleOptimizers())

    def test_nonfinite_loss_aborts(self):
        registry, corpus, toks = tiny_world(2)
        registry.pair("de").encoder.named_params()["emb"].data[:] = np.nan
        sched = TrainingSchedule(("de", "en"), (Direction("de", "en"),))
        with pytest.raises(RuntimeError, match="non-finite"):
            multilingual_training_step(
                registry, sched, lambda d: one_batch(corpus, d, toks),
                ModuleOptimizers())


class TestTrainLoop:
    def test_overfit_tiny_corpus(self):
        # deterministic toy direction: loss must collapse on train data
        registry, corpus, toks = tiny_world(2, n_sentences=50, merges=80)
        sched = basic_schedule(registry.languages)
        cfg = TrainRunConfig(schedule=sched, max_steps=500, token_budget=128,
                             patience=1000, eval_every=250, seed=0)
        history = train(registry, corpus, cfg, toks)
        first = history.train_losses[0][1]
        last = history.train_losses[-1][1]
        for key in first:
            assert last[key] < 0.1 * first[key], key

    def test_patience_stops_run(self):
        registry, corpus, toks = tiny_world(2, n_sentences=30)
        sched = basic_schedule(registry.languages)
        cfg = TrainRunConfig(schedule=sched, max_steps=2000, token_budget=64,
                             patience=2, eval_every=5, seed=0,
                             base_lr=0.0, warmup_steps=0)  # loss frozen
        history = train(registry, corpus, cfg, toks)
        assert history.stopped_early
        assert history.steps_run == 10  # exactly patience * eval_every

    def test_same_seed_same_history(self):
        h = []
        for _ in range(2):
            registry, corpus, toks = tiny_world(2, n_sentences=30)
            cfg = TrainRunConfig(schedule=basic_schedule(registry.languages),
                                 max_steps=12, token_budget=64,
                                 patience=100, eval_every=6, seed=3)
            h.append(train(registry, corpus, cfg, toks))
        assert h[0].train_losses == h[1].train_losses
        assert h[0].val_losses == h[1].val_losses

    def test_validation_loss_covers_directions(self):
        registry, corpus, toks = tiny_world(2, n_sentences=30)
        sched = basic_schedule(registry.languages)
        out = validation_loss(registry, corpus, sched, toks, token_budget=64)
        assert set(out) == {("de", "en"), ("en", "de")}
        assert all(v > 0 for v in out.values())

    def test_config_validation(self):
        sched = basic_schedule(("a", "b"))
        with pytest.raises(ValueError):
            TrainRunConfig(schedule=sched, max_steps=0)
        with pytest.raises(ValueError):
            TrainRunConfig(schedule=sched, patience=-1)


class TestAddLanguage:
    def test_existing_modules_bit_identical(self):
        registry, corpus, toks = tiny_world(2, n_sentences=40)
        specs = default_toy_specs(3)  # de, en, es
        corpus3 = generate_toy_corpus(specs, 40, (3, 6), seed=1)
        tok_es = train_bpe(corpus3.lines("es", "train"), 60, "es")
        before = {l: snapshot(registry.pair(l)) for l in ("de", "en")}
        cfg = TrainRunConfig(schedule=basic_schedule(("de", "en")),
                             max_steps=8, token_budget=64, patience=100,
                             eval_every=4)
        reg2, history = add_language(registry, "es", corpus3, "en",
                                     tokenizer=tok_es, seed=5,
                                     train_config=cfg)
        assert reg2 is registry
        assert registry.languages == ["de", "en", "es"]
        assert registry.added == {"es": "en"}
        for lang, arrays in before.items():
            assert not any(changed(arrays, registry.pair(lang))), lang
        # the new modules did train
        es_sched = history.final_schedule
        assert {(d.src, d.tgt) for d in es_sched.directions} == {
            ("es", "en"), ("en", "es")}
        assert es_sched.mode("es", "en") is FreezeMode.FREEZE_TGT_DECODER
        assert es_sched.mode("en", "es") is FreezeMode.FREEZE_SRC_ENCODER

    def test_train_side_encoder_only(self):
        registry, corpus, toks = tiny_world(2, n_sentences=40)
        specs = default_toy_specs(3)
        corpus3 = generate_toy_corpus(specs, 40, (3, 6), seed=1)
        tok_es = train_bpe(corpus3.lines("es", "train"), 60, "es")
        cfg = TrainRunConfig(schedule=basic_schedule(("de", "en")),
                             max_steps=4, token_budget=64, patience=100)
        _, history = add_language(registry, "es", corpus3, "en",
                                  train_side=ENCODER, tokenizer=tok_es,
                                  train_config=cfg)
        dirs = {(d.src, d.tgt) for d in history.final_schedule.directions}
        assert dirs == {("es", "en")}

    def test_validation(self):
        registry, corpus, toks = tiny_world(2, n_sentences=30)
        with pytest.raises(KeyError):
            add_language(registry, "es", corpus, "zz")
        with pytest.raises(ValueError, match="already"):
            add_language(registry, "en", corpus, "de")
        with pytest.raises(ValueError, match="tokenizer"):
            add_language(registry, "es", corpus, "en")

    def test_module_count_grows_to_n_plus_one(self):
        registry, corpus, toks = tiny_world(2, n_sentences=40)
        specs = default_toy_specs(3)
        corpus3 = generate_toy_corpus(specs, 40, (3, 6), seed=1)
        tok_es = train_bpe(corpus3.lines("es", "train"), 60, "es")
        cfg = TrainRunConfig(schedule=basic_schedule(("de", "en")),
                             max_steps=2, token_budget=64, patience=10)
        add_language(registry, "es", corpus3, "en", tokenizer=tok_es,
                     train_config=cfg)
        assert len(registry.pairs) == 3
