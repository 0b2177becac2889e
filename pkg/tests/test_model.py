import math

import numpy as np
import pytest

import modnmt.autodiff as ad
from modnmt.bpe import train_bpe
from modnmt.model import (ModelConfig, ModuleRegistry, build_pair,
                          checkpoint_load, checkpoint_save, decoder_logits,
                          encode, init_modules, load_registry, mean_pool,
                          save_registry, sinusoidal_encoding)

CFG = ModelConfig(vocab_size=23)
SMALL = ModelConfig(num_layers=1, num_heads=2, d_model=16, d_ff=24,
                    dropout=0.0, max_len=16, vocab_size=11)


def all_arrays(pair):
    return [t.data for t in pair.all_params()]


class TestModelConfig:
    def test_defaults_are_desk_scale(self):
        c = ModelConfig()
        assert (c.num_layers, c.num_heads, c.d_model, c.d_ff) == (2, 4, 64, 128)
        assert c.dropout == 0.1 and c.max_len == 64

    def test_full_scale_preset_documented(self):
        fs = ModelConfig.FULL_SCALE
        assert fs["num_layers"] == 6 and fs["d_model"] == 512
        ModelConfig(vocab_size=100, **fs)  # constructible

    def test_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=30, num_heads=4)
        with pytest.raises(ValueError):
            ModelConfig(num_layers=0)
        with pytest.raises(ValueError):
            ModelConfig(dropout=1.0)


def test_sinusoidal_encoding_values():
    pe = sinusoidal_encoding(8, 16)
    assert pe.shape == (8, 16)
    np.testing.assert_allclose(pe[0, 0::2], np.zeros(8), atol=1e-15)  # sin 0
    np.testing.assert_allclose(pe[0, 1::2], np.ones(8), atol=1e-15)   # cos 0
    assert math.isclose(pe[3, 0], math.sin(3.0), rel_tol=1e-12)
    assert math.isclose(pe[3, 1], math.cos(3.0), rel_tol=1e-12)
    assert math.isclose(pe[5, 2], math.sin(5.0 / 10000 ** (2 / 16)),
                        rel_tol=1e-12)


class TestInit:
    def test_registry_has_n_pairs(self):
        reg = init_modules(["de", "en", "es", "fr"], CFG, seed=0)
        assert len(reg.languages) == 4
        assert len(reg.pairs) == 4
        for lang in reg.languages:
            pair = reg.pair(lang)
            assert pair.encoder is not None and pair.decoder is not None

    def test_same_seed_bit_identical(self):
        a = init_modules(["de", "en"], CFG, seed=5)
        b = init_modules(["de", "en"], CFG, seed=5)
        for lang in ("de", "en"):
            for x, y in zip(all_arrays(a.pair(lang)), all_arrays(b.pair(lang))):
                assert (x == y).all()

    def test_different_seed_differs(self):
        a = init_modules(["de"], CFG, seed=1)
        b = init_modules(["de"], CFG, seed=2)
        assert any((x != y).any() for x, y in
                   zip(all_arrays(a.pair("de")), all_arrays(b.pair("de"))))

    def test_languages_get_independent_parameters(self):
        reg = init_modules(["de", "en"], CFG, seed=0)
        de = reg.pair("de").encoder.named_params()["emb"].data
        en = reg.pair("en").encoder.named_params()["emb"].data
        assert (de != en).any()

    def test_per_language_vocab_sizes(self):
        reg = init_modules(["a", "b"], CFG, seed=0,
                           vocab_sizes={"a": 31, "b": 47})
        assert reg.pair("a").encoder.config.vocab_size == 31
        assert reg.pair("b").decoder.config.vocab_size == 47

    def test_validation(self):
        with pytest.raises(ValueError):
            init_modules([], CFG, seed=0)
        with pytest.raises(ValueError):
            init_modules(["de", "de"], CFG, seed=0)
        with pytest.raises(ValueError):
            init_modules(["de"], ModelConfig(), seed=0)  # vocab_size 0

    def test_all_params_trainable_and_float32(self):
        reg = init_modules(["de"], CFG, seed=0)
        for t in reg.pair("de").all_params():
            assert t.trainable
            assert t.data.dtype == np.float32


class TestForward:
    def setup_method(self):
        self.pair = build_pair("xx", SMALL, seed=3, dtype=np.float64)
        self.ids = np.array([1, 5, 7, 9, 2])
        self.mask = np.ones(5, dtype=bool)

    def test_encode_shape_and_determinism(self):
        s1 = encode(self.pair, self.ids, self.mask)
        s2 = encode(self.pair, self.ids, self.mask)
        assert s1.shape == (5, SMALL.d_model)
        assert (s1.data == s2.data).all()
        assert np.isfinite(s1.data).all()

    def test_encode_validation(self):
        with pytest.raises(ValueError):
            encode(self.pair, np.array([], dtype=np.int64),
                   np.array([], dtype=bool))
        with pytest.raises(ValueError):
            encode(self.pair, self.ids, self.mask[:3])
        with pytest.raises(ValueError, match="vocabulary"):
            encode(self.pair, np.array([1, 99, 2]), np.ones(3, dtype=bool))
        long = np.ones(SMALL.max_len + 1, dtype=np.int64)
        with pytest.raises(ValueError, match="max_len"):
            encode(self.pair, long, np.ones(long.size, dtype=bool))

    def test_pad_positions_do_not_affect_real_states(self):
        ids_padded = np.array([1, 5, 7, 9, 2, 0, 0])
        mask_padded = np.array([1, 1, 1, 1, 1, 0, 0], dtype=bool)
        plain = encode(self.pair, self.ids, self.mask).data
        padded = encode(self.pair, ids_padded, mask_padded).data
        np.testing.assert_allclose(padded[:5], plain, atol=1e-12)

    def test_causality(self):
        states = encode(self.pair, self.ids, self.mask)
        prefix = np.array([1, 4, 6, 8])
        base = decoder_logits(self.pair, states, prefix).data
        # changing token at position 3 must not move logits at 0..2
        changed = prefix.copy()
        changed[3] = 10
        moved = decoder_logits(self.pair, states, changed).data
        np.testing.assert_allclose(moved[:3], base[:3], atol=1e-12)
        assert (np.abs(moved[3] - base[3]) > 1e-9).any()

    def test_logits_cover_vocab(self):
        states = encode(self.pair, self.ids, self.mask)
        logits = decoder_logits(self.pair, states, np.array([1, 4]))
        assert logits.shape == (2, SMALL.vocab_size)

    def test_decoder_rejects_wrong_width_states(self):
        states = ad.Tensor(np.zeros((5, SMALL.d_model + 1)))
        with pytest.raises(ValueError, match="d_model"):
            decoder_logits(self.pair, states, np.array([1]))

    def test_dropout_only_in_train_mode(self):
        pair = build_pair("xx", ModelConfig(num_layers=1, num_heads=2,
                                            d_model=16, d_ff=24, dropout=0.5,
                                            max_len=16, vocab_size=11),
                          seed=3)
        ids, mask = self.ids[None, :], self.mask[None, :]
        eval1 = pair.encoder.forward(ids, mask, train=False).data
        eval2 = pair.encoder.forward(ids, mask, train=False).data
        assert (eval1 == eval2).all()
        rng = np.random.default_rng(0)
        train1 = pair.encoder.forward(ids, mask, train=True, rng=rng).data
        assert (train1 != eval1).any()


def test_mean_pool_of_copies_is_identity():
    v = np.array([0.5, -1.5, 2.0])
    states = np.tile(v, (6, 1))
    np.testing.assert_allclose(mean_pool(states, np.ones(6, dtype=bool)), v)


def test_mean_pool_respects_mask():
    states = np.array([[1.0, 1.0], [3.0, 3.0], [99.0, 99.0]])
    mask = np.array([True, True, False])
    np.testing.assert_allclose(mean_pool(states, mask), [2.0, 2.0])
    with pytest.raises(ValueError):
        mean_pool(states, np.zeros(3, dtype=bool))


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        pair = build_pair("de", CFG, seed=9, tokenizer_ref="abc123")
        path = str(tmp_path / "m.ckpt")
        checkpoint_save(pair, path)
        loaded = checkpoint_load(path)
        assert loaded.lang == "de"
        assert loaded.tokenizer_ref == "abc123"
        for a, b in zip(all_arrays(pair), all_arrays(loaded)):
            assert (a == b).all()

    def test_identical_bytes_for_identical_pairs(self, tmp_path):
        p1, p2 = (str(tmp_path / n) for n in ("a.ckpt", "b.ckpt"))
        checkpoint_save(build_pair("de", CFG, seed=9), p1)
        checkpoint_save(build_pair("de", CFG, seed=9), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_config_mismatch_named(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        checkpoint_save(build_pair("de", CFG, seed=0), path)
        other = ModelConfig(num_heads=2, vocab_size=23)
        with pytest.raises(ValueError, match="num_heads"):
            checkpoint_load(path, config=other)

    def test_vocab_size_difference_tolerated(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        checkpoint_save(build_pair("de", CFG, seed=0, vocab_size=29), path)
        loaded = checkpoint_load(path, config=CFG)  # CFG says 23, stored 29
        assert loaded.encoder.config.vocab_size == 29

    def test_truncation_detected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        checkpoint_save(build_pair("de", CFG, seed=0), path)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            checkpoint_load(path)

    def test_trailing_bytes_detected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        checkpoint_save(build_pair("de", CFG, seed=0), path)
        open(path, "ab").write(b"xx")
        with pytest.raises(ValueError, match="trailing"):
            checkpoint_load(path)

    def test_garbage_rejected(self, tmp_path):
        path = str(tmp_path / "m.ckpt")
        open(path, "wb").write(b"\x00\x01\x02 not a checkpoint\n")
        with pytest.raises(ValueError):
            checkpoint_load(path)

    def test_nonfinite_param_refused(self, tmp_path):
        pair = build_pair("de", CFG, seed=0)
        pair.encoder.named_params()["emb"].data[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            checkpoint_save(pair, str(tmp_path / "m.ckpt"))


class TestRegistryPersistence:
    def test_roundtrip(self, tmp_path):
        toks = {l: train_bpe([f"{l}aa {l}bb", f"{l}cc"], 8, l)
                for l in ("de", "en")}
        reg = init_modules(["de", "en"], CFG, seed=4, tokenizers=toks)
        reg.added = {}
        out = str(tmp_path / "model")
        save_registry(reg, out)
        loaded = load_registry(out)
        assert loaded.languages == ["de", "en"]
        assert loaded.initial_langs == ["de", "en"]
        for lang in ("de", "en"):
            for a, b in zip(all_arrays(reg.pair(lang)),
                            all_arrays(loaded.pair(lang))):
                assert (a == b).all()
            assert (loaded.tokenizers[lang].content_hash()
                    == toks[lang].content_hash())

    def test_rejects_non_registry_dir(self, tmp_path):
        (tmp_path / "registry.json").write_text('{"kind": "other"}')
        with pytest.raises(ValueError):
            load_registry(str(tmp_path))


class TestClassifyDirection:
    def test_tags(self):
        reg = init_modules(["de", "en"], CFG, seed=0)
        reg.added["ru"] = "en"
        reg.add_pair(build_pair("ru", CFG, seed=0))
        assert reg.classify_direction("de", "en") == "INITIAL"
        assert reg.classify_direction("ru", "en") == "ADDED"
        assert reg.classify_direction("en", "ru") == "ADDED"
        assert reg.classify_direction("ru", "de") == "ZERO_SHOT"
        assert reg.classify_direction("de", "ru") == "ZERO_SHOT"

    def test_duplicate_language_rejected(self):
        reg = init_modules(["de"], CFG, seed=0)
        with pytest.raises(ValueError):
            reg.add_pair(build_pair("de", CFG, seed=1))
        with pytest.raises(KeyError):
            reg.pair("nope")
