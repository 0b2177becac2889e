"""Language-specific Transformer encoder/decoder pairs.

Every language owns a private encoder, decoder, embedding tables and
vocabulary; nothing is shared between languages, which is what makes
modules freely composable across translation directions. A registry
holds one pair per language and remembers which languages were part of
the initial training and which were added later (evaluation uses that
history to tag directions).

Layers are pre-norm: x + Drop(Sublayer(LN(x))), with a final LayerNorm,
which trains stably at small scale with a short warmup. Positional
encodings are sinusoidal. Decoder input embedding and output projection
are untied.
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .bpe import PAD, Tokenizer
from .rng import derive_rng

# additive attention mask value for blocked positions; -inf would make
# softmax backward produce NaNs on fully-blocked rows
NEG_INF = -1e9

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    dropout: float = 0.1
    max_len: int = 64
    vocab_size: int = 0

    # full-scale values reported for the reference setup; not used in tests
    FULL_SCALE = None

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        for field in ("num_layers", "num_heads", "d_model", "d_ff", "max_len"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


ModelConfig.FULL_SCALE = dict(num_layers=6, num_heads=8, d_model=512,
                              d_ff=2048, dropout=0.3, max_len=256)


def sinusoidal_encoding(max_len, d_model):
    pos = np.arange(max_len)[:, None].astype(np.float64)
    dim = np.arange(0, d_model, 2).astype(np.float64)
    angle = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def _xavier(rng, n_in, n_out, dtype):
    a = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-a, a, size=(n_in, n_out)).astype(dtype)


class _Module:
    """Named-parameter container shared by encoder and decoder."""

    def __init__(self):
        self._params = {}

    def _add(self, name, array):
        t = ad.Tensor(array, trainable=True, name=name)
        self._params[name] = t
        return t

    def params(self):
        return list(self._params.values())

    def named_params(self):
        return dict(self._params)

    def _ln(self, name, x):
        return ad.layer_norm(x, self._params[name + ".gain"],
                             self._params[name + ".bias"])

    def _make_ln(self, rng, name, d, dtype):
        self._add(name + ".gain", np.ones(d, dtype=dtype))
        self._add(name + ".bias", np.zeros(d, dtype=dtype))

    def _make_attn(self, rng, name, d, dtype):
        for w in ("wq", "wk", "wv", "wo"):
            self._add(f"{name}.{w}", _xavier(rng, d, d, dtype))

    def _make_ffn(self, rng, name, d, d_ff, dtype):
        self._add(name + ".w1", _xavier(rng, d, d_ff, dtype))
        self._add(name + ".b1", np.zeros(d_ff, dtype=dtype))
        self._add(name + ".w2", _xavier(rng, d_ff, d, dtype))
        self._add(name + ".b2", np.zeros(d, dtype=dtype))

    def _attn(self, name, x, kv, mask, n_heads):
        """Multi-head attention; x queries, kv keys/values, additive mask."""
        p = self._params
        b, sq, d = x.shape
        sk = kv.shape[1]
        dh = d // n_heads

        def heads(inp, w, s):
            proj = ad.reshape(ad.matmul(inp, p[f"{name}.{w}"]),
                              (b, s, n_heads, dh))
            return ad.swap_axes(proj, 1, 2)

        q = heads(x, "wq", sq)
        k = heads(kv, "wk", sk)
        v = heads(kv, "wv", sk)
        out = ad.attention(q, k, v, mask)
        out = ad.reshape(ad.swap_axes(out, 1, 2), (b, sq, d))
        return ad.matmul(out, p[f"{name}.wo"])

    def _ffn(self, name, x):
        p = self._params
        h = ad.relu(ad.add(ad.matmul(x, p[name + ".w1"]), p[name + ".b1"]))
        return ad.add(ad.matmul(h, p[name + ".w2"]), p[name + ".b2"])

    def _drop(self, x, train, rng):
        if train and self.config.dropout > 0.0:
            return ad.dropout(x, self.config.dropout, rng)
        return x

    def _embed(self, ids, table_name, train, rng):
        cfg = self.config
        b, s = ids.shape
        if s > cfg.max_len:
            raise ValueError(f"sequence length {s} exceeds max_len {cfg.max_len}")
        if ids.min() < 0 or ids.max() >= self._params[table_name].shape[0]:
            raise ValueError("token id outside vocabulary")
        x = ad.scale(ad.embedding(self._params[table_name], ids),
                     math.sqrt(cfg.d_model))
        x = ad.add_const(x, self._pe[:s])
        return self._drop(x, train, rng)


def _pad_attn_mask(pad_mask, dtype):
    """(B,S) boolean, True = real token -> (B,1,1,S) additive mask."""
    m = np.where(np.asarray(pad_mask, dtype=bool), 0.0, NEG_INF)
    return m[:, None, None, :].astype(dtype)


def _causal_mask(t, dtype):
    return np.triu(np.full((t, t), NEG_INF, dtype=dtype), k=1)[None, None]


class Encoder(_Module):
    def __init__(self, config, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self._pe = sinusoidal_encoding(config.max_len, config.d_model).astype(dtype)
        d = config.d_model
        self._add("emb", rng.uniform(-math.sqrt(3.0 / d), math.sqrt(3.0 / d),
                                     size=(config.vocab_size, d)).astype(dtype))
        for i in range(config.num_layers):
            self._make_ln(rng, f"layers.{i}.ln1", d, dtype)
            self._make_attn(rng, f"layers.{i}.attn", d, dtype)
            self._make_ln(rng, f"layers.{i}.ln2", d, dtype)
            self._make_ffn(rng, f"layers.{i}.ffn", d, config.d_ff, dtype)
        self._make_ln(rng, "ln_f", d, dtype)

    def forward(self, ids, pad_mask, train=False, rng=None):
        """(B,S) int ids + (B,S) bool mask -> (B,S,d_model) states."""
        ids = np.asarray(ids)
        mask = _pad_attn_mask(pad_mask, self.dtype)
        x = self._embed(ids, "emb", train, rng)
        for i in range(self.config.num_layers):
            normed = self._ln(f"layers.{i}.ln1", x)
            h = self._attn(f"layers.{i}.attn", normed, normed, mask,
                           self.config.num_heads)
            x = ad.add(x, self._drop(h, train, rng))
            h = self._ffn(f"layers.{i}.ffn", self._ln(f"layers.{i}.ln2", x))
            x = ad.add(x, self._drop(h, train, rng))
        return self._ln("ln_f", x)


class Decoder(_Module):
    def __init__(self, config, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self._pe = sinusoidal_encoding(config.max_len, config.d_model).astype(dtype)
        d = config.d_model
        self._add("emb", rng.uniform(-math.sqrt(3.0 / d), math.sqrt(3.0 / d),
                                     size=(config.vocab_size, d)).astype(dtype))
        for i in range(config.num_layers):
            self._make_ln(rng, f"layers.{i}.ln1", d, dtype)
            self._make_attn(rng, f"layers.{i}.self_attn", d, dtype)
            self._make_ln(rng, f"layers.{i}.ln2", d, dtype)
            self._make_attn(rng, f"layers.{i}.cross_attn", d, dtype)
            self._make_ln(rng, f"layers.{i}.ln3", d, dtype)
            self._make_ffn(rng, f"layers.{i}.ffn", d, config.d_ff, dtype)
        self._make_ln(rng, "ln_f", d, dtype)
        self._add("proj.w", _xavier(rng, d, config.vocab_size, dtype))
        self._add("proj.b", np.zeros(config.vocab_size, dtype=dtype))

    def forward(self, states, src_pad_mask, tgt_ids, train=False, rng=None):
        """Teacher-forced logits (B,T,vocab) from encoder states (B,S,D)."""
        if states.shape[-1] != self.config.d_model:
            raise ValueError(
                f"encoder states have width {states.shape[-1]}, decoder "
                f"expects d_model {self.config.d_model}")
        tgt_ids = np.asarray(tgt_ids)
        t = tgt_ids.shape[1]
        self_mask = (_causal_mask(t, self.dtype)
                     + _pad_attn_mask(tgt_ids != PAD, self.dtype))
        cross_mask = _pad_attn_mask(src_pad_mask, self.dtype)
        x = self._embed(tgt_ids, "emb", train, rng)
        for i in range(self.config.num_layers):
            normed = self._ln(f"layers.{i}.ln1", x)
            h = self._attn(f"layers.{i}.self_attn", normed, normed,
                           self_mask, self.config.num_heads)
            x = ad.add(x, self._drop(h, train, rng))
            h = self._attn(f"layers.{i}.cross_attn",
                           self._ln(f"layers.{i}.ln2", x), states,
                           cross_mask, self.config.num_heads)
            x = ad.add(x, self._drop(h, train, rng))
            h = self._ffn(f"layers.{i}.ffn", self._ln(f"layers.{i}.ln3", x))
            x = ad.add(x, self._drop(h, train, rng))
        x = self._ln("ln_f", x)
        return ad.add(ad.matmul(x, self._params["proj.w"]),
                      self._params["proj.b"])


class LanguageModulePair:
    """One language's encoder + decoder + tokenizer reference."""

    def __init__(self, lang, encoder, decoder, tokenizer_ref=""):
        self.lang = lang
        self.encoder = encoder
        self.decoder = decoder
        self.tokenizer_ref = tokenizer_ref

    def all_params(self):
        return self.encoder.params() + self.decoder.params()


class ModuleRegistry:
    def __init__(self, config):
        self.config = config
        self.languages = []
        self.pairs = {}
        self.tokenizers = {}
        self.initial_langs = []
        self.added = {}  # lang -> anchor

    def add_pair(self, pair):
        if pair.lang in self.pairs:
            raise ValueError(f"language '{pair.lang}' already registered")
        self.languages.append(pair.lang)
        self.pairs[pair.lang] = pair

    def pair(self, lang):
        if lang not in self.pairs:
            raise KeyError(f"unknown language '{lang}'")
        return self.pairs[lang]

    def classify_direction(self, src, tgt):
        """INITIAL / ADDED / ZERO_SHOT tag from registry history."""
        new = [l for l in (src, tgt) if l in self.added]
        if not new:
            return "INITIAL"
        if len(new) == 1:
            anchor = self.added[new[0]]
            other = tgt if new[0] == src else src
            if other == anchor:
                return "ADDED"
        return "ZERO_SHOT"


def _pair_config(config, vocab_size):
    if vocab_size is not None and vocab_size != config.vocab_size:
        return ModelConfig(**{**asdict(config), "vocab_size": vocab_size})
    return config


def build_pair(lang, config, seed, vocab_size=None, tokenizer_ref="",
               dtype=np.float32):
    cfg = _pair_config(config, vocab_size)
    if cfg.vocab_size <= 0:
        raise ValueError("vocab_size must be positive")
    enc = Encoder(cfg, derive_rng(seed, "init", lang, "encoder"), dtype)
    dec = Decoder(cfg, derive_rng(seed, "init", lang, "decoder"), dtype)
    return LanguageModulePair(lang, enc, dec, tokenizer_ref)


def init_modules(langs, config, seed, tokenizers=None, vocab_sizes=None,
                 dtype=np.float32):
    """Fresh registry: one independent encoder/decoder pair per language.

    Identical (langs, config, seed) produce bit-identical parameters.
    Per-language vocabulary sizes may be supplied directly or implied by
    the tokenizers; otherwise config.vocab_size applies to everyone.
    """
    langs = list(langs)
    if len(set(langs)) != len(langs):
        raise ValueError("duplicate language ids")
    if not langs:
        raise ValueError("need at least one language")
    reg = ModuleRegistry(config)
    for lang in langs:
        vs = None
        ref = ""
        if tokenizers and lang in tokenizers:
            vs = tokenizers[lang].vocab_size
            ref = tokenizers[lang].content_hash()
        if vocab_sizes and lang in vocab_sizes:
            vs = vocab_sizes[lang]
        reg.add_pair(build_pair(lang, config, seed, vs, ref, dtype))
    if tokenizers:
        reg.tokenizers = dict(tokenizers)
    reg.initial_langs = list(langs)
    return reg


# ---------------------------------------------------------------------------
# single-sequence convenience API


def encode(pair, token_ids, pad_mask):
    """Eval-mode states for one sequence: (S,) ids -> (S, d_model) Tensor."""
    ids = np.asarray(token_ids)
    if ids.size == 0:
        raise ValueError("cannot encode an empty sequence")
    mask = np.asarray(pad_mask, dtype=bool)
    if mask.shape != ids.shape:
        raise ValueError("pad mask length must match token ids")
    states = pair.encoder.forward(ids[None, :], mask[None, :], train=False)
    return ad.reshape(states, states.shape[1:])


def decoder_logits(pair, states, tgt_prefix, src_pad_mask=None):
    """Eval-mode teacher-forced logits for one sequence."""
    s = states.shape[0]
    if src_pad_mask is None:
        src_pad_mask = np.ones(s, dtype=bool)
    states3 = ad.reshape(states, (1,) + tuple(states.shape))
    logits = pair.decoder.forward(
        states3, np.asarray(src_pad_mask, dtype=bool)[None, :],
        np.asarray(tgt_prefix)[None, :], train=False)
    return ad.reshape(logits, logits.shape[1:])


def mean_pool(states, pad_mask):
    """Mean of states over non-pad positions -> (d_model,) float array."""
    data = states.data if isinstance(states, ad.Tensor) else np.asarray(states)
    mask = np.asarray(pad_mask, dtype=bool)
    if not mask.any():
        raise ValueError("mean_pool: every position is padding")
    return data[mask].mean(axis=0)


# ---------------------------------------------------------------------------
# checkpoints: JSON header line, then named float32 arrays, little-endian


def checkpoint_save(pair, path):
    enc = pair.encoder.named_params()
    dec = pair.decoder.named_params()
    names = [("enc." + n) for n in enc] + [("dec." + n) for n in dec]
    arrays = [t.data for t in enc.values()] + [t.data for t in dec.values()]
    for n, a in zip(names, arrays):
        if not np.isfinite(a).all():
            raise ValueError(f"refusing to save non-finite parameter {n}")
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": "modnmt-module-pair",
        "lang": pair.lang,
        "tokenizer_ref": pair.tokenizer_ref,
        "config": asdict(pair.encoder.config),
        "params": [[n, list(a.shape)] for n, a in zip(names, arrays)],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def checkpoint_load(path, config=None):
    """Rebuild a LanguageModulePair saved by checkpoint_save.

    When `config` is given, every field except vocab_size must match the
    stored one (vocab sizes legitimately differ per language).
    """
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"corrupted checkpoint header in {path}: {e}")
        if header.get("kind") != "modnmt-module-pair":
            raise ValueError(f"{path} is not a module-pair checkpoint")
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')}")
        stored = ModelConfig(**header["config"])
        if config is not None:
            for field, want in asdict(config).items():
                got = getattr(stored, field)
                if field != "vocab_size" and got != want:
                    raise ValueError(
                        f"config mismatch on '{field}': checkpoint has {got}, "
                        f"expected {want}")
        pair = build_pair(header["lang"], stored, 0,
                          tokenizer_ref=header.get("tokenizer_ref", ""))
        named = {}
        named.update({"enc." + n: t for n, t in
                      pair.encoder.named_params().items()})
        named.update({"dec." + n: t for n, t in
                      pair.decoder.named_params().items()})
        if [n for n, _ in header["params"]] != list(named):
            raise ValueError(f"checkpoint {path} parameter list does not "
                             f"match this architecture")
        for name, shape in header["params"]:
            t = named[name]
            if list(t.data.shape) != shape:
                raise ValueError(f"shape mismatch for {name}")
            n_bytes = int(np.prod(shape)) * 4
            buf = f.read(n_bytes)
            if len(buf) != n_bytes:
                raise ValueError(f"checkpoint {path} truncated at {name}")
            t.data = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise ValueError(f"trailing bytes in checkpoint {path}")
    return pair


def save_registry(registry, out_dir):
    """One checkpoint + tokenizer file per language, plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for lang in registry.languages:
        ckpt = f"module.{lang}.ckpt"
        checkpoint_save(registry.pairs[lang], os.path.join(out_dir, ckpt))
        entry = {"checkpoint": ckpt}
        tok = registry.tokenizers.get(lang)
        if tok is not None:
            entry["tokenizer"] = f"tok.{lang}.txt"
            tok.save(os.path.join(out_dir, entry["tokenizer"]))
        files[lang] = entry
    manifest = {
        "kind": "modnmt-registry",
        "format": CHECKPOINT_FORMAT,
        "config": asdict(registry.config),
        "languages": registry.languages,
        "initial_langs": registry.initial_langs,
        "added": registry.added,
        "files": files,
    }
    with open(os.path.join(out_dir, "registry.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_registry(in_dir):
    with open(os.path.join(in_dir, "registry.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("kind") != "modnmt-registry":
        raise ValueError(f"{in_dir} does not hold a registry manifest")
    config = ModelConfig(**manifest["config"])
    registry = ModuleRegistry(config)
    for lang in manifest["languages"]:
        entry = manifest["files"][lang]
        pair = checkpoint_load(os.path.join(in_dir, entry["checkpoint"]),
                               config=config)
        registry.add_pair(pair)
        if "tokenizer" in entry:
            registry.tokenizers[lang] = Tokenizer.load(
                os.path.join(in_dir, entry["tokenizer"]))
    registry.initial_langs = manifest["initial_langs"]
    registry.added = dict(manifest["added"])
    return registry
