"""Synthetic multi-parallel corpora, real-file ingestion, and batching.

The toy languages are deterministic renderings of a shared pivot
sequence: each language owns a bijective lexicon (pivot symbol ->
surface word) plus an invertible word-order rule. Translating between
any two toy languages is therefore an exact, known function, which is
what makes desk-scale BLEU thresholds meaningful.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .bpe import PAD
from .rng import derive_rng

log = logging.getLogger("modnmt.corpus")

PIVOT_ALPHABET_SIZE = 40
_CONS = "bdgklmpr"
_VOW = "aeiou"


def _rotate(seq, k):
    if not seq:
        return seq
    k %= len(seq)
    return seq[k:] + seq[:k]


def _swap_pairs(seq):
    out = list(seq)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return tuple(out)


# name -> (apply, invert); every rule is a permutation for any length
ORDER_RULES = {
    "identity": (lambda s: s, lambda s: s),
    "reverse": (lambda s: s[::-1], lambda s: s[::-1]),
    "rotate1": (lambda s: _rotate(s, 1), lambda s: _rotate(s, -1)),
    "swap_pairs": (_swap_pairs, _swap_pairs),
    "rotate2": (lambda s: _rotate(s, 2), lambda s: _rotate(s, -2)),
}

# rule assignment for the stock toy languages; ru is the add-on language
TOY_RULES = {"de": "identity", "en": "reverse", "es": "rotate1",
             "fr": "swap_pairs", "ru": "rotate2"}


@dataclass(frozen=True)
class ToyLanguageSpec:
    lang: str
    lexicon: dict          # pivot symbol (int) -> surface word
    order_rule: str

    def __post_init__(self):
        if self.order_rule not in ORDER_RULES:
            raise ValueError(f"unknown order rule '{self.order_rule}'")
        if len(set(self.lexicon.values())) != len(self.lexicon):
            raise ValueError(f"lexicon for '{self.lang}' is not a bijection")

    def render(self, pivot):
        apply_rule = ORDER_RULES[self.order_rule][0]
        return " ".join(self.lexicon[s] for s in apply_rule(tuple(pivot)))

    def parse(self, line):
        inverse = {w: s for s, w in self.lexicon.items()}
        try:
            syms = tuple(inverse[w] for w in line.split())
        except KeyError as e:
            raise ValueError(f"word {e} not in '{self.lang}' lexicon")
        return ORDER_RULES[self.order_rule][1](syms)


def default_toy_specs(langs):
    """Stock specs for a list of language names (or a count up to 5)."""
    if isinstance(langs, int):
        langs = list(TOY_RULES)[:langs]
    specs = []
    for lang in langs:
        if lang not in TOY_RULES:
            raise ValueError(f"no stock toy spec for '{lang}'")
        lexicon = {k: lang + _CONS[k % len(_CONS)] + _VOW[k // len(_CONS)]
                   for k in range(PIVOT_ALPHABET_SIZE)}
        specs.append(ToyLanguageSpec(lang, lexicon, TOY_RULES[lang]))
    return specs


class MultiParallelCorpus:
    """Aligned sentences over a language set, with train/valid/test splits."""

    def __init__(self, langs, sentences, splits, pivots=None):
        self.langs = list(langs)
        self.sentences = sentences
        self.splits = splits
        self.pivots = pivots
        self._token_cache = {}

    def __len__(self):
        return len(self.sentences)

    def lines(self, lang, split):
        if lang not in self.langs:
            raise KeyError(f"corpus has no language '{lang}'")
        return [self.sentences[i][lang] for i in self.splits[split]]

    def encoded(self, lang, split, tokenizer):
        """Cached token id arrays for one language/split."""
        key = (lang, split, id(tokenizer))
        if key not in self._token_cache:
            self._token_cache[key] = [
                np.asarray(tokenizer.encode(line), dtype=np.int64)
                for line in self.lines(lang, split)]
        return self._token_cache[key]


def generate_toy_corpus(specs, n_sentences, len_range=(3, 12), seed=0):
    """Sample pivot sequences and render them through every spec.

    Deterministic given the seed; split 90/5/5 by position.
    """
    if len(specs) < 2:
        raise ValueError("need at least two language specs")
    langs = [s.lang for s in specs]
    if len(set(langs)) != len(langs):
        raise ValueError("duplicate language in specs")
    if n_sentences <= 0:
        raise ValueError("n_sentences must be positive")
    domain = set(specs[0].lexicon)
    for s in specs[1:]:
        if set(s.lexicon) != domain:
            raise ValueError("specs must share one pivot symbol domain")
    symbols = sorted(domain)

    rng = derive_rng(seed, "toy-corpus")
    lo, hi = len_range
    sentences = []
    pivots = []
    for _ in range(n_sentences):
        n = int(rng.integers(lo, hi + 1))
        pivot = tuple(symbols[i] for i in rng.integers(0, len(symbols), n))
        pivots.append(pivot)
        sentences.append({s.lang: s.render(pivot) for s in specs})

    n_train = int(n_sentences * 0.9)
    n_valid = int(n_sentences * 0.05)
    splits = {
        "train": list(range(0, n_train)),
        "valid": list(range(n_train, n_train + n_valid)),
        "test": list(range(n_train + n_valid, n_sentences)),
    }
    return MultiParallelCorpus(langs, sentences, splits, pivots)


@dataclass
class Batch:
    src: str
    tgt: str
    src_ids: np.ndarray    # (B, S) int64, PAD-padded
    src_mask: np.ndarray   # (B, S) bool, True = real token
    tgt_in: np.ndarray     # (B, T) decoder input, starts with BOS
    tgt_out: np.ndarray    # (B, T) shifted targets, ends with EOS
    indices: list = field(default_factory=list)

    @property
    def n_src_tokens(self):
        return int(self.src_mask.sum())


def _pad_block(seqs):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for r, s in enumerate(seqs):
        out[r, :len(s)] = s
    return out


def make_batches(corpus, direction, token_budget, epoch_seed, tokenizers,
                 split="train"):
    """One epoch of token-budgeted, length-bucketed batches for a direction.

    Covers the split exactly once in an order derived from epoch_seed.
    The budget bounds the number of non-pad source tokens per batch.
    """
    if hasattr(direction, "src"):
        src, tgt = direction.src, direction.tgt
    else:
        src, tgt = direction
    if src == tgt:
        raise ValueError("autoencoding excluded: src and tgt must differ")
    src_seqs = corpus.encoded(src, split, tokenizers[src])
    tgt_seqs = corpus.encoded(tgt, split, tokenizers[tgt])
    longest = max(len(s) for s in src_seqs)
    if token_budget < longest:
        raise ValueError(
            f"token budget {token_budget} below longest source sentence "
            f"({longest} tokens)")

    rng = derive_rng(epoch_seed, "batches", src, tgt, split)
    perm = rng.permutation(len(src_seqs))
    lengths = np.array([len(src_seqs[i]) for i in perm])
    perm = perm[np.argsort(lengths, kind="stable")]

    groups = []
    current, used = [], 0
    for i in perm:
        n = len(src_seqs[int(i)])
        if current and used + n > token_budget:
            groups.append(current)
            current, used = [], 0
        current.append(int(i))
        used += n
    if current:
        groups.append(current)

    for gi in rng.permutation(len(groups)):
        rows = groups[int(gi)]
        src_block = _pad_block([src_seqs[i] for i in rows])
        tgt_in = _pad_block([tgt_seqs[i][:-1] for i in rows])
        tgt_out = _pad_block([tgt_seqs[i][1:] for i in rows])
        yield Batch(src, tgt, src_block, src_block != PAD,
                    tgt_in, tgt_out, rows)


def load_parallel_files(src_path, tgt_path, src_lang, tgt_lang):
    """Line-aligned bilingual files -> two-language corpus (all train)."""
    with open(src_path, encoding="utf-8") as f:
        src_lines = f.read().splitlines()
    with open(tgt_path, encoding="utf-8") as f:
        tgt_lines = f.read().splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"line count mismatch: {src_path} has {len(src_lines)} lines, "
            f"{tgt_path} has {len(tgt_lines)}")
    n_empty = sum(1 for a, b in zip(src_lines, tgt_lines) if not a or not b)
    if n_empty:
        log.warning("%d line pair(s) contain an empty side", n_empty)
    sentences = [{src_lang: a, tgt_lang: b}
                 for a, b in zip(src_lines, tgt_lines)]
    splits = {"train": list(range(len(sentences))), "valid": [], "test": []}
    return MultiParallelCorpus([src_lang, tgt_lang], sentences, splits)


# ---------------------------------------------------------------------------
# directory layout: <split>.<lang>.txt per language per split + manifest


def save_corpus(corpus, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for split, idx in corpus.splits.items():
        for lang in corpus.langs:
            path = os.path.join(out_dir, f"{split}.{lang}.txt")
            with open(path, "w", encoding="utf-8") as f:
                for i in idx:
                    f.write(corpus.sentences[i][lang] + "\n")
        if corpus.pivots is not None:
            path = os.path.join(out_dir, f"{split}.pivot.txt")
            with open(path, "w", encoding="utf-8") as f:
                for i in idx:
                    f.write(" ".join(str(s) for s in corpus.pivots[i]) + "\n")
    manifest = {
        "languages": corpus.langs,
        "counts": {split: len(idx) for split, idx in corpus.splits.items()},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_corpus(in_dir):
    with open(os.path.join(in_dir, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    langs = manifest["languages"]
    sentences = []
    pivots = []
    splits = {}
    have_pivots = True
    for split in ("train", "valid", "test"):
        count = manifest["counts"].get(split, 0)
        start = len(sentences)
        columns = {}
        for lang in langs:
            path = os.path.join(in_dir, f"{split}.{lang}.txt")
            with open(path, encoding="utf-8") as f:
                columns[lang] = f.read().splitlines()
            if len(columns[lang]) != count:
                raise ValueError(f"{path}: expected {count} lines, "
                                 f"found {len(columns[lang])}")
        for i in range(count):
            sentences.append({lang: columns[lang][i] for lang in langs})
        ppath = os.path.join(in_dir, f"{split}.pivot.txt")
        if os.path.exists(ppath):
            with open(ppath, encoding="utf-8") as f:
                for ln in f.read().splitlines():
                    pivots.append(tuple(int(x) for x in ln.split()))
        else:
            have_pivots = False
        splits[split] = list(range(start, start + count))
    return MultiParallelCorpus(langs, sentences, splits,
                               pivots if have_pivots else None)
