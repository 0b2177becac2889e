"""Byte-pair-encoding tokenizer, one independent instance per language.

Classic BPE over whitespace-split words with an end-of-word marker:
each word becomes a symbol sequence `c1 c2 ... cn </w>`, and training
repeatedly merges the most frequent adjacent symbol pair. Ties break on
the lexicographically smallest pair so training is deterministic.

Special ids are fixed in every vocabulary: PAD=0, BOS=1, EOS=2, UNK=3.
"""

import hashlib
import json
from collections import Counter

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = {"<pad>": PAD, "<bos>": BOS, "<eos>": EOS, "<unk>": UNK}
_MARKER = "</w>"


class Tokenizer:
    def __init__(self, lang, alphabet, merges):
        self.lang = lang
        self.alphabet = tuple(alphabet)
        self.merges = tuple(tuple(m) for m in merges)
        self.vocab = dict(SPECIALS)
        for sym in self.alphabet:
            self.vocab.setdefault(sym, len(self.vocab))
        for a, b in self.merges:
            self.vocab.setdefault(a + b, len(self.vocab))
        self._id_to_sym = {i: s for s, i in self.vocab.items()}
        self._word_cache = {}

    @property
    def vocab_size(self):
        return len(self.vocab)

    def _split_word(self, word):
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        syms = list(word) + [_MARKER]
        for a, b in self.merges:
            i = 0
            out = []
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            syms = out
        self._word_cache[word] = syms
        return syms

    def encode(self, text):
        """Text line -> [BOS, subword ids..., EOS]; unknown symbols -> UNK."""
        ids = [BOS]
        for word in text.split():
            for sym in self._split_word(word):
                ids.append(self.vocab.get(sym, UNK))
        ids.append(EOS)
        return ids

    def decode(self, ids):
        """Inverse of encode on UNK-free input. PAD/BOS/EOS are dropped."""
        pieces = []
        for i in ids:
            i = int(i)
            if i not in self._id_to_sym:
                raise ValueError(f"token id {i} out of range for '{self.lang}'")
            if i in (PAD, BOS, EOS):
                continue
            pieces.append("<unk>" + _MARKER if i == UNK else self._id_to_sym[i])
        words = "".join(pieces).split(_MARKER)
        return " ".join(w for w in words if w)

    def content_hash(self):
        return hashlib.md5(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self):
        header = json.dumps(
            {"format": "modnmt-bpe", "version": 1, "lang": self.lang,
             "alphabet": list(self.alphabet)},
            sort_keys=True)
        lines = [header]
        lines.extend(f"{a} {b}" for a, b in self.merges)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty tokenizer file")
        header = json.loads(lines[0])
        if header.get("format") != "modnmt-bpe" or header.get("version") != 1:
            raise ValueError("not a recognized tokenizer file")
        merges = []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            a, b = ln.split(" ", 1)
            merges.append((a, b))
        return cls(header["lang"], header["alphabet"], merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def _pair_counts(word_freqs):
    counts = Counter()
    for syms, freq in word_freqs.items():
        for i in range(len(syms) - 1):
            counts[(syms[i], syms[i + 1])] += freq
    return counts


def _merge_word(syms, pair, joined):
    a, b = pair
    out = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
            out.append(joined)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def train_bpe(corpus, num_merges, lang="und"):
    """Learn `num_merges` merges from an iterable of text lines.

    Pair frequencies are counted over every adjacent occurrence, so in
    "aaab" the pair (a, a) counts twice. Training stops early if no
    pair is left to merge.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freqs = Counter()
    for line in corpus:
        for word in line.split():
            word_freqs[tuple(word) + (_MARKER,)] += 1
    if not word_freqs:
        raise ValueError("cannot train a tokenizer on an empty corpus")

    alphabet = sorted({s for syms in word_freqs for s in syms})
    merges = []
    for _ in range(num_merges):
        counts = _pair_counts(word_freqs)
        if not counts:
            break
        # max frequency, then lexicographically smallest pair
        top = max(counts.values())
        best = min(p for p, c in counts.items() if c == top)
        merges.append(best)
        joined = best[0] + best[1]
        word_freqs = Counter(
            {_merge_word(syms, best, joined): f for syms, f in word_freqs.items()})
    return Tokenizer(lang, alphabet, merges)
