"""Cross-lingual sentence-representation probe.

A small classifier reads pairs of mean-pooled sentence encodings through
the feature map h = [u, v, |u-v|, u*v], trains on ONE language's frozen
encoder, and is then scored through every other language's encoder with
no adaptation. If the encoders place parallel sentences near each other,
accuracy should survive the encoder swap.

The synthetic inference set is multi-parallel by construction: premise
and hypothesis are pivot sequences rendered into every toy language, and
the label depends only on the pivots: entailment when the hypothesis is
a contiguous subsequence of the premise, contradiction when the two
share no symbol, neutral otherwise.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bpe import PAD
from .corpus import _pad_block
from .rng import derive_rng
from .trainer import OptimizerState, adam_step

LABELS = ("entailment", "contradiction", "neutral")


@dataclass(frozen=True)
class InferencePair:
    premise: str
    hypothesis: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label '{self.label}'")


def combine_features(u, v):
    """h = [u, v, |u-v|, u*v], the classifier's input layout."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"feature lengths differ: {u.shape} vs {v.shape}")
    return np.concatenate([u, v, np.abs(u - v), u * v], axis=-1)


def _is_contiguous_subseq(needle, haystack):
    n, h = len(needle), len(haystack)
    if n == 0 or n > h:
        return False
    return any(tuple(haystack[i:i + n]) == tuple(needle)
               for i in range(h - n + 1))


def pivot_label(premise, hypothesis):
    if _is_contiguous_subseq(hypothesis, premise):
        return "entailment"
    if set(hypothesis).isdisjoint(premise):
        return "contradiction"
    return "neutral"


def make_inference_data(specs, n_pairs, seed=0, len_range=(4, 10)):
    """Aligned premise/hypothesis pairs for every spec's language.

    Labels cycle through entailment/contradiction/neutral so classes stay
    balanced. Hypotheses are built to force the wanted label and then
    double-checked against pivot_label.
    """
    rng = derive_rng(seed, "nli")
    alphabet = sorted(specs[0].lexicon)
    lo, hi = len_range
    out = {spec.lang: [] for spec in specs}
    for i in range(n_pairs):
        length = int(rng.integers(lo, hi + 1))
        premise = tuple(alphabet[j]
                        for j in rng.integers(0, len(alphabet), length))
        want = LABELS[i % 3]
        unused = [a for a in alphabet if a not in set(premise)]
        if want == "entailment":
            w = int(rng.integers(2, length + 1))
            s = int(rng.integers(0, length - w + 1))
            hyp = premise[s:s + w]
        elif want == "contradiction":
            m = int(rng.integers(2, 7))
            hyp = tuple(unused[j]
                        for j in rng.integers(0, len(unused), m))
        else:
            # a shuffled slice of premise symbols plus one foreign symbol:
            # overlaps the premise but cannot be a contiguous subsequence
            k = int(rng.integers(2, min(5, length) + 1))
            picks = [premise[j] for j in rng.integers(0, length, k)]
            picks.insert(int(rng.integers(0, k + 1)),
                         unused[int(rng.integers(0, len(unused)))])
            hyp = tuple(picks)
        assert pivot_label(premise, hyp) == want
        for spec in specs:
            out[spec.lang].append(InferencePair(
                spec.render(premise), spec.render(hyp), want))
    return out


def majority_baseline(pairs):
    counts = {}
    for p in pairs:
        counts[p.label] = counts.get(p.label, 0) + 1
    return max(counts.values()) / len(pairs)


def load_inference_tsv(path):
    """`premise<TAB>hypothesis<TAB>label` lines -> list of InferencePair."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for ln in f.read().splitlines():
            if not ln.strip():
                continue
            premise, hypothesis, label = ln.split("\t")
            pairs.append(InferencePair(premise, hypothesis, label))
    return pairs


def save_inference_tsv(pairs, path):
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(f"{p.premise}\t{p.hypothesis}\t{p.label}\n")


def pool_sentences(pair, tokenizer, texts, batch_size=64):
    """Mean-pooled eval-mode encodings, (n, d_model) float array."""
    vecs = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start:start + batch_size]
        ids = [np.asarray(tokenizer.encode(t), dtype=np.int64) for t in chunk]
        block = _pad_block(ids)
        mask = block != PAD
        states = pair.encoder.forward(block, mask, train=False).data
        counts = mask.sum(axis=1, keepdims=True)
        vecs.append((states * mask[:, :, None]).sum(axis=1) / counts)
    return np.concatenate(vecs, axis=0)


def pair_features(pair, tokenizer, inference_pairs, batch_size=64):
    u = pool_sentences(pair, tokenizer,
                       [p.premise for p in inference_pairs], batch_size)
    v = pool_sentences(pair, tokenizer,
                       [p.hypothesis for p in inference_pairs], batch_size)
    return combine_features(u, v)


class ProbeClassifier:
    """4*d_model -> 128 -> |labels|, ReLU hidden, softmax output."""

    HIDDEN = 128

    def __init__(self, d_in, labels, seed=0):
        if len(labels) < 2:
            raise ValueError("a probe needs at least two labels")
        self.d_in = d_in
        self.labels = tuple(labels)
        rng = derive_rng(seed, "probe-init")
        a1 = math.sqrt(6.0 / (d_in + self.HIDDEN))
        a2 = math.sqrt(6.0 / (self.HIDDEN + len(labels)))
        self.w1 = ad.Tensor(rng.uniform(-a1, a1, (d_in, self.HIDDEN))
                            .astype(np.float32), trainable=True, name="w1")
        self.b1 = ad.Tensor(np.zeros(self.HIDDEN, dtype=np.float32),
                            trainable=True, name="b1")
        self.w2 = ad.Tensor(rng.uniform(-a2, a2, (self.HIDDEN, len(labels)))
                            .astype(np.float32), trainable=True, name="w2")
        self.b2 = ad.Tensor(np.zeros(len(labels), dtype=np.float32),
                            trainable=True, name="b2")

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, features):
        x = ad.Tensor(np.asarray(features, dtype=np.float32))
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def predict_proba(self, features):
        z = self.logits(features).data.astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, features):
        return [self.labels[i]
                for i in self.logits(features).data.argmax(axis=1)]


def train_probe(pair, tokenizer, train_pairs, seed=0, epochs=20,
                batch_size=64, lr=1e-3):
    """Fit the probe on one language's frozen encoder.

    The encoder only ever runs in eval mode to produce features; its
    parameters are never handed to the optimizer, so they stay
    bit-identical.
    """
    present = [l for l in LABELS
               if any(p.label == l for p in train_pairs)]
    if len(present) < 2:
        raise ValueError("probe training needs at least two distinct labels")
    feats = pair_features(pair, tokenizer, train_pairs, batch_size)
    y = np.array([present.index(p.label) for p in train_pairs],
                 dtype=np.int64)

    clf = ProbeClassifier(feats.shape[1], present, seed)
    opt = OptimizerState(base_lr=lr, warmup_steps=0)
    rng = derive_rng(seed, "probe-epochs")
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            rows = order[start:start + batch_size]
            logits = clf.logits(feats[rows])
            loss = ad.cross_entropy(logits, y[rows], pad_id=-1)
            grads = ad.backward(loss, params=clf.params())
            adam_step(clf.params(), grads, opt)
    return clf


def evaluate_probe(clf, registry, test_pairs_by_lang, tokenizers=None,
                   batch_size=64):
    """Accuracy per language, each scored through its own encoder."""
    tokenizers = tokenizers or registry.tokenizers
    out = {}
    for lang, pairs in test_pairs_by_lang.items():
        module_pair = registry.pair(lang)
        d_in = 4 * module_pair.encoder.config.d_model
        if d_in != clf.d_in:
            raise ValueError(
                f"classifier expects input width {clf.d_in}, language "
                f"'{lang}' produces {d_in}")
        feats = pair_features(module_pair, tokenizers[lang], pairs,
                              batch_size)
        pred = clf.predict(feats)
        correct = sum(1 for p, q in zip(pred, pairs) if p == q.label)
        out[lang] = correct / len(pairs)
    return out


def format_accuracy_table(acc_by_lang):
    langs = list(acc_by_lang)
    head = " ".join(f"{l:>8s}" for l in langs)
    row = " ".join(f"{acc_by_lang[l] * 100:8.2f}" for l in langs)
    return head + "\n" + row
