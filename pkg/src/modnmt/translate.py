"""Decoding by module composition, BLEU, and direction-matrix evaluation.

Any encoder can drive any decoder: the pair never needs to have been
trained together, which is the whole zero-shot story. Inference never
mutates a parameter.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bpe import BOS, EOS, PAD
from .corpus import _pad_block

log = logging.getLogger("modnmt.translate")

GREEDY, BEAM = "greedy", "beam"


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = BEAM
    beam_size: int = 4
    max_len: int = 64
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.strategy not in (GREEDY, BEAM):
            raise ValueError(f"unknown decode strategy '{self.strategy}'")
        if self.beam_size < 1 or self.max_len < 1:
            raise ValueError("beam_size and max_len must be >= 1")


def _log_softmax_row(x):
    m = x.max()
    z = np.log(np.exp(x - m).sum())
    return x - m - z


def _fit_length(ids, max_len, where):
    if len(ids) > max_len:
        log.debug("truncating %s sequence of %d tokens to %d",
                  where, len(ids), max_len)
        ids = ids[:max_len - 1] + [EOS]
    return ids


def greedy_decode_batch(registry, src, tgt, src_seqs, max_len):
    """Greedy decode a list of source id sequences; returns id lists.

    The prefix is re-fed fully each step (no state caching); done rows
    grow with PAD, which masked self-attention ignores.
    """
    enc = registry.pair(src).encoder
    dec = registry.pair(tgt).decoder
    max_len = min(max_len, dec.config.max_len - 1)
    src_block = _pad_block(src_seqs)
    src_mask = src_block != PAD
    states = enc.forward(src_block, src_mask, train=False)
    n = len(src_seqs)
    prefix = np.full((n, 1), BOS, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_len):
        logits = dec.forward(states, src_mask, prefix, train=False)
        nxt = logits.data[:, -1, :].argmax(axis=1).astype(np.int64)
        nxt[done] = PAD
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        done |= nxt == EOS
        if done.all():
            break
    outs = []
    for row in prefix:
        toks = []
        for t in row[1:]:
            if t == EOS or t == PAD:
                break
            toks.append(int(t))
        outs.append(toks)
    return outs


def beam_decode(registry, src, tgt, src_seq, beam_size, max_len,
                length_penalty=1.0):
    """Beam search for one source sequence; returns the best id list.

    Candidates are ranked by cumulative log-probability while the search
    runs; the final winner is picked by length-normalized score
    (logp / n_tokens**length_penalty). beam_size 1 reproduces greedy.
    """
    enc = registry.pair(src).encoder
    dec = registry.pair(tgt).decoder
    max_len = min(max_len, dec.config.max_len - 1)
    src_block = _pad_block([src_seq])
    src_mask = src_block != PAD
    states = enc.forward(src_block, src_mask, train=False)

    beams = [(0.0, (BOS,), False)]
    for _ in range(max_len):
        alive = [b for b in beams if not b[2]]
        if not alive:
            break
        prefixes = np.array([b[1] for b in alive], dtype=np.int64)
        k = len(alive)
        states_k = ad.Tensor(np.repeat(states.data, k, axis=0))
        mask_k = np.repeat(src_mask, k, axis=0)
        logits = dec.forward(states_k, mask_k, prefixes, train=False)
        last = logits.data[:, -1, :]
        cands = [b for b in beams if b[2]]
        for i, (lp, ids, _) in enumerate(alive):
            row = _log_softmax_row(last[i].astype(np.float64))
            top = np.argsort(-row, kind="stable")[:beam_size]
            for t in top:
                t = int(t)
                cands.append((lp + float(row[t]), ids + (t,), t == EOS))
        cands.sort(key=lambda b: (-b[0], b[1]))
        beams = cands[:beam_size]
        if all(b[2] for b in beams):
            break

    def norm(b):
        n_tok = max(len(b[1]) - 1, 1)
        return b[0] / (n_tok ** length_penalty)

    best = max(beams, key=norm)
    out = []
    for t in best[1][1:]:
        if t == EOS:
            break
        out.append(int(t))
    return out


def translate(registry, src, tgt, text, cfg=None, tokenizers=None):
    """Encode with src's modules, decode with tgt's; src and tgt need
    never have been trained as a pair."""
    cfg = cfg or DecodeConfig()
    tokenizers = tokenizers or registry.tokenizers
    if src == tgt:
        raise ValueError("translation requires two distinct languages")
    pair_src = registry.pair(src)  # raises KeyError on unknown language
    registry.pair(tgt)
    ids = tokenizers[src].encode(text)
    ids = _fit_length(ids, pair_src.encoder.config.max_len, "source")
    if cfg.strategy == GREEDY:
        out = greedy_decode_batch(registry, src, tgt, [ids], cfg.max_len)[0]
    else:
        out = beam_decode(registry, src, tgt, ids, cfg.beam_size,
                          cfg.max_len, cfg.length_penalty)
    return tokenizers[tgt].decode(out)


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references):
    """Corpus-level BLEU-4, whitespace tokens, brevity penalty, no smoothing.

    N-gram orders for which the whole hypothesis corpus has no n-grams
    at all (everything shorter than n) are dropped from the geometric
    mean so that a perfect short corpus still scores 100. Any included
    order with zero matches makes the score 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs "
                         f"{len(references)} references")
    if not hypotheses:
        raise ValueError("bleu needs at least one sentence pair")
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        ht, rt = hyp.split(), ref.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, 5):
            hc = _ngram_counts(ht, n)
            if not hc:
                continue
            rc = _ngram_counts(rt, n)
            totals[n - 1] += sum(hc.values())
            clipped[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    orders = [i for i in range(4) if totals[i] > 0]
    if not orders:
        return 0.0
    if any(clipped[i] == 0 for i in orders):
        return 0.0
    log_p = sum(math.log(clipped[i] / totals[i]) for i in orders) / len(orders)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


# ---------------------------------------------------------------------------
# direction matrices


@dataclass
class EvalMatrix:
    scores: dict = field(default_factory=dict)   # (src,tgt) -> BLEU
    tags: dict = field(default_factory=dict)     # (src,tgt) -> condition

    def to_csv(self):
        lines = ["src,tgt,condition,bleu"]
        for key in sorted(self.scores):
            lines.append(f"{key[0]},{key[1]},{self.tags[key]},"
                         f"{self.scores[key]:.6f}")
        return "\n".join(lines) + "\n"

    def format_table(self):
        langs = sorted({l for pair in self.scores for l in pair})
        width = max(6, max(len(l) for l in langs) + 1)
        head = "src\\tgt".ljust(width) + "".join(l.rjust(width) for l in langs)
        rows = [head]
        for a in langs:
            cells = []
            for b in langs:
                if (a, b) in self.scores:
                    cells.append(f"{self.scores[(a, b)]:.2f}".rjust(width))
                else:
                    cells.append("-".rjust(width))
            rows.append(a.ljust(width) + "".join(cells))
        return "\n".join(rows)


def evaluate_matrix(registry, corpus, directions, cfg=None, tokenizers=None,
                    split="test"):
    """BLEU over the given (src, tgt) directions on one corpus split."""
    cfg = cfg or DecodeConfig()
    tokenizers = tokenizers or registry.tokenizers
    matrix = EvalMatrix()
    for d in directions:
        src, tgt = (d.src, d.tgt) if hasattr(d, "src") else d
        if src not in corpus.langs or tgt not in corpus.langs:
            raise KeyError(f"corpus lacks a column for direction {src}->{tgt}")
        refs = corpus.lines(tgt, split)
        max_src = registry.pair(src).encoder.config.max_len
        seqs = [_fit_length(tokenizers[src].encode(line), max_src, "source")
                for line in corpus.lines(src, split)]
        if cfg.strategy == GREEDY:
            outs = greedy_decode_batch(registry, src, tgt, seqs, cfg.max_len)
        else:
            outs = [beam_decode(registry, src, tgt, s, cfg.beam_size,
                                cfg.max_len, cfg.length_penalty)
                    for s in seqs]
        hyps = [tokenizers[tgt].decode(o) for o in outs]
        matrix.scores[(src, tgt)] = bleu(hyps, refs)
        matrix.tags[(src, tgt)] = registry.classify_direction(src, tgt)
        log.info("eval %s->%s [%s] bleu=%.2f", src, tgt,
                 matrix.tags[(src, tgt)], matrix.scores[(src, tgt)])
    return matrix
