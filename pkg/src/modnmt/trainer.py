"""Multilingual training: round-robin steps, freezing, Adam, early stop.

One multilingual step walks the schedule's directions in order; each
direction runs encode -> teacher-forced decode -> cross entropy, one
backward pass, and an immediate optimizer update. Freezing is enforced
here and only here: gradients always flow through a frozen module, its
optimizer update is simply skipped, so its parameters stay bit-identical.

Each module (a language's encoder or decoder) has exactly one Adam
state no matter how many directions feed it. Frozen modules run with
dropout off so they present a stable target; the learning side keeps
dropout active.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .bpe import PAD
from .corpus import make_batches
from .model import build_pair
from .rng import derive_rng
from .schedule import (Direction, FreezeMode, TrainingSchedule,
                       adaptive_update, schedule_to_text)

log = logging.getLogger("modnmt.trainer")

ENCODER, DECODER, BOTH = "encoder", "decoder", "both"


class OptimizerState:
    """Adam moments for one module, with linear learning-rate warmup."""

    def __init__(self, base_lr=1e-3, warmup_steps=100, betas=(0.9, 0.999),
                 eps=1e-8):
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.betas = betas
        self.eps = eps
        self.step = 0
        self._m = {}
        self._v = {}

    def lr(self, t):
        if self.warmup_steps > 0:
            return self.base_lr * min(1.0, t / self.warmup_steps)
        return self.base_lr

    def slots(self, p):
        key = id(p)
        if key not in self._m:
            self._m[key] = np.zeros(p.data.size, dtype=p.data.dtype)
            self._v[key] = np.zeros(p.data.size, dtype=p.data.dtype)
        return self._m[key], self._v[key]


def adam_step(params, grads, state):
    """One Adam update over `params`; `grads` maps Tensor -> array.

    Parameters with trainable=False are untouched even when a gradient
    is present. Mutates parameter data in place.
    """
    state.step += 1
    t = state.step
    lr = state.lr(t)
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = grads.get(p)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter shape {p.data.shape}")
        m, v = state.slots(p)
        K.adam_update(p.data.reshape(-1),
                      np.ascontiguousarray(g, dtype=p.data.dtype).reshape(-1),
                      m, v, lr, b1, b2, state.eps, bc1, bc2)


def _clip_grads(params, grads, clip_norm):
    total = 0.0
    for p in params:
        g = grads.get(p)
        if g is not None:
            total += float((g.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > clip_norm:
        factor = clip_norm / norm
        for p in params:
            if grads.get(p) is not None:
                grads[p] = grads[p] * factor


class ModuleOptimizers:
    """Lazily created per-module optimizer states, keyed (lang, role)."""

    def __init__(self, base_lr=1e-3, warmup_steps=100, betas=(0.9, 0.999),
                 eps=1e-8):
        self._kw = dict(base_lr=base_lr, warmup_steps=warmup_steps,
                        betas=betas, eps=eps)
        self.states = {}

    def state(self, lang, role):
        key = (lang, role)
        if key not in self.states:
            self.states[key] = OptimizerState(**self._kw)
        return self.states[key]


def direction_loss(registry, direction, batch, train=False, rng=None):
    """Forward pass for one direction; returns (loss Tensor, params to update)."""
    enc_pair = registry.pair(direction.src)
    dec_pair = registry.pair(direction.tgt)
    update_enc = direction.mode != FreezeMode.FREEZE_SRC_ENCODER
    update_dec = direction.mode != FreezeMode.FREEZE_TGT_DECODER
    states = enc_pair.encoder.forward(
        batch.src_ids, batch.src_mask,
        train=train and update_enc, rng=rng)
    logits = dec_pair.decoder.forward(
        states, batch.src_mask, batch.tgt_in,
        train=train and update_dec, rng=rng)
    vocab = logits.shape[-1]
    loss = ad.cross_entropy(ad.reshape(logits, (-1, vocab)),
                            batch.tgt_out.reshape(-1), PAD)
    to_update = []
    if update_enc:
        to_update.append((direction.src, "encoder", enc_pair.encoder.params()))
    if update_dec:
        to_update.append((direction.tgt, "decoder", dec_pair.decoder.params()))
    return loss, to_update


def multilingual_training_step(registry, schedule, batch_source, opts,
                               step_index=0, seed=0, clip_norm=None):
    """One pass over all scheduled directions, updating after each one.

    `batch_source` is a callable mapping a Direction to a Batch. Returns
    {(src, tgt): loss} in schedule order.
    """
    losses = {}
    for d in schedule.directions:
        if d.src not in registry.pairs or d.tgt not in registry.pairs:
            raise KeyError(f"schedule direction {d.src}->{d.tgt} refers to "
                           f"a language missing from the registry")
        batch = batch_source(d)
        rng = derive_rng(seed, "dropout", step_index, d.src, d.tgt)
        loss, to_update = direction_loss(registry, d, batch, train=True,
                                         rng=rng)
        value = loss.item()
        if not math.isfinite(value):
            raise RuntimeError(
                f"non-finite loss {value} at step {step_index}, direction "
                f"{d.src}->{d.tgt} (mode {d.mode.value}); aborting step")
        all_params = [p for _, _, ps in to_update for p in ps]
        grads = ad.backward(loss, params=all_params)
        if clip_norm is not None:
            for _, _, ps in to_update:
                _clip_grads(ps, grads, clip_norm)
        for lang, role, ps in to_update:
            adam_step(ps, grads, opts.state(lang, role))
        losses[(d.src, d.tgt)] = value
        log.debug("step=%d dir=%s-%s mode=%s loss=%.6f",
                  step_index, d.src, d.tgt, d.mode.value, value)
    return losses


@dataclass
class TrainRunConfig:
    schedule: TrainingSchedule
    max_steps: int = 2000
    token_budget: int = 512
    patience: int = 5
    eval_every: int = 100
    seed: int = 0
    adaptive: bool = False
    base_lr: float = 1e-3
    warmup_steps: int = 100
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = None

    def __post_init__(self):
        for f in ("max_steps", "token_budget", "patience", "eval_every"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")


@dataclass
class TrainHistory:
    train_losses: list = field(default_factory=list)  # (step, {dir: loss})
    val_losses: list = field(default_factory=list)    # (step, mean, {dir: loss})
    final_schedule: TrainingSchedule = None
    stopped_early: bool = False
    steps_run: int = 0


def validation_loss(registry, corpus, schedule, tokenizers, token_budget,
                    split="valid", seed=0):
    """Token-weighted mean teacher-forced loss per direction (eval mode)."""
    out = {}
    for d in schedule.directions:
        total, tokens = 0.0, 0
        for batch in make_batches(corpus, d, token_budget, seed,
                                  tokenizers, split=split):
            loss, _ = direction_loss(registry, d, batch, train=False)
            n = int((batch.tgt_out != PAD).sum())
            total += loss.item() * n
            tokens += n
        out[(d.src, d.tgt)] = total / max(tokens, 1)
    return out


class _DirectionFeed:
    """Cycling per-direction batch supply with per-pass reshuffling."""

    def __init__(self, corpus, tokenizers, token_budget, seed):
        self.corpus = corpus
        self.tokenizers = tokenizers
        self.budget = token_budget
        self.seed = seed
        self._iters = {}
        self._passes = {}
        self._counts = {}

    def _refill(self, d):
        key = (d.src, d.tgt)
        n_pass = self._passes.get(key, 0)
        batches = list(make_batches(
            self.corpus, d, self.budget,
            derive_rng(self.seed, "pass", n_pass).integers(2**31),
            self.tokenizers))
        self._passes[key] = n_pass + 1
        self._counts.setdefault(key, len(batches))
        self._iters[key] = iter(batches)

    def batches_per_pass(self, d):
        if (d.src, d.tgt) not in self._counts:
            self._refill(d)
        return self._counts[(d.src, d.tgt)]

    def next(self, d):
        key = (d.src, d.tgt)
        if key not in self._iters:
            self._refill(d)
        try:
            return next(self._iters[key])
        except StopIteration:
            self._refill(d)
            return next(self._iters[key])


def train(registry, corpus, config, tokenizers=None):
    """Run multilingual training until max_steps or early stop.

    Early stopping: the unweighted mean of per-direction validation
    losses is evaluated every `eval_every` steps (plus a baseline before
    step 1); `patience` consecutive evaluations without improvement end
    the run. With config.adaptive, the schedule's freezing is re-derived
    from validation losses at every epoch boundary, where one epoch is
    the largest per-direction batch count.
    """
    tokenizers = tokenizers or registry.tokenizers
    sched = config.schedule
    opts = ModuleOptimizers(config.base_lr, config.warmup_steps,
                            config.betas, config.eps)
    feed = _DirectionFeed(corpus, tokenizers, config.token_budget, config.seed)
    epoch_len = max(feed.batches_per_pass(d) for d in sched.directions)

    history = TrainHistory()
    val0 = validation_loss(registry, corpus, sched, tokenizers,
                           config.token_budget, seed=config.seed)
    best = sum(val0.values()) / len(val0)
    history.val_losses.append((0, best, val0))
    bad_evals = 0

    for step in range(1, config.max_steps + 1):
        losses = multilingual_training_step(
            registry, sched, feed.next, opts, step_index=step,
            seed=config.seed, clip_norm=config.clip_norm)
        history.train_losses.append((step, losses))
        history.steps_run = step

        if step % config.eval_every == 0:
            val = validation_loss(registry, corpus, sched, tokenizers,
                                  config.token_budget, seed=config.seed)
            mean = sum(val.values()) / len(val)
            history.val_losses.append((step, mean, val))
            log.info("step=%d mean_val_loss=%.6f best=%.6f", step, mean, best)
            if mean < best:
                best = mean
                bad_evals = 0
            else:
                bad_evals += 1
            if bad_evals >= config.patience:
                history.stopped_early = True
                log.info("early stop at step %d after %d stale evaluations",
                         step, bad_evals)
                break

        if config.adaptive and step % epoch_len == 0:
            val = validation_loss(registry, corpus, sched, tokenizers,
                                  config.token_budget, seed=config.seed)
            sched = adaptive_update(sched, val)
            log.info("epoch boundary at step %d, adapted schedule:\n%s",
                     step, schedule_to_text(sched))

    history.final_schedule = sched
    return history


def add_language(registry, new_lang, corpus, anchor, train_side=BOTH,
                 tokenizer=None, seed=0, train_config=None):
    """Extend a trained registry with one more language.

    The new encoder trains on new->anchor against the frozen anchor
    decoder; the new decoder trains on anchor->new against the frozen
    anchor encoder. No pre-existing parameter changes, bit for bit.
    """
    if anchor not in registry.pairs:
        raise KeyError(f"anchor language '{anchor}' not in registry")
    if new_lang in registry.pairs:
        raise ValueError(f"language '{new_lang}' already in registry")
    if train_side not in (ENCODER, DECODER, BOTH):
        raise ValueError(f"train_side must be one of {ENCODER}/{DECODER}/{BOTH}")
    if tokenizer is None:
        tokenizer = registry.tokenizers.get(new_lang)
    if tokenizer is None:
        raise ValueError(f"no tokenizer available for '{new_lang}'")

    pair = build_pair(new_lang, registry.config, seed,
                      vocab_size=tokenizer.vocab_size,
                      tokenizer_ref=tokenizer.content_hash())
    registry.add_pair(pair)
    registry.tokenizers[new_lang] = tokenizer
    registry.added[new_lang] = anchor

    dirs = []
    if train_side in (ENCODER, BOTH):
        dirs.append(Direction(new_lang, anchor, FreezeMode.FREEZE_TGT_DECODER))
    if train_side in (DECODER, BOTH):
        dirs.append(Direction(anchor, new_lang, FreezeMode.FREEZE_SRC_ENCODER))
    sched = TrainingSchedule((new_lang, anchor), tuple(dirs))

    if train_config is None:
        train_config = TrainRunConfig(schedule=sched, seed=seed)
    else:
        train_config = replace(train_config, schedule=sched)
    history = train(registry, corpus, train_config,
                    tokenizers=registry.tokenizers)
    return registry, history
