"""Command-line entry points for the whole workflow.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every command
takes a --seed flag and all randomness derives from it, so identical
invocations produce identical artifacts.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import model as model_mod
from . import probe as probe_mod
from . import schedule as schedule_mod
from . import trainer as trainer_mod
from . import translate as translate_mod
from . import viz as viz_mod
from .bpe import train_bpe
from .config import load_config


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0,
                   help="single source of all randomness")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _build_parser():
    parser = _Parser(prog="modnmt",
                     description="Modular multilingual NMT workflows")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a toy multi-parallel corpus")
    p.add_argument("--langs", default="4",
                   help="language count (up to 5) or comma-separated names")
    p.add_argument("--sentences", type=int, default=500)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train-initial", help="train all language pairs jointly")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="output model directory")
    p.add_argument("--schedule", default="basic",
                   help="basic | far | close | adaptive | file:PATH")
    p.add_argument("--steps", type=int)
    p.add_argument("--merges", type=int)
    p.add_argument("--token-budget", type=int)
    _add_common(p)

    p = sub.add_parser("add-language",
                       help="add one language against a frozen anchor")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--new-lang", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--train-side", default="both",
                   choices=["encoder", "decoder", "both"])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--merges", type=int, default=200)
    p.add_argument("--token-budget", type=int, default=512)
    _add_common(p)

    p = sub.add_parser("translate", help="translate text between two languages")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--text", help="translate this line instead of stdin")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-len", type=int, default=64)
    _add_common(p)

    p = sub.add_parser("evaluate", help="BLEU matrix over all directions")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--out", help="write the matrix CSV here")
    _add_common(p)

    p = sub.add_parser("probe",
                       help="inference probe trained on one language's encoder")
    p.add_argument("--model", required=True)
    p.add_argument("--train-lang", default="en")
    p.add_argument("--pairs", type=int, default=600)
    p.add_argument("--test-pairs", type=int, default=150)
    p.add_argument("--out", help="write per-language accuracy CSV here")
    _add_common(p)

    p = sub.add_parser(
        "visualize",
        help="project pooled sentence representations to 2-D",
        description="Project mean-pooled sentence representations to 2-D "
                    "with PCA, a deterministic substitute for stochastic "
                    "neighbour-embedding methods: identical inputs give "
                    "byte-identical CSV/SVG outputs.")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True, help="output path base")
    _add_common(p)

    p = sub.add_parser("validate-schedule", help="analyze a schedule's freezing")
    p.add_argument("--file", help="schedule file to validate")
    p.add_argument("--preset", choices=["far", "close"])
    _add_common(p)

    return parser


def _langs_arg(value):
    if value.isdigit():
        return int(value)
    return [l for l in value.replace(",", " ").split() if l]


def _cmd_gen_corpus(args):
    specs = corpus_mod.default_toy_specs(_langs_arg(args.langs))
    corp = corpus_mod.generate_toy_corpus(
        specs, args.sentences, (args.min_len, args.max_len), args.seed)
    corpus_mod.save_corpus(corp, args.out)
    print(f"wrote {len(corp)} sentences x {len(corp.langs)} languages "
          f"to {args.out}")
    return 0


def _pick_schedule(name, langs):
    if name.startswith("file:"):
        with open(name[5:], encoding="utf-8") as f:
            return schedule_mod.schedule_from_text(f.read()), False
    if name in ("far", "close"):
        return schedule_mod.frozen_schedule(langs, preset=name), False
    if name == "basic":
        return schedule_mod.basic_schedule(langs), False
    if name == "adaptive":
        return schedule_mod.basic_schedule(langs), True
    raise ValueError(f"unknown schedule '{name}'")


def _write_history_csv(history, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,phase,src,tgt,loss\n")
        for step, losses in history.train_losses:
            for (src, tgt), loss in losses.items():
                f.write(f"{step},train,{src},{tgt},{loss:.6f}\n")
        for step, mean, losses in history.val_losses:
            for (src, tgt), loss in losses.items():
                f.write(f"{step},val,{src},{tgt},{loss:.6f}\n")
            f.write(f"{step},val_mean,,,{mean:.6f}\n")


def _cmd_train_initial(args):
    cfg = load_config(args.config) if args.config else None
    corpus_dir = args.corpus or (cfg and cfg.get("run", "corpus_dir"))
    out_dir = args.out or (cfg and cfg.get("run", "output_dir"))
    if not corpus_dir or not out_dir:
        raise ValueError("need --corpus and --out (or a config providing them)")
    corp = corpus_mod.load_corpus(corpus_dir)
    langs = (cfg.getlist("run", "languages") if cfg else None) or corp.langs
    for lang in langs:
        if lang not in corp.langs:
            raise ValueError(f"configured language '{lang}' not in corpus")
    sched_name = args.schedule if args.schedule != "basic" or not cfg else \
        cfg.get("run", "schedule", "basic")
    schedule, adaptive = _pick_schedule(sched_name, langs)

    merges = args.merges or (cfg and cfg.getint("tokenizer", "num_merges")) or 200
    tokenizers = {lang: train_bpe(corp.lines(lang, "train"), merges, lang)
                  for lang in langs}

    mc_kw = {}
    if cfg:
        for f in ("num_layers", "num_heads", "d_model", "d_ff", "max_len"):
            v = cfg.getint("model", f)
            if v is not None:
                mc_kw[f] = v
        v = cfg.getfloat("model", "dropout")
        if v is not None:
            mc_kw["dropout"] = v
    model_config = model_mod.ModelConfig(
        vocab_size=max(t.vocab_size for t in tokenizers.values()), **mc_kw)
    registry = model_mod.init_modules(langs, model_config, args.seed,
                                      tokenizers=tokenizers)

    tr_kw = dict(schedule=schedule, adaptive=adaptive, seed=args.seed)
    if cfg:
        for f, typ in (("max_steps", int), ("token_budget", int),
                       ("patience", int), ("eval_every", int),
                       ("base_lr", float), ("warmup_steps", int)):
            v = cfg.get("train", f)
            if v is not None:
                tr_kw[f] = typ(v)
    if args.steps:
        tr_kw["max_steps"] = args.steps
    if args.token_budget:
        tr_kw["token_budget"] = args.token_budget
    run_config = trainer_mod.TrainRunConfig(**tr_kw)

    history = trainer_mod.train(registry, corp, run_config, tokenizers)
    model_mod.save_registry(registry, out_dir)
    with open(os.path.join(out_dir, "schedule.txt"), "w",
              encoding="utf-8") as f:
        f.write(schedule_mod.schedule_to_text(history.final_schedule))
    _write_history_csv(history, os.path.join(out_dir, "history.csv"))
    print(f"trained {history.steps_run} steps"
          + (" (early stop)" if history.stopped_early else "")
          + f", model saved to {out_dir}")
    return 0


def _cmd_add_language(args):
    registry = model_mod.load_registry(args.model)
    corp = corpus_mod.load_corpus(args.corpus)
    tok = train_bpe(corp.lines(args.new_lang, "train"), args.merges,
                    args.new_lang)
    anchor_dirs = [(args.new_lang, args.anchor), (args.anchor, args.new_lang)]
    sched = schedule_mod.TrainingSchedule(
        (args.new_lang, args.anchor),
        tuple(schedule_mod.Direction(a, b) for a, b in anchor_dirs))
    run_config = trainer_mod.TrainRunConfig(
        schedule=sched, max_steps=args.steps, token_budget=args.token_budget,
        seed=args.seed)
    trainer_mod.add_language(registry, args.new_lang, corp, args.anchor,
                             train_side=args.train_side, tokenizer=tok,
                             seed=args.seed, train_config=run_config)
    model_mod.save_registry(registry, args.model)
    print(f"added '{args.new_lang}' (anchor '{args.anchor}'), "
          f"registry now has {len(registry.languages)} languages")
    return 0


def _decode_config(args):
    return translate_mod.DecodeConfig(
        strategy=translate_mod.GREEDY if args.greedy else translate_mod.BEAM,
        beam_size=args.beam,
        max_len=getattr(args, "max_len", 64))


def _cmd_translate(args):
    registry = model_mod.load_registry(args.model)
    cfg = _decode_config(args)
    lines = [args.text] if args.text is not None else \
        [l.rstrip("\n") for l in sys.stdin]
    for line in lines:
        print(translate_mod.translate(registry, args.src, args.tgt, line, cfg))
    return 0


def _cmd_evaluate(args):
    registry = model_mod.load_registry(args.model)
    corp = corpus_mod.load_corpus(args.corpus)
    directions = [(a, b) for a in registry.languages
                  for b in registry.languages
                  if a != b and a in corp.langs and b in corp.langs]
    matrix = translate_mod.evaluate_matrix(
        registry, corp, directions, _decode_config(args), split=args.split)
    print(matrix.format_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(matrix.to_csv())
        print(f"matrix written to {args.out}")
    return 0


def _cmd_probe(args):
    registry = model_mod.load_registry(args.model)
    specs = corpus_mod.default_toy_specs(registry.languages)
    data = probe_mod.make_inference_data(
        specs, args.pairs + args.test_pairs, seed=args.seed)
    train_lang = args.train_lang
    if train_lang not in registry.pairs:
        raise ValueError(f"train language '{train_lang}' not in registry")
    train_pairs = data[train_lang][:args.pairs]
    test = {lang: pairs[args.pairs:] for lang, pairs in data.items()}
    clf = probe_mod.train_probe(registry.pair(train_lang),
                                registry.tokenizers[train_lang],
                                train_pairs, seed=args.seed)
    acc = probe_mod.evaluate_probe(clf, registry, test)
    baseline = probe_mod.majority_baseline(test[train_lang])
    print(probe_mod.format_accuracy_table(acc))
    print(f"majority baseline: {baseline * 100:.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("language,accuracy\n")
            for lang in registry.languages:
                f.write(f"{lang},{acc[lang]:.6f}\n")
    return 0


def _cmd_visualize(args):
    registry = model_mod.load_registry(args.model)
    corp = corpus_mod.load_corpus(args.corpus)
    vectors, labels, languages = [], [], []
    by_lang = {}
    for lang in registry.languages:
        if lang not in corp.langs:
            continue
        lines = corp.lines(lang, args.split)[:args.n]
        pooled = probe_mod.pool_sentences(registry.pair(lang),
                                          registry.tokenizers[lang], lines)
        by_lang[lang] = pooled
        for i, vec in enumerate(pooled):
            vectors.append(vec)
            labels.append(f"s{i}")
            languages.append(lang)
    proj = viz_mod.project_2d(np.array(vectors), labels, languages)
    csv_path, svg_path = viz_mod.render_scatter(proj, args.out)
    dist = viz_mod.mean_crosslingual_cosine_distance(by_lang)
    print(f"wrote {csv_path} and {svg_path} ({len(proj)} points)")
    print(f"mean cross-lingual cosine distance of matched sentences: "
          f"{dist:.6f}")
    return 0


def _cmd_validate_schedule(args):
    if bool(args.file) == bool(args.preset):
        raise ValueError("give exactly one of --file / --preset")
    if args.file:
        with open(args.file, encoding="utf-8") as f:
            sched = schedule_mod.schedule_from_text(f.read())
    else:
        sched = schedule_mod.frozen_schedule(schedule_mod.PRESET_LANGS,
                                             preset=args.preset)
    report = schedule_mod.validate_schedule(sched)
    print(report.summary())
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train-initial": _cmd_train_initial,
    "add-language": _cmd_add_language,
    "translate": _cmd_translate,
    "evaluate": _cmd_evaluate,
    "probe": _cmd_probe,
    "visualize": _cmd_visualize,
    "validate-schedule": _cmd_validate_schedule,
}


def run_cli(argv):
    args = _build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (BrokenPipeError, KeyboardInterrupt):
        return 2
    except Exception as e:  # runtime failures map to exit code 2
        print(f"error: {e}", file=sys.stderr)
        return 2


def main(argv=None):
    try:
        return run_cli(sys.argv[1:] if argv is None else argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1


if __name__ == "__main__":
    sys.exit(main())
