"""Command line front end: the pipeline end to end, reproducible.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
Every command takes --seed and stamps its outputs with a provenance
header (argument hash plus input file hashes).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .corpus import FineVocab, TokenizerConfig, count_ngrams, ingest, tokenize_words
from .errors import DataError, NumericError, UsageError
from .lexicon import NGramLexicon, build_joint_vocab, extract_lexicon
from .maskplan import (
    Objective,
    build_attention_mask,
    plan_to_json,
    read_plan_file,
    segment_example,
    write_plan_file,
)
from .model import (
    ModelConfig,
    encode,
    export_finetune_weights,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import make_plans
from .segmenter import extract_boundaries
from .train import TrainConfig, eval_ngram_ppl, train


def _file_hash(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return h.hexdigest()[:16]


def provenance(command: str, args: argparse.Namespace, inputs) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg_hash = hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]
    return {
        "tool": f"ngramlm {__version__}",
        "command": command,
        "seed": getattr(args, "seed", None),
        "config_hash": cfg_hash,
        "inputs": {str(p): _file_hash(p) for p in inputs},
    }


def _tok_config(args) -> TokenizerConfig:
    return TokenizerConfig(lowercase=not args.no_lowercase,
                           doc_per_line=not args.blank_line_docs)


def _add_corpus_flags(p):
    p.add_argument("--corpus", nargs="+", required=True, help="UTF-8 text files")
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--blank-line-docs", action="store_true",
                   help="documents separated by blank lines instead of one per line")


def cmd_extract_lexicon(args):
    stream = ingest(args.corpus, _tok_config(args))
    k = {2: args.k2, 3: args.k3}
    if args.k4:
        k[4] = args.k4
    counts = count_ngrams(stream, max(k))
    lex = extract_lexicon(counts, k, min_count=args.min_count)
    prov = provenance("extract-lexicon", args, args.corpus)
    lex.save(args.out, provenance=json.dumps(prov, sort_keys=True))
    print(f"wrote {len(lex)} n-grams to {args.out}")
    return 0


def cmd_make_masks(args):
    stream = ingest(args.corpus, _tok_config(args))
    lex = NGramLexicon.load(args.lexicon)
    vocab = FineVocab.load(args.vocab)
    jv = build_joint_vocab(vocab, lex)
    objective = Objective[args.objective.upper()]
    plans = make_plans(stream, lex, jv, objective, rate=args.rate, seed=args.seed,
                       ngram_only=args.ngram_only, max_positions=args.max_positions)
    prov = provenance("make-masks", args, args.corpus + [args.lexicon, args.vocab])
    prov["objective"] = args.objective
    prov["fine_vocab_size"] = len(vocab)
    prov["ngram_vocab_size"] = len(lex)
    write_plan_file(args.out, plans, prov)
    if args.dump_json:
        with open(args.dump_json, "w", encoding="utf-8") as f:
            f.write(json.dumps({"provenance": prov}, sort_keys=True) + "\n")
            for plan in plans:
                f.write(plan_to_json(plan) + "\n")
    print(f"wrote {len(plans)} plans to {args.out}")
    return 0


def cmd_segment(args):
    lex = NGramLexicon.load(args.lexicon)
    src = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in src:
            words = tokenize_words(line, not args.no_lowercase)
            if not words:
                continue
            b = extract_boundaries(words, lex)
            fields = [",".join(str(x) for x in b.boundaries)]
            fields += [" ".join(seg) for seg in b.segments()]
            print("\t".join(fields))
    finally:
        if args.input:
            src.close()
    return 0


def _model_config(args, fine_size, ngram_size) -> ModelConfig:
    return ModelConfig(
        layers=args.layers,
        hidden=args.hidden,
        heads=args.heads,
        ffn=args.ffn or 4 * args.hidden,
        max_positions=args.max_positions,
        fine_vocab_size=fine_size,
        ngram_vocab_size=ngram_size,
        generator_layers=args.generator_layers,
        dropout=args.dropout,
    )


def cmd_train(args):
    prov_in, plans = read_plan_file(args.plans)
    if "fine_vocab_size" not in prov_in:
        raise DataError(f"{args.plans}: missing vocabulary sizes in plan header")
    objective = Objective[(args.objective or prov_in["objective"]).upper()]
    if objective == Objective.RELATION:
        if any(p.objective not in (Objective.COMPREHENSIVE, Objective.RELATION) for p in plans):
            raise UsageError("relation training needs comprehensive-layout plans")
    elif any(p.objective != objective for p in plans):
        raise UsageError(f"plan objectives do not match --objective {objective.name.lower()}")
    cfg = _model_config(args, prov_in["fine_vocab_size"], prov_in["ngram_vocab_size"])
    tcfg = TrainConfig(
        objective=objective,
        total_steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=args.warmup if args.warmup is not None else min(20, args.steps // 10),
        seed=args.seed,
        rtd_weight=args.rtd_weight,
        checkpoint_every=args.checkpoint_every,
        record_wall_time=args.record_wall_time,
    )
    params = init_params(cfg, args.seed)
    train(tcfg, plans, params, cfg, metrics_path=args.metrics,
          checkpoint_path=args.out, resume_from=args.resume)
    print(f"trained {args.steps} steps; checkpoint at {args.out}")
    return 0


def cmd_eval_ppl(args):
    _, plans = read_plan_file(args.plans)
    params, cfg, _, _ = load_checkpoint(args.checkpoint)
    ppl = eval_ngram_ppl(params, plans, cfg)
    print(json.dumps({"ngram_ppl": ppl, "plans": len(plans)}))
    return 0


def cmd_export(args):
    params, cfg, extra, _ = load_checkpoint(args.checkpoint)
    exported = export_finetune_weights(params, cfg)
    save_checkpoint(args.out, exported, cfg,
                    extra={"exported": True, "source": str(args.checkpoint)})
    print(f"exported {len(exported)} tensors to {args.out}")
    return 0


def cmd_inspect_attention(args):
    params, cfg, _, _ = load_checkpoint(args.checkpoint)
    lex = NGramLexicon.load(args.lexicon)
    vocab = FineVocab.load(args.vocab)
    words = tokenize_words(args.text, not args.no_lowercase)
    if not words:
        raise UsageError("empty input text")
    ex = segment_example(words, lex, vocab)
    ids = list(ex.subword_ids)
    n = len(ids)
    mask = np.zeros((n, n), dtype=params["tok_emb"].dtype)
    acts = encode(params, ids, range(1, n + 1), mask, cfg)
    mean_attn = acts.attn_probs[-1].mean(axis=0)  # head-mean, last layer
    tokens = [vocab.tokens[i] for i in ids]
    prov = provenance("inspect-attention", args, [args.checkpoint, args.lexicon, args.vocab])
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("# " + json.dumps(prov, sort_keys=True) + "\n")
        f.write("," + ",".join(tokens) + "\n")
        for tok, row in zip(tokens, mean_attn):
            f.write(tok + "," + ",".join(f"{x:.6g}" for x in row) + "\n")
    print(f"wrote {n}x{n} attention matrix to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ngramlm", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-lexicon", help="score n-grams with the t-test and keep the top k per order")
    _add_corpus_flags(p)
    p.add_argument("--k2", type=int, default=2000)
    p.add_argument("--k3", type=int, default=1000)
    p.add_argument("--k4", type=int, default=0)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_lexicon)

    p = sub.add_parser("make-masks", help="segment a corpus and emit mask plans")
    _add_corpus_flags(p)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--objective", default="explicit",
                   choices=[o.name.lower() for o in Objective])
    p.add_argument("--rate", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ngram-only", action="store_true",
                   help="mask only multi-word segments (perplexity evaluation sets)")
    p.add_argument("--max-positions", type=int, default=256)
    p.add_argument("--dump-json", metavar="PATH", help="also write a JSON-lines dump")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_masks)

    p = sub.add_parser("segment", help="maximum-matching segmentation of input lines")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train on a plan file")
    p.add_argument("--plans", required=True)
    p.add_argument("--objective", help="default: from the plan file header")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=0, help="default 4*hidden")
    p.add_argument("--max-positions", type=int, default=256)
    p.add_argument("--generator-layers", type=int, default=1)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=None,
                   help="default: min(20, steps // 10)")
    p.add_argument("--rtd-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--record-wall-time", action="store_true",
                   help="include wall-clock ms in metrics (breaks byte reproducibility)")
    p.add_argument("--metrics", help="JSON-lines metrics log path")
    p.add_argument("--resume", help="resume from this checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ppl", help="n-gram perplexity on a held-out plan file")
    p.add_argument("--plans", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("export", help="prune to fine-tuning weights (drop n-gram rows, heads, generator)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect-attention", help="dump last-layer head-mean attention as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_attention)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
