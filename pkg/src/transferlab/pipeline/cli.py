"""Command-line entry point: ``transferlab <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from transferlab.bash import bash_similarity
from transferlab.errors import InvalidArgument, TransferLabError
from transferlab.model import load_checkpoint, save_checkpoint
from transferlab.pipeline.experiment import (
    evaluate,
    finetune_frozen,
    load_report,
    prepare,
    pretrain,
    run_experiment,
)
from transferlab.pipeline.manifest import Manifest
from transferlab.pipeline.report import STYLES, emit_table
from transferlab.pipeline.sweep import parse_grid, run_sweep
from transferlab.tasks import (
    FORMATS,
    downsample,
    gen_copy,
    gen_reversal,
    load_bitext,
    mask_sql_corpus,
    save_bitext,
    split,
    swap_direction,
)

log = logging.getLogger("transferlab")


def cmd_gen(args) -> int:
    gen = gen_copy if args.task == "copy" else gen_reversal
    kwargs = dict(seed=args.seed, prefix=args.prefix)
    if args.task == "copy":
        kwargs.update(identity=args.identity, perm_seed=args.perm_seed)
    corpus = gen(args.n, args.vocab_size, args.len_min, args.len_max, **kwargs)
    save_bitext(corpus, args.out, args.format)
    print(f"wrote {len(corpus)} pairs to {args.out}")
    return 0


def cmd_prep(args) -> int:
    corpus = load_bitext(args.input, args.format)
    if args.mask_sql:
        corpus = mask_sql_corpus(corpus, args.mask_sql)
    if args.swap:
        corpus = swap_direction(corpus)
    if args.downsample:
        corpus = downsample(corpus, args.downsample, args.seed)
    if args.split:
        if not args.test_out:
            raise InvalidArgument("--split needs --test-out")
        corpus, test = split(corpus, args.split, args.seed)
        save_bitext(test, args.test_out, args.format)
        print(f"wrote {len(test)} held-out pairs to {args.test_out}")
    save_bitext(corpus, args.out, args.format)
    print(f"wrote {len(corpus)} pairs to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare(manifest, "upstream")
    data.save_vocabs(out, "upstream")
    model, result = pretrain(manifest, data)
    save_checkpoint(model, out / "pretrained.ckpt")
    print(f"pretrained for {result.steps} steps (early stop: {result.stopped_early}); "
          f"checkpoint {out / 'pretrained.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = load_checkpoint(args.checkpoint)
    data = prepare(manifest, "downstream")
    data.save_vocabs(out, "downstream")
    model, result = finetune_frozen(base, manifest, data)
    save_checkpoint(model, out / "finetuned.ckpt")
    print(f"fine-tuned embeddings for {result.steps} steps, core unchanged; checkpoint {out / 'finetuned.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    manifest = Manifest.load(args.manifest)
    model = load_checkpoint(args.checkpoint)
    data = prepare(manifest, "downstream")
    if model.vocab_hashes and model.vocab_hashes != data.vocab_hashes():
        raise InvalidArgument("checkpoint was fine-tuned with different downstream vocabularies than this manifest builds")
    report = evaluate(model, manifest, data)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_run(args) -> int:
    report = run_experiment(Manifest.load(args.manifest), args.out)
    print(report.to_json(), end="")
    return 0


def cmd_sweep(args) -> int:
    table = run_sweep(Manifest.load(args.manifest), parse_grid(args.grid), args.out, workers=args.workers)
    print(table.to_text(), end="")
    return 1 if table.failures else 0


def cmd_score_bash(args) -> int:
    preds = Path(args.predictions).read_text(encoding="utf-8").splitlines()
    refs = Path(args.references).read_text(encoding="utf-8").splitlines()
    if len(preds) != len(refs):
        raise InvalidArgument(f"{len(preds)} predictions vs {len(refs)} references")
    if not refs:
        raise InvalidArgument("no commands to score")
    print("line\tscore")
    total = 0.0
    for i, (p, r) in enumerate(zip(preds, refs), start=1):
        score = bash_similarity(p, r).value
        total += score
        print(f"{i}\t{score:.4f}")
    print(f"mean\t{total / len(refs):.4f}")
    return 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.runs]
    table = emit_table(reports, args.style)
    print(table.to_tsv() if args.tsv else table.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transferlab",
                                     description="Frozen-core transfer experiments for sequence-to-sequence models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("task", choices=["copy", "reversal"])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--len-min", type=int, default=3)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="w", help="token name prefix (w0, w1, ...)")
    p.add_argument("--identity", action="store_true", help="copy task with the identity map")
    p.add_argument("--perm-seed", type=int, help="seed for the copy map, if it should differ from --seed")
    p.add_argument("--format", choices=FORMATS, default="tsv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prep", help="mask, swap, downsample and split a corpus file")
    p.add_argument("input")
    p.add_argument("--format", choices=FORMATS, default="tsv")
    p.add_argument("--mask-sql", choices=["source", "target"], help="mask SQL constants on this side")
    p.add_argument("--swap", action="store_true", help="exchange source and target")
    p.add_argument("--downsample", type=int, metavar="N")
    p.add_argument("--split", type=float, metavar="FRACTION", help="hold out this fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("pretrain", help="pre-train on the manifest's upstream task")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pretrain)

    # there is deliberately no option to unfreeze the core
    p = sub.add_parser("finetune", help="train fresh downstream embeddings around a frozen pre-trained core")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="a pretrained checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint on the downstream test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report JSON here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="pre-train, fine-tune and evaluate in one go")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of (upstream samples, pre-training steps) cells")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help='e.g. "10kx2500,10kx7500,100kx2500"')
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score-bash", help="score predicted Bash commands against references, one per line")
    p.add_argument("predictions")
    p.add_argument("references")
    p.set_defaults(func=cmd_score_bash)

    p = sub.add_parser("report", help="tabulate report.json files")
    p.add_argument("runs", nargs="+", help="run directories or report.json files")
    p.add_argument("--style", choices=sorted(STYLES), default="results")
    p.add_argument("--tsv", action="store_true", help="emit TSV instead of aligned text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # filter on the handler: run_experiment raises the package logger to INFO for run.log
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(asctime)s %(name)s: %(message)s"))
    log.addHandler(console)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (TransferLabError, OSError) as exc:
        print(f"transferlab {args.command}: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"transferlab {args.command}: unreadable JSON: {exc}", file=sys.stderr)
        return 2
    finally:
        log.removeHandler(console)


if __name__ == "__main__":
    sys.exit(main())
