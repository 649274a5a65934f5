"""Command-line interface: gen, train, eval, infer, stats, ablate."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bench import (ABLATION_AXES, ablation_run, bucketed_eval, repeat_report,
                    write_ablation_csv, write_report_csv, write_repeat_csv)
from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .errors import SmtrError
from .images import read_image, write_pgm, write_png
from .inference import dump_trace, recognize
from .model import ModelConfig
from .synth import (CorpusSpec, default_font, load_manifest, render_text,
                    sample_corpus, save_manifest)
from .training import (TrainConfig, apply_config, load_config_file, train,
                       write_metrics_csv)


def _parse_buckets(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        lo, hi = part.split("-")
        out.append((int(lo), int(hi)))
    return out


def _parse_range(text: str) -> tuple[int, int]:
    lo, hi = text.split(",")
    return int(lo), int(hi)


def cmd_gen(args) -> int:
    spec = CorpusSpec(charset=args.charset, train_count=args.train_count,
                      train_len=_parse_range(args.train_len),
                      val_count=args.val_count,
                      eval_buckets=tuple(_parse_buckets(args.eval_buckets)),
                      eval_count=args.eval_count,
                      forced_repeat_fraction=args.forced_repeat,
                      win_len=args.substring_len, seed=args.seed)
    items = sample_corpus(spec)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_manifest(items, args.out)
    print(f"wrote {len(items)} labelled texts to {args.out}")
    if args.images:
        font = default_font()
        os.makedirs(args.images, exist_ok=True)
        writer = write_png if args.image_format == "png" else write_pgm
        for i, (text, split) in enumerate(items):
            writer(render_text(text, font), os.path.join(
                args.images, f"{split}_{i:06d}.{args.image_format}"))
        print(f"wrote {len(items)} renders to {args.images}")
    return 0


def cmd_train(args) -> int:
    mcfg, tcfg = ModelConfig(), TrainConfig()
    if args.config:
        mcfg, tcfg, _ = load_config_file(args.config, mcfg, tcfg)
    overrides = {k: v for k, v in (
        ("epochs", args.epochs), ("batch_size", args.batch_size),
        ("peak_lr", args.lr), ("seed", args.seed),
        ("reg_copies", args.reg_copies), ("substring_len", args.substring_len),
        ("max_text_len", args.max_text_len)) if v is not None}
    tcfg = apply_config(tcfg, {k: str(v) for k, v in overrides.items()})
    if args.charset:
        mcfg = apply_config(mcfg, {"charset": args.charset})
    corpus = load_manifest(args.manifest)
    result = train(mcfg, tcfg, corpus, log=print)
    extra = {"best_val_acc": result.best_val_acc,
             "train_width_cap": result.train_width_cap,
             "max_text_len": tcfg.max_text_len,
             "reg_copies": tcfg.reg_copies, "seed": tcfg.seed}
    save_checkpoint(args.out, result.params, result.model_config, extra)
    if args.metrics:
        write_metrics_csv(result.metrics, args.metrics)
    print(f"saved checkpoint {args.out} (best val acc {result.best_val_acc:.2f})")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    buckets = _parse_buckets(args.buckets)
    corpus = load_manifest(args.manifest)
    wanted = {f"eval_{lo}_{hi}" for lo, hi in buckets}
    texts = [t for t, s in corpus if s in wanted]
    if not texts:
        texts = [t for t, s in corpus if s not in ("train", "val")
                 and any(lo <= len(t) <= hi for lo, hi in buckets)]
    auto_width = ckpt.extra.get("train_width_cap")
    report = bucketed_eval(ckpt.params, ckpt.model_config, texts, buckets,
                           mode=args.mode, auto_width=auto_width,
                           metadata={"checkpoint": checkpoint_hash(args.ckpt),
                                     "mode": args.mode})
    for b in report.buckets:
        print(f"[{b.lo},{b.hi}] n={b.n} acc={b.accuracy:.2f}")
    print(f"W-Avg {report.weighted_avg:.2f}  A-Avg {report.arithmetic_avg:.2f}")
    if args.csv:
        write_report_csv(report, args.csv)
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    image = read_image(args.image)
    auto_width = ckpt.extra.get("train_width_cap")
    result = recognize(image, ckpt.params, ckpt.model_config, mode=args.mode,
                       auto_width=auto_width)
    print(result.text(ckpt.vocab))
    if args.trace:
        dump_trace(result, ckpt.vocab, args.trace)
    return 0 if not result.degraded else 0


def cmd_stats(args) -> int:
    corpus = [t for t, _ in load_manifest(args.manifest)]
    report = repeat_report(corpus, args.substring_len)
    print(f"texts: {report.n_texts}")
    print(f"repeat rate, whole labels : {report.whole_rate:.2f}%")
    print(f"repeat rate, after slicing: {report.sliced_rate:.2f}%")
    print(report.footer)
    if args.csv:
        write_repeat_csv(report, args.csv)
    return 0


def cmd_ablate(args) -> int:
    corpus = load_manifest(args.manifest)
    mcfg, tcfg = ModelConfig(), TrainConfig()
    if args.config:
        mcfg, tcfg, _ = load_config_file(args.config, mcfg, tcfg)
    values: list = args.values.split(",")
    if args.axis != "matcher_variant":
        values = [int(v) for v in values]
    seeds = [int(s) for s in args.seeds.split(",")]
    buckets = _parse_buckets(args.buckets)
    rows = ablation_run(mcfg, tcfg, corpus, args.axis, values, seeds, buckets,
                        mode=args.mode, log=print)
    write_ablation_csv(rows, args.csv)
    print(f"wrote {len(rows)} ablation rows to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smtr",
                                 description="sub-string matching text recognizer")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--charset", default=None)
    g.add_argument("--train-count", type=int, default=5000)
    g.add_argument("--train-len", default="1,10")
    g.add_argument("--val-count", type=int, default=200)
    g.add_argument("--eval-buckets", default="11-15,16-25,26-35")
    g.add_argument("--eval-count", type=int, default=1000)
    g.add_argument("--forced-repeat", type=float, default=0.0)
    g.add_argument("--substring-len", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--images", default=None, help="also dump renders here")
    g.add_argument("--image-format", choices=("pgm", "png"), default="pgm")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--metrics", default=None, help="write per-epoch CSV here")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--reg-copies", type=int)
    t.add_argument("--substring-len", type=int)
    t.add_argument("--max-text-len", type=int)
    t.add_argument("--charset", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="length-bucketed word accuracy")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--mode", choices=("base", "ia", "auto"), default="base")
    e.add_argument("--buckets", default="11-15,16-25,26-35")
    e.add_argument("--csv", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="recognize a single image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--mode", choices=("base", "ia", "auto"), default="auto")
    i.add_argument("--trace", default=None, help="dump attention/step traces here")
    i.set_defaults(func=cmd_infer)

    s = sub.add_parser("stats", help="repeated-substring report")
    s.add_argument("--manifest", required=True)
    s.add_argument("--substring-len", type=int, default=5)
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_stats)

    a = sub.add_parser("ablate", help="train/evaluate variants along one axis")
    a.add_argument("--manifest", required=True)
    a.add_argument("--axis", choices=ABLATION_AXES, required=True)
    a.add_argument("--values", required=True, help="comma separated")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--buckets", default="16-25")
    a.add_argument("--mode", choices=("base", "ia", "auto"), default="base")
    a.add_argument("--config", default=None)
    a.add_argument("--csv", required=True)
    a.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SmtrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
