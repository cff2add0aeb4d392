"""Command-line driver: ``legocot {gen,train,eval,attn,validate-config,show-manifest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import corpus, pipeline
from .config import PRESETS, ConfigError, ExperimentConfig, preset
from .evaluation import write_acc_csv
from .model import CorruptCheckpointError, UnsupportedVersionError, load_checkpoint

log = logging.getLogger("legocot")


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise ConfigError("give either --config or --preset, not both")
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
    else:
        raise ConfigError("a --config file or a --preset is required")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _lengths(text: str | None, default):
    if not text:
        return list(default)
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad length list {text!r}") from None


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    vocab = cfg.vocab()
    if args.L < 1 or args.L + 1 > vocab.n_x:
        raise ConfigError(f"L={args.L} needs 1 <= L and L + 1 <= n_x={vocab.n_x}")
    if args.count < 0:
        raise ConfigError("count must be >= 0")
    sents = (corpus.sample_sentence(vocab, args.L, corpus.sentence_rng(cfg.seed, i),
                                    {"seed": cfg.seed, "index": i})
             for i in range(args.count))
    corpus.write_corpus(args.out, sents, vocab)
    print(f"wrote {args.count} sentences to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _, run_dir = pipeline.train(cfg, args.out_dir, log=log.info)
    print(f"run directory: {run_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    params = load_checkpoint(args.checkpoint)
    lengths = _lengths(args.lengths, cfg.eval.lengths)
    for L in lengths:
        if L < 1 or L + 1 > params.n_x:
            raise ConfigError(f"length {L} needs 1 <= L and L + 1 <= n_x={params.n_x}")
    n_eval = args.n_eval or cfg.eval.n_eval
    reports = pipeline.evaluate(params, lengths, n_eval, cfg.seed, cfg.eval.teacher_forced)
    train_L = args.train_L if args.train_L is not None else cfg.train.train_L
    out = args.out or str(Path(args.checkpoint).with_suffix(".eval.csv"))
    write_acc_csv(out, reports, run_id=cfg.run_id, stage=args.stage or "", train_L=train_L)
    for r in reports:
        print(f"L={r.L}: teacher_forced={r.teacher_forced:.4f} rollout_final={r.rollout_final:.4f} "
              f"rollout_value_only={r.rollout_value_only:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_attn(args) -> int:
    cfg = _load_config(args)
    params = load_checkpoint(args.checkpoint)
    L = args.L or cfg.eval.attn_L
    if L < 1 or L + 1 > params.n_x:
        raise ConfigError(f"length {L} needs 1 <= L and L + 1 <= n_x={params.n_x}")
    out = args.out_dir or str(Path(args.checkpoint).parent / "attn")
    res = pipeline.attention_exports(params, L, args.samples or cfg.eval.attn_samples, cfg.seed, out)
    d = res["diagnostics"]
    for i in range(L):
        print(f"ell={i + 1}: eps={d.eps[i]:.4f} delta={d.delta[i]:.4f}")
    print(f"wrote heatmap, diagnostics and permutation report to {out}")
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"invalid: {exc}")
        return 2
    if args.print:
        sys.stdout.write(cfg.to_json())
    else:
        print("ok")
    return 0


def cmd_show_manifest(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "manifest.json"
    if not path.is_file():
        print(f"no manifest in {run_dir}")
        return 2
    print(path.read_text(), end="")
    bad = pipeline.verify_manifest(run_dir)
    if bad:
        print("mismatched: " + ", ".join(bad))
        return 1
    print("all hashes match")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="legocot", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--seed", type=int, help="override the config seed")
        return sp

    sp = with_config(sub.add_parser("gen", help="write an oracle-labelled JSONL corpus"))
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen)

    sp = with_config(sub.add_parser("train", help="run the configured training pipeline"))
    sp.add_argument("--out-dir", help="parent of the run directory (default: OUT_DIR or config)")
    sp.set_defaults(fn=cmd_train)

    sp = with_config(sub.add_parser("eval", help="length-generalisation curve of a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--lengths", help="comma-separated lengths (default: config)")
    sp.add_argument("--n-eval", type=int)
    sp.add_argument("--train-L", type=int, help="training length recorded in the CSV")
    sp.add_argument("--stage", help="stage label recorded in the CSV")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_eval)

    sp = with_config(sub.add_parser("attn", help="attention heatmap, diagnostics, permutation report"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--L", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out-dir")
    sp.set_defaults(fn=cmd_attn)

    sp = with_config(sub.add_parser("validate-config", help="check a config without running it"))
    sp.add_argument("--print", action="store_true", help="echo the resolved config")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("show-manifest", help="print a run manifest and verify its hashes")
    sp.add_argument("run_dir")
    sp.set_defaults(fn=cmd_show_manifest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CorruptCheckpointError, UnsupportedVersionError,
            corpus.CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
