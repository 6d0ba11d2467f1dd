from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

from .checkpoint import load_checkpoint
from .config import ABLATIONS, RunConfig
from .dataset import build_corpus, load_split
from .errors import ConfigError, NfaError
from .evaluate import ModelPredictor, ResidualMagnitudeDetector, predict_split, report_from_records, robustness_report
from .metrics import MetricsReport
from .report import (
    ablation_csv_text, metrics_csv_text, robustness_csv_text, summary_lines, topk_csv_text,
)
from .selfcheck import run_selfcheck
from .training import BEST_DIR, CONFIG_FILE, train

log = logging.getLogger("nfa_vit")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
DEFAULT_TOPK = "0.1,0.25,0.5"
SEG_ONLY_VARIANT = "seg_only"


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _parse_list(text: str, kind=float, what: str = "value") -> List:
    try:
        values = [kind(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {what} list '{text}'") from None
    if not values:
        raise ConfigError(f"empty {what} list")
    return values


def load_run_config(args: argparse.Namespace) -> Tuple[RunConfig, List[str]]:
    """Config file (or defaults), then NFA_SEED, then --seed; always validated."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config, notes = config.resolve()
    if getattr(args, "seed", None) is not None and args.seed != config.seed:
        notes.append(f"seed {config.seed} overridden by --seed {args.seed}")
        config = replace(config, seed=args.seed)
        config.validate()
    return config, notes


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def cmd_gen_data(args: argparse.Namespace) -> int:
    config, notes = load_run_config(args)
    summary = build_corpus(config.corpus_spec(), args.out, threads=args.threads, progress=_progress(args))
    config.save(os.path.join(args.out, CONFIG_FILE), notes)
    for line in summary.lines():
        print(line)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config, notes = load_run_config(args)
    if args.ablate:
        config = config.with_ablation(args.ablate)
        config.validate()
        notes.append(f"components set by --ablate {args.ablate}")
    if args.dry_run:
        print(config.to_text(notes), end="")
        return EXIT_OK
    train_samples = load_split(args.data, "train")
    val_samples = load_split(args.data, "val")
    result = train(config, train_samples, val_samples, out_dir=args.out, threads=args.threads,
                   progress=_progress(args), notes=notes)
    print(f"best epoch {result.best_epoch}: val IoU {result.best_iou:.4f}")
    print(f"checkpoint: {result.checkpoint_dir}")
    return EXIT_OK


def _write_eval_outputs(out: str, report: MetricsReport, config: RunConfig, notes: Sequence[str]) -> None:
    _write_text(os.path.join(out, "metrics.csv"), metrics_csv_text(report))
    config.save(os.path.join(out, CONFIG_FILE), list(notes))


def cmd_eval(args: argparse.Namespace) -> int:
    if args.baseline:
        config, notes = load_run_config(args)
        predictor = ResidualMagnitudeDetector().fit(load_split(args.data, "train"))
        notes.append("residual-magnitude baseline fitted on the train split")
    elif args.checkpoint:
        model, config, info = load_checkpoint(args.checkpoint)
        predictor = ModelPredictor(model)
        notes = [f"checkpoint {args.checkpoint} (epoch {info.meta.get('epoch', '?')})"]
    else:
        raise ConfigError("eval needs --checkpoint or --baseline")

    samples = load_split(args.data, args.split)
    progress = _progress(args)
    records = predict_split(predictor, samples, args.threads, progress)
    report = report_from_records(records, by_kind=args.by_kind, by_area=args.by_area, by_generator=args.by_kind)
    _write_eval_outputs(args.out, report, config, notes)
    for line in summary_lines(report, f"{args.split} split"):
        print(line)
    if args.robust:
        robust = robustness_report(predictor, samples, args.threads, progress, clean_records=records)
        _write_text(os.path.join(args.out, "robustness.csv"), robustness_csv_text(robust))
        print("robustness (Gen Recall@50): " + "  ".join(f"{c}={robust.value(c):.4f}" for c in robust.columns))
    return EXIT_OK


def _train_and_test(config: RunConfig, args: argparse.Namespace, out_dir: str, notes: Sequence[str]) -> MetricsReport:
    """Train one variant, reload its best checkpoint and score the test split."""
    train(config, load_split(args.data, "train"), load_split(args.data, "val"), out_dir=out_dir,
          threads=args.threads, progress=_progress(args), notes=notes)
    model, _, _ = load_checkpoint(os.path.join(out_dir, BEST_DIR))
    records = predict_split(ModelPredictor(model), load_split(args.data, "test"), args.threads)
    return report_from_records(records, by_kind=True, by_area=True, by_generator=True)


def cmd_sweep_topk(args: argparse.Namespace) -> int:
    config, notes = load_run_config(args)
    ratios = _parse_list(args.ratios, float, "ratio")
    bad = [r for r in ratios if not 0 < r <= 1]
    if bad:
        raise ConfigError(f"top-k ratios must lie in (0, 1], got {bad}")
    seeds = _parse_list(args.seeds, int, "seed") if args.seeds else [config.seed]
    rows = []
    for seed in seeds:
        for ratio in ratios:
            variant = replace(config, top_k_ratio=ratio, seed=seed)
            variant.validate()
            out_dir = os.path.join(args.out, f"topk_{ratio:g}_seed{seed}")
            report = _train_and_test(variant, args, out_dir, notes + [f"top_k_ratio {ratio:g} from sweep-topk"])
            rows.append((ratio, seed, report))
            print(f"top-k {ratio:g} seed {seed}: IoU {report.mean_iou:.4f}  "
                  f"GenR50 {report.gen_recall_50:.4f}  RealR50 {report.real_recall_50:.4f}")
    _write_text(os.path.join(args.out, "ablation.csv"), topk_csv_text(rows))
    return EXIT_OK


def _variant_config(config: RunConfig, name: str) -> RunConfig:
    if name == SEG_ONLY_VARIANT:
        return replace(config.with_ablation("full"), loss_mode="seg_only")
    return config.with_ablation(name)


def cmd_sweep_ablation(args: argparse.Namespace) -> int:
    config, notes = load_run_config(args)
    variants = _parse_list(args.variants, str, "variant")
    unknown = [v for v in variants if v not in ABLATIONS and v != SEG_ONLY_VARIANT]
    if unknown:
        raise ConfigError(f"unknown variants {unknown} (expected {list(ABLATIONS) + [SEG_ONLY_VARIANT]})")
    seeds = _parse_list(args.seeds, int, "seed") if args.seeds else [config.seed]
    rows = []
    for seed in seeds:
        for name in variants:
            variant = replace(_variant_config(config, name), seed=seed)
            variant.validate()
            out_dir = os.path.join(args.out, f"{name.replace('+', 'plus_')}_seed{seed}")
            report = _train_and_test(variant, args, out_dir, notes + [f"variant {name} from sweep-ablation"])
            rows.append((name, seed, report))
            print(f"{name:<12} seed {seed}: IoU {report.mean_iou:.4f}  GenR50 {report.gen_recall_50:.4f}")
    _write_text(os.path.join(args.out, "ablation.csv"), ablation_csv_text(rows))
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    results = run_selfcheck(include_model=not args.skip_model)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfa_vit", description="Noise-guided localized forgery detection.")
    parser.add_argument("--config", help="key = value run configuration file")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for data and evaluation")
    parser.add_argument("--quiet", action="store_true", help="no progress bars, warnings only")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablate", choices=list(ABLATIONS))
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", action="store_true", help="evaluate the residual-magnitude detector instead")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--robust", action="store_true")
    p.add_argument("--by-area", action="store_true")
    p.add_argument("--by-kind", action="store_true")
    p.set_defaults(func=cmd_eval, seed=None)

    p = sub.add_parser("sweep-topk", help="train and test one model per top-k ratio")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default=DEFAULT_TOPK)
    p.add_argument("--seeds")
    p.set_defaults(func=cmd_sweep_topk, seed=None)

    p = sub.add_parser("sweep-ablation", help="train and test the component variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=",".join(list(ABLATIONS) + [SEG_ONLY_VARIANT]))
    p.add_argument("--seeds")
    p.set_defaults(func=cmd_sweep_ablation, seed=None)

    p = sub.add_parser("selfcheck", help="gradient, mask and attention self-verification")
    p.add_argument("--skip-model", action="store_true", help="skip the end-to-end gradient check")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the nfa_vit command line."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NfaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
