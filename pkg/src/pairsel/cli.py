"""Command-line front end for the full pair-selection loop.

Subcommands cover each stage (gen-data, train-ref, analyze, build-batches,
train-scl, report) plus a pipeline command chaining all six over one output
directory and one seed. Every stage reads and writes plain files, so any
stage can be rerun standalone.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateEmbeddingError,
    DegenerateRegressionError,
    DivergenceError,
    FormatError,
    InsufficientDataError,
)
from .matio import read_square, write_square
from .report import (
    read_fits_csv,
    render_loss,
    render_schedule,
    render_trajectories,
    write_fits_csv,
    write_positives_csv,
    write_report_csv,
)
from .selection import Schedule, plan_epochs, read_plans, write_plans
from .snapshots import AGGREGATION_MODES, load_checkpoint_matrices, write_series
from .synth import generate_synthetic, parse_group_spec, read_dataset, write_dataset
from .trajectory import (
    Category,
    CategoryReport,
    DeltaMatrix,
    category_report,
    classify_fits,
    delta_matrix,
)
from .training import (
    TrainConfig,
    read_encoder,
    read_loss_log,
    train_reference,
    train_selective,
    write_encoder,
    write_loss_log,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_DEGENERATE = 3
EXIT_DIVERGED = 4

SCHEDULE_CHOICES = {
    "random": "random",
    "easy": "easy_only",
    "hard": "hard_only",
    "linear": "linear",
    "sqrt": "sqrt",
    "log": "log",
}

EPILOG = """\
exit codes:
  0  success
  1  usage errors and missing inputs
  2  malformed or inconsistent input files
  3  numeric degeneracy (zero-norm embedding, unidentifiable regression,
     too few checkpoints)
  4  training divergence (non-finite loss, parameter, or temperature)
"""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this CLI reserves 2 for format errors."""

    def error(self, message):  # noqa: D102 - argparse override
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4 or min(parts) < 1:
        raise ValueError("expected four positive integers: d_video,d_text,t_video,t_text")
    return tuple(parts)  # type: ignore[return-value]


def _note(args, msg: str) -> None:
    if args.verbose:
        print(msg, file=sys.stderr)


def _init_encoder_arg(path_arg: str | None):
    if path_arg is None:
        return None
    p = Path(path_arg)
    if p.is_dir():
        p = p / "encoder.json"
    return read_encoder(p)


# ---------------------------------------------------------------------------
# stage implementations


def cmd_gen_data(args) -> None:
    spec = parse_group_spec(args.groups) if args.groups else {1: args.n}
    data = generate_synthetic(args.n, args.dims, spec, args.noise, args.seed)
    write_dataset(data, args.out)
    _note(args, f"gen-data: wrote {data.n} samples to {args.out}")


def _train_config(args, epochs: int, batch_size: int) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=args.lr,
        checkpoint_interval=args.interval,
        aggregation=args.mode,
        seed=args.seed,
        embed_dim=args.embed_dim,
        freeze_text=args.freeze_text,
    )


def cmd_train_ref(args) -> None:
    data = read_dataset(args.data)
    cfg = _train_config(args, args.epochs, args.batch_size)
    result = train_reference(data, cfg, _init_encoder_arg(args.init_from))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_series(result.series, out, aggregation=cfg.aggregation)
    write_encoder(result.encoder, out / "encoder.json")
    write_loss_log(result.log, out / "loss.csv")
    _note(args, f"train-ref: {len(result.series.checkpoints)} checkpoints in {out}")


def cmd_analyze(args) -> None:
    matrices, manifest = load_checkpoint_matrices(args.series, args.mode, args.threads)
    result = delta_matrix(matrices)
    labels = classify_fits(result.fits, result.s_mean, args.epsilon)
    report = category_report(result.delta, result.fits, result.s_mean, args.epsilon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_square(out / "delta.mat", result.delta.values)
    write_fits_csv(result.fits, labels, out / "fits.csv")
    write_positives_csv(result.positive_fits, out / "positives.csv")
    write_report_csv(report, out / "report.csv")
    (out / "report_meta.json").write_text(
        json.dumps(
            {
                "n": result.delta.n,
                "checkpoints": list(result.checkpoints),
                "k_max": result.checkpoints[-1],
                "s_mean": result.s_mean,
                "epsilon": args.epsilon,
                "fall_through_count": report.fall_through_count,
                "aggregation": manifest.get("aggregation"),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (out / "trajectories.svg").write_text(
        render_trajectories(result.fits, labels, result.checkpoints), encoding="utf-8"
    )
    _note(args, f"analyze: {result.delta.n}x{result.delta.n} change matrix in {out}")


def _read_delta(path: str | Path) -> DeltaMatrix:
    try:
        return DeltaMatrix(read_square(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def cmd_build_batches(args) -> None:
    delta = _read_delta(args.delta)
    schedule = Schedule(SCHEDULE_CHOICES[args.schedule], args.epochs)
    groups = None
    if args.exclude_duplicate_texts:
        if not args.data:
            raise ValueError("--exclude-duplicate-texts needs --data for group assignments")
        groups = read_dataset(args.data).group_ids
    plans = plan_epochs(
        schedule,
        delta,
        args.batch_size,
        args.seed,
        groups=groups,
        exclude_same_group=args.exclude_duplicate_texts,
    )
    write_plans(plans, args.out)
    _note(args, f"build-batches: {len(plans)} epoch plans in {args.out}")


def cmd_train_scl(args) -> None:
    data = read_dataset(args.data)
    plans = read_plans(args.plan)
    epochs = args.epochs if args.epochs is not None else len(plans)
    cfg = _train_config(args, epochs, args.batch_size)
    result = train_selective(data, cfg, plans, _init_encoder_arg(args.init_from))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_series(result.series, out, aggregation=cfg.aggregation)
    write_encoder(result.encoder, out / "encoder.json")
    write_loss_log(result.log, out / "loss.csv")
    _note(args, f"train-scl: {epochs} epochs, outputs in {out}")


def cmd_report(args) -> None:
    analysis = Path(args.analysis)
    fits_path = analysis / "fits.csv"
    meta_path = analysis / "report_meta.json"
    for p in (fits_path, meta_path):
        if not p.is_file():
            raise FileNotFoundError(f"{p} (run analyze first)")
    pairs = read_fits_csv(fits_path)
    fits = [f for f, _ in pairs]
    labels = [lab for _, lab in pairs]
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        checkpoints = [int(k) for k in meta["checkpoints"]]
        s_mean = float(meta["s_mean"])
        epsilon = float(meta["epsilon"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{meta_path}: bad analysis metadata ({exc})") from exc
    counts = {cat: 0 for cat in Category}
    fall_through = 0
    for lab in labels:
        counts[lab.category] += 1
        fall_through += int(lab.fall_through)
    total = len(labels)
    if total == 0:
        raise FormatError(f"{fits_path}: no negative-pair fits recorded")
    report = CategoryReport(
        counts, {c: counts[c] / total for c in Category}, fall_through, s_mean, epsilon, total
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    (out / "trajectories.svg").write_text(
        render_trajectories(fits, labels, checkpoints), encoding="utf-8"
    )
    if args.schedule:
        schedule = Schedule(SCHEDULE_CHOICES[args.schedule], args.epochs)
        (out / "schedule.svg").write_text(render_schedule(schedule), encoding="utf-8")
    curves = []
    for log_path in args.loss_log or []:
        rows = read_loss_log(log_path)
        curves.append((Path(log_path).parent.name or Path(log_path).stem,
                       [r.epoch for r in rows], [r.loss for r in rows]))
    if curves:
        (out / "loss.svg").write_text(render_loss(curves), encoding="utf-8")
    _note(args, f"report: wrote report files to {out}")


def cmd_pipeline(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scl_epochs = args.scl_epochs if args.scl_epochs is not None else args.epochs
    ns = argparse.Namespace

    stages = [
        (
            "gen-data",
            cmd_gen_data,
            ns(
                n=args.n, dims=args.dims, groups=args.groups, noise=args.noise,
                seed=args.seed, out=out / "data", verbose=args.verbose,
            ),
        ),
        (
            "train-ref",
            cmd_train_ref,
            ns(
                data=out / "data", epochs=args.epochs, batch_size=args.batch_size,
                lr=args.lr, interval=args.interval, mode=args.mode,
                embed_dim=args.embed_dim, freeze_text=False, init_from=None,
                seed=args.seed, out=out / "ref", verbose=args.verbose,
            ),
        ),
        (
            "analyze",
            cmd_analyze,
            ns(
                series=out / "ref", mode=args.mode, epsilon=args.epsilon,
                threads=args.threads, out=out / "analysis", verbose=args.verbose,
            ),
        ),
        (
            "build-batches",
            cmd_build_batches,
            ns(
                delta=out / "analysis" / "delta.mat", schedule=args.schedule,
                epochs=scl_epochs, batch_size=args.scl_batch_size, seed=args.seed,
                epsilon=args.epsilon, exclude_duplicate_texts=args.exclude_duplicate_texts,
                data=out / "data", out=out / "plan.jsonl", verbose=args.verbose,
            ),
        ),
        (
            "train-scl",
            cmd_train_scl,
            ns(
                data=out / "data", plan=out / "plan.jsonl", epochs=scl_epochs,
                batch_size=args.scl_batch_size, lr=args.lr, interval=args.interval,
                mode=args.mode, embed_dim=args.embed_dim, freeze_text=False,
                init_from=None, seed=args.seed, out=out / "scl", verbose=args.verbose,
            ),
        ),
        (
            "report",
            cmd_report,
            ns(
                analysis=out / "analysis", schedule=args.schedule, epochs=scl_epochs,
                loss_log=[str(out / "ref" / "loss.csv"), str(out / "scl" / "loss.csv")],
                out=out / "report", verbose=args.verbose,
            ),
        ),
    ]
    for name, fn, stage_args in stages:
        started = time.perf_counter()
        try:
            fn(stage_args)
        except Exception as exc:
            print(f"pipeline: stage {name!r} failed: {exc}", file=sys.stderr)
            raise
        _note(args, f"pipeline: stage {name} done in {time.perf_counter() - started:.2f}s")


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="bound on internal parallelism; results do not depend on it (default 1)",
    )
    parser.add_argument("--verbose", action="store_true", help="print progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pairsel",
        description="Curriculum-guided pair selection driven by similarity trajectories.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--dims", type=_dims, default=(4, 4, 3, 3),
                   help="d_video,d_text,t_video,t_text (default 4,4,3,3)")
    p.add_argument("--groups", default=None,
                   help='duplicate-text histogram "size:count,..." (default all singletons)')
    p.add_argument("--noise", type=float, default=0.1, help="video noise stddev (default 0.1)")
    p.add_argument("--out", required=True, help="output dataset directory")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    helps = {
        "train-ref": "train a reference encoder on uniformly shuffled batches",
        "train-scl": "train an encoder on pre-built curriculum batches",
    }
    for name, default_bs, default_epochs in (("train-ref", 16, 80), ("train-scl", 8, None)):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--data", required=True, help="dataset directory from gen-data")
        if name == "train-scl":
            p.add_argument("--plan", required=True, help="plan.jsonl from build-batches")
            p.add_argument("--epochs", type=int, default=None,
                           help="epochs to run (default: all plan epochs)")
        else:
            p.add_argument("--epochs", type=int, default=default_epochs,
                           help=f"training epochs (default {default_epochs})")
        p.add_argument("--batch-size", type=int, default=default_bs,
                       help=f"batch size (default {default_bs})")
        p.add_argument("--lr", type=float, default=0.05, help="learning rate (default 0.05)")
        p.add_argument("--interval", type=int, default=5,
                       help="checkpoint interval in epochs (default 5)")
        p.add_argument("--mode", choices=AGGREGATION_MODES, default="mean",
                       help="similarity aggregation (default mean)")
        p.add_argument("--embed-dim", type=int, default=8,
                       help="shared embedding dimension (default 8)")
        p.add_argument("--freeze-text", action="store_true",
                       help="leave the text projection at its initialization")
        p.add_argument("--init-from", default=None,
                       help="encoder.json (or a directory containing one) to start from")
        p.add_argument("--out", required=True, help="output snapshots directory")
        _add_common(p)
        p.set_defaults(func=cmd_train_ref if name == "train-ref" else cmd_train_scl)

    p = sub.add_parser("analyze", help="fit per-pair trajectories over a snapshot series")
    p.add_argument("--series", required=True, help="snapshots directory")
    p.add_argument("--mode", choices=AGGREGATION_MODES, default=None,
                   help="aggregation override (default: the mode recorded in the series)")
    p.add_argument("--epsilon", type=float, default=0.2,
                   help="dead-band for the regime taxonomy (default 0.2)")
    p.add_argument("--out", required=True, help="output analysis directory")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("build-batches", help="build curriculum epoch plans from delta.mat")
    p.add_argument("--delta", required=True, help="delta.mat from analyze")
    p.add_argument("--schedule", choices=sorted(SCHEDULE_CHOICES), required=True,
                   help="difficulty schedule")
    p.add_argument("--epochs", type=int, required=True, help="number of epoch plans to build")
    p.add_argument("--batch-size", type=int, default=8, help="batch size (default 8)")
    p.add_argument("--epsilon", type=float, default=0.2,
                   help="analysis dead-band, recorded for provenance; selection does not use it")
    p.add_argument("--exclude-duplicate-texts", action="store_true",
                   help="keep samples sharing a text out of the same batch where possible")
    p.add_argument("--data", default=None,
                   help="dataset directory (needed for --exclude-duplicate-texts)")
    p.add_argument("--out", required=True, help="output plan.jsonl")
    _add_common(p)
    p.set_defaults(func=cmd_build_batches)

    p = sub.add_parser("report", help="render report files from an analysis directory")
    p.add_argument("--analysis", required=True, help="analysis directory from analyze")
    p.add_argument("--schedule", choices=sorted(SCHEDULE_CHOICES), default=None,
                   help="schedule to render into schedule.svg")
    p.add_argument("--epochs", type=int, default=40,
                   help="epoch count for schedule.svg (default 40)")
    p.add_argument("--loss-log", nargs="*", default=None,
                   help="loss.csv files to render into loss.svg")
    p.add_argument("--out", required=True, help="output report directory")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run all six stages into one output directory")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=_dims, default=(4, 4, 3, 3))
    p.add_argument("--groups", default=None)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=40, help="reference epochs (default 40)")
    p.add_argument("--scl-epochs", type=int, default=None,
                   help="selective epochs (default: same as --epochs)")
    p.add_argument("--interval", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16, help="reference batch size (default 16)")
    p.add_argument("--scl-batch-size", type=int, default=8,
                   help="selective batch size (default 8)")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--mode", choices=AGGREGATION_MODES, default="mean")
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--schedule", choices=sorted(SCHEDULE_CHOICES), default="log")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--exclude-duplicate-texts", action="store_true")
    p.add_argument("--out", required=True, help="pipeline output directory")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("pairsel: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except FormatError as exc:
        print(f"pairsel: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DegenerateEmbeddingError, DegenerateRegressionError, InsufficientDataError) as exc:
        print(f"pairsel: numeric degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DivergenceError as exc:
        print(f"pairsel: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"pairsel: missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"pairsel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
