"""Command-line entry point: ``twu <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input, 2 property-check failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import checks, filterbank, preprocess, raster_io, trainer
from .errors import InvalidParameterError, ShapeError, TrainingDivergedError

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _default_seed():
    value = os.environ.get("TWU_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"TWU_SEED must be an integer, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twu", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="plain key=value file; flags override its values")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("preprocess", help="energy crop + wavelet denoising of scans")
    p.add_argument("--input", required=True, help="PGM (P5) or .f32 file, or a directory")
    p.add_argument("--a", type=float, default=0.5, help="crop control parameter")
    p.add_argument("--wavelet", default="db2", choices=sorted(filterbank.TAPS_BY_FAMILY))
    p.add_argument("--emit-report", help="CSV of first_row,last_row,threshold per image")

    p = sub.add_parser("filters", help="print filter taps, pr_loss and frequency response")
    p.add_argument("--taps", type=int, default=2)
    p.add_argument("--mode", default="lattice", choices=("lattice", "free"))
    p.add_argument("--bank-file", help="load a serialized bank instead of a Daubechies init")
    p.add_argument("--points", type=int, default=9, help="frequency samples on [0, pi]")
    p.add_argument("--save", help="write the bank in key=value form")

    p = sub.add_parser("check", help="run the reconstruction/orthogonality/gradient suite")
    p.add_argument("--taps", type=int, default=8)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train the toy classifier on the synthetic task")
    p.add_argument("--policy", default="orthlatt",
                   choices=("maxpool", "avgpool", "orthlatt", "pr-relax"))
    p.add_argument("--taps", type=int, default=8)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-samples", type=int, default=340, help="train/validation pool size")
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--out", default="runs", help="directory for checkpoints and metrics.csv")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a synthetic test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-test", type=int, default=100)
    return parser


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            file_values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in file_values.items():
            if key not in known or key == "help":
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            if action.type is not None:
                raw = action.type(raw)
            if action.choices is not None and raw not in action.choices:
                raise UsageError(f"config {key}={raw!r} not in {sorted(action.choices)}")
            defaults[key] = raw
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "seed", "absent") is None:
        args.seed = _default_seed()
    return args


def print_config(args, out):
    for key, value in sorted(vars(args).items()):
        out.write(f"# {key}={value}\n")


def _fmt(values):
    return "[" + ", ".join(f"{v:.17g}" for v in values) + "]"


def cmd_filters(args, out):
    if args.bank_file:
        bank = filterbank.loads_bank(Path(args.bank_file).read_text())
    else:
        bank = filterbank.init_filter_bank(args.taps, args.mode)
    filters = filterbank.as_filters(bank)
    if isinstance(bank, filterbank.LatticeFilterBank):
        out.write(f"angles={_fmt(bank.angles)}\n")
    out.write(f"h0={_fmt(filters.h0)}\n")
    out.write(f"h1={_fmt(filters.h1)}\n")
    out.write(f"pr_loss={filterbank.pr_loss(filters.h0):.17g}\n")
    omega, mag0 = filterbank.frequency_response(filters.h0, args.points)
    _, mag1 = filterbank.frequency_response(filters.h1, args.points)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["omega", "abs_h0", "abs_h1"])
    for row in zip(omega, mag0, mag1):
        writer.writerow([f"{v:.10g}" for v in row])
    if args.save:
        Path(args.save).write_text(filterbank.dumps_bank(bank))
    return EXIT_OK


def cmd_check(args, out):
    results = checks.run_suite(args.taps, args.trials, args.seed)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["check", "max_error", "tolerance", "status"])
    for r in results:
        writer.writerow([r.name, f"{r.max_error:.6g}", f"{r.tolerance:g}",
                         "pass" if r.passed else "FAIL"])
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_preprocess(args, out):
    paths = raster_io.find_rasters(args.input)
    if not paths:
        raise InvalidParameterError(f"no .pgm or .f32 inputs under {args.input}")
    report_rows = []
    for path in paths:
        img = raster_io.read_raster(path)
        result, report = preprocess.preprocess(img, args.a, args.wavelet)
        target = raster_io.output_path(path)
        raster_io.write_raster(target, result)
        report_rows.append((path.name, report))
        flag = " (degenerate crop)" if report.degenerate else ""
        out.write(f"{path} -> {target}: rows {report.first_row}..{report.last_row}, "
                  f"threshold {report.threshold:.6g}{flag}\n")
    if args.emit_report:
        with open(args.emit_report, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image", "first_row", "last_row", "threshold"])
            for name, rep in report_rows:
                writer.writerow([name, rep.first_row, rep.last_row, repr(rep.threshold)])
    return EXIT_OK


def cmd_train(args, out):
    config = trainer.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        alpha=args.alpha, seed=args.seed, folds=args.folds, channels=args.channels)
    policy = trainer.SitePolicy.preset(args.policy, taps=args.taps)
    trainval, test = trainer.make_task(args.seed, args.n_samples, args.n_test)
    log = (lambda msg: out.write(msg + "\n")) if args.verbose else None
    result = trainer.train(config, trainval, policy, test_set=test, log=log)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(result.metrics_csv())
    for fold in result.folds:
        trainer.save_checkpoint(fold.model, out_dir / f"fold{fold.fold}.twu")
    for split in ("val", "test"):
        s = result.summary(split)
        out.write(f"{split}: mean {100 * s['mean']:.2f}% (+-{100 * s['std']:.2f}) "
                  f"best {100 * s['best']:.2f}%\n")
    out.write(f"pr_loss_sum per fold: {[f.pr_loss_sum for f in result.folds]}\n")
    out.write(f"wrote {out_dir / 'metrics.csv'} and {len(result.folds)} checkpoints\n")
    return EXIT_OK


def cmd_eval(args, out):
    model = trainer.load_checkpoint(args.checkpoint)
    _, test = trainer.make_task(args.seed, n_trainval=2, n_test=args.n_test)
    ev = trainer.evaluate(model, test)
    out.write(f"accuracy={ev.accuracy:.6f}\n")
    out.write("true,pred_0,pred_1\n")
    for label, row in enumerate(ev.confusion):
        out.write(f"{label},{row[0]},{row[1]}\n")
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "filters": cmd_filters, "check": cmd_check,
            "train": cmd_train, "eval": cmd_eval}


def run(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = parse_args(sys.argv[1:] if argv is None else list(argv))
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_INVALID
    print_config(args, out)
    try:
        return COMMANDS[args.command](args, out)
    except (InvalidParameterError, ShapeError, TrainingDivergedError, OSError,
            UsageError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
