"""Command-line entry points: ``cdotrain train-g`` and ``cdotrain train-f``.

Exit codes: 0 success, 1 numeric failure during training, 2 bad options or
configuration, 3 malformed input file (weights, dataset or quotes).
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, TrainerError, WeightFormatError
from .training import TrainSpecF, TrainSpecG, train_f, train_g


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdotrain",
        description="Train the CDS point (g) and distance (f) networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("train-g", help="fit g to a (rho, beta, x0, quote) dataset")
    pg.add_argument("--dataset", required=True, help="dataset .bin path (sidecar .json alongside)")
    pg.add_argument("--weights-out", required=True)
    pg.add_argument("--curve-out", required=True, help="per-epoch loss CSV path")
    pg.add_argument("--epochs", type=int, default=TrainSpecG.epochs)
    pg.add_argument("--batch-size", type=int, default=TrainSpecG.batch_size)
    pg.add_argument("--lr", type=float, default=TrainSpecG.learning_rate,
                    help="Adam learning rate (default %(default)s)")
    pg.add_argument("--lr-step", type=int, default=TrainSpecG.lr_step,
                    help="halve the learning rate every N epochs; 0 keeps it constant")
    pg.add_argument("--val-rows", type=int, default=TrainSpecG.val_rows)
    pg.add_argument("--seed", type=int, default=0)

    pf = sub.add_parser("train-f", help="fit f to fixed quotes through a frozen g")
    pf.add_argument("--quotes", required=True, help="CSV with a spread_bps column")
    pf.add_argument("--g-weights", required=True)
    pf.add_argument("--weights-out", required=True)
    pf.add_argument("--curve-out", required=True)
    pf.add_argument("--epochs", type=int, default=TrainSpecF.epochs)
    pf.add_argument("--batches", type=int, default=TrainSpecF.batches_per_epoch)
    pf.add_argument("--batch-size", type=int, default=TrainSpecF.batch_size)
    pf.add_argument("--lr", type=float, default=TrainSpecF.learning_rate,
                    help="Adam learning rate (default %(default)s)")
    pf.add_argument("--lr-step", type=int, default=TrainSpecF.lr_step,
                    help="halve the learning rate every N epochs; 0 keeps it constant")
    pf.add_argument("--monotonicity-penalty", type=float,
                    default=TrainSpecF.monotonicity_penalty,
                    help="soft nondecreasing-outputs penalty weight (0 disables)")
    pf.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train-g":
            spec = TrainSpecG(epochs=args.epochs, batch_size=args.batch_size,
                              learning_rate=args.lr, lr_step=args.lr_step,
                              val_rows=args.val_rows)
            report = train_g(args.dataset, args.weights_out, args.curve_out,
                             spec=spec, seed=args.seed)
            print(f"trained g: epoch-1 loss {report.epoch_loss[0]:.6g}, "
                  f"epoch-{spec.epochs} loss {report.epoch_loss[-1]:.6g}, "
                  f"held-out MAE {report.epoch_val_mae_bps[-1]:.3f} bps")
            print(f"weights: {report.weights_path}\nloss curve: {report.curve_path}")
        else:
            spec = TrainSpecF(epochs=args.epochs, batches_per_epoch=args.batches,
                              batch_size=args.batch_size, learning_rate=args.lr,
                              lr_step=args.lr_step,
                              monotonicity_penalty=args.monotonicity_penalty)
            report = train_f(args.quotes, args.g_weights, args.weights_out,
                             args.curve_out, spec=spec, seed=args.seed)
            print(f"trained f: epoch-1 loss {report.epoch_loss[0]:.4f}%, "
                  f"epoch-{spec.epochs} loss {report.epoch_loss[-1]:.4f}%, "
                  f"monotone fraction {report.epoch_monotone_fraction[-1]:.3f}")
            print(f"weights: {report.weights_path}\nloss curve: {report.curve_path}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (WeightFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
