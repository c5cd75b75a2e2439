from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .config import ExperimentConfig, load_config
from .const import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, OPTIMIZERS, VARIANTS
from .errors import NumericalError, RulToolkitError
from .pipeline import (
    format_comparison,
    run_benchmark,
    run_build_dataset,
    run_compare,
    run_evaluate,
    run_generate,
    run_train,
)

_LOG = logging.getLogger("vcsel_rul")


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to YAML config")
    common.add_argument("--seed", type=int, help="Master seed; overrides the config file")
    common.add_argument("-o", "--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    noise.add_argument("-v", "--verbose", action="store_true", help="Log per-epoch detail")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="vcsel-rul", description="VCSEL remaining-useful-life toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    common = _common()

    p = sub.add_parser("generate", parents=[common], help="Simulate an accelerated-aging fleet")
    p.add_argument("--devices", type=int, help="Number of devices")

    p = sub.add_parser("build-dataset", parents=[common], help="Window a fleet into train/test samples")
    p.add_argument("--fleet", type=Path, required=True, help="Directory written by generate")
    p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("train", parents=[common], help="Train a model variant")
    p.add_argument("--dataset", type=Path, required=True, help="Directory written by build-dataset")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="Score a checkpoint or the LLSF baseline")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--method", choices=("model", "llsf"), default="model")
    p.add_argument("--checkpoint", type=Path, help="Required for --method model")
    p.add_argument("--fleet", type=Path, help="Required for --method llsf")
    p.add_argument("--device", help="Also write trajectory_<ID>.csv for this device")
    p.add_argument("--bins", type=int, help="Error histogram bins")

    p = sub.add_parser("compare", parents=[common], help="Tabulate two or more reports")
    p.add_argument("reports", nargs="+", type=Path, help="report.json files")
    p.add_argument("--reference", help="Label of the reference row (default: first)")
    p.add_argument("--labels", nargs="+", help="Row labels, one per report")

    p = sub.add_parser("benchmark", parents=[common], help="Full pipeline per seed, hybrid vs. LLSF")
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--devices", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Apply command-line overrides on top of the config file."""
    cfg = load_config(args.config)
    gen, ds, spec, tr, met = cfg.generator, cfg.dataset, cfg.model, cfg.train, cfg.metrics

    def given(name: str) -> Optional[object]:
        return getattr(args, name, None)

    if given("devices") is not None:
        gen = replace(gen, device_count=args.devices)
    if given("train_fraction") is not None:
        ds = replace(ds, train_fraction=args.train_fraction)
    if given("variant") is not None:
        spec = replace(spec, variant=args.variant)
    for name in ("epochs", "batch_size", "learning_rate", "optimizer", "patience"):
        if given(name) is not None:
            tr = replace(tr, **{name: given(name)})
    if given("bins") is not None:
        met = replace(met, histogram_bins=args.bins)
    if args.seed is not None:
        if args.command == "generate":
            gen = replace(gen, master_seed=args.seed)
        elif args.command == "build-dataset":
            ds = replace(ds, split_seed=args.seed)
        elif args.command == "train":
            spec = replace(spec, seed=args.seed)
            tr = replace(tr, seed=args.seed)
        elif args.command == "benchmark":
            _LOG.warning("--seed is ignored by benchmark; pass the seeds with --seeds")
        else:
            _LOG.warning("--seed has no effect on %s", args.command)
    cfg = ExperimentConfig(gen, ds, spec, tr, met)
    cfg.validate()
    return cfg


def _generate(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    fleet = run_generate(cfg, args.out, args.force)
    failed = sum(not r.censored for r in fleet)
    print(f"{len(fleet)} devices ({failed} failed, {len(fleet) - failed} censored) -> {args.out}")


def _build_dataset(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    samples, dataset = run_build_dataset(cfg, args.fleet, args.out, args.force)
    if dataset is None:
        print(f"0 samples -> {args.out}")
        return
    print(
        f"{len(samples)} samples: train {len(dataset.train)} ({len(dataset.train_devices)} devices), "
        f"test {len(dataset.test)} ({len(dataset.test_devices)} devices) -> {args.out}"
    )


def _train(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    result = run_train(cfg, args.dataset, args.out, args.force)
    last = result.history[-1] if result.history else None
    print(
        f"{result.model.spec.variant}: {len(result.history)} epochs, best epoch {result.best_epoch}, "
        f"final train loss {last.train_loss if last else float('nan'):.6g} -> {args.out}"
    )


def _evaluate(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    report = run_evaluate(
        cfg, args.dataset, args.out, args.method, args.checkpoint, args.fleet, args.device, args.force
    )
    print(f"n={report.n} RMSE={report.rmse_h:.2f} h MAE={report.mae_h:.2f} h S={report.score_s:.4g}")


def _compare(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    table = run_compare(args.reports, args.out, args.reference, args.labels, args.force, cfg)
    print(format_comparison(table), end="")


def _benchmark(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    summary = run_benchmark(cfg, args.out, args.seeds, args.force)
    for run in summary["runs"]:
        print(
            f"seed {run['seed']}: model RMSE {run['model_rmse_h']:.1f} h S {run['model_score_s']:.4g} | "
            f"llsf RMSE {run['llsf_rmse_h']:.1f} h S {run['llsf_score_s']:.4g}"
        )
    print(f"model better on both metrics in {summary['wins']}/{len(summary['runs'])} seeds")


COMMANDS: dict[str, Callable[[argparse.Namespace, ExperimentConfig], None]] = {
    "generate": _generate,
    "build-dataset": _build_dataset,
    "train": _train,
    "evaluate": _evaluate,
    "compare": _compare,
    "benchmark": _benchmark,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = logging.INFO
    if args.quiet:
        level = logging.WARNING
    elif args.verbose:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except NumericalError as err:
        _LOG.error("%s", err)
        return EXIT_NUMERICAL
    except (RulToolkitError, FileNotFoundError) as err:
        _LOG.error("%s", err)
        return EXIT_USAGE
    except OSError as err:
        _LOG.error("I/O failure: %s", err)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
