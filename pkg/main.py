# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import argparse
import dataclasses
import io
import os
import sys
import traceback
from pathlib import Path

from tqdm import tqdm

from core.config import RunConfig, config_hash, load_run_config
from core.errors import SafeSetError, ValidationError
from core.i18n import SUPPORTED_LANGUAGES, load_language, t
from core.logger import get_logger, setup_logger, shutdown_logger
from core.processor import (WORLDS, build_report, compare_losses, evaluate_model, gen_envs, label_dataset,
                            run_monte_carlo, simulate, train_model)

# ==========================================
# Windows stdout robustness initialization
# ==========================================
if sys.platform == "win32":
    if sys.stdout is not None and hasattr(sys.stdout, "buffer"):
        try:
            sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding="utf-8", line_buffering=True)
        except Exception:
            pass
    elif sys.stdout is None:
        sys.stdout = open(os.devnull, "w")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

DEFAULT_CONFIG = Path("config.json")


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors (bad choice, missing argument) exit with EXIT_VALIDATION."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=DEFAULT_CONFIG, help="run config JSON (default: config.json)")
    common.add_argument("--seed", type=int, default=None, help="override the seed of this step")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--lang", choices=sorted(SUPPORTED_LANGUAGES), default=None, help="console language")

    parser = _ArgumentParser(prog="main.py", description="HJ safe sets, hypernetwork and NTC-MPC pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-envs", parents=[common], help="random local windows → dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--augment", action="store_true", help="store the 8 rotations/flips of each window")

    p = sub.add_parser("label", parents=[common], help="HJ value function per dataset sample (resumable)")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", parents=[common], help="train the hypernetwork")
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("eval-model", parents=[common], help="IoU and confusion of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--slice-theta", type=float, default=None, help="write a value slice CSV at this heading")

    p = sub.add_parser("compare-losses", parents=[common], help="RWMSE vs MSE from the same init")
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("simulate", parents=[common], help="one closed-loop episode with trace output")
    p.add_argument("--world", choices=WORLDS, default="fig1")
    p.add_argument("--mode", default="ntc-oracle")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--checkpoint", type=Path, default=None)

    p = sub.add_parser("monte-carlo", parents=[common], help="paired batch over random worlds")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--modes", nargs="+", default=None)
    p.add_argument("--horizons", nargs="+", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--checkpoint", action="append", default=[], metavar="LABEL=PATH",
                   help="checkpoint for mode ntc:LABEL (or PATH alone for mode ntc)")

    sub.add_parser("report", parents=[common], help="episodes.csv → summary tables")
    return parser


def _progress(desc: str):
    """tqdm bar plus an on_progress(current, total) callback driving it."""
    bar = tqdm(total=0, desc=desc, unit="it", leave=True)

    def on_progress(current: int, total: int) -> None:
        if bar.total != total:
            bar.total = total
        bar.update(current - bar.n)

    return bar, on_progress


def _with_overrides(config: RunConfig, args) -> RunConfig:
    """Fold CLI flags into the run config and validate the result."""
    sim, train = config.sim, config.train
    if args.command == "monte-carlo":
        changes = {k: v for k, v in (("episodes", args.episodes), ("workers", args.workers),
                                     ("modes", tuple(args.modes) if args.modes else None),
                                     ("horizons", tuple(args.horizons) if args.horizons else None),
                                     ("seed", args.seed)) if v is not None}
        sim = dataclasses.replace(sim, **changes)
    if args.command in ("train", "compare-losses") and args.seed is not None:
        train = train.replace(seed=args.seed)
    config = dataclasses.replace(config, sim=sim, train=train)
    config.validate()
    return config


def _checkpoint_map(entries: list[str]) -> dict[str, Path]:
    checkpoints = {}
    for entry in entries:
        label, sep, path = entry.partition("=")
        if not sep:
            label, path = "default", entry
        if not label or not path:
            raise ValidationError(f"expected LABEL=PATH, got '{entry}'", field="--checkpoint")
        checkpoints[label] = Path(path)
    return checkpoints


def _run(args, config: RunConfig, logger) -> None:
    command = args.command

    if command == "gen-envs":
        out = args.out or Path("dataset")
        seed = config.train.seed if args.seed is None else args.seed
        bar, on_progress = _progress(t("cli_progress_gen"))
        with bar:
            stats = gen_envs(out, config, args.count, seed, args.augment, on_progress)
        print(t("cli_gen_done", produced=stats.produced, failed=stats.failed, path=out))

    elif command == "label":
        bar, on_progress = _progress(t("cli_progress_label"))
        with bar:
            stats = label_dataset(args.dataset, config, args.workers, on_progress)
        print(t("cli_label_done", produced=stats.produced, skipped=stats.skipped, failed=stats.failed))

    elif command == "train":
        out = args.out or Path("checkpoints")
        bar, on_progress = _progress(t("cli_progress_train"))
        with bar:
            result = train_model(args.dataset, config, out, on_progress=on_progress)
        last = result.history[-1]
        print(t("cli_train_done", epochs=len(result.history), iou=f"{last.val_iou:.4f}",
                loss=f"{last.val_loss:.6g}", path=out))

    elif command == "eval-model":
        slice_path = (args.out or Path(".")) / "value_slice.csv" if args.slice_theta is not None else None
        metrics = evaluate_model(args.checkpoint, args.dataset, args.split, args.slice_theta, slice_path)
        print(t("cli_eval_iou", split=args.split, iou=f"{metrics.iou:.4f}", loss=f"{metrics.loss:.6g}"))
        print(t("cli_eval_confusion", tp=metrics.tp, fn=metrics.fn, fp=metrics.fp, tn=metrics.tn))
        if slice_path:
            print(t("cli_eval_slice", path=slice_path))

    elif command == "compare-losses":
        out = args.out or Path("compare")
        bar, on_progress = _progress(t("cli_progress_train"))
        with bar:
            results = compare_losses(args.dataset, config, out, on_progress)
        for loss, result in results.items():
            print(t("cli_compare_row", loss=loss, iou=f"{result.history[-1].val_iou:.4f}"))

    elif command == "simulate":
        out = args.out or Path("episode")
        seed = config.sim.seed if args.seed is None else args.seed
        result = simulate(config, out, args.world, args.mode, args.horizon, seed, args.checkpoint)
        print(t("cli_sim_done", outcome=result.outcome, steps=result.steps,
                path_m=f"{result.path_length:.2f}", path=out))

    elif command == "monte-carlo":
        out = args.out or Path("report")
        bar, on_progress = _progress(t("cli_progress_mc"))
        with bar:
            report = run_monte_carlo(config, out, _checkpoint_map(args.checkpoint), on_progress)
        for entry in report.summary.values():
            print(t("cli_mc_row", mode=entry["mode"], horizon=entry["horizon"], successes=entry["successes"],
                    episodes=entry["episodes"], rate=f"{entry['success_rate']:.0%}",
                    solve_ms=f"{entry['mean_solve_ms']:.1f}"))
        print(t("cli_mc_saved", path=out))

    elif command == "report":
        out = args.out or Path("report")
        build_report(out)
        print(t("cli_report_done", path=out))

    logger.info(f"{command}: finished")


def cli(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    args = _build_parser().parse_args(argv)

    try:
        config = _with_overrides(load_run_config(args.config), args)
    except ValidationError as e:
        load_language(args.lang or "en")
        print(t("cli_error_validation", message=e), file=sys.stderr)
        return EXIT_VALIDATION

    load_language(args.lang or config.language)

    log_path, cleanup_msg = setup_logger(mode=args.command)
    logger = get_logger()
    if cleanup_msg:
        print(cleanup_msg)

    def _cli_excepthook(exc_type, exc_value, exc_tb):
        tb_text = "".join(traceback.format_exception(exc_type, exc_value, exc_tb))
        logger.critical(f"Unhandled exception in CLI:\n{tb_text}")
        shutdown_logger(reason="exception")
        sys.__excepthook__(exc_type, exc_value, exc_tb)

    sys.excepthook = _cli_excepthook

    logger.info(f"CLI started — command={args.command} config={args.config} hash={config_hash(config)}")
    print(t("cli_title"))
    print(t("cli_divider"))

    reason = "normal"
    try:
        _run(args, config, logger)
        return EXIT_OK
    except ValidationError as e:
        reason = "validation_error"
        logger.error(f"{args.command}: validation error — {e}")
        print(t("cli_error_validation", message=e), file=sys.stderr)
        return EXIT_VALIDATION
    except (SafeSetError, OSError) as e:
        reason = "runtime_error"
        logger.error(f"{args.command}: {type(e).__name__} — {e}")
        print(t("cli_error_runtime", message=e), file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        reason = "interrupted"
        logger.warning(f"{args.command}: interrupted by user")
        return EXIT_RUNTIME
    finally:
        shutdown_logger(reason=reason)


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
