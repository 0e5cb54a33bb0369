"""Command-line entry point: ``cfkit <subcommand> [options]``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from cfkit import __version__
from cfkit.analysis import ablation_table, count_params, emit_report, profile
from cfkit.blocks.base import ParamStore
from cfkit.blocks.model import ContextFormer
from cfkit.config import resolve_config, resolve_seed, resolve_threads, validation_field
from cfkit.exceptions import CfkitException, ConfigurationError, UsageError
from cfkit.gme import build_gme_stack, colorize, load_image, save_ppm
from cfkit.main import build_model, full_forward, logits_to_mask
from cfkit.tensor import ops
from cfkit.types import GradCheckCase, ModelConfig
from cfkit.verify import default_cases, gradcheck, oracle_sweep, run_invariant_suite
from cfkit.weights import load_matching, save_weights

logger = logging.getLogger(__name__)


def _parse_resolution(text: str) -> List[int]:
    """"512" or "512x448" (height x width)."""
    parts = text.lower().split("x")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad resolution '{text}' (expected N or HxW)", field="resolution") from None
    if len(values) == 1:
        values = values * 2
    if len(values) != 2 or min(values) <= 0:
        raise UsageError(f"bad resolution '{text}' (expected N or HxW)", field="resolution")
    return values


def _config(args: argparse.Namespace) -> ModelConfig:
    config = resolve_config(args.config)
    resolution = getattr(args, "resolution", None)
    if resolution:
        h, w = _parse_resolution(resolution)
        try:
            config = config.with_updates(input_h=h, input_w=w)
        except ConfigurationError as e:
            raise UsageError(f"--resolution {resolution}: {e.message}", field=e.field) from e
    return config


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ------------------------------------------------------------------ subcommands


def cmd_inspect(args: argparse.Namespace) -> int:
    config = _config(args)
    model = ContextFormer(config)
    shape = (1, config.input_channels, config.input_h, config.input_w)
    if args.format in ("json", "csv"):
        _write(emit_report(count_params(model), args.format), args.out)
        return 0
    lines = []
    total = 0
    for node in model.costs(shape):
        out_shape = "x".join(str(d) for d in node.output_shape)
        lines.append(f"{node.name:<44} {node.kind:<28} {out_shape:<18} {node.params:>10,}")
        total += node.params
    lines.append(f"{config.name}: {len(lines)} nodes, {total:,} parameters ({total / 1e6:.2f}M)")
    _write("\n".join(lines), args.out)
    return 0


def cmd_profile(args: argparse.Namespace) -> int:
    config = _config(args)
    threads = resolve_threads(args.threads)
    seed = resolve_seed(args.seed)
    model, params = build_model(config, seed)
    report = profile(model, params, warmup=args.warmup, iters=args.iters, threads=threads, seed=seed)
    _write(emit_report(report, args.format), args.out)
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    if not args.out:
        raise UsageError("infer needs --out for the mask file", field="out")
    config = resolve_config(args.config)
    if args.no_gme and config.input_channels == 5:
        raise UsageError(
            "--no-gme conflicts with input_channels=5 in the config (use a 3-channel config)",
            field="input_channels",
        )
    image = load_image(args.image)
    if (image.height, image.width) != (config.input_h, config.input_w):
        config = config.with_updates(input_h=image.height, input_w=image.width)
    ops.set_num_threads(resolve_threads(args.threads))

    model, params = build_model(config, resolve_seed(args.seed))
    if args.weights:
        params = load_matching(args.weights, params)
    threshold = args.edge_threshold if args.edge_threshold is not None else config.edge_threshold
    stack = build_gme_stack(image, config.input_channels, threshold, dtype=params.dtype)
    logits = full_forward(model, params, stack, mode="seg")
    mask = logits_to_mask(logits, image.height, image.width)[0]
    save_ppm(colorize(mask, config.num_classes), args.out)
    logger.info("wrote %dx%d mask to %s", image.width, image.height, args.out)
    if args.logits:
        save_weights(ParamStore([("logits", logits)]), args.logits)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _config(args)
    case = GradCheckCase(
        config=config,
        param_filter=args.filter or ["*"],
        exclude=args.exclude or [],
        max_coords=args.max_coords,
        tolerance=args.tolerance,
        seed=resolve_seed(args.seed),
    )
    report = gradcheck(case)
    _write(report.model_dump_json(indent=2), args.out)
    if report.numeric_error:
        logger.error("gradcheck hit a numeric error: %s", report.numeric_error)
    return 0 if report.passed else 1


def cmd_verify(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    if args.suite == "oracle":
        report = oracle_sweep(default_cases(seed=seed, trials=args.trials))
        for r in report.results:
            status = "ok" if r.passed else "FAIL"
            print(
                f"{status:<4} {r.op:<20} {r.values:<8} worst {r.worst_diff:.3g} "
                f"(seed {r.worst_seed}, shape {r.worst_shape})"
            )
    else:
        report = run_invariant_suite(args.suite, seed=seed, trials=args.trials)
        for c in report.checks:
            print(f"{'ok' if c.passed else 'FAIL':<4} {c.name:<20} {c.detail}")
    if args.out:
        _write(report.model_dump_json(indent=2), args.out)
    return 0 if report.passed else 1


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    entries = ablation_table(config)
    if args.format == "json":
        _write("[\n" + ",\n".join(e.model_dump_json() for e in entries) + "\n]", args.out)
        return 0
    sep = "," if args.format == "csv" else " "
    header = ["vit", "dw3", "dw1", "dwsep", "c-attn", "gme", "params", "gflops"]
    rows = [sep.join(f"{h:>7}" if sep == " " else h for h in header)]
    for e in entries:
        flags = ["x" if on else "-" for on in (e.vit, e.dw3, e.dw1, e.dwsep, e.channel_attention, e.gme)]
        cells = flags + [f"{e.params / 1e6:.2f}M", f"{e.gflops:.3f}"]
        rows.append(sep.join(f"{c:>7}" if sep == " " else c for c in cells))
    _write("\n".join(rows), args.out)
    return 0


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfkit", description="ContextFormer segmentation kit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: str = "seg512") -> None:
        p.add_argument("--config", default=config, help="preset name or path to a JSON config")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=int, help="RNG seed (default: $CFKIT_SEED or 0)")
        p.add_argument("--threads", type=int, help="worker threads (default: $CFKIT_THREADS or 1)")

    p = sub.add_parser("inspect", help="print the module tree with shapes and parameter counts")
    common(p)
    p.add_argument("--resolution", help="override input size, N or HxW")
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("profile", help="static costs plus a latency benchmark")
    common(p)
    p.add_argument("--resolution", help="override input size, N or HxW")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=50)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("infer", help="segment one image")
    common(p)
    p.add_argument("--image", required=True, help="P6 PPM or 8-bit PNG")
    p.add_argument("--weights", help="CFW1 weight file (default: random init from --seed)")
    p.add_argument("--logits", help="also dump raw logits to this CFW1 file")
    p.add_argument("--no-gme", action="store_true", help="feed RGB only")
    p.add_argument("--edge-threshold", type=float, help="fixed edge threshold instead of Otsu")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    common(p, config="micro")
    p.add_argument("--resolution", help="override input size, N or HxW")
    p.add_argument("--filter", action="append", help="parameter name pattern to include (repeatable)")
    p.add_argument("--exclude", action="append", help="parameter name pattern to skip (repeatable)")
    p.add_argument("--max-coords", type=int, default=32)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("verify", help="run an invariant suite or the operator oracles")
    common(p)
    p.add_argument("--suite", default="all", help="tensor, gme, blocks, analysis, all or oracle")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="params and GFLOPs of every ablation row")
    common(p)
    p.add_argument("--resolution", help="override input size, N or HxW")
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"cfkit {args.command}: {e.message}", file=sys.stderr)
        return 2
    except ValidationError as e:
        field = validation_field(e)
        print(f"cfkit {args.command}: invalid value for '{field}': {e.errors()[0]['msg']}", file=sys.stderr)
        return 2
    except CfkitException as e:
        print(f"cfkit {args.command}: {e.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
