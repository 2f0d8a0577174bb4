"""Command-line interface: ``stainrecon <subcommand> ...``.

Exit codes: 0 success, 1 some patches or slides failed, 2 fatal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from stainrecon import __version__
from stainrecon.config import Settings, load_config
from stainrecon.errors import StainReconError
from stainrecon.formats import read_stats
from stainrecon.manifest import load_manifest
from stainrecon.pipeline import (
    RunConfig,
    SynthCorpusConfig,
    run_augment,
    run_loss,
    run_separate,
    run_stats,
    run_synth,
)
from stainrecon.slide_stats import summarize_strengths
from stainrecon.utils import format_json

logger = logging.getLogger("stainrecon")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2


class KeyValueFormatter(logging.Formatter):
    """``level=WARNING logger=stainrecon.pipeline msg="..."`` lines."""

    def format(self, record: logging.LogRecord) -> str:
        message = record.getMessage().replace("\\", "\\\\").replace('"', '\\"')
        line = f'level={record.levelname} logger={record.name} msg="{message}"'
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


def configure_logging(verbosity: int, stream: Any = None) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger("stainrecon")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    logging.getLogger("stainrecon.summary").setLevel(min(level, logging.INFO))


def _range(text: str) -> tuple[float, float]:
    parts = text.replace(":", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two reals, got {text!r}") from None


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=None, help="Worker threads (default 1)")
    common.add_argument("--seed", type=int, default=None, help="Master seed (default 0)")
    common.add_argument("--out", type=Path, default=None, help="Output directory (default out)")
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    return common


def _add_basis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tissue-threshold", dest="basis.tissue_od_threshold", type=float, default=None)
    p.add_argument("--angle-percentile", dest="basis.angle_percentile", type=float, default=None)
    p.add_argument("--min-tissue-pixels", dest="basis.min_tissue_pixels", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stainrecon",
        description="Stain separation, slide stain statistics and stain reconstruction augmentation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="Per-slide stain basis and H_max/E_max")
    p.add_argument("manifest", type=Path)
    _add_basis_flags(p)
    p.add_argument("--bin-count", dest="stats.bin_count", type=int, default=None)
    p.add_argument("--percentile", dest="stats.percentile", type=float, default=None)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("augment", parents=[common], help="Stain reconstruction augmentation")
    p.add_argument("manifest", type=Path)
    p.add_argument("stats", type=Path)
    p.add_argument("--preset", dest="sra.preset", default=None, help="narrow, wide or wide-drop")
    p.add_argument("--h-range", dest="sra.h_range", type=_range, default=None, metavar="LO,HI")
    p.add_argument("--e-range", dest="sra.e_range", type=_range, default=None, metavar="LO,HI")
    p.add_argument("--p-drop", dest="sra.p_drop", type=float, default=None)
    p.add_argument("--drop-h-probability", dest="sra.drop_h_probability", type=float, default=None)
    p.add_argument(
        "--include-residual", dest="sra.include_residual",
        action=argparse.BooleanOptionalAction, default=None,
    )
    p.add_argument(
        "--shared-views", dest="sra.shared_views",
        action=argparse.BooleanOptionalAction, default=None,
    )
    p.add_argument("--views", dest="run.views_per_patch", type=int, default=None)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("tsa", parents=[common], help="Scale-and-bias stain augmentation baseline")
    p.add_argument("manifest", type=Path)
    p.add_argument("stats", type=Path)
    p.add_argument("--scale-halfwidth", dest="tsa.scale_halfwidth", type=float, default=None)
    p.add_argument("--bias-halfwidth", dest="tsa.bias_halfwidth", type=float, default=None)
    p.add_argument(
        "--include-residual", dest="tsa.include_residual",
        action=argparse.BooleanOptionalAction, default=None,
    )
    p.add_argument("--views", dest="run.views_per_patch", type=int, default=None)
    p.set_defaults(handler=cmd_tsa)

    p = sub.add_parser("separate", parents=[common], help="Single-stain renders and planes of one patch")
    p.add_argument("image", type=Path)
    p.add_argument("stats", type=Path)
    p.add_argument("--slide", required=True, help="Slide id of the patch")
    p.set_defaults(handler=cmd_separate)

    p = sub.add_parser("loss", parents=[common], help="Contrastive loss report of four SRAF files")
    p.add_argument("q1", type=Path, help="Base-encoder features, view 1")
    p.add_argument("q2", type=Path, help="Base-encoder features, view 2")
    p.add_argument("k1", type=Path, help="Momentum-encoder features, view 1")
    p.add_argument("k2", type=Path, help="Momentum-encoder features, view 2")
    p.add_argument("--tau", dest="loss.tau", type=float, default=None)
    p.add_argument(
        "--include-aug", dest="loss.include_aug",
        action=argparse.BooleanOptionalAction, default=None,
    )
    p.set_defaults(handler=cmd_loss)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic corpus with ground truth")
    p.add_argument("--slides", dest="synth.slides", type=int, default=None)
    p.add_argument("--patches-per-slide", dest="synth.patches_per_slide", type=int, default=None)
    p.add_argument("--size", dest="synth.size", type=int, default=None)
    p.add_argument("--h-strength", dest="synth.h_strength", type=_range, default=None, metavar="FIRST,LAST")
    p.add_argument("--e-strength", dest="synth.e_strength", type=_range, default=None, metavar="FIRST,LAST")
    p.add_argument("--white-fraction", dest="synth.white_fraction", type=float, default=None)
    p.add_argument("--separate-fraction", dest="synth.separate_fraction", type=float, default=None)
    p.add_argument("--residual-amplitude", dest="synth.residual_amplitude", type=float, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("summarize", parents=[common], help="Cross-slide strength summary as JSON")
    p.add_argument("stats", type=Path)
    p.add_argument("--coverage", dest="stats.coverage", type=float, default=None)
    p.set_defaults(handler=cmd_summarize)
    return parser


def _settings(args: argparse.Namespace) -> Settings:
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    overrides["run.workers"] = args.workers
    overrides["run.seed"] = args.seed
    overrides["run.out"] = str(args.out) if args.out is not None else None
    return Settings(load_config(args.config), overrides)


def _run_config(settings: Settings) -> RunConfig:
    return RunConfig(
        workers=int(settings.get("run.workers")),
        master_seed=int(settings.get("run.seed")),
        output_dir=Path(settings.get("run.out")),
        views_per_patch=int(settings.get("run.views_per_patch")),
    )


def cmd_estimate(args: argparse.Namespace, settings: Settings) -> int:
    result = run_stats(
        load_manifest(args.manifest),
        settings.basis_config(),
        _run_config(settings),
        bin_count=int(settings.get("stats.bin_count")),
        q=float(settings.get("stats.percentile")),
    )
    return result.summary.exit_code


def cmd_augment(args: argparse.Namespace, settings: Settings) -> int:
    stats = read_stats(args.stats, settings.basis_config())
    summary = run_augment(load_manifest(args.manifest), stats, settings.sra_config(), _run_config(settings))
    return summary.exit_code


def cmd_tsa(args: argparse.Namespace, settings: Settings) -> int:
    stats = read_stats(args.stats, settings.basis_config())
    summary = run_augment(load_manifest(args.manifest), stats, settings.tsa_config(), _run_config(settings))
    return summary.exit_code


def cmd_separate(args: argparse.Namespace, settings: Settings) -> int:
    stats = read_stats(args.stats, settings.basis_config())
    run_separate(args.image, stats, args.slide, _run_config(settings).output_dir)
    return EXIT_OK


def cmd_loss(args: argparse.Namespace, settings: Settings) -> int:
    report = run_loss(
        args.q1,
        args.q2,
        args.k1,
        args.k2,
        tau=float(settings.get("loss.tau")),
        include_aug=bool(settings.get("loss.include_aug")),
    )
    print(format_json(report.to_dict()))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    corpus = SynthCorpusConfig(
        slides=int(settings.get("synth.slides")),
        patches_per_slide=int(settings.get("synth.patches_per_slide")),
        size=int(settings.get("synth.size")),
        h_strength=tuple(settings.get("synth.h_strength")),  # type: ignore[arg-type]
        e_strength=tuple(settings.get("synth.e_strength")),  # type: ignore[arg-type]
        white_fraction=float(settings.get("synth.white_fraction")),
        separate_fraction=float(settings.get("synth.separate_fraction")),
        residual_amplitude=float(settings.get("synth.residual_amplitude")),
    )
    _, summary = run_synth(corpus, _run_config(settings))
    return summary.exit_code


def cmd_summarize(args: argparse.Namespace, settings: Settings) -> int:
    stats = read_stats(args.stats, settings.basis_config())
    summary = summarize_strengths(stats.slides, float(settings.get("stats.coverage")))
    print(format_json(summary.to_dict()))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    handler: Callable[[argparse.Namespace, Settings], int] = args.handler
    try:
        return handler(args, _settings(args))
    except (StainReconError, OSError, ValueError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
