"""The ``clalign`` command line.

``clalign align`` aligns two MRC maps and writes the transform as JSON (and optionally
the aligned map). ``clalign bench`` runs synthetic benchmarks and writes a CSV table.

Exit codes: 0 on success, 1 for I/O, format and argument errors, 2 when ``--strict`` is
given and synchronization is degenerate, or when the rotation average is undefined.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

from . import __version__
from .bench import (
    BenchSpec,
    parse_int_list,
    parse_snr_list,
    phantom,
    run_benchmark,
    summarize,
    write_csv,
)
from .core.mrc import read_volume, write_volume
from .exceptions import ClalignError, DegenerateRotationError, VolumeFormatError
from .projector import DEFAULT_RESOLUTION
from .register import AlignmentResult, AlignParams, align_volumes

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGENERATE = 2


@dataclass(frozen=True)
class RunConfig:
    """Settings of one ``clalign align`` run."""

    vol1_path: str
    vol2_path: str
    out_aligned: str | None = None
    out_params: str | None = None
    """JSON destination; the record is printed to stdout when not given"""

    params: AlignParams = dataclasses.field(default_factory=AlignParams)
    strict: bool = False
    """Whether to read maps strictly and treat degenerate alignments as failures"""

    omit_timings: bool = False
    verbosity: int = 0

    def __post_init__(self) -> None:
        if not self.vol1_path or not self.vol2_path:
            raise ValueError("both input volumes are required")


def alignment_record(
    result: AlignmentResult, params: AlignParams, *, omit_timings: bool = False
) -> dict[str, Any]:
    """Returns the JSON-serializable parameter record of an alignment."""
    record: dict[str, Any] = {
        "version": __version__,
        "rotation": result.transform.rotation.m.tolist(),
        "translation": result.transform.translation.tolist(),
        "reflected": result.transform.reflected,
        "correlation": result.correlation,
        "branch_scores": {"direct": result.branch_scores[0], "reflected": result.branch_scores[1]},
        "refined": result.refined,
        "degenerate": result.degenerate,
        "seed": params.seed,
        "params": dataclasses.asdict(params),
        "warnings": list(result.warnings),
    }
    if not omit_timings:
        record["timings"] = result.timings

    return record


def cmd_align(cfg: RunConfig) -> int:
    """Aligns ``cfg.vol2_path`` onto ``cfg.vol1_path``. Returns the exit code."""
    try:
        v1 = read_volume(cfg.vol1_path, strict=cfg.strict)
        v2 = read_volume(cfg.vol2_path, strict=cfg.strict)
        result = align_volumes(v1, v2, cfg.params)
    except DegenerateRotationError as exc:
        logger.error("degenerate alignment: %s", exc)
        return EXIT_DEGENERATE
    except (VolumeFormatError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR

    record = alignment_record(result, cfg.params, omit_timings=cfg.omit_timings)
    text = json.dumps(record, indent=2)
    try:
        if cfg.out_aligned:
            write_volume(cfg.out_aligned, result.aligned(v2))
        if cfg.out_params:
            with open(cfg.out_params, "w") as fp:
                fp.write(text + "\n")
        else:
            print(text)
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR

    if cfg.strict and result.degenerate:
        logger.error("degenerate alignment: %s", "; ".join(result.warnings))
        return EXIT_DEGENERATE

    return EXIT_OK


def cmd_bench(spec: BenchSpec) -> int:
    """Runs the benchmark ``spec`` and writes its CSV. Returns the exit code."""
    try:
        if spec.volume_path is not None:
            v1 = read_volume(spec.volume_path)
        else:
            v1 = phantom(int(spec.phantom_size or 0), spec.seed, spec.symmetry)

        largest = max(params.n_ds for params in spec.sweep())
        if largest > v1.n:
            raise ValueError(f"n_ds={largest} exceeds the volume size {v1.n}")

        rows = run_benchmark(spec, v1)
        write_csv(spec.out, [*rows, *summarize(rows)])
    except (ClalignError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR

    return EXIT_OK


def _add_search_arguments(parser: argparse.ArgumentParser, *, sweep: bool = False) -> None:
    if sweep:
        parser.add_argument("--downsample", default="64", help="comma-separated search sizes")
        parser.add_argument("--n-projs", default="30", help="comma-separated projection counts")
    else:
        parser.add_argument("--downsample", type=int, default=64, help="search volume size")
        parser.add_argument("--n-projs", type=int, default=30, help="number of projections")
    parser.add_argument(
        "--resolution",
        type=int,
        default=DEFAULT_RESOLUTION,
        help="candidate grid density L",
    )
    parser.add_argument("--max-shift-frac", type=float, default=0.15)
    parser.add_argument("--shift-step", type=float, default=1.0)
    parser.add_argument(
        "--shared-shift",
        action="store_true",
        help="search one 1D shift shared by all common lines instead of a 2D image shift",
    )
    parser.add_argument(
        "--no-polish",
        action="store_true",
        help="keep grid orientations instead of refining them by a local search",
    )
    parser.add_argument("--candidate-cache", help="file caching the candidate grid")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--threads", type=int, help="worker threads (default: $CLALIGN_THREADS or CPU count)"
    )
    parser.add_argument(
        "--omit-timings", action="store_true", help="leave wall-clock times out of the output"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clalign", description="Align 3D density maps using common lines."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    align = commands.add_parser("align", help="align two MRC maps")
    align.add_argument("--vol1", required=True, help="reference map")
    align.add_argument("--vol2", required=True, help="map to align")
    align.add_argument("--out-aligned", help="write the aligned second map here")
    align.add_argument("--out-params", help="write the JSON record here (default: stdout)")
    align.add_argument("--no-refine", action="store_true")
    align.add_argument("--strict", action="store_true")
    _add_search_arguments(align)

    bench = commands.add_parser("bench", help="run synthetic benchmarks")
    source = bench.add_mutually_exclusive_group(required=True)
    source.add_argument("--phantom", type=int, metavar="N", help="phantom volume size")
    source.add_argument("--vol", help="MRC map to benchmark with")
    bench.add_argument("--sym", default="C1", help="symmetry of the phantom (C1, D7, T, O, I...)")
    bench.add_argument("--snr", default="clean", help="comma-separated SNR levels")
    bench.add_argument("--trials", type=int, default=10)
    bench.add_argument("--trans-frac", type=float, default=0.10)
    bench.add_argument("--reflect", action="store_true", help="benchmark reflected pairs")
    bench.add_argument("--parallel-trials", action="store_true")
    bench.add_argument("--out", required=True, help="CSV destination")
    _add_search_arguments(bench, sweep=True)

    return parser


def _params(args: argparse.Namespace, *, refine: bool, n_ds: int, N: int) -> AlignParams:
    return AlignParams(
        n_ds=n_ds,
        N=N,
        resolution=args.resolution,
        max_shift_fraction=args.max_shift_frac,
        shift_step=args.shift_step,
        refine=refine,
        seed=args.seed,
        threads=args.threads,
        shift_model="shared" if args.shared_shift else "planar",
        polish=not args.no_polish,
        candidate_cache=args.candidate_cache,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    try:
        if args.command == "align":
            cfg = RunConfig(
                args.vol1,
                args.vol2,
                out_aligned=args.out_aligned,
                out_params=args.out_params,
                params=_params(
                    args, refine=not args.no_refine, n_ds=args.downsample, N=args.n_projs
                ),
                strict=args.strict,
                omit_timings=args.omit_timings,
                verbosity=args.verbose,
            )
            return cmd_align(cfg)

        sizes, counts = parse_int_list(args.downsample), parse_int_list(args.n_projs)
        spec = BenchSpec(
            out=args.out,
            phantom_size=args.phantom,
            volume_path=args.vol,
            symmetry=args.sym,
            snrs=parse_snr_list(args.snr),
            trials=args.trials,
            translation_fraction=args.trans_frac,
            reflect=args.reflect,
            seed=args.seed,
            params=_params(args, refine=False, n_ds=sizes[0], N=counts[0]),
            downsample_sizes=sizes,
            projection_counts=counts,
            parallel_trials=args.parallel_trials,
            omit_timings=args.omit_timings,
        )
        return cmd_bench(spec)
    except (ClalignError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
