"""Synthetic benchmarks: phantoms, noise and the trial protocol.

Each trial draws a random rigid transform (optionally with a reflection), builds the
pair ``v2 = apply_transform(v1, T)``, adds noise at each requested SNR, aligns the pair
with and without refinement and reports the rotation errors after resolving the
symmetry ambiguity. Several search sizes and projection counts can be swept in one run.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Optional, Union

import numpy as np

from .common.utils import spawn_generators
from .core.objects import RigidTransform, Rotation, Volume, as_matrix, grid_center
from .core.volume import apply_transform
from .exceptions import AxisUndefinedError
from .projector import CandidateSet, candidate_set, random_rotation_matrices
from .register import AlignParams, align_volumes, refine
from .symmetry import SymmetryGroup, parse_symmetry, resolve_symmetry_element, rotation_errors

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

CSV_COLUMNS = (
    "trial",
    "snr",
    "n_ds",
    "N",
    "refined",
    "e1_deg",
    "e2_deg",
    "reflected_detected",
    "correlation",
    "seconds",
)
SUMMARY_COLUMNS = ("e1_deg", "e2_deg", "reflected_detected", "correlation", "seconds")


def phantom(
    n: int,
    seed: int | np.random.Generator = 0,
    symmetry: str | SymmetryGroup = "C1",
    *,
    blobs: int | None = None,
) -> Volume:
    """Returns a smooth test volume made of 6 to 10 anisotropic Gaussian blobs.

    Blob centers lie within ``0.2·n`` of the grid center. With a symmetry other than C1,
    every blob is replicated under each group element so that the volume is invariant
    under the group.

    Keyword Arguments:
        blobs (int, optional):
            The number of distinct blobs. Drawn from 6 to 10 when not given.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    group = parse_symmetry(symmetry) if isinstance(symmetry, str) else symmetry
    count = int(rng.integers(6, 11)) if blobs is None else blobs

    axis = np.arange(n, dtype=np.float64) - grid_center(n)
    r = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    data = np.zeros((n, n, n))

    orientations = random_rotation_matrices(count, rng)
    for k in range(count):
        direction = rng.normal(size=3)
        center = direction / np.linalg.norm(direction) * rng.uniform(0.05, 0.2) * n
        sigmas = rng.uniform(0.04, 0.09, size=3) * n
        amplitude = rng.uniform(0.5, 1.5)
        precision = orientations[k] @ np.diag(sigmas**-2.0) @ orientations[k].T

        for g in group.matrices:
            # blob placed at g·center with precision g·P·gᵀ
            d = r - g @ center
            quad = np.einsum("...i,ij,...j->...", d, g @ precision @ g.T, d)
            data += amplitude * np.exp(-0.5 * quad)

    return Volume(data)


def add_noise(v: Volume, snr: float, seed: int | np.random.Generator) -> Volume:
    """Adds white Gaussian noise of variance ``var(v) / snr``.

    Raises:
        ValueError: ``snr`` is not positive.
    """
    if not snr > 0:
        raise ValueError(f"SNR must be positive, got {snr}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = math.sqrt(float(v.data.var()) / snr)
    return v.with_data(v.data + rng.normal(scale=sigma, size=v.data.shape))


def parse_snr_list(text: str) -> tuple[Optional[float], ...]:
    """Parses ``"clean,1,1/8,0.5"`` into SNR values, with ``None`` standing for clean data.

    Raises:
        ValueError: a value is not ``clean`` or a positive number.
    """
    values: list[Optional[float]] = []
    for token in text.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token == "clean":
            values.append(None)
            continue

        value = float(Fraction(token))
        if value <= 0:
            raise ValueError(f"SNR must be positive, got {token}")
        values.append(value)

    if not values:
        raise ValueError("no SNR values given")
    return tuple(values)


def parse_int_list(text: str) -> tuple[int, ...]:
    """Parses ``"16,32,64"`` into positive integers.

    Raises:
        ValueError: a value is not a positive integer, or the list is empty.
    """
    values = tuple(int(token) for token in text.split(",") if token.strip())
    if not values:
        raise ValueError("no values given")
    if any(value < 1 for value in values):
        raise ValueError(f"values must be positive, got {text!r}")
    return values


@dataclass(frozen=True)
class BenchSpec:
    """A benchmark run."""

    out: str
    """Destination CSV file"""

    phantom_size: int | None = None
    volume_path: str | None = None
    """An MRC map used instead of a phantom"""

    symmetry: str = "C1"
    snrs: tuple[Optional[float], ...] = (None,)
    """SNR levels; ``None`` is clean data"""

    trials: int = 10
    translation_fraction: float = 0.10
    """Largest translation as a fraction of the volume size"""

    reflect: bool = False
    seed: int = 0
    params: AlignParams = dataclasses.field(default_factory=lambda: AlignParams(refine=False))
    downsample_sizes: tuple[int, ...] = ()
    """Search sizes to sweep; empty means ``params.n_ds`` only"""

    projection_counts: tuple[int, ...] = ()
    """Numbers of projections to sweep; empty means ``params.N`` only"""

    parallel_trials: bool = False
    omit_timings: bool = False

    def __post_init__(self) -> None:
        if (self.phantom_size is None) == (self.volume_path is None):
            raise ValueError("exactly one of a phantom size or a volume path is required")
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if any(snr is not None and not snr > 0 for snr in self.snrs):
            raise ValueError("SNR values must be positive")
        if not self.snrs:
            raise ValueError("at least one SNR level is required")
        parse_symmetry(self.symmetry)
        self.sweep()

    def sweep(self) -> list[AlignParams]:
        """Returns the search parameters of every ``(n_ds, N)`` combination, sizes outermost."""
        sizes = self.downsample_sizes or (self.params.n_ds,)
        counts = self.projection_counts or (self.params.N,)
        return [
            dataclasses.replace(self.params, n_ds=size, N=count, refine=False)
            for size in sizes
            for count in counts
        ]


def snr_label(snr: float | None) -> str:
    return "clean" if snr is None else repr(snr)


def _errors(
    estimate: RigidTransform, truth: RigidTransform, group: SymmetryGroup
) -> tuple[float, float]:
    O = truth.rotation.m
    g = resolve_symmetry_element(estimate.rotation, O, group)
    try:
        return rotation_errors(as_matrix(g).T @ estimate.rotation.m, O)
    except AxisUndefinedError as exc:
        logger.warning("cannot score trial: %s", exc)
        return math.nan, math.nan


def run_trial(
    v1: Volume,
    spec: BenchSpec,
    trial: int,
    rng: np.random.Generator,
    group: SymmetryGroup,
    candidates: CandidateSet,
) -> list[dict[str, Any]]:
    """Runs one trial at every SNR level and sweep point of ``spec`` and returns its CSV rows."""
    n = v1.n
    rotation = random_rotation_matrices(1, rng)[0]
    direction = rng.normal(size=3)
    magnitude = rng.uniform(0.0, spec.translation_fraction * n)
    truth = RigidTransform(
        Rotation(rotation), direction / np.linalg.norm(direction) * magnitude, spec.reflect
    )
    v2 = apply_transform(v1, truth)
    align_seed = int(rng.integers(2**31))

    rows = []
    for snr in spec.snrs:
        a, b = (v1, v2) if snr is None else (add_noise(v1, snr, rng), add_noise(v2, snr, rng))

        for params in spec.sweep():
            start = time.perf_counter()
            params = dataclasses.replace(params, seed=align_seed)
            coarse = align_volumes(a, b, params, candidates=candidates)
            coarse_seconds = time.perf_counter() - start
            polished = refine(a, b, coarse.transform)
            refined_seconds = time.perf_counter() - start

            for refined, transform, score, seconds in (
                (False, coarse.transform, coarse.correlation, coarse_seconds),
                (True, polished.transform, 1.0 - polished.objective, refined_seconds),
            ):
                e1, e2 = _errors(transform, truth, group)
                rows.append(
                    {
                        "trial": trial,
                        "snr": snr_label(snr),
                        "n_ds": params.n_ds,
                        "N": params.N,
                        "refined": refined,
                        "e1_deg": e1,
                        "e2_deg": e2,
                        "reflected_detected": transform.reflected,
                        "correlation": float(score),
                        "seconds": "" if spec.omit_timings else seconds,
                    }
                )
            logger.info(
                "trial %d snr %s n_ds %d N %d: e1+e2 %.3f° unrefined, %.3f° refined",
                trial,
                snr_label(snr),
                params.n_ds,
                params.N,
                rows[-2]["e1_deg"] + rows[-2]["e2_deg"],
                rows[-1]["e1_deg"] + rows[-1]["e2_deg"],
            )

    return rows


def run_benchmark(spec: BenchSpec, v1: Volume) -> list[dict[str, Any]]:
    """Runs every trial of ``spec`` on ``v1`` and returns the per-trial rows, ordered by
    trial, SNR level and sweep point."""
    group = parse_symmetry(spec.symmetry)
    candidates = candidate_set(spec.params.resolution, cache=spec.params.candidate_cache)
    generators = spawn_generators(spec.seed, spec.trials)

    def one(trial: int) -> list[dict[str, Any]]:
        return run_trial(v1, spec, trial, generators[trial], group, candidates)

    if spec.parallel_trials:
        with ThreadPoolExecutor() as pool:
            batches = list(pool.map(one, range(spec.trials)))
    else:
        batches = [one(trial) for trial in range(spec.trials)]

    return [row for batch in batches for row in batch]


def summarize(rows: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    """Returns a mean and a standard deviation row per ``(snr, n_ds, N, refined)`` group.

    Booleans are averaged as fractions; blank cells (omitted timings) stay blank.
    """
    groups: dict[tuple[str, int, int, bool], list[dict[str, Any]]] = {}
    for row in rows:
        key = (str(row["snr"]), int(row["n_ds"]), int(row["N"]), bool(row["refined"]))
        groups.setdefault(key, []).append(row)

    summary = []
    for (snr, n_ds, N, refined), members in groups.items():
        for label, reducer in (("mean", np.mean), ("std", np.std)):
            out: dict[str, Any] = {
                "trial": label,
                "snr": snr,
                "n_ds": n_ds,
                "N": N,
                "refined": refined,
            }
            for column in SUMMARY_COLUMNS:
                values = [row[column] for row in members]
                if any(value == "" for value in values):
                    out[column] = ""
                else:
                    out[column] = float(reducer(np.array(values, dtype=np.float64)))
            summary.append(out)

    return summary


def write_csv(path: PathLike, rows: Iterable[dict[str, Any]]) -> None:
    """Writes benchmark rows (and summary rows) with the stable :data:`CSV_COLUMNS`."""
    with open(path, "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
