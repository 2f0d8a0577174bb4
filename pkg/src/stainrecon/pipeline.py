"""Batch operations over a manifest: stats, augmentation, separation, loss and synthetic corpora.

Work is spread over a thread pool (numpy releases the GIL in the heavy
loops). Results are always collected and reduced in manifest order, so every
output is byte-identical for any worker count.
"""

from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence, TypeVar, Union

import numpy as np
from numpy.typing import NDArray

from stainrecon.augment import SraConfig, TsaConfig, sra_view, tsa_view
from stainrecon.basis import BasisConfig, StainBasis, tissue_mask
from stainrecon.contrastive import DEFAULT_TAU, LossReport, l2_normalize, loss_report
from stainrecon.errors import (
    AllSlidesFailedError,
    DuplicatePathError,
    NoTissueError,
    StainReconError,
)
from stainrecon.formats import (
    HISTOGRAM_HEADER,
    SRA_LOG_HEADER,
    STRENGTHS_HEADER,
    TSA_LOG_HEADER,
    StatsDocument,
    histogram_rows,
    read_features,
    read_rgb,
    strength_rows,
    write_csv,
    write_plane,
    write_png,
    write_stats,
)
from stainrecon.manifest import Manifest, ManifestEntry, write_manifest
from stainrecon.od import rgb_to_od_image
from stainrecon.seeding import AugmentationSeed
from stainrecon.separation import render_od_channel, render_single_stain, separate_image
from stainrecon.slide_stats import (
    DEFAULT_BIN_COUNT,
    STRENGTH_PERCENTILE,
    SlideStainStats,
    exact_percentile,
    patch_tissue_od,
    slide_stats_from_tissue,
)
from stainrecon.synth import SynthSpec, Uniform, generate_patch, reference_basis
from stainrecon.utils import format_json

logger = logging.getLogger(__name__)
# Throughput lines; the CLI keeps this logger at INFO whatever the verbosity.
summary_logger = logging.getLogger("stainrecon.summary")

PathLike = Union[str, Path]
T = TypeVar("T")
R = TypeVar("R")

STATS_FILE = "stats.json"
STRENGTHS_FILE = "strengths.csv"
AUGMENT_LOG_FILE = "augmentation_log.csv"


@dataclass(frozen=True)
class RunConfig:
    """Batch-level settings shared by every subcommand.

    ``views_per_patch`` defaults to 2: each patch yields two augmented views.
    """

    workers: int = 1
    master_seed: int = 0
    output_dir: Path = Path("out")
    views_per_patch: int = 2

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers!r}")
        if self.views_per_patch < 1:
            raise ValueError(f"views_per_patch must be >= 1, got {self.views_per_patch!r}")
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def prepare_output(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir


@dataclass(frozen=True)
class RunSummary:
    """Counts and throughput of one batch operation."""

    operation: str
    processed: int
    failed: int
    seconds: float

    @property
    def patches_per_second(self) -> float:
        return self.processed / self.seconds if self.seconds > 0 else float("inf")

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def log(self) -> None:
        summary_logger.info(
            "%s: processed=%d failed=%d seconds=%.3f patches_per_second=%.1f",
            self.operation,
            self.processed,
            self.failed,
            self.seconds,
            self.patches_per_second,
        )


class _Timer:
    def __init__(self) -> None:
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


def _ordered_map(
    fn: Callable[[T], R], items: Sequence[T], executor: ThreadPoolExecutor | None
) -> Iterator[R]:
    if executor is None:
        return map(fn, items)
    return executor.map(fn, items)


def _executor(workers: int) -> ThreadPoolExecutor | None:
    return ThreadPoolExecutor(max_workers=workers) if workers > 1 else None


def _safe_name(slide_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", slide_id)


# --- stats ------------------------------------------------------------------


@dataclass
class StatsRun:
    document: StatsDocument
    summary: RunSummary
    path: Path
    failed_patches: list[str] = field(default_factory=list)


def run_stats(
    manifest: Manifest,
    cfg: BasisConfig,
    run: RunConfig,
    bin_count: int = DEFAULT_BIN_COUNT,
    q: float = STRENGTH_PERCENTILE,
) -> StatsRun:
    """Estimate per-slide stats for every slide of the manifest and write them.

    Writes ``stats.json``, ``strengths.csv`` and one histogram CSV per slide
    under ``histograms/``. Unreadable patches are skipped with a warning; a
    slide that fails is recorded under ``_errors`` and the others continue.

    Raises:
        AllSlidesFailedError: The manifest has slides but none produced stats.
    """
    timer = _Timer()
    out = run.prepare_output()
    hist_dir = out / "histograms"
    hist_dir.mkdir(exist_ok=True)

    def load(entry: ManifestEntry) -> NDArray[np.float32] | None:
        path = manifest.resolve(entry)
        try:
            return patch_tissue_od(read_rgb(path), cfg)
        except (OSError, ValueError) as e:
            logger.warning("skipping unreadable patch %s: %s", path, e)
            return None

    slides: dict[str, SlideStainStats] = {}
    errors: dict[str, str] = {}
    failed_patches: list[str] = []
    processed = 0
    executor = _executor(run.workers)
    try:
        for slide_id, members in manifest.by_slide().items():
            entries = [entry for _, entry in members]
            chunks = []
            for entry, chunk in zip(entries, _ordered_map(load, entries, executor)):
                if chunk is None:
                    failed_patches.append(entry.patch_path)
                else:
                    chunks.append(chunk)
                    processed += 1
            try:
                if not chunks:
                    raise NoTissueError(f"Slide {slide_id!r} has no readable patches")
                result = slide_stats_from_tissue(slide_id, chunks, cfg, bin_count, q, executor)
            except StainReconError as e:
                logger.warning("slide %s failed: %s", slide_id, e)
                errors[slide_id] = str(e)
                continue
            slides[slide_id] = result.stats
            write_csv(
                hist_dir / f"{_safe_name(slide_id)}.csv",
                HISTOGRAM_HEADER,
                histogram_rows(result.alpha_hist, result.beta_hist),
            )
    finally:
        if executor is not None:
            executor.shutdown()

    if errors and not slides:
        raise AllSlidesFailedError(f"All {len(errors)} slides failed; see warnings")

    document = StatsDocument(slides=slides, errors=errors)
    path = out / STATS_FILE
    write_stats(path, document)
    write_csv(out / STRENGTHS_FILE, STRENGTHS_HEADER, strength_rows(slides))
    summary = RunSummary("estimate", processed, len(failed_patches) + len(errors), timer.elapsed())
    summary.log()
    return StatsRun(document, summary, path, failed_patches)


# --- augmentation -------------------------------------------------------------


def view_name(patch_path: str, view_index: int) -> str:
    return f"{Path(patch_path).stem}__v{view_index}.png"


def _check_stems(manifest: Manifest) -> None:
    seen: dict[str, str] = {}
    for entry in manifest:
        stem = Path(entry.patch_path).stem
        if stem in seen:
            raise DuplicatePathError(
                f"Patches {seen[stem]!r} and {entry.patch_path!r} share the output stem {stem!r}"
            )
        seen[stem] = entry.patch_path


def run_augment(
    manifest: Manifest,
    stats: StatsDocument,
    cfg: SraConfig | TsaConfig,
    run: RunConfig,
) -> RunSummary:
    """Write ``views_per_patch`` augmented PNGs per patch plus the augmentation log.

    ``cfg`` selects the method: ``SraConfig`` for SRA, ``TsaConfig`` for the
    scale-and-bias baseline. View ``k`` of the patch at manifest index ``i``
    uses the seed ``(run.master_seed, i, k)``.

    Raises:
        MissingSlideStatsError: A manifest slide has no stats entry.
        DuplicatePathError: Two patches would write the same output file.
    """
    timer = _Timer()
    for slide_id in manifest.slide_ids():
        stats.for_slide(slide_id)
    _check_stems(manifest)
    out = run.prepare_output()
    is_sra = isinstance(cfg, SraConfig)

    def augment(item: tuple[int, ManifestEntry]) -> list[tuple[Any, ...]] | None:
        index, entry = item
        path = manifest.resolve(entry)
        try:
            image = read_rgb(path)
        except (OSError, ValueError) as e:
            logger.warning("skipping unreadable patch %s: %s", path, e)
            return None
        slide = stats.for_slide(entry.slide_id)
        rows: list[tuple[Any, ...]] = []
        for view in range(run.views_per_patch):
            seed = AugmentationSeed(run.master_seed, index, view)
            if isinstance(cfg, SraConfig):
                augmented, draw = sra_view(image, slide, cfg, seed, entry.slide_id)
                rows.append((entry.patch_path, view, *draw))
            else:
                augmented, tsa_draw = tsa_view(image, slide, cfg, seed, entry.slide_id)
                rows.append((entry.patch_path, view, *tsa_draw))
            write_png(out / view_name(entry.patch_path, view), augmented)
        return rows

    log_rows: list[tuple[Any, ...]] = []
    failed = 0
    executor = _executor(run.workers)
    try:
        for rows in _ordered_map(augment, list(enumerate(manifest)), executor):
            if rows is None:
                failed += 1
            else:
                log_rows.extend(rows)
    finally:
        if executor is not None:
            executor.shutdown()

    write_csv(out / AUGMENT_LOG_FILE, SRA_LOG_HEADER if is_sra else TSA_LOG_HEADER, log_rows)
    summary = RunSummary("augment" if is_sra else "tsa", len(manifest) - failed, failed, timer.elapsed())
    summary.log()
    return summary


# --- separation -------------------------------------------------------------


def run_separate(
    image_path: PathLike,
    stats: StatsDocument,
    slide_id: str,
    out_dir: PathLike,
) -> list[Path]:
    """Write single-stain renders and concentration planes of one patch.

    Outputs, for a patch ``<stem>``: ``<stem>_H.png`` and ``<stem>_E.png``
    (RGB renders), ``<stem>_H_od.png`` and ``<stem>_E_od.png`` (grayscale
    OD views scaled by the slide's H_max / E_max), and
    ``<stem>_alpha.sram``, ``<stem>_beta.sram``, ``<stem>_gamma.sram``.

    Raises:
        MissingSlideStatsError: ``slide_id`` is not in the stats.
    """
    slide = stats.for_slide(slide_id)
    image = read_rgb(image_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem

    conc = separate_image(rgb_to_od_image(image), slide.basis)
    written: list[Path] = []

    def emit(name: str, writer: Callable[[Path], None]) -> None:
        target = out / name
        writer(target)
        written.append(target)

    emit(f"{stem}_H.png", lambda p: write_png(p, render_single_stain(conc, slide.basis, "H")))
    emit(f"{stem}_E.png", lambda p: write_png(p, render_single_stain(conc, slide.basis, "E")))
    emit(f"{stem}_H_od.png", lambda p: write_png(p, render_od_channel(conc, "H", slide.h_max)))
    emit(f"{stem}_E_od.png", lambda p: write_png(p, render_od_channel(conc, "E", slide.e_max)))
    emit(f"{stem}_alpha.sram", lambda p: write_plane(p, conc.alpha))
    emit(f"{stem}_beta.sram", lambda p: write_plane(p, conc.beta))
    emit(f"{stem}_gamma.sram", lambda p: write_plane(p, conc.gamma))
    logger.info("separated %s against slide %s into %d files", image_path, slide_id, len(written))
    return written


# --- loss ---------------------------------------------------------------------


def run_loss(
    q1: PathLike,
    q2: PathLike,
    k1: PathLike,
    k2: PathLike,
    tau: float = DEFAULT_TAU,
    include_aug: bool = True,
) -> LossReport:
    """Loss report of four SRAF feature files.

    ``q1``/``q2`` hold base-encoder features of views 1 and 2, ``k1``/``k2``
    the momentum-encoder features. Rows are L2-normalized on load.
    """
    f_b1, f_b2, f_m1, f_m2 = (l2_normalize(read_features(p)) for p in (q1, q2, k1, k2))
    return loss_report(f_m1, f_m2, f_b1, f_b2, tau, include_aug)


# --- synthetic corpus ---------------------------------------------------------


@dataclass(frozen=True)
class SynthCorpusConfig:
    """Shape of a synthetic corpus.

    Slide ``s`` draws alpha from ``[0.05, h]`` and beta from ``[0.05, e]``
    where ``h`` and ``e`` step linearly across slides from the first to the
    second value of ``h_strength`` / ``e_strength``.
    """

    slides: int = 2
    patches_per_slide: int = 4
    size: int = 400
    h_strength: tuple[float, float] = (0.6, 1.2)
    e_strength: tuple[float, float] = (0.4, 0.9)
    white_fraction: float = 0.3
    separate_fraction: float = 0.5
    residual_amplitude: float = 0.0
    basis: StainBasis = field(default_factory=reference_basis)

    def __post_init__(self) -> None:
        if self.slides < 1 or self.patches_per_slide < 1 or self.size < 1:
            raise ValueError("slides, patches_per_slide and size must all be >= 1")

    def _step(self, bounds: tuple[float, float], slide: int) -> float:
        if self.slides == 1:
            return bounds[0]
        return bounds[0] + (bounds[1] - bounds[0]) * slide / (self.slides - 1)

    def spec(self, slide: int, patch: int, seed: int) -> SynthSpec:
        return SynthSpec(
            basis=self.basis,
            width=self.size,
            height=self.size,
            alpha_dist=Uniform(0.05, self._step(self.h_strength, slide)),
            beta_dist=Uniform(0.05, self._step(self.e_strength, slide)),
            white_fraction=self.white_fraction,
            residual_amplitude=self.residual_amplitude,
            seed=seed,
            separate_fraction=self.separate_fraction,
            stream=(slide, patch),
        )


def run_synth(corpus: SynthCorpusConfig, run: RunConfig) -> tuple[Manifest, RunSummary]:
    """Generate a synthetic corpus with its ground truth.

    Layout under ``run.output_dir``: ``patches/slide_XX/patch_YYY.png``,
    ``truth/slide_XX/patch_YYY_{alpha,beta,gamma}.sram``, ``manifest.csv``
    (paths relative to it) and ``truth.json`` with the true basis and the
    99th-percentile strengths of the ground-truth concentrations over tissue.
    """
    timer = _Timer()
    out = run.prepare_output()
    jobs = [(s, p) for s in range(corpus.slides) for p in range(corpus.patches_per_slide)]

    def make(job: tuple[int, int]) -> tuple[ManifestEntry, NDArray[np.float64], NDArray[np.float64]]:
        slide, patch = job
        image, truth = generate_patch(corpus.spec(slide, patch, run.master_seed))
        rel = Path("patches") / f"slide_{slide:02d}" / f"patch_{patch:03d}.png"
        truth_dir = out / "truth" / f"slide_{slide:02d}"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        truth_dir.mkdir(parents=True, exist_ok=True)
        write_png(out / rel, image)
        for name, plane in (("alpha", truth.alpha), ("beta", truth.beta), ("gamma", truth.gamma)):
            write_plane(truth_dir / f"patch_{patch:03d}_{name}.sram", plane)
        mask = tissue_mask(rgb_to_od_image(image))
        return ManifestEntry(rel.as_posix(), f"slide_{slide:02d}"), truth.alpha[mask], truth.beta[mask]

    executor = _executor(run.workers)
    try:
        results = list(_ordered_map(make, jobs, executor))
    finally:
        if executor is not None:
            executor.shutdown()

    entries = [entry for entry, _, _ in results]
    write_manifest(out / "manifest.csv", entries)

    truth_doc: dict[str, Any] = {}
    for slide in range(corpus.slides):
        members = [r for r in results if r[0].slide_id == f"slide_{slide:02d}"]
        alphas = np.concatenate([r[1] for r in members])
        betas = np.concatenate([r[2] for r in members])
        truth_doc[f"slide_{slide:02d}"] = {
            **corpus.basis.to_dict(),
            "h_max": exact_percentile(alphas, STRENGTH_PERCENTILE) if alphas.size else 0.0,
            "e_max": exact_percentile(betas, STRENGTH_PERCENTILE) if betas.size else 0.0,
            "n_tissue_pixels": int(alphas.size),
        }
    (out / "truth.json").write_text(format_json(truth_doc) + "\n", encoding="utf-8")

    manifest = Manifest(entries=tuple(entries), root=out)
    summary = RunSummary("synth", len(jobs), 0, timer.elapsed())
    summary.log()
    return manifest, summary
