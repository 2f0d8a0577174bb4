"""Tests for stain histograms and per-slide statistics."""

from functools import reduce

import numpy as np
import pytest
from stainrecon.basis import BasisConfig, ScatterAccumulator, angular_error, estimate_stain_basis, tissue_mask
from stainrecon.errors import EmptyHistogramError, NoTissueError, ShapeMismatchError
from stainrecon.od import rgb_to_od_image
from stainrecon.slide_stats import (
    SlideStainStats,
    StainHistogram,
    accumulate,
    bin_indices,
    compute_slide_stats,
    exact_percentile,
    measure_stain_strength,
    merge,
    patch_tissue_od,
    percentile,
    slide_stats_from_tissue,
    summarize_strengths,
)
from stainrecon.synth import SynthSpec, Uniform, generate_patch, reference_basis


def _patches(n: int, alpha_hi: float = 1.0, size: int = 96, seed: int = 0):
    out = []
    for i in range(n):
        spec = SynthSpec(
            basis=reference_basis(),
            width=size,
            height=size,
            alpha_dist=Uniform(0.05, alpha_hi),
            beta_dist=Uniform(0.05, 0.8),
            white_fraction=0.2,
            seed=seed,
            separate_fraction=0.3,
            stream=(0, i),
        )
        out.append(generate_patch(spec))
    return out


class TestStainHistogram:
    def test_defaults(self):
        hist = StainHistogram()
        assert hist.bin_count == 8192
        assert hist.bin_width == pytest.approx(5.0 / 8192)
        assert hist.total == 0

    def test_bin_of_midpoint(self):
        assert accumulate(StainHistogram(), [2.5]).counts[4096] == 1

    def test_out_of_range_clamped(self):
        hist = accumulate(StainHistogram(), [-0.3, 7.0, 5.0])
        assert hist.counts[0] == 1
        assert hist.counts[-1] == 2

    def test_accumulate_is_pure(self):
        empty = StainHistogram()
        accumulate(empty, [1.0, 2.0])
        assert empty.total == 0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            accumulate(StainHistogram(), [float("nan")])

    def test_counts_read_only(self):
        hist = accumulate(StainHistogram(), [1.0])
        with pytest.raises(ValueError):
            hist.counts[0] = 5

    def test_bin_indices(self):
        hist = StainHistogram(bin_count=10, lo=0.0, hi=1.0)
        assert bin_indices(hist, [0.0, 0.05, 0.1, 0.99]).tolist() == [0, 0, 1, 9]


class TestMerge:
    def test_commutative_and_associative(self):
        rng = np.random.default_rng(0)
        a, b, c = (accumulate(StainHistogram(), rng.random(1000) * 3) for _ in range(3))
        assert merge(a, b) == merge(b, a)
        assert merge(merge(a, b), c) == merge(a, merge(b, c))

    def test_merge_equals_single_accumulate(self):
        rng = np.random.default_rng(1)
        x, y = rng.random(500), rng.random(700)
        assert merge(accumulate(StainHistogram(), x), accumulate(StainHistogram(), y)) == accumulate(
            StainHistogram(), np.concatenate([x, y])
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            merge(StainHistogram(), StainHistogram(bin_count=16))

    def test_range_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            merge(StainHistogram(), StainHistogram(hi=4.0))


class TestPercentile:
    def test_empty(self):
        with pytest.raises(EmptyHistogramError):
            percentile(StainHistogram(), 99)

    @pytest.mark.parametrize("q", [0, 100, -1, 150])
    def test_q_range(self, q):
        hist = accumulate(StainHistogram(), [1.0])
        with pytest.raises(ValueError):
            percentile(hist, q)

    def test_single_value(self):
        hist = accumulate(StainHistogram(bin_count=10, lo=0.0, hi=1.0), [0.42])
        assert percentile(hist, 50) == pytest.approx(0.5)

    @pytest.mark.parametrize("value", [2.5, 1.7, 0.123])
    def test_point_mass_within_one_bin(self, value):
        hist = accumulate(StainHistogram(), np.full(1000, value))
        assert value <= percentile(hist, 99) <= value + hist.bin_width

    def test_point_mass_on_edge_reports_upper_edge(self):
        hist = accumulate(StainHistogram(), np.full(1000, 2.5))
        assert percentile(hist, 99) == 2.5 + hist.bin_width

    def test_within_one_bin_of_exact(self):
        rng = np.random.default_rng(2024)
        values = rng.uniform(0.0, 5.0, 1_000_000)
        hist = accumulate(StainHistogram(), values)
        approx = percentile(hist, 99)
        exact = exact_percentile(values, 99)
        assert exact <= approx <= exact + hist.bin_width + 1e-12
        assert abs(approx - np.percentile(values, 99)) <= hist.bin_width + 0.002


class TestSlideStainStats:
    def test_dict_roundtrip(self):
        stats = SlideStainStats("s1", reference_basis(), 1.2, 0.8, 5000)
        assert SlideStainStats.from_dict("s1", stats.to_dict()) == stats

    def test_missing_field(self):
        d = SlideStainStats("s1", reference_basis(), 1.2, 0.8, 5000).to_dict()
        del d["h_max"]
        with pytest.raises(ValueError, match="h_max"):
            SlideStainStats.from_dict("s1", d)

    def test_from_dict_checks_tissue_count(self):
        d = SlideStainStats("s1", reference_basis(), 1.2, 0.8, 999).to_dict()
        with pytest.raises(NoTissueError, match="999"):
            SlideStainStats.from_dict("s1", d)
        stats = SlideStainStats.from_dict("s1", d, BasisConfig(min_tissue_pixels=500))
        assert stats.n_tissue_pixels == 999

    @pytest.mark.parametrize("h_max", [0.0, -1.0, float("inf")])
    def test_positive_strengths(self, h_max):
        with pytest.raises(ValueError):
            SlideStainStats("s1", reference_basis(), h_max, 0.8, 5000)


class TestComputeSlideStats:
    def test_matches_ground_truth(self):
        pairs = _patches(4)
        stats = compute_slide_stats("slide", [image for image, _ in pairs])
        masks = [tissue_mask(rgb_to_od_image(image)) for image, _ in pairs]
        true_alpha = np.concatenate([truth.alpha[m] for (_, truth), m in zip(pairs, masks)])
        true_beta = np.concatenate([truth.beta[m] for (_, truth), m in zip(pairs, masks)])
        assert stats.n_tissue_pixels == true_alpha.size
        assert stats.h_max == pytest.approx(exact_percentile(true_alpha, 99), abs=0.03)
        assert stats.e_max == pytest.approx(exact_percentile(true_beta, 99), abs=0.03)

    def test_chunking_changes_only_rounding(self):
        images = [image for image, _ in _patches(3)]
        a = compute_slide_stats("slide", images)
        b = compute_slide_stats("slide", [np.concatenate(images, axis=0)])
        assert angular_error(a.basis.v_h, b.basis.v_h) < 1e-4
        assert angular_error(a.basis.v_e, b.basis.v_e) < 1e-4
        width = StainHistogram().bin_width
        assert a.h_max == pytest.approx(b.h_max, abs=width)
        assert a.e_max == pytest.approx(b.e_max, abs=width)
        assert a.n_tissue_pixels == b.n_tissue_pixels

    def test_basis_from_merged_patch_scatter(self):
        chunks = [patch_tissue_od(image) for image, _ in _patches(3)]
        merged = reduce(ScatterAccumulator.merge, map(ScatterAccumulator.from_pixels, chunks), ScatterAccumulator())
        expected = estimate_stain_basis(np.concatenate(chunks), scatter=merged)
        assert slide_stats_from_tissue("slide", chunks).stats.basis == expected

    def test_white_slide_has_no_tissue(self):
        white = np.full((64, 64, 3), 255, dtype=np.uint8)
        with pytest.raises(NoTissueError):
            compute_slide_stats("blank", [white, white])

    def test_min_tissue_pixels_from_config(self):
        images = [image for image, _ in _patches(1, size=32)]
        with pytest.raises(NoTissueError):
            compute_slide_stats("small", images, BasisConfig(min_tissue_pixels=10_000))


class TestMeasureStainStrength:
    def test_agrees_with_slide_stats_on_single_patch(self):
        image, _ = _patches(1)[0]
        stats = compute_slide_stats("one", [image])
        assert measure_stain_strength(image, stats.basis) == (stats.h_max, stats.e_max)

    def test_fixed_mask(self):
        image, _ = _patches(1)[0]
        basis = reference_basis()
        mask = np.zeros(image.shape[:2], dtype=bool)
        mask[:10, :10] = True
        h, e = measure_stain_strength(image, basis, mask=mask)
        assert h > 0 and e > 0

    def test_empty_mask(self):
        image, _ = _patches(1)[0]
        with pytest.raises(NoTissueError):
            measure_stain_strength(image, reference_basis(), mask=np.zeros(image.shape[:2], dtype=bool))

    def test_mask_shape_checked(self):
        image, _ = _patches(1)[0]
        with pytest.raises(ShapeMismatchError):
            measure_stain_strength(image, reference_basis(), mask=np.ones((3, 3), dtype=bool))


class TestSummarizeStrengths:
    def _stats(self, values):
        basis = reference_basis()
        return {f"s{i}": SlideStainStats(f"s{i}", basis, h, e, 1000) for i, (h, e) in enumerate(values)}

    def test_full_coverage_is_min_max(self):
        summary = summarize_strengths(self._stats([(0.6, 0.3), (1.0, 0.5), (1.8, 1.1)]))
        assert summary.n_slides == 3
        assert summary.h.covering_range == (0.6, 1.8)
        assert summary.h.median == pytest.approx(1.0)
        assert summary.e.minimum == 0.3

    def test_partial_coverage_is_narrower(self):
        values = [(0.5 + 0.1 * i, 0.2 + 0.05 * i) for i in range(20)]
        summary = summarize_strengths(self._stats(values), coverage=0.8)
        lo, hi = summary.h.covering_range
        assert 0.5 < lo < hi < 2.4

    def test_to_dict(self):
        d = summarize_strengths(self._stats([(1.0, 0.5)])).to_dict()
        assert d["h_max"]["covering_range"] == [1.0, 1.0]

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize_strengths({})

    def test_bad_coverage(self):
        with pytest.raises(ValueError):
            summarize_strengths(self._stats([(1.0, 0.5)]), coverage=0.0)
