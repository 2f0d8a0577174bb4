"""Tests for stain basis construction and Macenko estimation."""

import math

import numpy as np
import pytest
from stainrecon.basis import (
    BasisConfig,
    ScatterAccumulator,
    StainBasis,
    angular_error,
    estimate_stain_basis,
    filter_tissue,
    select_angle_bounds,
    tissue_mask,
)
from stainrecon.errors import (
    DegeneratePlaneError,
    IllConditionedError,
    NoTissueError,
    ZeroVectorError,
)
from stainrecon.od import rgb_to_od_image
from stainrecon.synth import SynthSpec, Uniform, generate_patch, reference_basis


class TestStainBasis:
    def test_from_stain_vectors_normalizes(self):
        basis = StainBasis.from_stain_vectors((2.0, 0.0, 0.0), (0.0, 3.0, 0.0))
        assert basis.v_h == (1.0, 0.0, 0.0)
        assert basis.v_e == (0.0, 1.0, 0.0)
        assert basis.v_res == (0.0, 0.0, 1.0)

    def test_inverse_is_cached(self):
        basis = reference_basis()
        assert basis.inverse is basis.inverse
        assert np.allclose(basis.inverse @ basis.matrix, np.eye(3), atol=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError, match="unit norm"):
            StainBasis((2.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def test_rejects_negative_stain_component(self):
        with pytest.raises(ValueError, match="nonnegative"):
            StainBasis((-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def test_rejects_non_orthogonal_residual(self):
        r = 1 / math.sqrt(2)
        with pytest.raises(ValueError, match="orthogonal"):
            StainBasis((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (r, 0.0, r))

    def test_parallel_vectors(self):
        with pytest.raises(IllConditionedError):
            StainBasis.from_stain_vectors((1.0, 1.0, 0.0), (2.0, 2.0, 0.0))

    def test_nearly_parallel_vectors(self):
        theta = 1e-7
        with pytest.raises(IllConditionedError, match="condition number"):
            StainBasis.from_stain_vectors((1.0, 0.0, 0.0), (math.cos(theta), math.sin(theta), 0.0))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            StainBasis.from_stain_vectors((0.0, 0.0, 0.0), (0.0, 1.0, 0.0))

    def test_to_dict(self):
        d = reference_basis().to_dict()
        assert set(d) == {"v_h", "v_e", "v_res"}
        assert len(d["v_res"]) == 3


class TestBasisConfig:
    def test_defaults(self):
        cfg = BasisConfig()
        assert (cfg.tissue_od_threshold, cfg.angle_percentile, cfg.min_tissue_pixels) == (0.15, 1.0, 1000)

    @pytest.mark.parametrize(
        "kwargs",
        [{"tissue_od_threshold": 0.0}, {"angle_percentile": 50.0}, {"min_tissue_pixels": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            BasisConfig(**kwargs)


class TestTissueFilter:
    def test_keeps_exactly_pixels_above_threshold(self):
        pixels = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.149, 0.149, 0.149], [0.0, 0.0, 0.6]])
        kept = filter_tissue(pixels)
        assert np.array_equal(kept, pixels[[1, 3]])

    def test_image_mask_shape(self):
        od = np.zeros((4, 6, 3))
        od[1, 2] = 0.5
        mask = tissue_mask(od)
        assert mask.shape == (4, 6)
        assert mask.sum() == 1 and mask[1, 2]

    def test_empty_result(self):
        assert filter_tissue(np.zeros((10, 3))).shape == (0, 3)


class TestScatterAccumulator:
    def test_merge_matches_single_pass(self):
        rng = np.random.default_rng(1)
        a = rng.random((500, 3))
        b = rng.random((300, 3))
        merged = ScatterAccumulator.from_pixels(a).merge(ScatterAccumulator.from_pixels(b))
        whole = ScatterAccumulator.from_pixels(np.concatenate([a, b]))
        assert merged.count == 800
        assert np.allclose(merged.covariance(), whole.covariance(), atol=1e-14)

    def test_covariance_matches_numpy(self):
        rng = np.random.default_rng(2)
        px = rng.random((1000, 3))
        cov = ScatterAccumulator.from_pixels(px).covariance()
        assert np.allclose(cov, np.cov(px.T, bias=True), atol=1e-12)

    def test_empty(self):
        with pytest.raises(NoTissueError):
            ScatterAccumulator().covariance()


def _synthetic_od(seed: int, separate_fraction: float = 0.2, size: int = 400, scale: float = 1.0) -> np.ndarray:
    spec = SynthSpec(
        basis=reference_basis(),
        width=size,
        height=size,
        alpha_dist=Uniform(0.05 * scale, 1.0 * scale),
        beta_dist=Uniform(0.05 * scale, 1.0 * scale),
        white_fraction=0.2,
        seed=seed,
        separate_fraction=separate_fraction,
    )
    image, _ = generate_patch(spec)
    return rgb_to_od_image(image)


class TestEstimateStainBasis:
    def test_recovers_reference_vectors(self):
        ref = reference_basis()
        for seed in range(3):
            basis = estimate_stain_basis(_synthetic_od(seed))
            assert angular_error(basis.v_h, ref.v_h) < 2.0
            assert angular_error(basis.v_e, ref.v_e) < 2.0

    def test_hematoxylin_has_larger_red(self):
        basis = estimate_stain_basis(_synthetic_od(11))
        assert basis.v_h[0] > basis.v_e[0]

    def test_result_satisfies_invariants(self):
        basis = estimate_stain_basis(_synthetic_od(5, size=200))
        for v in (basis.v_h, basis.v_e, basis.v_res):
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)
        assert min(basis.v_h) >= 0 and min(basis.v_e) >= 0
        assert abs(np.dot(basis.v_res, basis.v_h)) < 1e-9

    def test_deterministic(self):
        od = _synthetic_od(3, size=200)
        assert estimate_stain_basis(od) == estimate_stain_basis(od.copy())

    def test_no_tissue(self):
        with pytest.raises(NoTissueError, match="tissue pixels"):
            estimate_stain_basis(np.zeros((100, 100, 3)))

    def test_too_few_tissue_pixels(self):
        od = np.zeros((100, 100, 3))
        od[:10, :10] = 0.5
        with pytest.raises(NoTissueError):
            estimate_stain_basis(od)

    def test_single_stain_is_degenerate(self):
        v_h = np.asarray(reference_basis().v_h)
        pixels = np.linspace(0.3, 1.0, 2000)[:, None] * v_h
        with pytest.raises(DegeneratePlaneError):
            estimate_stain_basis(pixels)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_scale_invariance(self, seed):
        base = estimate_stain_basis(_synthetic_od(seed))
        scaled = estimate_stain_basis(_synthetic_od(seed, scale=1.5))
        assert angular_error(base.v_h, scaled.v_h) <= 0.5
        assert angular_error(base.v_e, scaled.v_e) <= 0.5

    def test_precomputed_scatter_is_used(self):
        od = _synthetic_od(4, size=200)
        tissue = filter_tissue(od)
        half = tissue.shape[0] // 2
        merged = ScatterAccumulator.from_pixels(tissue[:half]).merge(ScatterAccumulator.from_pixels(tissue[half:]))
        basis = estimate_stain_basis(od, scatter=merged)
        direct = estimate_stain_basis(od)
        assert angular_error(basis.v_h, direct.v_h) < 1e-4
        assert angular_error(basis.v_e, direct.v_e) < 1e-4

    def test_scatter_count_must_match(self):
        od = _synthetic_od(4, size=200)
        tissue = filter_tissue(od)
        with pytest.raises(ValueError, match="scatter holds"):
            estimate_stain_basis(od, scatter=ScatterAccumulator.from_pixels(tissue[:-1]))


class TestSelectAngleBounds:
    def test_returns_elements_at_exact_ranks(self):
        rng = np.random.default_rng(8)
        angles = rng.uniform(-1.0, 2.0, 1001)
        low, high = select_angle_bounds(angles, 1.0)
        ordered = np.sort(angles)
        assert low == ordered[10]
        assert high == ordered[990]

    def test_no_interpolation(self):
        low, high = select_angle_bounds([0.0, 1.0, 2.0, 3.0], 10.0)
        assert (low, high) == (0.0, 3.0)

    def test_order_independent(self):
        angles = np.linspace(-0.5, 1.5, 500)
        assert select_angle_bounds(angles, 1.0) == select_angle_bounds(angles[::-1].copy(), 1.0)

    def test_empty(self):
        with pytest.raises(NoTissueError):
            select_angle_bounds([], 1.0)


class TestAngularError:
    def test_orthogonal(self):
        assert angular_error((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0)

    def test_sign_insensitive(self):
        assert angular_error((1, 1, 0), (-2, -2, 0)) == pytest.approx(0.0, abs=1e-5)

    def test_zero(self):
        with pytest.raises(ZeroVectorError):
            angular_error((0, 0, 0), (1, 0, 0))
