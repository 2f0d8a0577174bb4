"""Tests for stain separation and reconstruction."""

import numpy as np
import pytest
from stainrecon.od import OdPixel, od_to_rgb_array, rgb_to_od_image
from stainrecon.separation import (
    Concentration,
    ConcentrationMap,
    reconstruct_od,
    reconstruct_od_array,
    reconstruct_rgb,
    render_od_channel,
    render_single_stain,
    separate_array,
    separate_image,
    separate_pixel,
)
from stainrecon.synth import SynthSpec, Uniform, generate_patch, quantization_bound, reference_basis


def cramer_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cramer's rule for a batch of right-hand sides (N, 3)."""
    det = np.linalg.det(matrix)
    out = np.empty_like(rhs)
    for col in range(3):
        replaced = np.broadcast_to(matrix, (rhs.shape[0], 3, 3)).copy()
        replaced[:, :, col] = rhs
        out[:, col] = np.linalg.det(replaced) / det
    return out


class TestSeparatePixel:
    def test_stain_vectors_map_to_unit_coefficients(self):
        basis = reference_basis()
        assert separate_pixel(OdPixel(*basis.v_h), basis).as_array() == pytest.approx([1, 0, 0], abs=1e-12)
        assert separate_pixel(OdPixel(*basis.v_e), basis).as_array() == pytest.approx([0, 1, 0], abs=1e-12)

    def test_white_is_zero(self):
        assert separate_pixel(OdPixel(0, 0, 0), reference_basis()) == Concentration(0.0, 0.0, 0.0)

    def test_accepts_arrays(self):
        c = separate_pixel(np.array([0.3, 0.4, 0.2]), reference_basis())
        assert isinstance(c, Concentration)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            separate_pixel(np.zeros(4), reference_basis())


class TestSeparateArray:
    def test_matches_cramer_oracle(self):
        basis = reference_basis()
        rng = np.random.default_rng(3)
        od = rng.random((100_000, 3)) * 2.0
        assert np.max(np.abs(separate_array(od, basis) - cramer_solve(basis.matrix, od))) < 1e-9

    def test_image_shape(self):
        od = np.zeros((5, 7, 3), dtype=np.float32)
        cmap = separate_image(od, reference_basis())
        assert (cmap.height, cmap.width) == (5, 7)
        assert cmap.data.dtype == np.float64


class TestReconstruct:
    def test_separate_reconstruct_identity_with_residual(self):
        basis = reference_basis()
        rng = np.random.default_rng(4)
        conc = np.column_stack(
            [rng.uniform(0.2, 2.0, 50_000), rng.uniform(0.2, 2.0, 50_000), rng.uniform(-0.01, 0.01, 50_000)]
        )
        od = reconstruct_od_array(conc, basis, include_residual=True)
        assert np.max(np.abs(separate_array(od, basis) - conc)) < 1e-9

    def test_negative_coefficients_clamped(self):
        od = reconstruct_od(Concentration(-0.5, 1.0, 0.0), reference_basis())
        assert od.as_array() == pytest.approx(np.asarray(reference_basis().v_e), abs=1e-12)

    def test_residual_dropped_by_default(self):
        basis = reference_basis()
        with_res = reconstruct_od_array([0.5, 0.5, 0.05], basis, include_residual=True)
        without = reconstruct_od_array([0.5, 0.5, 0.05], basis)
        assert np.allclose(without, reconstruct_od_array([0.5, 0.5, 0.0], basis, include_residual=True))
        assert not np.allclose(with_res, without)

    def test_od_clamped_at_zero(self):
        od = reconstruct_od_array([0.0, 0.0, 1.0], reference_basis(), include_residual=True)
        assert np.all(od >= 0.0)

    def test_quantized_roundtrip_within_one_level(self):
        basis = reference_basis()
        spec = SynthSpec(basis, 128, 128, Uniform(0.05, 1.0), Uniform(0.05, 1.0), white_fraction=0.2, seed=5)
        image, _ = generate_patch(spec)
        conc = separate_array(rgb_to_od_image(image), basis)
        back = od_to_rgb_array(reconstruct_od_array(conc, basis, include_residual=True))
        assert np.max(np.abs(back.astype(int) - image.astype(int))) <= 1

    def test_linearity(self):
        basis = reference_basis()
        rng = np.random.default_rng(6)
        p, q = rng.random((2, 1000, 3))
        lhs = separate_array(0.3 * p + 1.7 * q, basis)
        rhs = 0.3 * separate_array(p, basis) + 1.7 * separate_array(q, basis)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_reconstruct_rgb_roundtrip(self):
        spec = SynthSpec(reference_basis(), 64, 64, Uniform(0.05, 1.0), Uniform(0.05, 1.0), seed=2)
        image, truth = generate_patch(spec)
        assert np.array_equal(reconstruct_rgb(truth, reference_basis(), include_residual=True), image)


class TestConcentrationMap:
    def test_size_checked(self):
        with pytest.raises(ValueError, match="expected"):
            ConcentrationMap(width=2, height=2, data=np.zeros(11))

    def test_planes_and_at(self):
        data = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
        cmap = ConcentrationMap.from_array(data)
        assert cmap.alpha.shape == (2, 3)
        assert cmap.at(1, 2) == Concentration(15.0, 16.0, 17.0)


class TestSingleStainRenders:
    def test_pure_hematoxylin_map_renders_white_eosin(self):
        cmap = ConcentrationMap.from_array(np.dstack([np.full((8, 8), 0.7), np.zeros((8, 8)), np.zeros((8, 8))]))
        e_render = render_single_stain(cmap, reference_basis(), "E")
        assert np.all(e_render == 255)

    def test_blank_renders_white(self):
        cmap = ConcentrationMap.zeros(4, 4)
        for channel in ("H", "E"):
            assert np.all(render_single_stain(cmap, reference_basis(), channel) == 255)

    def test_render_reseparates_within_quantization(self):
        basis = reference_basis()
        spec = SynthSpec(basis, 128, 128, Uniform(0.05, 1.0), Uniform(0.05, 1.0), white_fraction=0.2, seed=9)
        image, _ = generate_patch(spec)
        cmap = separate_image(rgb_to_od_image(image), basis)
        h_render = render_single_stain(cmap, basis, "H")
        beta = separate_image(rgb_to_od_image(h_render), basis).beta
        bound = quantization_bound(h_render, basis)[..., 1]
        assert np.all(np.abs(beta) <= bound + 1e-5)
        assert np.percentile(np.abs(beta), 99) <= 0.02

    def test_bad_channel(self):
        with pytest.raises(ValueError, match="channel"):
            render_single_stain(ConcentrationMap.zeros(2, 2), reference_basis(), "X")  # type: ignore[arg-type]


class TestRenderOdChannel:
    def test_scaling(self):
        data = np.zeros((1, 3, 3))
        data[0, :, 0] = [0.0, 0.5, 2.0]
        gray = render_od_channel(ConcentrationMap.from_array(data), "H", scale=1.0)
        assert gray.tolist() == [[0, 128, 255]]

    def test_negative_clipped(self):
        data = np.zeros((1, 1, 3))
        data[0, 0, 1] = -0.3
        assert render_od_channel(ConcentrationMap.from_array(data), "E", scale=1.0)[0, 0] == 0

    def test_scale_positive(self):
        with pytest.raises(ValueError):
            render_od_channel(ConcentrationMap.zeros(1, 1), "H", scale=0.0)
