"""stainrecon: H&E stain separation, slide stain statistics and stain reconstruction augmentation."""

__version__ = "0.1.0"

from stainrecon.od import OD_MAX, I0, RgbPixel, OdPixel, rgb_to_od, od_to_rgb, rgb_to_od_image, od_to_rgb_image
from stainrecon.basis import (
    StainBasis,
    BasisConfig,
    ScatterAccumulator,
    tissue_mask,
    filter_tissue,
    estimate_stain_basis,
    angular_error,
)
from stainrecon.separation import (
    Concentration,
    ConcentrationMap,
    separate_pixel,
    separate_image,
    reconstruct_od,
    reconstruct_rgb,
    render_single_stain,
    render_od_channel,
)
from stainrecon.slide_stats import (
    StainHistogram,
    SlideStainStats,
    accumulate,
    merge,
    percentile,
    compute_slide_stats,
    measure_stain_strength,
    summarize_strengths,
)
from stainrecon.seeding import AugmentationSeed
from stainrecon.augment import (
    SraConfig,
    TsaConfig,
    AugmentationDraw,
    SRA_PRESETS,
    sample_coefficients,
    apply_sra,
    apply_tsa,
    sra_augment,
    tsa_augment,
)
from stainrecon.contrastive import FeatureBatch, LossReport, l2_normalize, info_nce, grad_info_nce, loss_report
from stainrecon.synth import SynthSpec, Uniform, Constant, generate_patch, reference_basis, quantization_bound
from stainrecon.manifest import Manifest, ManifestEntry, load_manifest
from stainrecon.pipeline import RunConfig, RunSummary, SynthCorpusConfig, run_stats, run_augment, run_separate, run_loss, run_synth

__all__ = [
    # OD
    "OD_MAX",
    "I0",
    "RgbPixel",
    "OdPixel",
    "rgb_to_od",
    "od_to_rgb",
    "rgb_to_od_image",
    "od_to_rgb_image",
    # Basis
    "StainBasis",
    "BasisConfig",
    "ScatterAccumulator",
    "tissue_mask",
    "filter_tissue",
    "estimate_stain_basis",
    "angular_error",
    # Separation
    "Concentration",
    "ConcentrationMap",
    "separate_pixel",
    "separate_image",
    "reconstruct_od",
    "reconstruct_rgb",
    "render_single_stain",
    "render_od_channel",
    # Slide statistics
    "StainHistogram",
    "SlideStainStats",
    "accumulate",
    "merge",
    "percentile",
    "compute_slide_stats",
    "measure_stain_strength",
    "summarize_strengths",
    # Augmentation
    "AugmentationSeed",
    "SraConfig",
    "TsaConfig",
    "AugmentationDraw",
    "SRA_PRESETS",
    "sample_coefficients",
    "apply_sra",
    "apply_tsa",
    "sra_augment",
    "tsa_augment",
    # Contrastive loss
    "FeatureBatch",
    "LossReport",
    "l2_normalize",
    "info_nce",
    "grad_info_nce",
    "loss_report",
    # Synthetic data
    "SynthSpec",
    "Uniform",
    "Constant",
    "generate_patch",
    "reference_basis",
    "quantization_bound",
    # Corpus pipeline
    "Manifest",
    "ManifestEntry",
    "load_manifest",
    "RunConfig",
    "RunSummary",
    "SynthCorpusConfig",
    "run_stats",
    "run_augment",
    "run_separate",
    "run_loss",
    "run_synth",
]
