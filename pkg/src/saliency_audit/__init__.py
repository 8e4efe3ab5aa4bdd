"""Fidelity evaluation of pixel-importance estimators for image classifiers.

The library builds accuracy-degradation curves under most/least-important
pixel masking, estimates an upper bound on the perturbation-artifact
contribution via shifted foreign masks, and cross-checks estimator rankings
with a crop-and-rescale metric.
"""

from .core import (
    DIRECTIONS,
    Dataset,
    Image,
    LabeledSample,
    Mask,
    PixelRanking,
    SaliencyMap,
    apply_mask,
    mask_from_ranking,
    rank_pixels,
    shift_mask,
)
from .crop import (
    CropStats,
    Rect,
    RegionMethod,
    bounding_crop,
    crop_and_rescale,
    crop_metric_eval,
    crop_score,
    salient_region_threshold,
    salient_region_topfrac,
)
from .datasets import (
    SynthConfig,
    load_directory_dataset,
    load_idx_dataset,
    synth_dataset,
)
from .estimators import (
    ESTIMATOR_NAMES,
    Estimator,
    EstimatorConfig,
    default_estimators,
    integrated_gradients,
    normalize_scores,
    random_saliency,
    reduce_channels,
    saliency_maps_batch,
    smoothgrad,
    squared_smoothgrad,
    vanilla_gradient,
)
from .fidelity import (
    AccuracyCurve,
    FidelityReport,
    FidelityRow,
    ShiftConfig,
    area_above,
    artifact_bound,
    default_n_grid,
    default_shift_config,
    degradation_curve,
    delta,
    fidelity_report,
    shifted_degradation_curve,
)
from .nn import (
    Architecture,
    ConvBlock,
    ConvNet,
    ForwardResult,
    LinearModel,
    TrainConfig,
    TrainResult,
    accuracy,
    default_architecture,
    load_model,
    save_model,
    train,
)
from .perturb import (
    BlurCalibration,
    CalibrationError,
    Perturbation,
    calibrate_blur_sigma,
    constant_alternative,
    gaussian_blur,
    uniform_alternative,
)

__version__ = "0.1.0"
