"""Full-body person anonymization pipeline.

Detect people, inpaint each instance with a generative backend at a
configurable denoise strength, merge the results back-to-front by mask
coverage, and score output quality with Inception Score and Frechet
Inception Distance.
"""

from .classical import ClassicalParams, apply_classical
from .compositor import CompositeLayer, OrderingStrategy, coverage, order_layers, recursive_stitch
from .cropping import CropPlacement, InstanceCrop, paste_back, prepare_crop
from .detection import (
    DetectorConfig,
    InstanceDetection,
    OracleDetectorBackend,
    detect,
    oracle_detect,
)
from .generative import (
    DiffusionParams,
    InpaintRequest,
    MockInpaintBackend,
    batch_inpaint,
    mock_inpaint,
    start_index,
)
from .metrics import FeatureMoments, ToyExtractor, fid, inception_score, moments_from_features, toy_extractor
from .pipeline import (
    AnonymizationConfig,
    ImageReport,
    PipelineBackends,
    anonymize_dataset,
    anonymize_image,
    config_digest,
)
from .raster import BinaryMask, BoundingBox, RasterImage, dilate, quantize, resize

__version__ = "0.1.0"

__all__ = [
    "AnonymizationConfig",
    "BinaryMask",
    "BoundingBox",
    "ClassicalParams",
    "CompositeLayer",
    "CropPlacement",
    "DetectorConfig",
    "DiffusionParams",
    "FeatureMoments",
    "ImageReport",
    "InpaintRequest",
    "InstanceCrop",
    "InstanceDetection",
    "MockInpaintBackend",
    "OracleDetectorBackend",
    "OrderingStrategy",
    "PipelineBackends",
    "RasterImage",
    "ToyExtractor",
    "anonymize_dataset",
    "anonymize_image",
    "apply_classical",
    "batch_inpaint",
    "config_digest",
    "coverage",
    "detect",
    "dilate",
    "fid",
    "inception_score",
    "mock_inpaint",
    "moments_from_features",
    "oracle_detect",
    "order_layers",
    "paste_back",
    "prepare_crop",
    "quantize",
    "recursive_stitch",
    "resize",
    "start_index",
    "toy_extractor",
    "__version__",
]
