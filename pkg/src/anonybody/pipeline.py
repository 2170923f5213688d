"""End-to-end orchestration: detect, crop, anonymize, stitch, repeat.

Determinism is the design constraint that shapes everything here. Crops
are prepared in a worker pool but collected positionally; per-instance
seeds are derived, not drawn; batching never reorders results; stitching
sorts by coverage. Fixed config plus deterministic backends therefore
yield byte-identical outputs at any worker count.

Dataset runs are resumable: each produced output gets a marker file keyed
by the config digest, and a rerun with ``resume`` skips images whose
marker matches and whose output still exists.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import ClassicalParams, apply_classical
from .compositor import CompositeLayer, OrderingStrategy, recursive_stitch
from .cropping import InstanceCrop, prepare_crop
from .dataset_io import RunSummary, list_images, read_image, write_image
from .detection import DetectorBackend, DetectorConfig, InstanceDetection, detect
from .errors import (
    AnonybodyError,
    BackendError,
    BatchDispatchError,
    CorruptFileError,
    InvalidArgumentError,
    NotFoundError,
    OutputCollisionError,
)
from .generative import DiffusionParams, InpaintBackend, InpaintRequest, batch_inpaint
from .raster import BinaryMask, RasterImage, dilate
from .seeds import instance_seed

logger = logging.getLogger(__name__)

METHOD_GENERATIVE = "fadm"
METHODS = (METHOD_GENERATIVE, "blur", "mask_fill", "pixelize")
FAILURE_POLICIES = ("fallback", "fail")


@dataclass(frozen=True)
class AnonymizationConfig:
    method: str = METHOD_GENERATIVE
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    classical: ClassicalParams = field(default_factory=ClassicalParams)
    context_factor: float = 0.2
    mask_dilation: int = 4
    feather: int = 0
    max_batch: int = 4
    workers: int = 1
    global_seed: int = 0
    on_backend_failure: str = "fallback"
    backend_label: str = "mock"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be >= 1")
        if self.max_batch < 1:
            raise InvalidArgumentError("max_batch must be >= 1")
        if self.mask_dilation < 0 or self.feather < 0 or self.context_factor < 0:
            raise InvalidArgumentError("mask_dilation, feather and context_factor must be >= 0")
        if self.on_backend_failure not in FAILURE_POLICIES:
            raise InvalidArgumentError(f"unknown failure policy {self.on_backend_failure!r}")
        if not 0 <= self.global_seed < 2**64:
            raise InvalidArgumentError("global_seed must be an unsigned 64-bit value")


def config_digest(config: AnonymizationConfig) -> str:
    """Stable digest over the output-affecting parts of a config.

    Worker count and batch size are excluded: outputs are invariant to
    both, and a resumed run should not reprocess because the machine
    changed.
    """
    payload = dataclasses.asdict(config)
    payload.pop("workers")
    payload.pop("max_batch")
    payload["detector"]["class_filter"] = sorted(config.detector.class_filter)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class InstanceRecord:
    instance_index: int
    coverage: int
    seed: int
    latency_ms: float
    note: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ImageReport:
    image_id: str
    instances: list[InstanceRecord] = field(default_factory=list)
    failure_notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "instances": [r.to_dict() for r in self.instances],
            "failure_notes": list(self.failure_notes),
        }


@dataclass
class PipelineBackends:
    detector: DetectorBackend
    inpaint: InpaintBackend | None = None


def _prepare_crops(image: RasterImage, detections: list[InstanceDetection],
                   config: AnonymizationConfig) -> list[InstanceCrop]:
    def build(det: InstanceDetection) -> InstanceCrop:
        return prepare_crop(image, det, config.diffusion.resolution,
                            config.context_factor, config.mask_dilation)

    if config.workers == 1 or len(detections) <= 1:
        return [build(det) for det in detections]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(build, detections))


def _fallback_fill(crop: InstanceCrop, config: AnonymizationConfig) -> RasterImage:
    params = dataclasses.replace(config.classical, method="mask_fill")
    return apply_classical(crop.pixels, crop.mask, params)


def _anonymize_generative(image: RasterImage, detections: list[InstanceDetection],
                          config: AnonymizationConfig, backend: InpaintBackend,
                          image_id: str, report: ImageReport) -> RasterImage:
    crops = _prepare_crops(image, detections, config)
    requests = []
    seeds = []
    for det, crop in zip(detections, crops):
        seed = instance_seed(config.global_seed, image_id, det.instance_index)
        seeds.append(seed)
        params = dataclasses.replace(config.diffusion, seed=seed)
        requests.append(InpaintRequest(crop=crop, params=params))

    started = time.perf_counter()
    fallback_notes: dict[int, str] = {}
    try:
        results = batch_inpaint(requests, backend, config.max_batch)
    except BatchDispatchError as exc:
        if config.on_backend_failure == "fail":
            raise BackendError(
                f"inpainting failed for instances {sorted(exc.failures)} of image {image_id!r}"
            ) from exc
        results = []
        for i in range(len(requests)):
            if i in exc.results:
                results.append(exc.results[i])
            else:
                results.append(_fallback_fill(crops[i], config))
                fallback_notes[i] = f"instance {i}: backend failed ({exc.failures[i]}); used mask_fill"
    latency_ms = (time.perf_counter() - started) * 1000.0 / max(len(requests), 1)

    layers = []
    for det, crop, seed, result in zip(detections, crops, seeds, results):
        layers.append(CompositeLayer(result=result, crop=crop,
                                     coverage=crop.support.coverage,
                                     instance_index=det.instance_index))
        report.instances.append(InstanceRecord(
            instance_index=det.instance_index,
            coverage=crop.support.coverage,
            seed=seed,
            latency_ms=latency_ms,
            note=fallback_notes.get(det.instance_index, ""),
        ))
    report.failure_notes.extend(fallback_notes.values())
    return recursive_stitch(image, layers, OrderingStrategy(), config.feather)


def _anonymize_classical(image: RasterImage, detections: list[InstanceDetection],
                         config: AnonymizationConfig, report: ImageReport) -> RasterImage:
    union = np.zeros((image.height, image.width), dtype=bool)
    for det in detections:
        dilated = dilate(det.mask, config.mask_dilation)
        union |= dilated.bits
        report.instances.append(InstanceRecord(
            instance_index=det.instance_index,
            coverage=dilated.coverage,
            seed=0,
            latency_ms=0.0,
        ))
    params = dataclasses.replace(config.classical, method=config.method)
    return apply_classical(image, BinaryMask(union), params)


def anonymize_image(image: RasterImage, config: AnonymizationConfig,
                    backends: PipelineBackends, image_id: str = "") -> tuple[RasterImage, ImageReport]:
    """Anonymize every detected person in one image.

    Returns the anonymized image and a per-instance report. With zero
    detections the input is returned untouched.
    """
    report = ImageReport(image_id=image_id)
    detections = detect(image, config.detector, backends.detector, image_id=image_id)
    if not detections:
        return image, report
    if config.method == METHOD_GENERATIVE:
        if backends.inpaint is None:
            raise InvalidArgumentError("method 'fadm' needs an inpainting backend")
        out = _anonymize_generative(image, detections, config, backends.inpaint,
                                    image_id, report)
    else:
        out = _anonymize_classical(image, detections, config, report)
    return out, report


def _marker_path(output_dir: Path, stem: str) -> Path:
    return output_dir / ".markers" / f"{stem}.json"


def _marker_matches(marker: Path, digest: str, output: Path) -> bool:
    if not (marker.exists() and output.exists()):
        return False
    try:
        payload = json.loads(marker.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return payload.get("config_digest") == digest


def anonymize_dataset(input_path: str | Path, output_dir: str | Path,
                      config: AnonymizationConfig, backends: PipelineBackends,
                      annotations_path: str | Path | None = None,
                      resume: bool = False) -> RunSummary:
    """Anonymize a directory (or single file) of images.

    Every input image yields exactly one PNG under ``<output>/images`` with
    the same stem; the annotation file, when given, is copied through byte
    for byte. Existing outputs refuse to be overwritten unless ``resume``
    is set, in which case images with a matching marker are skipped.
    """
    input_path = Path(input_path)
    output_dir = Path(output_dir)
    if input_path.is_dir():
        files = list_images(input_path)
    elif input_path.is_file():
        files = [input_path]
    else:
        raise NotFoundError(f"input {input_path} does not exist")

    images_dir = output_dir / "images"
    digest = config_digest(config)
    if not resume:
        colliding = [p.name for p in files if (images_dir / f"{p.stem}.png").exists()]
        if colliding:
            raise OutputCollisionError(
                f"outputs already exist for {colliding}; pass resume to continue a run"
            )
    images_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / ".markers").mkdir(parents=True, exist_ok=True)

    summary = RunSummary(config_digest=digest)
    started = time.perf_counter()
    for path in files:
        image_id = path.name
        out_path = images_dir / f"{path.stem}.png"
        marker = _marker_path(output_dir, path.stem)
        if resume and _marker_matches(marker, digest, out_path):
            summary.skipped += 1
            summary.per_image.append({"image_id": image_id, "skipped": "resume"})
            continue
        try:
            image = read_image(path)
        except (CorruptFileError, NotFoundError) as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            summary.skipped += 1
            summary.per_image.append({"image_id": image_id, "skipped": str(exc)})
            continue
        try:
            result, report = anonymize_image(image, config, backends, image_id=image_id)
        except AnonybodyError as exc:
            logger.error("failed to anonymize %s: %s", path, exc)
            summary.failed += 1
            summary.per_image.append({"image_id": image_id, "failed": str(exc)})
            continue
        write_image(result, out_path)
        marker.write_text(json.dumps({
            "config_digest": digest,
            "output": str(out_path.relative_to(output_dir)),
        }), encoding="utf-8")
        summary.processed += 1
        summary.instances_anonymized += len(report.instances)
        entry = report.to_dict()
        entry["output"] = str(out_path.relative_to(output_dir))
        summary.per_image.append(entry)

    if annotations_path is not None:
        annotations_path = Path(annotations_path)
        shutil.copyfile(annotations_path, output_dir / annotations_path.name)
    summary.wall_time_s = time.perf_counter() - started
    (output_dir / "run_summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return summary
