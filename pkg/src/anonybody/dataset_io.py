"""Dataset plumbing: COCO-style annotations, image codecs, run reports.

Annotations are validated structurally (with JSON paths in error messages)
and referentially (dangling ids are collected and reported). Image output
is PNG by default; writing lossy formats must be opted into explicitly so
the pipeline's outside-mask guarantees survive the trip to disk.

The report path writes machine-readable artifacts (summary JSON, metrics
CSV) next to human-facing ones (markdown digest, matplotlib charts,
side-by-side comparison grids).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from PIL import Image, UnidentifiedImageError

from .errors import (
    AnnotationIntegrityError,
    AnnotationParseError,
    CorruptFileError,
    InvalidArgumentError,
    NotFoundError,
    UnsupportedFormatError,
)
from .raster import RasterImage, from_uint8, resize, to_uint8

READABLE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class CocoAnnotation:
    id: int
    image_id: int
    category_id: int
    segmentation: object
    bbox: tuple[float, float, float, float] | None = None


@dataclass
class CocoAnnotations:
    """Parsed, referentially-valid annotation set."""

    images: dict[int, CocoImage]
    annotations: list[CocoAnnotation]
    categories: dict[int, str]
    _by_image: dict[int, list[CocoAnnotation]] = field(default_factory=dict, repr=False)
    _by_file_name: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for ann in self.annotations:
            self._by_image.setdefault(ann.image_id, []).append(ann)
        for image in self.images.values():
            self._by_file_name[image.file_name] = image.id
            self._by_file_name.setdefault(Path(image.file_name).stem, image.id)

    def for_image(self, image_id: int) -> list[CocoAnnotation]:
        return list(self._by_image.get(image_id, []))

    def resolve_image_id(self, identifier: str | int) -> int | None:
        """Map a file name, stem, or numeric id to a COCO image id."""
        if isinstance(identifier, int):
            return identifier if identifier in self.images else None
        if identifier in self._by_file_name:
            return self._by_file_name[identifier]
        stem = Path(identifier).stem
        if stem in self._by_file_name:
            return self._by_file_name[stem]
        if stem.isdigit() and int(stem) in self.images:
            return int(stem)
        return None


def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise AnnotationParseError(f"missing required key {key!r}", path)
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise AnnotationParseError(f"{key!r} must be an integer", f"{path}.{key}")
    if not isinstance(value, kind):
        raise AnnotationParseError(
            f"{key!r} must be {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
            f"{path}.{key}",
        )
    return value


def parse_annotations(payload: dict) -> CocoAnnotations:
    """Validate a decoded COCO-style dict into :class:`CocoAnnotations`."""
    if not isinstance(payload, dict):
        raise AnnotationParseError(f"top level must be an object, got {type(payload).__name__}")
    for section in ("images", "annotations", "categories"):
        if section not in payload:
            raise AnnotationParseError(f"missing required key {section!r}", "$")
        if not isinstance(payload[section], list):
            raise AnnotationParseError("must be a list", f"$.{section}")

    images: dict[int, CocoImage] = {}
    for i, item in enumerate(payload["images"]):
        path = f"$.images[{i}]"
        if not isinstance(item, dict):
            raise AnnotationParseError("image entry must be an object", path)
        image = CocoImage(
            id=_require(item, "id", int, path),
            file_name=_require(item, "file_name", str, path),
            width=_require(item, "width", int, path),
            height=_require(item, "height", int, path),
        )
        if image.width < 1 or image.height < 1:
            raise AnnotationParseError("image dimensions must be positive", path)
        if image.id in images:
            raise AnnotationParseError(f"duplicate image id {image.id}", path)
        images[image.id] = image

    categories: dict[int, str] = {}
    for i, item in enumerate(payload["categories"]):
        path = f"$.categories[{i}]"
        if not isinstance(item, dict):
            raise AnnotationParseError("category entry must be an object", path)
        cat_id = _require(item, "id", int, path)
        categories[cat_id] = _require(item, "name", str, path)

    annotations: list[CocoAnnotation] = []
    dangling: list[str] = []
    for i, item in enumerate(payload["annotations"]):
        path = f"$.annotations[{i}]"
        if not isinstance(item, dict):
            raise AnnotationParseError("annotation entry must be an object", path)
        ann = CocoAnnotation(
            id=_require(item, "id", int, path),
            image_id=_require(item, "image_id", int, path),
            category_id=_require(item, "category_id", int, path),
            segmentation=_require(item, "segmentation", (list, dict), path),
            bbox=tuple(item["bbox"]) if isinstance(item.get("bbox"), list) else None,
        )
        if isinstance(ann.segmentation, list):
            for j, polygon in enumerate(ann.segmentation):
                poly_path = f"{path}.segmentation[{j}]"
                if not isinstance(polygon, list):
                    raise AnnotationParseError("polygon must be a coordinate list", poly_path)
                if len(polygon) < 6 or len(polygon) % 2 != 0:
                    raise AnnotationParseError(
                        f"polygon needs an even coordinate count of at least 6, got {len(polygon)}",
                        poly_path,
                    )
        if ann.image_id not in images:
            dangling.append(f"annotation {ann.id} -> image {ann.image_id}")
        if ann.category_id not in categories:
            dangling.append(f"annotation {ann.id} -> category {ann.category_id}")
        annotations.append(ann)
    if dangling:
        raise AnnotationIntegrityError(
            f"annotations reference missing ids: {', '.join(dangling)}", dangling
        )
    return CocoAnnotations(images=images, annotations=annotations, categories=categories)


def load_annotations(path: str | Path) -> CocoAnnotations:
    """Read and validate a COCO-style annotation file."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"annotation file {path} does not exist")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"not valid JSON: {exc}") from exc
    return parse_annotations(payload)


def read_image(path: str | Path) -> RasterImage:
    """Decode a PNG or JPEG file into unit-interval RGB."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"image file {path} does not exist")
    if path.suffix.lower() not in READABLE_SUFFIXES:
        raise UnsupportedFormatError(f"cannot read {path.suffix!r} files")
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return from_uint8(np.asarray(rgb, dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise CorruptFileError(f"could not decode {path}: {exc}") from exc
    except OSError as exc:
        raise CorruptFileError(f"could not decode {path}: {exc}") from exc


def write_image(image: RasterImage, path: str | Path, allow_lossy: bool = False) -> None:
    """Encode to disk; PNG by default, lossy formats only when opted in."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".jpg", ".jpeg"):
        if not allow_lossy:
            raise UnsupportedFormatError(
                f"refusing to write lossy {suffix!r}; outputs default to PNG so pixels outside "
                "the anonymized masks stay bit-exact. Pass allow_lossy=True to override."
            )
    elif suffix != ".png":
        raise UnsupportedFormatError(f"cannot write {suffix!r} files, use .png")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def image_to_png_bytes(image: RasterImage) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def png_bytes_to_image(data: bytes) -> RasterImage:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return from_uint8(np.asarray(img.convert("RGB"), dtype=np.uint8))
    except (UnidentifiedImageError, OSError) as exc:
        raise CorruptFileError(f"could not decode PNG payload: {exc}") from exc


def list_images(directory: str | Path) -> list[Path]:
    """Readable image files directly inside a directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in READABLE_SUFFIXES)


@dataclass
class RunSummary:
    """Aggregated outcome of a dataset run."""

    config_digest: str
    processed: int = 0
    skipped: int = 0
    failed: int = 0
    instances_anonymized: int = 0
    wall_time_s: float = 0.0
    per_image: list[dict] = field(default_factory=list)

    @property
    def total_inputs(self) -> int:
        return self.processed + self.skipped + self.failed

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "counts": {
                "processed": self.processed,
                "skipped": self.skipped,
                "failed": self.failed,
                "instances_anonymized": self.instances_anonymized,
            },
            "wall_time_s": self.wall_time_s,
            "per_image": self.per_image,
        }


@dataclass(frozen=True)
class MetricsRow:
    """One method's scores, mirroring the metrics table layout."""

    method: str
    is_mean: float
    is_std: float
    fid: float | None = None


def comparison_grid(pairs: list[tuple[RasterImage, RasterImage]],
                    tile_size: int | None = None) -> RasterImage:
    """Stack (original, anonymized) pairs into one image, one pair per row.

    All tiles are resized to a common square side (default: the height of
    the first original), so a grid of n pairs decodes to exactly
    (n * tile, 2 * tile) pixels.
    """
    if not pairs:
        raise InvalidArgumentError("cannot build a grid from zero pairs")
    side = tile_size or pairs[0][0].height
    rows = []
    for original, anonymized in pairs:
        left = resize(original, side, side, "bilinear")
        right = resize(anonymized, side, side, "bilinear")
        rows.append(np.concatenate([left.data, right.data], axis=1))
    return RasterImage(np.concatenate(rows, axis=0))


def _metrics_figure(metrics: list[MetricsRow]) -> Figure:
    fig = Figure(figsize=(8, 3.2))
    FigureCanvasAgg(fig)
    ax_is, ax_fid = fig.subplots(1, 2)
    names = [m.method for m in metrics]
    ax_is.bar(names, [m.is_mean for m in metrics], yerr=[m.is_std for m in metrics],
              color="#4878cf", capsize=3)
    ax_is.set_ylabel("Inception Score (higher is better)")
    ax_is.tick_params(axis="x", rotation=30)
    fid_rows = [(m.method, m.fid) for m in metrics if m.fid is not None]
    if fid_rows:
        ax_fid.bar([r[0] for r in fid_rows], [r[1] for r in fid_rows], color="#d65f5f")
    ax_fid.set_ylabel("FID (lower is better)")
    ax_fid.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    return fig


def _summary_figure(summary: RunSummary) -> Figure:
    fig = Figure(figsize=(8, 3.2))
    FigureCanvasAgg(fig)
    ax_counts, ax_hist = fig.subplots(1, 2)
    ax_counts.bar(["processed", "skipped", "failed"],
                  [summary.processed, summary.skipped, summary.failed],
                  color=["#4878cf", "#ee854a", "#d65f5f"])
    ax_counts.set_ylabel("images")
    per_image_instances = [len(entry.get("instances", [])) for entry in summary.per_image]
    if per_image_instances:
        top = max(per_image_instances)
        ax_hist.hist(per_image_instances, bins=range(0, top + 2), color="#6acc64",
                     edgecolor="white", align="left")
    ax_hist.set_xlabel("instances per image")
    ax_hist.set_ylabel("images")
    fig.tight_layout()
    return fig


def emit_report(summary: RunSummary, metrics: list[MetricsRow] | None, out_dir: str | Path,
                grids: list[tuple[str, RasterImage]] | None = None) -> list[Path]:
    """Write the run report bundle and return the created paths.

    Always writes ``summary.json``, ``report.md`` and a summary chart.
    When a metrics table is given (possibly empty) it additionally writes
    ``metrics.csv`` and, for non-empty tables, ``metrics.png``. Optional
    named grids land as ``grid_<name>.png``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True),
                            encoding="utf-8")
    written.append(summary_path)

    if metrics is not None:
        csv_path = out_dir / "metrics.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "is_mean", "is_std", "fid"])
            for row in metrics:
                writer.writerow([row.method, f"{row.is_mean:.6f}", f"{row.is_std:.6f}",
                                 "" if row.fid is None else f"{row.fid:.6f}"])
        written.append(csv_path)
        if metrics:
            chart_path = out_dir / "metrics.png"
            _metrics_figure(metrics).savefig(chart_path, dpi=110)
            written.append(chart_path)

    digest_path = out_dir / "report.md"
    lines = [
        "# Anonymization run report",
        "",
        f"- config digest: `{summary.config_digest}`",
        f"- processed: {summary.processed}",
        f"- skipped: {summary.skipped}",
        f"- failed: {summary.failed}",
        f"- instances anonymized: {summary.instances_anonymized}",
        f"- wall time: {summary.wall_time_s:.2f}s",
    ]
    if metrics:
        lines += ["", "| method | IS mean | IS std | FID |", "| --- | --- | --- | --- |"]
        for row in metrics:
            fid_cell = "-" if row.fid is None else f"{row.fid:.4f}"
            lines.append(f"| {row.method} | {row.is_mean:.4f} | {row.is_std:.4f} | {fid_cell} |")
    digest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(digest_path)

    chart_path = out_dir / "run_summary.png"
    _summary_figure(summary).savefig(chart_path, dpi=110)
    written.append(chart_path)

    for name, grid in grids or []:
        grid_path = out_dir / f"grid_{name}.png"
        write_image(grid, grid_path)
        written.append(grid_path)
    return written
