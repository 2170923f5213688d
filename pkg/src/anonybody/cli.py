"""Command-line entry points: dataset anonymization and metric evaluation.

Exit codes are scripting-friendly: 0 full success, 1 configuration error
before any processing, 2 runtime partial failure. Every error path prints
a single ``anonybody: error: ...`` line on stderr.

Settings resolve in three layers: built-in defaults, then the JSON config
file (``--config``), then explicit command-line flags. The bridge endpoint
may also come from ``ANONYBODY_ENDPOINT``; an explicit ``--endpoint`` flag
still wins.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bridge import BridgeClient, RemoteDetectorBackend, RemoteExtractor, RemoteInpaintBackend
from .classical import ClassicalParams
from .dataset_io import (
    MetricsRow,
    RunSummary,
    comparison_grid,
    emit_report,
    list_images,
    load_annotations,
    read_image,
)
from .detection import DetectorConfig, OracleDetectorBackend
from .errors import AnonybodyError, OutputCollisionError, TransportError
from .generative import DiffusionParams, MockInpaintBackend
from .metrics import ToyExtractor, fid, inception_score, moments_from_features
from .pipeline import AnonymizationConfig, PipelineBackends, anonymize_dataset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

METHOD_ALIASES = {"fadm": "fadm", "blur": "blur", "mask": "mask_fill", "pixelize": "pixelize"}

ANONYMIZE_DEFAULTS: dict = {
    "method": "fadm",
    "denoise": 0.6,
    "steps": 50,
    "seed": 0,
    "backend": "mock",
    "endpoint": None,
    "detector": "oracle",
    "annotations": None,
    "workers": 1,
    "resolution": 768,
    "positive_prompt": None,
    "negative_prompt": None,
    "context_factor": 0.2,
    "mask_dilation": 4,
    "feather": 0,
    "max_batch": 4,
    "confidence_threshold": 0.4,
    "min_coverage": 16,
    "class_filter": ["person"],
    "blur_sigma": 8.0,
    "fill_value": [0.5, 0.5, 0.5],
    "block_size": 16,
    "on_backend_failure": "fallback",
    "grid_pairs": 4,
    "extractor": "toy",
    "splits": 10,
}


class CliError(Exception):
    """Configuration problem; maps to exit code 1."""


def _fail(message: str, code: int) -> int:
    click.echo(f"anonybody: error: {message}", err=True)
    return code


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise CliError(f"config file {config_path} does not exist")
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CliError("config file must hold a JSON object")
    unknown = sorted(set(payload) - set(ANONYMIZE_DEFAULTS))
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    return payload


def _layered(defaults: dict, file_values: dict, flag_values: dict) -> dict:
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def _build_run_config(values: dict, backend_label: str) -> AnonymizationConfig:
    method = METHOD_ALIASES.get(values["method"], values["method"])
    denoise = min(max(float(values["denoise"]), 0.0), 1.0)  # clamped at parse time
    diffusion_kwargs = {
        "total_steps": int(values["steps"]),
        "denoise_strength": denoise,
        "resolution": int(values["resolution"]),
    }
    if values["positive_prompt"] is not None:
        diffusion_kwargs["positive_prompt"] = str(values["positive_prompt"])
    if values["negative_prompt"] is not None:
        diffusion_kwargs["negative_prompt"] = str(values["negative_prompt"])
    return AnonymizationConfig(
        method=method,
        diffusion=DiffusionParams(**diffusion_kwargs),
        detector=DetectorConfig(
            confidence_threshold=float(values["confidence_threshold"]),
            class_filter=frozenset(values["class_filter"]),
            min_coverage=int(values["min_coverage"]),
        ),
        classical=ClassicalParams(
            method=method if method in ("blur", "mask_fill", "pixelize") else "mask_fill",
            blur_sigma=float(values["blur_sigma"]),
            fill_value=tuple(float(v) for v in values["fill_value"]),
            block_size=int(values["block_size"]),
        ),
        context_factor=float(values["context_factor"]),
        mask_dilation=int(values["mask_dilation"]),
        feather=int(values["feather"]),
        max_batch=int(values["max_batch"]),
        workers=int(values["workers"]),
        global_seed=int(values["seed"]),
        on_backend_failure=str(values["on_backend_failure"]),
        backend_label=backend_label,
    )


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="anonybody")
def main() -> None:
    """Full-body person anonymization pipeline and quality metrics."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command("anonymize")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True,
              help="Input image file or directory.")
@click.option("--output", "output_dir", type=click.Path(), required=True,
              help="Output directory (images land under <output>/images).")
@click.option("--method", type=click.Choice(["fadm", "blur", "mask", "pixelize"]), default=None,
              help="Anonymization method [default: fadm].")
@click.option("--denoise", type=float, default=None,
              help="Denoise strength in [0, 1]; clamped [default: 0.6].")
@click.option("--seed", type=int, default=None, help="Global seed [default: 0].")
@click.option("--backend", type=click.Choice(["mock", "remote"]), default=None,
              help="Inpainting backend [default: mock].")
@click.option("--endpoint", envvar="ANONYBODY_ENDPOINT", default=None,
              help="Bridge endpoint host:port (env: ANONYBODY_ENDPOINT).")
@click.option("--annotations", type=click.Path(), default=None,
              help="COCO-style annotation JSON (required for the oracle detector).")
@click.option("--detector", type=click.Choice(["oracle", "remote"]), default=None,
              help="Detection backend [default: oracle].")
@click.option("--workers", type=int, default=None,
              help="Concurrent crop-preparation workers [default: 1].")
@click.option("--resume", is_flag=True, default=False,
              help="Skip images whose outputs already exist for this config.")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; flags override its values.")
def cmd_anonymize(input_path, output_dir, method, denoise, seed, backend, endpoint,
                  annotations, detector, workers, resume, config_path) -> None:
    """Anonymize every person in a dataset of images."""
    client = None
    try:
        file_values = _load_config_file(config_path)
        values = _layered(ANONYMIZE_DEFAULTS, file_values, {
            "method": method,
            "denoise": denoise,
            "seed": seed,
            "backend": backend,
            "endpoint": endpoint,
            "detector": detector,
            "annotations": annotations,
            "workers": workers,
        })

        needs_bridge = values["backend"] == "remote" or values["detector"] == "remote"
        if needs_bridge and not values["endpoint"]:
            raise CliError("--backend/--detector remote need --endpoint (or ANONYBODY_ENDPOINT)")
        if values["detector"] == "oracle" and not values["annotations"]:
            raise CliError("--detector oracle needs --annotations")

        backend_label = "mock" if values["backend"] == "mock" else f"remote:{values['endpoint']}"
        run_config = _build_run_config(values, backend_label)

        if needs_bridge:
            client = BridgeClient(values["endpoint"])
            try:
                client.connect()
            except TransportError as exc:
                raise CliError(f"bridge unreachable: {exc}") from exc

        if values["detector"] == "oracle":
            annotations_path = Path(values["annotations"])
            detector_backend = OracleDetectorBackend(load_annotations(annotations_path))
        else:
            annotations_path = Path(values["annotations"]) if values["annotations"] else None
            detector_backend = RemoteDetectorBackend(
                client, confidence_threshold=run_config.detector.confidence_threshold
            )
        inpaint_backend = MockInpaintBackend() if values["backend"] == "mock" \
            else RemoteInpaintBackend(client)
        backends = PipelineBackends(detector=detector_backend, inpaint=inpaint_backend)
    except (CliError, AnonybodyError) as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))

    try:
        summary = anonymize_dataset(
            Path(input_path), Path(output_dir), run_config, backends,
            annotations_path=annotations_path, resume=resume,
        )
    except OutputCollisionError as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))
    except AnonybodyError as exc:
        sys.exit(_fail(str(exc), EXIT_RUNTIME))
    finally:
        if client is not None:
            client.close()

    grids = _collect_grids(Path(input_path), Path(output_dir), int(values["grid_pairs"]))
    emit_report(summary, None, Path(output_dir), grids=grids)
    click.echo(
        f"processed {summary.processed}, skipped {summary.skipped}, failed {summary.failed}; "
        f"{summary.instances_anonymized} instances anonymized in {summary.wall_time_s:.2f}s"
    )
    if summary.failed:
        sys.exit(_fail(f"{summary.failed} images failed; see run_summary.json", EXIT_RUNTIME))


def _collect_grids(input_path: Path, output_dir: Path, pairs: int):
    if pairs < 1:
        return None
    inputs = list_images(input_path) if input_path.is_dir() else [input_path]
    collected = []
    for path in inputs:
        out_path = output_dir / "images" / f"{path.stem}.png"
        if out_path.exists():
            collected.append((read_image(path), read_image(out_path)))
        if len(collected) >= pairs:
            break
    if not collected:
        return None
    return [("comparison", comparison_grid(collected))]


def _extract_directory(directory: Path, extractor) -> tuple[np.ndarray, np.ndarray]:
    paths = list_images(directory)
    if not paths:
        raise CliError(f"no readable images in {directory}")
    probs = []
    features = []
    for path in paths:
        p, f = extractor.extract(read_image(path))
        probs.append(p)
        features.append(f)
    return np.stack(probs), np.stack(features)


@main.command("evaluate")
@click.option("--metric", type=click.Choice(["is", "fid", "both"]), default="both",
              show_default=True, help="Which metric(s) to compute.")
@click.option("--real", "real_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory of reference images.")
@click.option("--generated", "generated_dir", type=click.Path(exists=True, file_okay=False),
              required=True, help="Directory of generated/anonymized images.")
@click.option("--extractor", type=click.Choice(["toy", "remote"]), default="toy",
              show_default=True, help="Prediction/feature extractor.")
@click.option("--endpoint", envvar="ANONYBODY_ENDPOINT", default=None,
              help="Bridge endpoint for the remote extractor.")
@click.option("--splits", type=int, default=10, show_default=True,
              help="Inception Score split count.")
@click.option("--report", "report_dir", type=click.Path(), default="report",
              show_default=True, help="Directory for the metric report bundle.")
@click.option("--label", default=None, help="Method label for the report row.")
def cmd_evaluate(metric, real_dir, generated_dir, extractor, endpoint, splits,
                 report_dir, label) -> None:
    """Score generated images with IS and/or FID against a reference set."""
    client = None
    try:
        if extractor == "remote":
            if not endpoint:
                raise CliError("--extractor remote needs --endpoint (or ANONYBODY_ENDPOINT)")
            client = BridgeClient(endpoint)
        extractor_impl = ToyExtractor() if extractor == "toy" else RemoteExtractor(client)
        real_paths = list_images(Path(real_dir))
        generated_paths = list_images(Path(generated_dir))
        if not real_paths:
            raise CliError(f"no readable images in {real_dir}")
        if not generated_paths:
            raise CliError(f"no readable images in {generated_dir}")
        if splits < 1 or splits > len(generated_paths):
            raise CliError(f"--splits must lie in [1, {len(generated_paths)}]")
    except (CliError, AnonybodyError) as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))

    try:
        if client is not None:
            client.connect()
        gen_preds, gen_features = _extract_directory(Path(generated_dir), extractor_impl)
        is_mean = is_std = float("nan")
        fid_value: float | None = None
        if metric in ("is", "both"):
            is_mean, is_std = inception_score(gen_preds, splits=splits)
        if metric in ("fid", "both"):
            _, real_features = _extract_directory(Path(real_dir), extractor_impl)
            fid_value = fid(moments_from_features(real_features),
                            moments_from_features(gen_features))
    except TransportError as exc:
        sys.exit(_fail(f"extractor unreachable after retries: {exc}", EXIT_RUNTIME))
    except (CliError, AnonybodyError) as exc:
        sys.exit(_fail(str(exc), EXIT_CONFIG))
    finally:
        if client is not None:
            client.close()

    row = MetricsRow(
        method=label or Path(generated_dir).name,
        is_mean=is_mean,
        is_std=is_std,
        fid=fid_value,
    )
    summary = RunSummary(config_digest="evaluate", processed=len(generated_paths))
    emit_report(summary, [row], Path(report_dir))
    if metric in ("is", "both"):
        click.echo(f"IS: {is_mean:.4f} +/- {is_std:.4f}")
    if metric in ("fid", "both"):
        click.echo(f"FID: {fid_value:.6f}")
    click.echo(f"report written to {report_dir}")


if __name__ == "__main__":
    main()
