"""Cross-language conformance: the TypeScript sidecar behind the same suite.

Skipped when node or the built sidecar (bridge-server/dist) is missing;
``npm test`` inside bridge-server/ builds it.
"""

from __future__ import annotations

import re
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from anonybody.bridge import BridgeClient, MockBridgeServer
from anonybody.conformance import conformance_suite
from anonybody.generative import DiffusionParams
from anonybody.raster import BinaryMask, from_uint8, to_uint8

SERVER_ENTRY = Path(__file__).resolve().parent.parent / "bridge-server" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SERVER_ENTRY.exists(),
    reason="node or the built bridge-server is unavailable",
)


@pytest.fixture(scope="module")
def ts_endpoint():
    proc = subprocess.Popen(
        ["node", str(SERVER_ENTRY), "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stdout.readline()
        match = re.search(r"listening on ([\d.]+:\d+)", line)
        assert match, f"sidecar did not report an endpoint: {line!r}"
        yield match.group(1)
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_sidecar_passes_full_conformance(ts_endpoint):
    report = conformance_suite(ts_endpoint)
    print(report.render())
    assert report.passed, report.render()


def test_sidecar_matches_reference_mixing_bytes(ts_endpoint):
    """Same request, same bytes: the pinned noise contract holds across languages."""
    rng = np.random.default_rng(5)
    image = from_uint8(rng.integers(0, 256, (24, 24, 3), dtype=np.uint8))
    bits = np.zeros((24, 24), dtype=bool)
    bits[4:20, 4:20] = True
    mask = BinaryMask(bits)
    params = DiffusionParams(denoise_strength=0.7, resolution=24, seed=2**63 + 999)

    with BridgeClient(ts_endpoint) as ts_client:
        ts_result = ts_client.inpaint(image, mask, params)
    with MockBridgeServer() as reference, BridgeClient(reference.endpoint) as py_client:
        py_result = py_client.inpaint(image, mask, params)
    assert np.array_equal(to_uint8(ts_result), to_uint8(py_result))


def test_sidecar_detect_matches_reference(ts_endpoint):
    blob = np.zeros((24, 24, 3), dtype=np.uint8)
    blob[6:18, 6:18] = 230
    image = from_uint8(blob)
    with BridgeClient(ts_endpoint) as ts_client:
        ts_detections = ts_client.detect(image, 0.4)
    with MockBridgeServer() as reference, BridgeClient(reference.endpoint) as py_client:
        py_detections = py_client.detect(image, 0.4)
    assert len(ts_detections) == len(py_detections) == 1
    assert ts_detections[0].box == py_detections[0].box
    assert np.array_equal(ts_detections[0].mask.bits, py_detections[0].mask.bits)


def test_sidecar_usable_as_pipeline_backend(ts_endpoint, tmp_path):
    """Drive the real pipeline through the sidecar end to end."""
    from anonybody.bridge import RemoteInpaintBackend
    from anonybody.dataset_io import load_annotations
    from anonybody.detection import OracleDetectorBackend
    from anonybody.pipeline import AnonymizationConfig, PipelineBackends, anonymize_dataset

    from conftest import write_dataset

    rng = np.random.default_rng(77)
    input_dir, annotations_path = write_dataset(tmp_path, rng, 3, image_size=48, side=16)
    config = AnonymizationConfig(
        method="fadm",
        diffusion=DiffusionParams(denoise_strength=0.6, resolution=16),
        context_factor=0.0, mask_dilation=1,
        backend_label=f"remote:{ts_endpoint}",
    )
    with BridgeClient(ts_endpoint) as client:
        backends = PipelineBackends(
            detector=OracleDetectorBackend(load_annotations(annotations_path)),
            inpaint=RemoteInpaintBackend(client),
        )
        summary = anonymize_dataset(input_dir, tmp_path / "out", config, backends,
                                    annotations_path=annotations_path)
    assert summary.processed == 3
    assert summary.failed == 0
