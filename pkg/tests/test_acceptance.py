"""Acceptance suite: one test per shipping criterion, at pinned tolerances.

Each test prints a single ``[ACCEPTANCE] <criterion>: PASS|FAIL`` line
(visible with ``pytest tests/test_acceptance.py -v -s``) and then asserts.
Everything here runs on synthetic desk-scale fixtures with the
deterministic mock backend; nothing requires a GPU or pretrained weights.
"""

from __future__ import annotations

import hashlib
from fractions import Fraction

import numpy as np

from anonybody.classical import ClassicalParams, apply_classical
from anonybody.compositor import recursive_stitch
from anonybody.dataset_io import load_annotations, parse_annotations
from anonybody.detection import DetectorConfig, OracleDetectorBackend, detect
from anonybody.generative import (
    DiffusionParams,
    MockInpaintBackend,
    mock_inpaint,
    start_index,
)
from anonybody.metrics import FeatureMoments, fid, inception_score, moments_from_features
from anonybody.pipeline import AnonymizationConfig, PipelineBackends, anonymize_dataset, anonymize_image
from anonybody.raster import dilate

from conftest import (
    make_image,
    make_layer,
    make_mask,
    random_square_scene,
    serial_merge_oracle,
    square_person_fixture,
    write_dataset,
)
from test_generative import request_for


def report(criterion: str, passed: bool) -> None:
    print(f"[ACCEPTANCE] {criterion}: {'PASS' if passed else 'FAIL'}")
    assert passed, criterion


def backends_for(payload: dict) -> PipelineBackends:
    return PipelineBackends(detector=OracleDetectorBackend(parse_annotations(payload)),
                            inpaint=MockInpaintBackend())


def test_identity_pipeline():
    """fadm + mock at zero strength, unit geometry: bit-identical output."""
    side = 24
    image_size = 96
    ok = True
    for index in range(20):
        rng = np.random.default_rng(1000 + index)
        image = make_image(rng, image_size, image_size)
        squares = random_square_scene(rng, image_size, int(rng.integers(1, 4)), side)
        payload = square_person_fixture(image_size, squares)
        config = AnonymizationConfig(
            method="fadm",
            diffusion=DiffusionParams(denoise_strength=0.0, resolution=side),
            context_factor=0.0, mask_dilation=0, feather=0,
        )
        out, _ = anonymize_image(image, config, backends_for(payload), image_id="img.png")
        ok = ok and np.array_equal(out.data, image.data)
    report("identity-pipeline", ok)


def test_outside_mask_preservation():
    """Every method leaves pixels outside the dilated mask union bit-exact."""
    ok = True
    for scene in range(100):
        rng = np.random.default_rng(2000 + scene)
        image_size = 48
        image = make_image(rng, image_size, image_size)
        squares = random_square_scene(rng, image_size, int(rng.integers(1, 4)), 12)
        payload = square_person_fixture(image_size, squares)
        dilation = int(rng.integers(0, 4))
        backends = backends_for(payload)
        detections = detect(image, DetectorConfig(), backends.detector, image_id="img.png")
        union = np.zeros((image_size, image_size), dtype=bool)
        for det in detections:
            union |= dilate(det.mask, dilation).bits
        outside = ~union
        for method in ("fadm", "blur", "mask_fill", "pixelize"):
            config = AnonymizationConfig(
                method=method,
                diffusion=DiffusionParams(denoise_strength=0.8, resolution=12,
                                          seed=int(rng.integers(0, 2**63))),
                context_factor=0.0, mask_dilation=dilation, feather=0,
            )
            out, _ = anonymize_image(image, config, backends, image_id="img.png")
            ok = ok and np.array_equal(out.data[outside], image.data[outside])
    report("outside-mask-preservation", ok)


def test_stitching_equivalence():
    """recursive_stitch == serial iterative merge oracle, any shuffle."""
    ok = True
    for scene in range(100):
        rng = np.random.default_rng(3000 + scene)
        base = make_image(rng, 48, 48)
        layers = [make_layer(rng, base, i) for i in range(int(rng.integers(2, 6)))]
        expected = serial_merge_oracle(base, layers)
        for _ in range(5):
            shuffled = list(layers)
            rng.shuffle(shuffled)
            out = recursive_stitch(base, shuffled)
            ok = ok and np.array_equal(out.data, expected)
    report("stitching-equivalence", ok)


def test_determinism_under_parallelism(tmp_path):
    """workers 1/2/4 with a fixed seed produce byte-identical output trees."""
    rng = np.random.default_rng(4242)
    input_dir, annotations_path = write_dataset(tmp_path, rng, 6, image_size=64,
                                                instances=3, side=16)
    annotations = load_annotations(annotations_path)
    hashes = []
    for workers in (1, 2, 4):
        out_dir = tmp_path / f"run_w{workers}"
        config = AnonymizationConfig(
            method="fadm",
            diffusion=DiffusionParams(denoise_strength=0.6, resolution=16),
            context_factor=0.1, mask_dilation=2, workers=workers, global_seed=7,
        )
        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        anonymize_dataset(input_dir, out_dir, config, backends,
                          annotations_path=annotations_path)
        digest = hashlib.sha256()
        for path in sorted((out_dir / "images").glob("*.png")):
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
        digest.update((out_dir / annotations_path.name).read_bytes())
        hashes.append(digest.hexdigest())
    report("determinism-under-parallelism", hashes[0] == hashes[1] == hashes[2])


def test_mock_strength_monotonicity():
    """Masked-region change never decreases as the strength grows."""
    ok = True
    for crop_index in range(20):
        rng = np.random.default_rng(5000 + crop_index)
        side = int(rng.integers(8, 24))
        image = make_image(rng, side, side)
        bits = rng.random((side, side)) < 0.5
        bits[side // 2, side // 2] = True
        previous = -1.0
        for strength in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            out = mock_inpaint(request_for(image, bits, strength, seed=13))
            change = float(np.abs(out.data[bits].astype(np.float64)
                                  - image.data[bits]).mean())
            ok = ok and change >= previous
            previous = change
    report("mock-strength-monotonicity", ok)


def test_fid_oracles():
    rng = np.random.default_rng(6000)
    ok = True

    def random_psd(dim: int) -> np.ndarray:
        root = rng.normal(size=(dim, dim))
        return root @ root.T / dim + np.eye(dim) * 0.1

    # self distance is zero
    for dim in (1, 2, 4, 8):
        moments = FeatureMoments(mean=rng.normal(size=dim), covariance=random_psd(dim))
        ok = ok and abs(fid(moments, moments)) <= 1e-9

    # one-dimensional closed forms
    unit = np.array([[1.0]])
    ok = ok and abs(fid(FeatureMoments(np.array([0.0]), unit),
                        FeatureMoments(np.array([1.0]), unit)) - 1.0) <= 1e-9
    ok = ok and abs(fid(FeatureMoments(np.array([0.0]), unit),
                        FeatureMoments(np.array([0.0]), np.array([[4.0]]))) - 1.0) <= 1e-9

    # symmetry
    for _ in range(20):
        dim = int(rng.integers(1, 9))
        a = FeatureMoments(rng.normal(size=dim), random_psd(dim))
        b = FeatureMoments(rng.normal(size=dim), random_psd(dim))
        ok = ok and abs(fid(a, b) - fid(b, a)) <= 1e-8

    # sampled moments approach the analytic value
    dim = 8
    mean_a = rng.normal(size=dim)
    mean_b = mean_a + rng.normal(size=dim) * 2.0
    cov_a = random_psd(dim)
    cov_b = random_psd(dim)
    analytic = fid(FeatureMoments(mean_a, cov_a), FeatureMoments(mean_b, cov_b))
    estimate = fid(
        moments_from_features(rng.multivariate_normal(mean_a, cov_a, size=10_000)),
        moments_from_features(rng.multivariate_normal(mean_b, cov_b, size=10_000)),
    )
    ok = ok and abs(estimate - analytic) <= 0.05 * analytic
    report("fid-oracles", ok)


def test_is_oracles():
    rng = np.random.default_rng(7000)
    ok = True

    # identical rows score exactly one
    row = rng.random(6)
    row /= row.sum()
    mean, std = inception_score(np.tile(row, (30, 1)), splits=3)
    ok = ok and abs(mean - 1.0) <= 1e-9 and abs(std) <= 1e-9

    # balanced one-hot matrices score the class count
    for classes in (2, 10, 100):
        preds = np.zeros((classes * 3, classes))
        for i in range(preds.shape[0]):
            preds[i, i % classes] = 1.0
        mean, _ = inception_score(preds, splits=1)
        ok = ok and abs(mean - classes) <= 1e-6

    # bounds hold on 1000 random matrices
    for _ in range(1000):
        classes = int(rng.integers(2, 11))
        n = int(rng.integers(2, 33))
        raw = rng.random((n, classes)) + 1e-9
        preds = raw / raw.sum(axis=1, keepdims=True)
        mean, _ = inception_score(preds, splits=int(rng.integers(1, n + 1)))
        ok = ok and (1.0 - 1e-9) <= mean <= classes + 1e-9
    report("is-oracles", ok)


def test_classical_baselines():
    ok = True
    for trial in range(25):
        rng = np.random.default_rng(8000 + trial)
        image = make_image(rng, 24, 24)
        mask = make_mask(rng, 24, 24, density=0.35)
        outside = ~mask.bits

        fill = ClassicalParams(method="mask_fill", fill_value=(0.1, 0.6, 0.9))
        filled = apply_classical(image, mask, fill)
        expected = np.array([0.1, 0.6, 0.9], dtype=np.float32)
        ok = ok and np.array_equal(filled.data[mask.bits],
                                   np.tile(expected, (mask.coverage, 1)))
        ok = ok and np.array_equal(apply_classical(filled, mask, fill).data, filled.data)

        pix = ClassicalParams(method="pixelize", block_size=5)
        pixelized = apply_classical(image, mask, pix)
        ok = ok and np.array_equal(apply_classical(pixelized, mask, pix).data,
                                   pixelized.data)
        for by in range(0, 24, 5):
            for bx in range(0, 24, 5):
                block_mask = mask.bits[by:by + 5, bx:bx + 5]
                if block_mask.any():
                    values = pixelized.data[by:by + 5, bx:bx + 5][block_mask]
                    ok = ok and bool(np.all(values == values[0]))

        blurred = apply_classical(image, mask, ClassicalParams(method="blur", blur_sigma=2.0))
        for result in (filled, pixelized, blurred):
            ok = ok and np.array_equal(result.data[outside], image.data[outside])
    report("classical-baselines", ok)


def test_start_index_sweep():
    """10^4 (strength, steps) pairs against exact rational arithmetic."""
    rng = np.random.default_rng(9000)
    ok = True
    pairs = 0
    while pairs < 10_000:
        numerator = int(rng.integers(0, 10_001))
        steps = int(rng.integers(1, 1001))
        expected = int(Fraction(numerator, 10_000) * steps // 1)
        ok = ok and start_index(numerator / 10_000, steps) == expected
        pairs += 1
    report("start-index-floor-sweep", ok)


def test_dataset_pass_through(tmp_path):
    """Annotations copy byte-identically; resume reprocesses only gaps."""
    rng = np.random.default_rng(10_000)
    input_dir, annotations_path = write_dataset(tmp_path, rng, 10)
    annotations = load_annotations(annotations_path)
    config = AnonymizationConfig(
        method="fadm",
        diffusion=DiffusionParams(denoise_strength=0.4, resolution=16),
        context_factor=0.0, mask_dilation=1,
    )
    out_dir = tmp_path / "out"
    backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                inpaint=MockInpaintBackend())
    first = anonymize_dataset(input_dir, out_dir, config, backends,
                              annotations_path=annotations_path)
    ok = first.processed == 10
    ok = ok and (out_dir / annotations_path.name).read_bytes() == annotations_path.read_bytes()

    missing = ("img_002.png", "img_005.png", "img_009.png")
    for name in missing:
        (out_dir / "images" / name).unlink()
    second = anonymize_dataset(input_dir, out_dir, config, backends,
                               annotations_path=annotations_path, resume=True)
    ok = ok and second.processed == len(missing) and second.skipped == 10 - len(missing)
    ok = ok and all((out_dir / "images" / name).exists() for name in missing)
    report("dataset-pass-through", ok)


def test_bridge_conformance_mock_server():
    """[secondary criterion, mock half] the reference server passes the suite."""
    from anonybody.bridge import MockBridgeServer
    from anonybody.conformance import conformance_suite

    with MockBridgeServer() as server:
        suite = conformance_suite(server.endpoint)
    print(suite.render())
    report("bridge-conformance-mock-server", suite.passed)
