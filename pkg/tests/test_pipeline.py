"""Orchestration: identity path, determinism, fallback, dataset runs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from anonybody.dataset_io import load_annotations, read_image
from anonybody.detection import DetectorConfig, OracleDetectorBackend
from anonybody.errors import BackendError, OutputCollisionError
from anonybody.generative import DiffusionParams, MockInpaintBackend
from anonybody.pipeline import (
    AnonymizationConfig,
    PipelineBackends,
    anonymize_dataset,
    anonymize_image,
    config_digest,
)
from anonybody.raster import dilate
from anonybody.seeds import instance_seed

from conftest import make_image, square_person_fixture, write_dataset


def identity_config(resolution: int, workers: int = 1, **overrides) -> AnonymizationConfig:
    defaults = dict(
        method="fadm",
        diffusion=DiffusionParams(denoise_strength=0.0, resolution=resolution),
        detector=DetectorConfig(),
        context_factor=0.0,
        mask_dilation=0,
        feather=0,
        workers=workers,
    )
    defaults.update(overrides)
    return AnonymizationConfig(**defaults)


def oracle_backends(payload: dict) -> PipelineBackends:
    from anonybody.dataset_io import parse_annotations

    return PipelineBackends(
        detector=OracleDetectorBackend(parse_annotations(payload)),
        inpaint=MockInpaintBackend(),
    )


class TestAnonymizeImage:
    def test_zero_persons_identity(self, rng):
        payload = square_person_fixture(32, [])
        image = make_image(rng, 32, 32)
        out, report = anonymize_image(image, identity_config(16), oracle_backends(payload),
                                      image_id="img.png")
        assert np.array_equal(out.data, image.data)
        assert report.instances == []

    def test_identity_composition(self, rng):
        payload = square_person_fixture(48, [(4, 4, 16), (20, 20, 16)])
        image = make_image(rng, 48, 48)
        out, report = anonymize_image(image, identity_config(16), oracle_backends(payload),
                                      image_id="img.png")
        assert np.array_equal(out.data, image.data)
        assert len(report.instances) == 2

    def test_nonzero_strength_changes_masked_only(self, rng):
        payload = square_person_fixture(48, [(8, 8, 20)])
        image = make_image(rng, 48, 48)
        config = identity_config(20, mask_dilation=2)
        config = AnonymizationConfig(**{**config.__dict__,
                                        "diffusion": DiffusionParams(denoise_strength=0.7,
                                                                     resolution=20)})
        backends = oracle_backends(payload)
        out, _ = anonymize_image(image, config, backends, image_id="img.png")
        from anonybody.detection import detect

        det = detect(image, config.detector, backends.detector, image_id="img.png")[0]
        outside = ~dilate(det.mask, 2).bits
        assert np.array_equal(out.data[outside], image.data[outside])
        assert not np.array_equal(out.data, image.data)

    def test_worker_invariance(self, rng):
        payload = square_person_fixture(64, [(2, 2, 20), (30, 30, 20), (12, 36, 20)])
        image = make_image(rng, 64, 64)
        outputs = []
        for workers in (1, 2, 4):
            config = identity_config(20, workers=workers,
                                     diffusion=DiffusionParams(denoise_strength=0.6,
                                                               resolution=20))
            out, _ = anonymize_image(image, config, oracle_backends(payload),
                                     image_id="img.png")
            outputs.append(out.data)
        assert np.array_equal(outputs[0], outputs[1])
        assert np.array_equal(outputs[0], outputs[2])

    @pytest.mark.parametrize("method", ["blur", "mask_fill", "pixelize"])
    def test_classical_methods_outside_mask_preserved(self, rng, method):
        payload = square_person_fixture(40, [(4, 4, 12), (20, 20, 12)])
        image = make_image(rng, 40, 40)
        config = identity_config(12, method=method, mask_dilation=3)
        backends = oracle_backends(payload)
        out, report = anonymize_image(image, config, backends, image_id="img.png")
        union = np.zeros((40, 40), dtype=bool)
        from anonybody.detection import detect

        for det in detect(image, config.detector, backends.detector, image_id="img.png"):
            union |= dilate(det.mask, 3).bits
        assert np.array_equal(out.data[~union], image.data[~union])
        assert not np.array_equal(out.data[union], image.data[union])
        assert len(report.instances) == 2

    def test_per_instance_seeds_distinct(self, rng):
        for _ in range(200):
            image_id = f"img_{rng.integers(0, 10**9)}.png"
            global_seed = int(rng.integers(0, 2**63))
            count = int(rng.integers(2, 65))
            seeds = [instance_seed(global_seed, image_id, i) for i in range(count)]
            assert len(set(seeds)) == count

    def test_report_records_seeds(self, rng):
        payload = square_person_fixture(48, [(4, 4, 16), (24, 24, 16)])
        image = make_image(rng, 48, 48)
        config = identity_config(16, global_seed=77)
        _, report = anonymize_image(image, config, oracle_backends(payload),
                                    image_id="img.png")
        recorded = [r.seed for r in report.instances]
        assert recorded == [instance_seed(77, "img.png", 0), instance_seed(77, "img.png", 1)]


class ExplodingBackend(MockInpaintBackend):
    def __init__(self, explode_indices: set[int]):
        super().__init__()
        self.explode_indices = explode_indices
        self.counter = -1

    def inpaint_batch(self, requests):
        # single-request retries re-enter here; track request identity by seed
        if any(r.params.seed % 1000 in self.explode_indices for r in requests):
            raise RuntimeError("backend exploded")
        return super().inpaint_batch(requests)


class TestFallbackPolicy:
    def _setup(self, rng):
        payload = square_person_fixture(48, [(4, 4, 16), (24, 24, 16)])
        image = make_image(rng, 48, 48)
        return payload, image

    def test_fallback_fills_failed_instance(self, rng):
        payload, image = self._setup(rng)
        backends = oracle_backends(payload)
        seed0 = instance_seed(0, "img.png", 0)
        backends.inpaint = ExplodingBackend({seed0 % 1000})
        config = identity_config(16, on_backend_failure="fallback", max_batch=1)
        out, report = anonymize_image(image, config, backends, image_id="img.png")
        assert report.failure_notes
        assert "mask_fill" in report.failure_notes[0]
        # failed instance got the fill value, the other one stayed identity
        assert np.all(out.data[8, 8] == np.float32(0.5))

    def test_fail_policy_raises(self, rng):
        payload, image = self._setup(rng)
        backends = oracle_backends(payload)
        backends.inpaint = ExplodingBackend({instance_seed(0, "img.png", 0) % 1000})
        config = identity_config(16, on_backend_failure="fail", max_batch=1)
        with pytest.raises(BackendError):
            anonymize_image(image, config, backends, image_id="img.png")


class TestConfigDigest:
    def test_stable_and_sensitive(self):
        a = identity_config(16)
        b = identity_config(16)
        c = identity_config(16, global_seed=1)
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest(c)

    def test_workers_excluded(self):
        assert config_digest(identity_config(16, workers=1)) == \
            config_digest(identity_config(16, workers=8))


def tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestAnonymizeDataset:
    def test_empty_dataset(self, tmp_path, rng):
        input_dir = tmp_path / "empty"
        input_dir.mkdir()
        backends = oracle_backends(square_person_fixture(8, []))
        summary = anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends)
        assert summary.total_inputs == 0
        assert not list((tmp_path / "out" / "images").iterdir())

    def test_every_image_produces_one_output(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 5)
        backends = PipelineBackends(
            detector=OracleDetectorBackend(load_annotations(annotations_path)),
            inpaint=MockInpaintBackend(),
        )
        config = identity_config(16, diffusion=DiffusionParams(denoise_strength=0.5,
                                                               resolution=16))
        summary = anonymize_dataset(input_dir, tmp_path / "out", config, backends,
                                    annotations_path=annotations_path)
        assert summary.processed == 5
        produced = sorted(p.name for p in (tmp_path / "out" / "images").iterdir())
        expected = sorted(p.stem + ".png" for p in input_dir.iterdir())
        assert produced == expected
        for path in input_dir.iterdir():
            out = read_image(tmp_path / "out" / "images" / f"{path.stem}.png")
            src = read_image(path)
            assert (out.width, out.height) == (src.width, src.height)

    def test_annotations_copied_byte_identical(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 3)
        backends = PipelineBackends(
            detector=OracleDetectorBackend(load_annotations(annotations_path)),
            inpaint=MockInpaintBackend(),
        )
        anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends,
                          annotations_path=annotations_path)
        copied = tmp_path / "out" / annotations_path.name
        assert copied.read_bytes() == annotations_path.read_bytes()

    def test_resume_reprocesses_exactly_missing(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 10)
        annotations = load_annotations(annotations_path)
        config = identity_config(16)
        out_dir = tmp_path / "out"

        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        first = anonymize_dataset(input_dir, out_dir, config, backends)
        assert first.processed == 10

        for name in ("img_001.png", "img_004.png", "img_007.png"):
            (out_dir / "images" / name).unlink()
        second = anonymize_dataset(input_dir, out_dir, config, backends, resume=True)
        assert second.processed == 3
        assert second.skipped == 7

    def test_resume_reprocesses_on_config_change(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 4)
        annotations = load_annotations(annotations_path)
        out_dir = tmp_path / "out"
        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        anonymize_dataset(input_dir, out_dir, identity_config(16), backends)
        changed = identity_config(16, global_seed=9)
        summary = anonymize_dataset(input_dir, out_dir, changed, backends, resume=True)
        assert summary.processed == 4

    def test_collision_without_resume_refused(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 2)
        annotations = load_annotations(annotations_path)
        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends)
        with pytest.raises(OutputCollisionError):
            anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends)

    def test_unreadable_image_skipped_and_counted(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 2)
        (input_dir / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\ngarbage")
        annotations = load_annotations(annotations_path)
        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        summary = anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends)
        assert summary.processed == 2
        assert summary.skipped == 1
        assert summary.total_inputs == 3

    def test_worker_count_invariance_tree_hash(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 4, instances=3)
        annotations = load_annotations(annotations_path)
        hashes = []
        for workers in (1, 2, 4):
            out_dir = tmp_path / f"out_w{workers}"
            backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                        inpaint=MockInpaintBackend())
            config = identity_config(
                16, workers=workers,
                diffusion=DiffusionParams(denoise_strength=0.6, resolution=16),
            )
            anonymize_dataset(input_dir, out_dir, config, backends,
                              annotations_path=annotations_path)
            payload_hash = hashlib.sha256()
            payload_hash.update(tree_hash(out_dir / "images").encode())
            payload_hash.update((out_dir / annotations_path.name).read_bytes())
            hashes.append(payload_hash.hexdigest())
        assert hashes[0] == hashes[1] == hashes[2]

    def test_run_summary_written(self, tmp_path, rng):
        input_dir, annotations_path = write_dataset(tmp_path, rng, 2)
        annotations = load_annotations(annotations_path)
        backends = PipelineBackends(detector=OracleDetectorBackend(annotations),
                                    inpaint=MockInpaintBackend())
        summary = anonymize_dataset(input_dir, tmp_path / "out", identity_config(16), backends)
        payload = json.loads((tmp_path / "out" / "run_summary.json").read_text())
        assert payload["counts"]["processed"] == summary.processed == 2
        assert payload["config_digest"] == config_digest(identity_config(16))
