"""Inpainting backend contract: start-index math, mixing semantics, batching.

A backend regenerates the masked part of a crop. How much of the original
survives is controlled by the denoise strength: the generator's chain of
``total_steps`` states is entered at index ``floor(strength * total_steps)``
and the original pixels are mixed in by a factor of ``1 - strength``. The
deterministic mock below implements exactly that mixing contract with a
documented noise source (see :mod:`anonybody.seeds`), which is all the
pipeline needs for bit-reproducible tests; a real generator lives behind
the bridge protocol and honors the same envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from .cropping import InstanceCrop
from .errors import BatchDispatchError, InvalidArgumentError
from .raster import RasterImage
from .seeds import noise_field

DEFAULT_POSITIVE_PROMPT = (
    "RAW photo, subject, 8k uhd, dslr, soft lighting, high quality, "
    "film grain, Fujifilm XT3"
)
DEFAULT_NEGATIVE_PROMPT = (
    "deformed iris, deformed pupils, semi-realistic, cgi, 3d, render, "
    "sketch, cartoon, drawing, anime), text, cropped, out of frame, "
    "worst quality, low quality, jpeg artifacts, ugly, duplicate, morbid, "
    "mutilated, extra fingers, mutated hands, poorly drawn hands, poorly "
    "drawn face, mutation, deformed, blurry, dehydrated, bad anatomy, bad "
    "proportions, extra limbs, cloned face, disfigured, gross proportions, "
    "malformed limbs, missing arms, missing legs, extra arms, extra legs, "
    "fused fingers, too many fingers, long neck"
)


@dataclass(frozen=True)
class DiffusionParams:
    total_steps: int = 50
    denoise_strength: float = 0.6
    positive_prompt: str = DEFAULT_POSITIVE_PROMPT
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT
    resolution: int = 768
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidArgumentError("total_steps must be >= 1")
        if not 0.0 <= self.denoise_strength <= 1.0:
            raise InvalidArgumentError("denoise_strength must lie in [0, 1]")
        if self.resolution < 1:
            raise InvalidArgumentError("resolution must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be an unsigned 64-bit value")


@dataclass(frozen=True)
class InpaintRequest:
    crop: InstanceCrop
    params: DiffusionParams

    def __post_init__(self):
        if self.crop.resolution != self.params.resolution:
            raise InvalidArgumentError(
                f"crop side {self.crop.resolution} does not match params resolution "
                f"{self.params.resolution}"
            )


def start_index(denoise_strength: float, total_steps: int) -> int:
    """Chain entry index: floor(strength * total_steps), exact.

    The strength is interpreted as the decimal number it prints as, and
    the floor is taken in rational arithmetic, so 0.6 of 50 steps is 30
    even though the binary float 0.6 is fractionally below six tenths.
    """
    if not 0.0 <= denoise_strength <= 1.0:
        raise InvalidArgumentError("denoise_strength must lie in [0, 1]")
    if total_steps < 1:
        raise InvalidArgumentError("total_steps must be >= 1")
    return math.floor(Fraction(str(denoise_strength)) * total_steps)


class InpaintBackend(Protocol):
    """Anything that can anonymize a batch of crops."""

    def inpaint_batch(self, requests: Sequence[InpaintRequest]) -> list[RasterImage]:
        ...


def mock_inpaint(request: InpaintRequest) -> RasterImage:
    """Deterministic stand-in honoring the mixing contract.

    Outside the mask the input is returned bit-exact. Inside, each pixel
    becomes ``(1 - s) * input + s * noise(seed, x, y)`` with ``s`` the
    denoise strength and ``noise`` the documented splitmix64 field, the
    same value for all three channels.
    """
    crop = request.crop
    strength = request.params.denoise_strength
    if strength == 0.0:
        return crop.pixels
    mask = crop.mask.bits
    if not mask.any():
        return crop.pixels
    g = noise_field(request.params.seed, crop.mask.width, crop.mask.height)
    src = crop.pixels.data.astype(np.float64)
    mixed = (1.0 - strength) * src + strength * g[:, :, None]
    out = crop.pixels.mutable_copy()
    out[mask] = np.clip(mixed, 0.0, 1.0).astype(np.float32)[mask]
    return RasterImage(out)


@dataclass
class MockInpaintBackend:
    """Local, pure backend running :func:`mock_inpaint`.

    ``calls`` records the size of every dispatched batch, which module
    tests use to assert chunking behavior.
    """

    calls: list[int] = field(default_factory=list)

    def inpaint_batch(self, requests: Sequence[InpaintRequest]) -> list[RasterImage]:
        self.calls.append(len(requests))
        return [mock_inpaint(r) for r in requests]


def batch_inpaint(requests: Sequence[InpaintRequest], backend: InpaintBackend,
                  max_batch: int = 4) -> list[RasterImage]:
    """Dispatch requests in chunks of at most ``max_batch``.

    Results align positionally with the requests no matter how the backend
    batches internally. If any member fails, the members of the failing
    chunk are retried one by one so failures are attributed precisely, and
    a ``BatchDispatchError`` carrying both failures and successes is raised.
    """
    if max_batch < 1:
        raise InvalidArgumentError("max_batch must be >= 1")
    results: dict[int, RasterImage] = {}
    failures: dict[int, Exception] = {}
    for lo in range(0, len(requests), max_batch):
        chunk = list(requests[lo:lo + max_batch])
        try:
            outputs = backend.inpaint_batch(chunk)
            if len(outputs) != len(chunk):
                raise InvalidArgumentError(
                    f"backend returned {len(outputs)} results for {len(chunk)} requests"
                )
            for offset, image in enumerate(outputs):
                results[lo + offset] = image
        except Exception:
            for offset, single in enumerate(chunk):
                try:
                    (single_out,) = backend.inpaint_batch([single])
                    results[lo + offset] = single_out
                except Exception as exc:  # noqa: BLE001 - attributed per member
                    failures[lo + offset] = exc
    if failures:
        raise BatchDispatchError(failures, results)
    return [results[i] for i in range(len(requests))]
