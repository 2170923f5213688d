"""Wire protocol for out-of-process model backends, plus a mock server.

Transport: newline-delimited JSON over a local TCP socket; images travel
as base64-encoded PNG so they survive the trip bit-exact. One JSON object
per line, UTF-8, ``\\n`` terminated.

Request::

    {"op": "handshake" | "detect" | "inpaint" | "extract",
     "request_id": <int>,
     "image": "<base64 PNG, RGB>",          # detect / inpaint / extract
     "mask": "<base64 PNG, grayscale>",     # inpaint only
     "params": {...}}                        # operation-specific

Response::

    {"request_id": <int or null>,
     "status": "ok" | "error",
     "payload": {...} | {"message": "<detail>"},
     "timing_ms": <float>}

The handshake advertises capabilities: supported ops, maximum in-flight
requests, maximum batch size, and the resolution set (empty list = no
constraint). Request ids are caller-chosen, unique per connection, and
echoed verbatim; responses may arrive out of order up to the in-flight
limit. A server answers a malformed line with ``request_id: null`` and
keeps the connection open; a line longer than the advertised limit closes
it after an error response.

Seeds are 64-bit and travel as decimal strings (JSON numbers lose
integer precision past 2^53 in some languages); servers accept either a
string or a plain integer.

The mock server implements the documented synthetic semantics (the same
mixing contract and noise source as the local mock backend), so any other
protocol implementation can be validated against it bit for bit.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import logging
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .dataset_io import image_to_png_bytes, png_bytes_to_image
from .detection import InstanceDetection, tight_box
from .errors import (
    BackendError,
    CorruptFileError,
    InvalidArgumentError,
    ProtocolError,
    TransportError,
)
from .generative import DiffusionParams, InpaintRequest
from .metrics import toy_extractor
from .raster import BinaryMask, RasterImage
from .seeds import noise_field

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "1"
OPS = ("handshake", "detect", "inpaint", "extract")
MAX_LINE_BYTES = 32 * 1024 * 1024
MOCK_DETECT_CONFIDENCE = 0.9
# synthetic "person" = pixels whose channel-byte sum exceeds this (mean > 0.5),
# an integer rule so every implementation agrees exactly
MOCK_DETECT_BYTE_SUM = 382


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buffer, format="PNG")
    return buffer.getvalue()


def png_bytes_to_mask(data: bytes) -> BinaryMask:
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise CorruptFileError(f"could not decode mask PNG: {exc}") from exc
    return BinaryMask(arr >= 128)


def _b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _b64decode(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise CorruptFileError(f"invalid base64 payload: {exc}") from exc


@dataclass(frozen=True)
class BridgeCapabilities:
    protocol_version: str
    profile: str
    ops: tuple[str, ...]
    max_in_flight: int
    max_batch: int
    resolutions: tuple[int, ...]

    @classmethod
    def from_payload(cls, payload: dict) -> "BridgeCapabilities":
        try:
            return cls(
                protocol_version=str(payload["protocol_version"]),
                profile=str(payload["profile"]),
                ops=tuple(payload["ops"]),
                max_in_flight=int(payload["max_in_flight"]),
                max_batch=int(payload["max_batch"]),
                resolutions=tuple(int(r) for r in payload.get("resolutions", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed handshake payload: {exc}") from exc


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise InvalidArgumentError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class BridgeClient:
    """Synchronous client with id correlation and capability handshake."""

    def __init__(self, endpoint: str, timeout: float = 30.0, connect_retries: int = 3):
        self._endpoint = endpoint
        self._host, self._port = _parse_endpoint(endpoint)
        self._timeout = timeout
        self._connect_retries = connect_retries
        self._sock: socket.socket | None = None
        self._rfile = None
        self._next_id = 0
        self._stash: dict[int, dict] = {}
        self._lock = threading.Lock()
        self.capabilities: BridgeCapabilities | None = None

    @property
    def endpoint(self) -> str:
        return self._endpoint

    def __enter__(self) -> "BridgeClient":
        self.connect()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def connect(self) -> BridgeCapabilities:
        if self._sock is not None and self.capabilities is not None:
            return self.capabilities
        last_error: Exception | None = None
        for attempt in range(self._connect_retries):
            try:
                self._sock = socket.create_connection((self._host, self._port),
                                                      timeout=self._timeout)
                self._rfile = self._sock.makefile("rb")
                break
            except OSError as exc:
                last_error = exc
                self._sock = None
                time.sleep(0.1 * (attempt + 1))
        if self._sock is None:
            raise TransportError(f"cannot connect: {last_error}", self._endpoint)
        payload = self.call("handshake", {})
        self.capabilities = BridgeCapabilities.from_payload(payload)
        if self.capabilities.protocol_version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"server speaks protocol {self.capabilities.protocol_version!r}, "
                f"client needs {PROTOCOL_VERSION!r}"
            )
        return self.capabilities

    def close(self) -> None:
        if self._rfile is not None:
            try:
                self._rfile.close()
            except OSError:
                pass
            self._rfile = None
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
        self.capabilities = None
        self._stash.clear()

    def _abort(self, message: str) -> TransportError:
        self.close()
        return TransportError(message, self._endpoint)

    def _send_line(self, request: dict) -> None:
        data = json.dumps(request, separators=(",", ":")).encode("utf-8") + b"\n"
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise self._abort(f"send failed: {exc}") from exc

    def _read_response(self) -> dict:
        try:
            line = self._rfile.readline(MAX_LINE_BYTES + 1)
        except OSError as exc:
            raise self._abort(f"receive failed: {exc}") from exc
        if not line:
            raise self._abort("connection closed by server")
        try:
            response = json.loads(line.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"response is not valid JSON: {exc}") from exc
        if not isinstance(response, dict) or "status" not in response:
            raise ProtocolError("response object lacks a status field")
        return response

    def _collect(self, request_id: int) -> dict:
        if request_id in self._stash:
            return self._stash.pop(request_id)
        while True:
            response = self._read_response()
            rid = response.get("request_id")
            if rid == request_id:
                return response
            if isinstance(rid, int):
                self._stash[rid] = response
            else:
                raise ProtocolError(f"server answered with unusable request id {rid!r}")

    def _finish(self, response: dict) -> dict:
        if response.get("status") == "ok":
            payload = response.get("payload")
            if not isinstance(payload, dict):
                raise ProtocolError("ok response lacks a payload object")
            return payload
        payload = response.get("payload") or {}
        message = payload.get("message") if isinstance(payload, dict) else None
        raise BackendError(message or "backend reported an unspecified error")

    def call(self, op: str, params: dict, image: bytes | None = None,
             mask: bytes | None = None) -> dict:
        """Send one request and wait for its response. Thread-safe."""
        with self._lock:
            if self._sock is None:
                raise TransportError("client is not connected", self._endpoint)
            self._next_id += 1
            request_id = self._next_id
            request = {"op": op, "request_id": request_id, "params": params}
            if image is not None:
                request["image"] = _b64encode(image)
            if mask is not None:
                request["mask"] = _b64encode(mask)
            self._send_line(request)
            return self._finish(self._collect(request_id))

    def call_many(self, calls: list[tuple[str, dict, bytes | None, bytes | None]]) -> list[dict]:
        """Pipeline several requests, bounded by the advertised in-flight limit."""
        if not calls:
            return []
        limit = self.capabilities.max_in_flight if self.capabilities else 1
        payloads: list[dict | None] = [None] * len(calls)
        with self._lock:
            if self._sock is None:
                raise TransportError("client is not connected", self._endpoint)
            for lo in range(0, len(calls), max(limit, 1)):
                window = calls[lo:lo + max(limit, 1)]
                ids = []
                for op, params, image, mask in window:
                    self._next_id += 1
                    ids.append(self._next_id)
                    request = {"op": op, "request_id": self._next_id, "params": params}
                    if image is not None:
                        request["image"] = _b64encode(image)
                    if mask is not None:
                        request["mask"] = _b64encode(mask)
                    self._send_line(request)
                for offset, request_id in enumerate(ids):
                    payloads[lo + offset] = self._finish(self._collect(request_id))
        return payloads  # type: ignore[return-value]

    # -- operation wrappers -------------------------------------------------

    def inpaint(self, image: RasterImage, mask: BinaryMask, params: DiffusionParams) -> RasterImage:
        payload = self.call("inpaint", _diffusion_wire_params(params),
                            image=image_to_png_bytes(image), mask=mask_to_png_bytes(mask))
        return _decode_inpaint_payload(payload, params.resolution)

    def detect(self, image: RasterImage, confidence_threshold: float) -> list[InstanceDetection]:
        payload = self.call("detect", {"confidence_threshold": confidence_threshold},
                            image=image_to_png_bytes(image))
        return _decode_detect_payload(payload, image.width, image.height)

    def extract(self, image: RasterImage, classes: int, dims: int) -> tuple[np.ndarray, np.ndarray]:
        payload = self.call("extract", {"classes": classes, "dims": dims},
                            image=image_to_png_bytes(image))
        try:
            probs = np.asarray(payload["probabilities"], dtype=np.float64)
            features = np.asarray(payload["features"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed extract payload: {exc}") from exc
        if probs.shape != (classes,) or features.shape != (dims,):
            raise ProtocolError(
                f"extract payload shapes {probs.shape}/{features.shape} do not match "
                f"requested ({classes},)/({dims},)"
            )
        return probs, features


def _diffusion_wire_params(params: DiffusionParams) -> dict:
    return {
        "denoise_strength": params.denoise_strength,
        "steps": params.total_steps,
        "seed": str(params.seed),  # decimal string: exact past 2^53 everywhere
        "resolution": params.resolution,
        "positive_prompt": params.positive_prompt,
        "negative_prompt": params.negative_prompt,
    }


def _decode_inpaint_payload(payload: dict, resolution: int) -> RasterImage:
    encoded = payload.get("image")
    if not isinstance(encoded, str):
        raise ProtocolError("inpaint payload lacks an image")
    try:
        image = png_bytes_to_image(_b64decode(encoded))
    except CorruptFileError as exc:
        raise ProtocolError(str(exc)) from exc
    if image.width != resolution or image.height != resolution:
        raise ProtocolError(
            f"inpaint response is {image.width}x{image.height}, requested {resolution}"
        )
    return image


def _decode_detect_payload(payload: dict, width: int, height: int) -> list[InstanceDetection]:
    entries = payload.get("detections")
    if not isinstance(entries, list):
        raise ProtocolError("detect payload lacks a detections list")
    detections = []
    for index, entry in enumerate(entries):
        try:
            mask = png_bytes_to_mask(_b64decode(entry["mask"]))
            confidence = float(entry["confidence"])
            label = str(entry["class_label"])
        except (KeyError, TypeError, ValueError, CorruptFileError) as exc:
            raise ProtocolError(f"malformed detection entry {index}: {exc}") from exc
        if (mask.width, mask.height) != (width, height):
            raise ProtocolError(
                f"detection {index} mask is {mask.width}x{mask.height}, image is {width}x{height}"
            )
        if mask.coverage < 1:
            continue
        detections.append(InstanceDetection(
            class_label=label, confidence=confidence,
            box=tight_box(mask), mask=mask, instance_index=len(detections),
        ))
    return detections


def remote_inpaint(request: InpaintRequest, endpoint: "str | BridgeClient") -> RasterImage:
    """Inpaint one crop over the bridge and re-assert outside-mask pixels.

    Real generators may leak outside the mask (and the wire quantizes to
    8-bit), so the client copies the request's own pixels back everywhere
    the mask is unset before returning. ``endpoint`` is a ``host:port``
    string or an already-connected :class:`BridgeClient`.
    """
    if isinstance(endpoint, BridgeClient):
        client = endpoint
        owns_client = False
    else:
        client = BridgeClient(endpoint)
        client.connect()
        owns_client = True
    try:
        result = client.inpaint(request.crop.pixels, request.crop.mask, request.params)
    finally:
        if owns_client:
            client.close()
    out = result.mutable_copy()
    outside = ~request.crop.mask.bits
    out[outside] = request.crop.pixels.data[outside]
    return RasterImage(out)


@dataclass
class RemoteInpaintBackend:
    """Inpainting backend that dispatches batches over the bridge."""

    client: BridgeClient

    def inpaint_batch(self, requests) -> list[RasterImage]:
        calls = [
            ("inpaint", _diffusion_wire_params(r.params),
             image_to_png_bytes(r.crop.pixels), mask_to_png_bytes(r.crop.mask))
            for r in requests
        ]
        payloads = self.client.call_many(calls)
        results = []
        for request, payload in zip(requests, payloads):
            image = _decode_inpaint_payload(payload, request.params.resolution)
            out = image.mutable_copy()
            outside = ~request.crop.mask.bits
            out[outside] = request.crop.pixels.data[outside]
            results.append(RasterImage(out))
        return results


@dataclass
class RemoteDetectorBackend:
    """Detector backend speaking the bridge protocol."""

    client: BridgeClient
    confidence_threshold: float = 0.0

    def raw_detections(self, image: RasterImage, image_id: str | None = None) -> list[InstanceDetection]:
        return self.client.detect(image, self.confidence_threshold)


@dataclass
class RemoteExtractor:
    """Feature extractor speaking the bridge protocol."""

    client: BridgeClient
    classes: int = 10
    dims: int = 16

    def extract(self, image: RasterImage) -> tuple[np.ndarray, np.ndarray]:
        return self.client.extract(image, self.classes, self.dims)


# ---------------------------------------------------------------------------
# Mock server
# ---------------------------------------------------------------------------


class AnonybodyRequestError(InvalidArgumentError):
    """Request-level failure that becomes an error response, not a crash."""


def _mock_detect(image: RasterImage, threshold: float) -> list[dict]:
    """Synthetic detector: one 'person' wherever mean luminance exceeds 0.5."""
    from .raster import to_uint8

    byte_sum = to_uint8(image).astype(np.int32).sum(axis=2)
    bits = byte_sum > MOCK_DETECT_BYTE_SUM
    if not bits.any() or MOCK_DETECT_CONFIDENCE < threshold:
        return []
    mask = BinaryMask(bits)
    box = tight_box(mask)
    return [{
        "class_label": "person",
        "confidence": MOCK_DETECT_CONFIDENCE,
        "box": [box.x_min, box.y_min, box.x_max, box.y_max],
        "mask": _b64encode(mask_to_png_bytes(mask)),
    }]


def _mock_inpaint(image: RasterImage, mask: BinaryMask, params: dict) -> RasterImage:
    strength = float(params.get("denoise_strength", 0.6))
    seed = int(params.get("seed", 0))
    if not 0.0 <= strength <= 1.0:
        raise InvalidArgumentError(f"denoise_strength {strength} outside [0, 1]")
    if strength == 0.0 or not mask.bits.any():
        return image
    g = noise_field(seed, image.width, image.height)
    src = image.data.astype(np.float64)
    mixed = (1.0 - strength) * src + strength * g[:, :, None]
    out = image.mutable_copy()
    out[mask.bits] = np.clip(mixed, 0.0, 1.0).astype(np.float32)[mask.bits]
    return RasterImage(out)


class MockBridgeServer:
    """In-process bridge server with synthetic model semantics.

    Serves the full protocol on a local TCP port; one thread per
    connection, requests answered in order. Useful as a test double and as
    the reference a foreign-language server is validated against.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, profile: str = "mock",
                 max_in_flight: int = 8, max_batch: int = 8,
                 max_line_bytes: int = MAX_LINE_BYTES):
        self._host = host
        self._port = port
        self.profile = profile
        self.max_in_flight = max_in_flight
        self.max_batch = max_batch
        self.max_line_bytes = max_line_bytes
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._connections: set[socket.socket] = set()
        self._conn_lock = threading.Lock()
        self._running = False

    @property
    def endpoint(self) -> str:
        if self._listener is None:
            raise InvalidArgumentError("server is not running")
        return f"{self._host}:{self._listener.getsockname()[1]}"

    def __enter__(self) -> "MockBridgeServer":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def start(self) -> "MockBridgeServer":
        if self._running:
            return self
        self._listener = socket.create_server((self._host, self._port))
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
            self._listener = None
        with self._conn_lock:
            for conn in list(self._connections):
                try:
                    conn.close()
                except OSError:
                    pass
            self._connections.clear()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
            self._accept_thread = None

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with self._conn_lock:
                self._connections.add(conn)
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        rfile = conn.makefile("rb")
        try:
            while self._running:
                line = rfile.readline(self.max_line_bytes + 1)
                if not line:
                    return
                if len(line) > self.max_line_bytes:
                    self._respond(conn, None, error=(
                        f"request line exceeds the {self.max_line_bytes} byte limit"
                    ), started=time.perf_counter())
                    return
                started = time.perf_counter()
                try:
                    request = json.loads(line.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    self._respond(conn, None, error=f"parse error: {exc}", started=started)
                    continue
                request_id = request.get("request_id") if isinstance(request, dict) else None
                if not isinstance(request_id, int):
                    self._respond(conn, None, error="request_id must be an integer",
                                  started=started)
                    continue
                try:
                    payload = self._handle(request)
                    self._respond(conn, request_id, payload=payload, started=started)
                except (CorruptFileError, InvalidArgumentError) as exc:
                    self._respond(conn, request_id, error=str(exc), started=started)
                except Exception as exc:  # noqa: BLE001 - a server must not die mid-protocol
                    logger.exception("unexpected error handling request %s", request_id)
                    self._respond(conn, request_id, error=f"internal error: {exc}", started=started)
        except OSError:
            return
        finally:
            with self._conn_lock:
                self._connections.discard(conn)
            try:
                rfile.close()
                conn.close()
            except OSError:
                pass

    def _respond(self, conn: socket.socket, request_id: int | None, payload: dict | None = None,
                 error: str | None = None, started: float = 0.0) -> None:
        response = {
            "request_id": request_id,
            "status": "error" if error is not None else "ok",
            "payload": {"message": error} if error is not None else (payload or {}),
            "timing_ms": round((time.perf_counter() - started) * 1000.0, 3),
        }
        try:
            conn.sendall(json.dumps(response, separators=(",", ":")).encode("utf-8") + b"\n")
        except OSError:
            pass

    def _handle(self, request: dict) -> dict:
        op = request.get("op")
        params = request.get("params") or {}
        if not isinstance(params, dict):
            raise AnonybodyRequestError("params must be an object")
        if op == "handshake":
            return {
                "protocol_version": PROTOCOL_VERSION,
                "profile": self.profile,
                "ops": ["detect", "inpaint", "extract"],
                "max_in_flight": self.max_in_flight,
                "max_batch": self.max_batch,
                "resolutions": [],
            }
        if op == "detect":
            image = self._decode_image(request)
            threshold = float(params.get("confidence_threshold", 0.0))
            return {"detections": _mock_detect(image, threshold)}
        if op == "inpaint":
            image = self._decode_image(request)
            mask = self._decode_mask(request)
            if (mask.width, mask.height) != (image.width, image.height):
                raise AnonybodyRequestError(
                    f"mask {mask.width}x{mask.height} does not match image "
                    f"{image.width}x{image.height}"
                )
            resolution = int(params.get("resolution", image.width))
            if (image.width, image.height) != (resolution, resolution):
                raise AnonybodyRequestError(
                    f"image is {image.width}x{image.height}, params.resolution is {resolution}"
                )
            result = _mock_inpaint(image, mask, params)
            return {"image": _b64encode(image_to_png_bytes(result))}
        if op == "extract":
            image = self._decode_image(request)
            classes = int(params.get("classes", 10))
            dims = int(params.get("dims", 16))
            probs, features = toy_extractor(image, classes, dims)
            return {"probabilities": probs.tolist(), "features": features.tolist()}
        raise AnonybodyRequestError(f"unsupported op {op!r}")

    def _decode_image(self, request: dict) -> RasterImage:
        encoded = request.get("image")
        if not isinstance(encoded, str):
            raise AnonybodyRequestError("request lacks an image field")
        return png_bytes_to_image(_b64decode(encoded))

    def _decode_mask(self, request: dict) -> BinaryMask:
        encoded = request.get("mask")
        if not isinstance(encoded, str):
            raise AnonybodyRequestError("request lacks a mask field")
        return png_bytes_to_mask(_b64decode(encoded))


def _main() -> None:
    """Run the mock server from the command line (``python -m anonybody.bridge``)."""
    import argparse

    parser = argparse.ArgumentParser(description="Serve the mock bridge backend")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8895)
    args = parser.parse_args()
    server = MockBridgeServer(host=args.host, port=args.port).start()
    print(f"mock bridge listening on {server.endpoint}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    _main()
