"""Protocol conformance checks any bridge server must pass.

The suite talks raw sockets on purpose: it validates the wire behavior
itself, not this package's client. All inputs are synthetic, so the suite
runs identically against the in-process mock and a real sidecar in any
language.
"""

from __future__ import annotations

import base64
import json
import socket
from dataclasses import dataclass, field

import numpy as np

from .bridge import _parse_endpoint, mask_to_png_bytes, png_bytes_to_mask
from .dataset_io import image_to_png_bytes, png_bytes_to_image
from .raster import BinaryMask, RasterImage, from_uint8

_CHECK_TIMEOUT = 15.0


@dataclass
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    endpoint: str
    checks: list[ConformanceCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list[ConformanceCheck]:
        return [c for c in self.checks if not c.passed]

    def render(self) -> str:
        lines = [f"conformance against {self.endpoint}:"]
        for check in self.checks:
            status = "PASS" if check.passed else "FAIL"
            suffix = f" ({check.detail})" if check.detail and not check.passed else ""
            lines.append(f"  [{status}] {check.name}{suffix}")
        return "\n".join(lines)


class _RawConnection:
    """Minimal line-oriented JSON socket, independent of BridgeClient."""

    def __init__(self, endpoint: str):
        host, port = _parse_endpoint(endpoint)
        self.sock = socket.create_connection((host, port), timeout=_CHECK_TIMEOUT)
        self.rfile = self.sock.makefile("rb")

    def send_json(self, obj: dict) -> None:
        self.sock.sendall(json.dumps(obj, separators=(",", ":")).encode("utf-8") + b"\n")

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_json(self) -> dict:
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line.decode("utf-8"))

    def close(self) -> None:
        try:
            self.rfile.close()
            self.sock.close()
        except OSError:
            pass


def _grid_image(seed: int, side: int = 24) -> RasterImage:
    rng = np.random.default_rng(seed)
    return from_uint8(rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8))


def _center_mask(side: int = 24) -> BinaryMask:
    bits = np.zeros((side, side), dtype=bool)
    bits[side // 4: 3 * side // 4, side // 4: 3 * side // 4] = True
    return BinaryMask(bits)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _inpaint_request(request_id: int, image: RasterImage, mask: BinaryMask,
                     strength: float, seed: int = 11, resolution: int | None = None) -> dict:
    return {
        "op": "inpaint",
        "request_id": request_id,
        "image": _b64(image_to_png_bytes(image)),
        "mask": _b64(mask_to_png_bytes(mask)),
        "params": {
            "denoise_strength": strength,
            "steps": 50,
            "seed": seed,
            "resolution": resolution if resolution is not None else image.width,
            "positive_prompt": "subject",
            "negative_prompt": "",
        },
    }


def conformance_suite(endpoint: str) -> ConformanceReport:
    """Run every protocol check against a live server."""
    report = ConformanceReport(endpoint=endpoint)

    def record(name: str, passed: bool, detail: str = "") -> None:
        report.checks.append(ConformanceCheck(name, passed, detail))

    def run(name: str, func) -> None:
        try:
            func()
            record(name, True)
        except AssertionError as exc:
            record(name, False, str(exc))
        except Exception as exc:  # noqa: BLE001 - report, do not crash the suite
            record(name, False, f"{type(exc).__name__}: {exc}")

    conn = _RawConnection(endpoint)
    try:
        def handshake_schema():
            conn.send_json({"op": "handshake", "request_id": 1, "params": {}})
            response = conn.read_json()
            assert response.get("request_id") == 1, f"id not echoed: {response.get('request_id')}"
            assert response.get("status") == "ok", f"status {response.get('status')}"
            payload = response.get("payload")
            assert isinstance(payload, dict), "payload is not an object"
            assert isinstance(payload.get("protocol_version"), str), "missing protocol_version"
            ops = payload.get("ops")
            assert isinstance(ops, list), "ops is not a list"
            for op in ("detect", "inpaint", "extract"):
                assert op in ops, f"op {op!r} not advertised"
            assert isinstance(payload.get("max_in_flight"), int), "missing max_in_flight"
            assert isinstance(payload.get("max_batch"), int), "missing max_batch"
            assert isinstance(payload.get("resolutions"), list), "missing resolutions"
            assert isinstance(response.get("timing_ms"), (int, float)), "missing timing_ms"

        run("handshake-schema", handshake_schema)

        def id_echo():
            for request_id in (12345, 7):
                conn.send_json({"op": "handshake", "request_id": request_id, "params": {}})
                response = conn.read_json()
                assert response.get("request_id") == request_id, (
                    f"sent id {request_id}, got {response.get('request_id')}"
                )

        run("id-echo", id_echo)

        def inpaint_identity_at_zero():
            image = _grid_image(3)
            mask = _center_mask()
            conn.send_json(_inpaint_request(20, image, mask, strength=0.0))
            response = conn.read_json()
            assert response.get("status") == "ok", response.get("payload")
            returned = png_bytes_to_image(base64.b64decode(response["payload"]["image"]))
            assert np.array_equal(returned.data, image.data), "zero-strength inpaint altered pixels"

        run("inpaint-identity-at-zero-strength", inpaint_identity_at_zero)

        def inpaint_shape_contract():
            image = _grid_image(4, side=32)
            mask = _center_mask(32)
            conn.send_json(_inpaint_request(21, image, mask, strength=0.5, resolution=32))
            response = conn.read_json()
            assert response.get("status") == "ok", response.get("payload")
            returned = png_bytes_to_image(base64.b64decode(response["payload"]["image"]))
            assert (returned.width, returned.height) == (32, 32), (
                f"got {returned.width}x{returned.height}"
            )

        run("inpaint-shape-contract", inpaint_shape_contract)

        def inpaint_outside_mask_unchanged():
            image = _grid_image(5)
            mask = _center_mask()
            conn.send_json(_inpaint_request(22, image, mask, strength=0.8))
            response = conn.read_json()
            assert response.get("status") == "ok", response.get("payload")
            returned = png_bytes_to_image(base64.b64decode(response["payload"]["image"]))
            outside = ~mask.bits
            assert np.array_equal(returned.data[outside], image.data[outside]), (
                "pixels outside the mask changed"
            )

        run("inpaint-outside-mask-unchanged", inpaint_outside_mask_unchanged)

        def detect_schema():
            bits = np.zeros((24, 24, 3), dtype=np.uint8)
            bits[6:18, 6:18] = 230  # bright blob a synthetic detector can find
            image = from_uint8(bits)
            conn.send_json({
                "op": "detect", "request_id": 30,
                "image": _b64(image_to_png_bytes(image)),
                "params": {"confidence_threshold": 0.1},
            })
            response = conn.read_json()
            assert response.get("status") == "ok", response.get("payload")
            detections = response["payload"].get("detections")
            assert isinstance(detections, list), "detections is not a list"
            for i, det in enumerate(detections):
                assert isinstance(det.get("class_label"), str), f"detection {i}: class_label"
                confidence = det.get("confidence")
                assert isinstance(confidence, (int, float)) and 0 <= confidence <= 1, (
                    f"detection {i}: confidence {confidence}"
                )
                box = det.get("box")
                assert isinstance(box, list) and len(box) == 4, f"detection {i}: box {box}"
                mask = png_bytes_to_mask(base64.b64decode(det["mask"]))
                assert (mask.width, mask.height) == (24, 24), f"detection {i}: mask shape"

        run("detect-schema", detect_schema)

        def extract_schema():
            image = _grid_image(6)
            conn.send_json({
                "op": "extract", "request_id": 40,
                "image": _b64(image_to_png_bytes(image)),
                "params": {"classes": 7, "dims": 5},
            })
            response = conn.read_json()
            assert response.get("status") == "ok", response.get("payload")
            payload = response["payload"]
            probs = payload.get("probabilities")
            features = payload.get("features")
            assert isinstance(probs, list) and len(probs) == 7, "probabilities shape"
            assert isinstance(features, list) and len(features) == 5, "features shape"
            assert all(np.isfinite(v) for v in probs + features), "non-finite values"
            assert abs(sum(probs) - 1.0) < 1e-6, f"probabilities sum to {sum(probs)}"

        run("extract-schema", extract_schema)

        def malformed_json_line():
            conn.send_raw(b"this is not json{{{\n")
            response = conn.read_json()
            assert response.get("status") == "error", "malformed line not answered with an error"
            assert response.get("request_id") is None, "error for unparseable line must carry null id"
            message = (response.get("payload") or {}).get("message", "")
            assert message, "error response lacks a message"
            # the connection must still be usable afterwards
            conn.send_json({"op": "handshake", "request_id": 50, "params": {}})
            follow_up = conn.read_json()
            assert follow_up.get("request_id") == 50, "connection unusable after malformed line"

        run("malformed-json-line", malformed_json_line)

        def truncated_base64():
            conn.send_json({
                "op": "inpaint", "request_id": 60,
                "image": "not//valid//base64~~~", "mask": "also bad",
                "params": {"denoise_strength": 0.0, "resolution": 8, "seed": 0, "steps": 50},
            })
            response = conn.read_json()
            assert response.get("status") == "error", "invalid base64 did not produce an error"
            assert response.get("request_id") == 60, "error must echo the request id"

        run("truncated-base64", truncated_base64)

        def unknown_op():
            conn.send_json({"op": "no-such-op", "request_id": 70, "params": {}})
            response = conn.read_json()
            assert response.get("status") == "error", "unknown op did not produce an error"
            assert response.get("request_id") == 70, "error must echo the request id"

        run("unknown-op", unknown_op)
    finally:
        conn.close()
    return report
