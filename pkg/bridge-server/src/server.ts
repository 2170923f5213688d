/**
 * Bridge sidecar: serves detect / inpaint / extract behind the
 * newline-delimited JSON protocol.
 *
 * Every request gets exactly one response carrying its echoed id; a line
 * that cannot be parsed is answered with a null id and the connection
 * stays open; a line exceeding the size limit is answered and the
 * connection closed. Model behavior comes from the configured profile
 * (the synthetic profile ships; real model profiles declare their
 * weights/sampler in the profile file and plug in behind the same ops).
 */

import * as net from "node:net";

import { LineDecoder, MAX_LINE_BYTES, PROTOCOL_VERSION, errorResponse, okResponse, serialize } from "./protocol.js";
import type { BridgeRequest, BridgeResponse } from "./protocol.js";
import { DecodedPng, decodePng, encodePngGray, encodePngRgb, toGray, toRgb } from "./png.js";
import * as synthetic from "./synthetic.js";
import type { RgbImage } from "./synthetic.js";

export interface ServerOptions {
  host?: string;
  port?: number;
  profile?: string;
  maxInFlight?: number;
  maxBatch?: number;
  maxLineBytes?: number;
}

class RequestError extends Error {}

function decodeImageField(raw: unknown, field: string): DecodedPng {
  if (typeof raw !== "string") {
    throw new RequestError(`request lacks a ${field} field`);
  }
  let bytes: Buffer;
  try {
    bytes = Buffer.from(raw, "base64");
    // Buffer.from silently tolerates garbage; round-trip to reject it
    if (bytes.length === 0 || Buffer.from(bytes).toString("base64").replace(/=+$/, "") !==
        raw.replace(/[\s]/g, "").replace(/=+$/, "")) {
      throw new Error("not valid base64");
    }
  } catch (error) {
    throw new RequestError(`invalid base64 in ${field}: ${(error as Error).message}`);
  }
  try {
    return decodePng(bytes);
  } catch (error) {
    throw new RequestError(`could not decode ${field} PNG: ${(error as Error).message}`);
  }
}

function asRgbImage(png: DecodedPng): RgbImage {
  return { width: png.width, height: png.height, data: toRgb(png) };
}

function handleRequest(request: BridgeRequest, options: Required<ServerOptions>): Record<string, unknown> {
  const op = request.op;
  const params = (request.params ?? {}) as Record<string, unknown>;
  if (typeof params !== "object" || Array.isArray(params)) {
    throw new RequestError("params must be an object");
  }

  if (op === "handshake") {
    return {
      protocol_version: PROTOCOL_VERSION,
      profile: options.profile,
      ops: ["detect", "inpaint", "extract"],
      max_in_flight: options.maxInFlight,
      max_batch: options.maxBatch,
      resolutions: [],
    };
  }

  if (op === "detect") {
    const image = asRgbImage(decodeImageField(request.image, "image"));
    const threshold = typeof params.confidence_threshold === "number" ? params.confidence_threshold : 0;
    const detections = synthetic.detect(image, threshold).map((det) => ({
      class_label: det.classLabel,
      confidence: det.confidence,
      box: det.box,
      mask: encodePngGray(image.width, image.height, det.mask).toString("base64"),
    }));
    return { detections };
  }

  if (op === "inpaint") {
    const image = asRgbImage(decodeImageField(request.image, "image"));
    const maskPng = decodeImageField(request.mask, "mask");
    if (maskPng.width !== image.width || maskPng.height !== image.height) {
      throw new RequestError(
        `mask ${maskPng.width}x${maskPng.height} does not match image ${image.width}x${image.height}`,
      );
    }
    const resolution = typeof params.resolution === "number" ? params.resolution : image.width;
    if (image.width !== resolution || image.height !== resolution) {
      throw new RequestError(
        `image is ${image.width}x${image.height}, params.resolution is ${resolution}`,
      );
    }
    const strength = typeof params.denoise_strength === "number" ? params.denoise_strength : 0.6;
    let result: Uint8Array;
    try {
      result = synthetic.inpaint(image, toGray(maskPng), {
        denoiseStrength: strength,
        seed: params.seed,
      });
    } catch (error) {
      throw new RequestError((error as Error).message);
    }
    return { image: encodePngRgb(image.width, image.height, result).toString("base64") };
  }

  if (op === "extract") {
    const image = asRgbImage(decodeImageField(request.image, "image"));
    const classes = typeof params.classes === "number" ? params.classes : 10;
    const dims = typeof params.dims === "number" ? params.dims : 16;
    try {
      return synthetic.extract(image, classes, dims);
    } catch (error) {
      throw new RequestError((error as Error).message);
    }
  }

  throw new RequestError(`unsupported op ${JSON.stringify(op ?? null)}`);
}

export function createBridgeServer(options: ServerOptions = {}): net.Server {
  const resolved: Required<ServerOptions> = {
    host: options.host ?? "127.0.0.1",
    port: options.port ?? 0,
    profile: options.profile ?? "synthetic",
    maxInFlight: options.maxInFlight ?? 8,
    maxBatch: options.maxBatch ?? 8,
    maxLineBytes: options.maxLineBytes ?? MAX_LINE_BYTES,
  };

  return net.createServer((socket) => {
    const decoder = new LineDecoder(resolved.maxLineBytes);
    socket.on("error", () => socket.destroy());
    socket.on("data", (data) => {
      let lines: Buffer[];
      try {
        lines = decoder.push(data);
      } catch (error) {
        // oversized line: answer once, then drop the connection
        socket.write(serialize(errorResponse(null, (error as Error).message, performance.now())));
        socket.end();
        return;
      }
      for (const line of lines) {
        if (line.length === 0) continue;
        const started = performance.now();
        let response: BridgeResponse;
        let request: BridgeRequest | null = null;
        try {
          request = JSON.parse(line.toString("utf-8")) as BridgeRequest;
        } catch (error) {
          response = errorResponse(null, `parse error: ${(error as Error).message}`, started);
          socket.write(serialize(response));
          continue;
        }
        const rawId = (request as BridgeRequest)?.request_id;
        if (typeof rawId !== "number" || !Number.isInteger(rawId)) {
          socket.write(serialize(errorResponse(null, "request_id must be an integer", started)));
          continue;
        }
        try {
          const payload = handleRequest(request as BridgeRequest, resolved);
          response = okResponse(rawId, payload, started);
        } catch (error) {
          const message =
            error instanceof RequestError
              ? error.message
              : `internal error: ${(error as Error).message}`;
          response = errorResponse(rawId, message, started);
        }
        socket.write(serialize(response));
      }
    });
  });
}
