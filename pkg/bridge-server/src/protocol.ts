/**
 * Wire protocol shapes and framing for the bridge.
 *
 * One JSON object per line over TCP, UTF-8, "\n" terminated. Images and
 * masks travel as base64 PNG. See the profile server in server.ts for the
 * operation semantics; this module only knows about envelopes.
 */

export const PROTOCOL_VERSION = "1";
export const MAX_LINE_BYTES = 32 * 1024 * 1024;

export interface BridgeRequest {
  op?: unknown;
  request_id?: unknown;
  image?: unknown;
  mask?: unknown;
  params?: unknown;
}

export interface BridgeResponse {
  request_id: number | null;
  status: "ok" | "error";
  payload: Record<string, unknown>;
  timing_ms: number;
}

export function okResponse(
  requestId: number,
  payload: Record<string, unknown>,
  startedMs: number,
): BridgeResponse {
  return {
    request_id: requestId,
    status: "ok",
    payload,
    timing_ms: round3(performance.now() - startedMs),
  };
}

export function errorResponse(
  requestId: number | null,
  message: string,
  startedMs: number,
): BridgeResponse {
  return {
    request_id: requestId,
    status: "error",
    payload: { message },
    timing_ms: round3(performance.now() - startedMs),
  };
}

function round3(value: number): number {
  return Math.round(value * 1000) / 1000;
}

export function serialize(response: BridgeResponse): Buffer {
  return Buffer.from(JSON.stringify(response) + "\n", "utf-8");
}

/**
 * Incremental newline framing with a hard length cap. Emits complete lines
 * (without the terminator); an oversized line surfaces as an exception so
 * the connection can answer once and close.
 */
export class LineDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  constructor(private readonly maxLineBytes: number = MAX_LINE_BYTES) {}

  push(data: Buffer): Buffer[] {
    this.buffer = this.buffer.length === 0 ? data : Buffer.concat([this.buffer, data]);
    const lines: Buffer[] = [];
    let start = 0;
    while (true) {
      const newline = this.buffer.indexOf(0x0a, start);
      if (newline === -1) break;
      lines.push(this.buffer.subarray(start, newline));
      start = newline + 1;
    }
    this.buffer = this.buffer.subarray(start);
    if (this.buffer.length > this.maxLineBytes) {
      throw new RangeError(`request line exceeds the ${this.maxLineBytes} byte limit`);
    }
    for (const line of lines) {
      if (line.length > this.maxLineBytes) {
        throw new RangeError(`request line exceeds the ${this.maxLineBytes} byte limit`);
      }
    }
    return lines;
  }
}
