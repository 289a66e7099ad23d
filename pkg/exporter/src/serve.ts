/**
 * Feature service speaking the engine's external-backend protocol:
 * newline-delimited JSON requests {"image_id", "config"}, responses
 * length-prefixed by a u64 byte count. A response payload is either an
 * FMAP blob or a JSON error object {"error", "message"}; the client tells
 * them apart by the magic. Requests on one connection are handled in
 * order; separate connections are independent.
 */

import * as fs from "node:fs";
import * as net from "node:net";
import * as path from "node:path";

import { ConfigError, parseConfig } from "./config";
import { encodeFmap } from "./fmap";
import { PngError } from "./png";
import { Tensor } from "./tensor";
import { preprocessImage, featuresToFmap } from "./export";
import { AssetError, WeightAsset, runSubnet } from "./supernet";

export interface ServeOptions {
  host: string;
  port: number;
  asset: WeightAsset;
  imagesDir: string;
  size: number;
}

function lengthPrefixed(payload: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeBigUInt64LE(BigInt(payload.length), 0);
  return Buffer.concat([head, payload]);
}

function errorResponse(code: string, message: string): Buffer {
  return lengthPrefixed(Buffer.from(JSON.stringify({ error: code, message }), "utf8"));
}

export function createServer(options: ServeOptions): net.Server {
  const imageCache = new Map<string, Tensor>();

  const loadImage = (imageId: string): Tensor => {
    const cached = imageCache.get(imageId);
    if (cached) return cached;
    if (!/^[\w.-]+$/.test(imageId)) {
      throw new PngError(`bad image id ${JSON.stringify(imageId)}`);
    }
    const file = path.join(options.imagesDir, `${imageId}.png`);
    if (!fs.existsSync(file)) {
      throw new NotFound(`no image ${imageId} under ${options.imagesDir}`);
    }
    const img = preprocessImage(file, options.size);
    imageCache.set(imageId, img);
    return img;
  };

  const handleLine = (line: string): Buffer => {
    let request: unknown;
    try {
      request = JSON.parse(line);
    } catch {
      return errorResponse("bad_request", "request is not valid JSON");
    }
    if (typeof request !== "object" || request === null) {
      return errorResponse("bad_request", "request must be a JSON object");
    }
    const { image_id: imageId, config: configJson } = request as Record<string, unknown>;
    if (typeof imageId !== "string") {
      return errorResponse("bad_request", "image_id must be a string");
    }
    try {
      const config = parseConfig(configJson);
      const img = loadImage(imageId);
      const outputs = runSubnet(options.asset, config, img);
      return lengthPrefixed(encodeFmap(featuresToFmap(config, outputs, options.size)));
    } catch (err) {
      if (err instanceof NotFound) return errorResponse("not_found", err.message);
      if (err instanceof ConfigError) return errorResponse("invalid_config", err.message);
      if (err instanceof PngError) return errorResponse("bad_image", err.message);
      if (err instanceof AssetError) return errorResponse("asset_error", err.message);
      return errorResponse("internal", String(err));
    }
  };

  return net.createServer((socket) => {
    let buffer = Buffer.alloc(0);
    socket.on("data", (chunk) => {
      buffer = Buffer.concat([buffer, chunk]);
      let index;
      while ((index = buffer.indexOf(0x0a)) >= 0) {
        const line = buffer.subarray(0, index).toString("utf8");
        buffer = buffer.subarray(index + 1);
        if (line.trim().length === 0) continue;
        socket.write(handleLine(line));
      }
    });
    socket.on("error", () => socket.destroy());
  });
}

class NotFound extends Error {}
