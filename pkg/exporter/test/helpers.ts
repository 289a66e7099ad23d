/** Shared test fixtures: a tiny PNG encoder and config builders. */

import * as zlib from "node:zlib";

import { ArchConfig, StageConfig } from "../src/config";
import { crc32 } from "../src/fmap";

function chunk(type: string, body: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(body.length, 0);
  head.write(type, 4, "ascii");
  const crcBuf = Buffer.alloc(4);
  crcBuf.writeUInt32BE(crc32(Buffer.concat([Buffer.from(type, "ascii"), body])), 0);
  return Buffer.concat([head, body, crcBuf]);
}

/**
 * Encode an 8-bit PNG with one filter type applied to every scanline.
 * pixels: interleaved row-major, length = width*height*channels.
 */
export function encodePng(
  width: number,
  height: number,
  channels: 1 | 3,
  pixels: Uint8Array,
  filter = 0
): Buffer {
  const colorType = channels === 1 ? 0 : 2;
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr.writeUInt8(8, 8);
  ihdr.writeUInt8(colorType, 9);
  const stride = width * channels;
  const raw = Buffer.alloc((stride + 1) * height);
  const paeth = (a: number, b: number, c: number) => {
    const p = a + b - c;
    const pa = Math.abs(p - a);
    const pb = Math.abs(p - b);
    const pc = Math.abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
  };
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = filter;
    for (let x = 0; x < stride; x++) {
      const value = pixels[y * stride + x];
      const left = x >= channels ? pixels[y * stride + x - channels] : 0;
      const up = y > 0 ? pixels[(y - 1) * stride + x] : 0;
      const upLeft = y > 0 && x >= channels ? pixels[(y - 1) * stride + x - channels] : 0;
      let encoded: number;
      switch (filter) {
        case 0:
          encoded = value;
          break;
        case 1:
          encoded = (value - left) & 0xff;
          break;
        case 2:
          encoded = (value - up) & 0xff;
          break;
        case 3:
          encoded = (value - ((left + up) >> 1)) & 0xff;
          break;
        case 4:
          encoded = (value - paeth(left, up, upLeft)) & 0xff;
          break;
        default:
          throw new Error(`bad filter ${filter}`);
      }
      raw[y * (stride + 1) + 1 + x] = encoded;
    }
  }
  const signature = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  return Buffer.concat([
    signature,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlib.deflateSync(raw)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export function makeConfig(options: {
  width?: "base" | "wide";
  extracts?: (number | null)[];
  expansion?: number;
  kernel?: number;
  patch?: number;
} = {}): ArchConfig {
  const extracts = options.extracts ?? [2, null, null, null, null];
  const stages: StageConfig[] = [];
  for (let s = 0; s < 5; s++) {
    stages.push({
      expansion: options.expansion ?? 4,
      kernel: options.kernel ?? 3,
      extract: extracts[s],
      patch: options.patch ?? 1,
    });
  }
  return { width: options.width ?? "base", stages };
}
