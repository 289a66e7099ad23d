/**
 * Minimal PNG reader: 8-bit depth, color types 0 (gray), 2 (RGB),
 * 4 (gray+alpha) and 6 (RGBA), no interlacing. Covers everything the
 * dataset tooling emits; anything fancier is rejected loudly.
 */

import * as zlib from "node:zlib";

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export class PngError extends Error {}

export interface RawImage {
  width: number;
  height: number;
  channels: number;
  data: Uint8Array; // row-major, interleaved channels
}

export function decodePng(buf: Buffer): RawImage {
  if (buf.length < 8 || !buf.subarray(0, 8).equals(SIGNATURE)) {
    throw new PngError("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Buffer[] = [];
  let offset = 8;
  while (offset + 8 <= buf.length) {
    const length = buf.readUInt32BE(offset);
    const type = buf.toString("ascii", offset + 4, offset + 8);
    const body = buf.subarray(offset + 8, offset + 8 + length);
    offset += 12 + length; // length + type + data + crc
    if (type === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      bitDepth = body.readUInt8(8);
      colorType = body.readUInt8(9);
      const interlace = body.readUInt8(12);
      if (bitDepth !== 8) throw new PngError(`unsupported bit depth ${bitDepth}`);
      if (![0, 2, 4, 6].includes(colorType)) {
        throw new PngError(`unsupported color type ${colorType}`);
      }
      if (interlace !== 0) throw new PngError("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
  }
  if (!width || !height) throw new PngError("missing IHDR");
  const channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType as 0 | 2 | 4 | 6];
  const raw = zlib.inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new PngError(`unexpected data size ${raw.length}`);
  }
  const out = new Uint8Array(stride * height);
  const paeth = (a: number, b: number, c: number) => {
    const p = a + b - c;
    const pa = Math.abs(p - a);
    const pb = Math.abs(p - b);
    const pc = Math.abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
  };
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    const cur = out.subarray(y * stride, (y + 1) * stride);
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? cur[x - channels] : 0;
      const up = prev ? prev[x] : 0;
      const upLeft = prev && x >= channels ? prev[x - channels] : 0;
      let value = row[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value = (value + left) & 0xff;
          break;
        case 2:
          value = (value + up) & 0xff;
          break;
        case 3:
          value = (value + ((left + up) >> 1)) & 0xff;
          break;
        case 4:
          value = (value + paeth(left, up, upLeft)) & 0xff;
          break;
        default:
          throw new PngError(`bad filter ${filter}`);
      }
      cur[x] = value;
    }
  }
  return { width, height, channels, data: out };
}

/** Channel-major (3, H, W) float RGB in [0, 1]; gray replicates, alpha drops. */
export function toRgbPlanes(img: RawImage): Float64Array {
  const { width, height, channels, data } = img;
  const plane = width * height;
  const out = new Float64Array(3 * plane);
  for (let p = 0; p < plane; p++) {
    const base = p * channels;
    let r: number, g: number, b: number;
    if (channels >= 3) {
      r = data[base];
      g = data[base + 1];
      b = data[base + 2];
    } else {
      r = g = b = data[base];
    }
    out[p] = r / 255;
    out[plane + p] = g / 255;
    out[2 * plane + p] = b / 255;
  }
  return out;
}
