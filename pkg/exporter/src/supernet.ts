/**
 * Weight-shared supernet asset and subnet inference.
 *
 * The asset stores maximal weights (expansion 6, kernel 7, both width
 * modes) in one deterministic layout. A subnet is realized by slicing:
 * the first e*C_in expanded channels, the centered kxk window of each 7x7
 * depthwise kernel, and the width group selected by the config. The stand-in
 * asset generator fills the same layout from a seeded PRNG; converted
 * pretrained weights can replace it file-compatibly.
 *
 * Asset layout (little-endian):
 *   "SUPW" | version u32 = 1 | seed u64 | n_floats u64 | float32 payload
 *   | CRC32 of the payload bytes
 */

import * as fs from "node:fs";

import {
  ArchConfig,
  SE_STAGES,
  STEM_CHANNELS,
  WIDTHS,
  WidthMode,
  checkInputSize,
  stagePlan,
} from "./config";
import { crc32 } from "./fmap";
import { Tensor, tensor } from "./tensor";

const ASSET_MAGIC = Buffer.from("SUPW", "ascii");
const ASSET_VERSION = 1;
const MAX_EXPANSION = 6;
const MAX_KERNEL = 7;
const MAX_BLOCKS = 4;

export class AssetError extends Error {}

interface LayoutEntry {
  name: string;
  shape: number[]; // [cOut, cIn, k, k]
}

function blockInputChannels(width: WidthMode, s: number, b: number): number {
  if (b === 1) return s === 0 ? STEM_CHANNELS : WIDTHS[width][s - 1];
  return WIDTHS[width][s];
}

export function layoutEntries(): LayoutEntry[] {
  const entries: LayoutEntry[] = [];
  for (const width of ["base", "wide"] as WidthMode[]) {
    entries.push({ name: `${width}/stem`, shape: [STEM_CHANNELS, 3, 3, 3] });
    for (let s = 0; s < 5; s++) {
      for (let b = 1; b <= MAX_BLOCKS; b++) {
        const cIn = blockInputChannels(width, s, b);
        const cMidMax = MAX_EXPANSION * cIn;
        const prefix = `${width}/s${s}b${b}`;
        entries.push({ name: `${prefix}/expand`, shape: [cMidMax, cIn, 1, 1] });
        entries.push({ name: `${prefix}/dw`, shape: [cMidMax, 1, MAX_KERNEL, MAX_KERNEL] });
        if (SE_STAGES[s]) {
          entries.push({ name: `${prefix}/se1`, shape: [cMidMax >> 2, cMidMax, 1, 1] });
          entries.push({ name: `${prefix}/se2`, shape: [cMidMax, cMidMax >> 2, 1, 1] });
        }
        entries.push({ name: `${prefix}/project`, shape: [WIDTHS[width][s], cMidMax, 1, 1] });
      }
    }
  }
  return entries;
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** splitmix64; uniform() yields the same stream for the same seed everywhere. */
export class SplitMix64 {
  private state: bigint;
  private static readonly MASK = (1n << 64n) - 1n;

  constructor(seed: number | bigint) {
    this.state = BigInt(seed) & SplitMix64.MASK;
  }

  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & SplitMix64.MASK;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & SplitMix64.MASK;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & SplitMix64.MASK;
    return z ^ (z >> 31n);
  }

  uniform(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }
}

export function generateAsset(seed: number): Buffer {
  const entries = layoutEntries();
  const total = entries.reduce((acc, e) => acc + numel(e.shape), 0);
  const payload = Buffer.alloc(total * 4);
  const rng = new SplitMix64(seed);
  let offset = 0;
  for (const entry of entries) {
    const [, cIn, k] = entry.shape;
    const fanIn = cIn * k * k;
    const limit = Math.sqrt(3.0 / fanIn);
    for (let i = 0; i < numel(entry.shape); i++) {
      payload.writeFloatLE((2 * rng.uniform() - 1) * limit, offset);
      offset += 4;
    }
  }
  const header = Buffer.alloc(24);
  ASSET_MAGIC.copy(header, 0);
  header.writeUInt32LE(ASSET_VERSION, 4);
  header.writeBigUInt64LE(BigInt(seed), 8);
  header.writeBigUInt64LE(BigInt(total), 16);
  const trailer = Buffer.alloc(4);
  trailer.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([header, payload, trailer]);
}

export interface WeightAsset {
  seed: bigint;
  checksum: string; // crc32 of the payload, hex
  weights: Map<string, { shape: number[]; data: Float32Array }>;
}

export function loadAsset(path: string): WeightAsset {
  let blob: Buffer;
  try {
    blob = fs.readFileSync(path);
  } catch (err) {
    throw new AssetError(`weight asset unavailable: ${path}`);
  }
  if (blob.length < 28 || !blob.subarray(0, 4).equals(ASSET_MAGIC)) {
    throw new AssetError("bad weight asset magic");
  }
  if (blob.readUInt32LE(4) !== ASSET_VERSION) {
    throw new AssetError("unsupported weight asset version");
  }
  const seed = blob.readBigUInt64LE(8);
  const total = Number(blob.readBigUInt64LE(16));
  const payload = blob.subarray(24, blob.length - 4);
  if (payload.length !== total * 4) throw new AssetError("weight asset size mismatch");
  const crc = blob.readUInt32LE(blob.length - 4);
  const actual = crc32(payload);
  if (actual !== crc) throw new AssetError("weight asset CRC mismatch");
  const weights = new Map<string, { shape: number[]; data: Float32Array }>();
  let offset = 0;
  for (const entry of layoutEntries()) {
    const n = numel(entry.shape);
    const data = new Float32Array(n);
    for (let i = 0; i < n; i++) data[i] = payload.readFloatLE((offset + i) * 4);
    weights.set(entry.name, { shape: entry.shape, data });
    offset += n;
  }
  if (offset !== total) throw new AssetError("weight asset layout mismatch");
  return { seed, checksum: actual.toString(16).padStart(8, "0"), weights };
}

// ---------------------------------------------------------------------------
// inference

function relu(x: Tensor): void {
  for (let i = 0; i < x.data.length; i++) if (x.data[i] < 0) x.data[i] = 0;
}

function hswish(x: Tensor): void {
  for (let i = 0; i < x.data.length; i++) {
    const v = x.data[i];
    const g = Math.min(Math.max(v + 3, 0), 6) / 6;
    x.data[i] = v * g;
  }
}

function stageActivation(s: number): (x: Tensor) => void {
  return s < 2 ? relu : hswish;
}

/** Regular convolution, used for the 3-channel stem only. */
function convStem(x: Tensor, w: Float32Array, cOut: number, k: number, stride: number): Tensor {
  const pad = k >> 1;
  const outH = Math.floor((x.h + 2 * pad - k) / stride) + 1;
  const outW = Math.floor((x.w + 2 * pad - k) / stride) + 1;
  const out = tensor(cOut, outH, outW);
  const plane = x.h * x.w;
  const outPlane = outH * outW;
  for (let o = 0; o < cOut; o++) {
    for (let oy = 0; oy < outH; oy++) {
      for (let ox = 0; ox < outW; ox++) {
        let acc = 0;
        for (let ci = 0; ci < x.c; ci++) {
          const wBase = ((o * x.c + ci) * k) * k;
          const xBase = ci * plane;
          for (let ky = 0; ky < k; ky++) {
            const iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.h) continue;
            for (let kx = 0; kx < k; kx++) {
              const ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= x.w) continue;
              acc += w[wBase + ky * k + kx] * x.data[xBase + iy * x.w + ix];
            }
          }
        }
        out.data[o * outPlane + oy * outW + ox] = acc;
      }
    }
  }
  return out;
}

/** 1x1 convolution as a (cOut x cIn) matrix applied per pixel. */
function conv1x1(x: Tensor, w: Float32Array, cOut: number, wStride: number): Tensor {
  const plane = x.h * x.w;
  const out = tensor(cOut, x.h, x.w);
  for (let o = 0; o < cOut; o++) {
    const outBase = o * plane;
    const wBase = o * wStride;
    for (let ci = 0; ci < x.c; ci++) {
      const wv = w[wBase + ci];
      if (wv === 0) continue;
      const xBase = ci * plane;
      for (let p = 0; p < plane; p++) {
        out.data[outBase + p] += wv * x.data[xBase + p];
      }
    }
  }
  return out;
}

/** Depthwise kxk using the centered window of the stored 7x7 kernels. */
function depthwise(x: Tensor, w: Float32Array, k: number, stride: number): Tensor {
  const pad = k >> 1;
  const crop = (MAX_KERNEL - k) >> 1;
  const outH = Math.floor((x.h + 2 * pad - k) / stride) + 1;
  const outW = Math.floor((x.w + 2 * pad - k) / stride) + 1;
  const out = tensor(x.c, outH, outW);
  const plane = x.h * x.w;
  const outPlane = outH * outW;
  for (let ch = 0; ch < x.c; ch++) {
    const xBase = ch * plane;
    const wBase = ch * MAX_KERNEL * MAX_KERNEL;
    for (let oy = 0; oy < outH; oy++) {
      for (let ox = 0; ox < outW; ox++) {
        let acc = 0;
        for (let ky = 0; ky < k; ky++) {
          const iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.h) continue;
          const wRow = wBase + (ky + crop) * MAX_KERNEL + crop;
          const xRow = xBase + iy * x.w;
          for (let kx = 0; kx < k; kx++) {
            const ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= x.w) continue;
            acc += w[wRow + kx] * x.data[xRow + ix];
          }
        }
        out.data[ch * outPlane + oy * outW + ox] = acc;
      }
    }
  }
  return out;
}

function squeezeExcite(x: Tensor, se1: Float32Array, se2: Float32Array, cMid: number, se1Stride: number, se2Stride: number): void {
  const plane = x.h * x.w;
  const cSe = cMid >> 2;
  const pooled = new Float64Array(x.c);
  for (let ch = 0; ch < x.c; ch++) {
    let acc = 0;
    const base = ch * plane;
    for (let p = 0; p < plane; p++) acc += x.data[base + p];
    pooled[ch] = acc / plane;
  }
  const hidden = new Float64Array(cSe);
  for (let o = 0; o < cSe; o++) {
    let acc = 0;
    const wBase = o * se1Stride;
    for (let ci = 0; ci < x.c; ci++) acc += se1[wBase + ci] * pooled[ci];
    hidden[o] = acc > 0 ? acc : 0;
  }
  for (let ch = 0; ch < x.c; ch++) {
    let acc = 0;
    const wBase = ch * se2Stride;
    for (let ci = 0; ci < cSe; ci++) acc += se2[wBase + ci] * hidden[ci];
    const gate = Math.min(Math.max(acc + 3, 0), 6) / 6;
    const base = ch * plane;
    for (let p = 0; p < plane; p++) x.data[base + p] *= gate;
  }
}

/** Run the subnet selected by `config` and return the extraction tensors. */
export function runSubnet(asset: WeightAsset, config: ArchConfig, image: Tensor): Tensor[] {
  checkInputSize(image.h);
  checkInputSize(image.w);
  const plan = stagePlan(config);
  const widths = WIDTHS[config.width];
  const get = (name: string) => {
    const entry = asset.weights.get(`${config.width}/${name}`);
    if (!entry) throw new AssetError(`missing weight group ${name}`);
    return entry;
  };

  let x = convStem(image, get("stem").data, STEM_CHANNELS, 3, 2);
  hswish(x);
  const outputs: Tensor[] = [];
  for (let s = 0; s <= plan.lastStage; s++) {
    const st = config.stages[s];
    const act = stageActivation(s);
    for (let b = 1; b <= plan.depths[s]; b++) {
      const cIn = x.c;
      const cMid = st.expansion * cIn;
      const stride = b === 1 ? (s === 3 ? 1 : 2) : 1;
      const prefix = `s${s}b${b}`;
      const expand = get(`${prefix}/expand`);
      const residual = b > 1 ? x : null;
      // expansion weights are stored (6*cIn, cIn); take the first cMid rows
      let h = conv1x1(x, expand.data, cMid, expand.shape[1]);
      act(h);
      h = depthwise(h, get(`${prefix}/dw`).data, st.kernel, stride);
      act(h);
      if (SE_STAGES[s]) {
        const se1 = get(`${prefix}/se1`);
        const se2 = get(`${prefix}/se2`);
        squeezeExcite(h, se1.data, se2.data, cMid, se1.shape[1], se2.shape[1]);
      }
      const project = get(`${prefix}/project`);
      let y = conv1x1(h, project.data, widths[s], project.shape[1]);
      if (residual && residual.c === y.c && residual.data.length === y.data.length) {
        for (let i = 0; i < y.data.length; i++) y.data[i] += residual.data[i];
      }
      x = y;
      if (st.extract === 4 * s + b) {
        outputs.push({ data: x.data.slice(), c: x.c, h: x.h, w: x.w });
      }
    }
  }
  return outputs;
}
