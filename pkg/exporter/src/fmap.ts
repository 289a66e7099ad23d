/**
 * FMAP binary format (little-endian):
 *   "FMAP" | version u32 = 1 | n_tensors u32
 *   per tensor: stage u8, C u16, H u16, W u16, C*H*W float32 row-major
 *   trailer: CRC32 of all tensor-record bytes
 */

export const FMAP_MAGIC = Buffer.from("FMAP", "ascii");
export const FMAP_VERSION = 1;

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return ~c >>> 0;
}

export interface FmapTensor {
  stage: number;
  c: number;
  h: number;
  w: number;
  data: Float32Array;
}

export class FmapError extends Error {}

export function encodeFmap(tensors: FmapTensor[]): Buffer {
  const records: Buffer[] = [];
  for (const t of tensors) {
    if (t.data.length !== t.c * t.h * t.w) {
      throw new FmapError(`tensor data length ${t.data.length} != ${t.c}x${t.h}x${t.w}`);
    }
    if (t.stage < 0 || t.stage > 255) throw new FmapError(`stage ${t.stage} out of range`);
    if (Math.max(t.c, t.h, t.w) > 0xffff) throw new FmapError("dimension too large for u16");
    const head = Buffer.alloc(7);
    head.writeUInt8(t.stage, 0);
    head.writeUInt16LE(t.c, 1);
    head.writeUInt16LE(t.h, 3);
    head.writeUInt16LE(t.w, 5);
    const body = Buffer.alloc(t.data.length * 4);
    for (let i = 0; i < t.data.length; i++) body.writeFloatLE(t.data[i], i * 4);
    records.push(head, body);
  }
  const payload = Buffer.concat(records);
  const header = Buffer.alloc(12);
  FMAP_MAGIC.copy(header, 0);
  header.writeUInt32LE(FMAP_VERSION, 4);
  header.writeUInt32LE(tensors.length, 8);
  const trailer = Buffer.alloc(4);
  trailer.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([header, payload, trailer]);
}

export function decodeFmap(blob: Buffer): FmapTensor[] {
  if (blob.length < 16) throw new FmapError("truncated FMAP blob");
  if (!blob.subarray(0, 4).equals(FMAP_MAGIC)) throw new FmapError("bad magic");
  const version = blob.readUInt32LE(4);
  if (version !== FMAP_VERSION) throw new FmapError(`unsupported version ${version}`);
  const count = blob.readUInt32LE(8);
  const payload = blob.subarray(12, blob.length - 4);
  const crc = blob.readUInt32LE(blob.length - 4);
  if (crc32(payload) !== crc) throw new FmapError("CRC mismatch");
  const tensors: FmapTensor[] = [];
  let offset = 0;
  for (let i = 0; i < count; i++) {
    if (offset + 7 > payload.length) throw new FmapError("truncated tensor record");
    const stage = payload.readUInt8(offset);
    const c = payload.readUInt16LE(offset + 1);
    const h = payload.readUInt16LE(offset + 3);
    const w = payload.readUInt16LE(offset + 5);
    offset += 7;
    const n = c * h * w;
    if (offset + n * 4 > payload.length) throw new FmapError("truncated tensor data");
    const data = new Float32Array(n);
    for (let j = 0; j < n; j++) data[j] = payload.readFloatLE(offset + j * 4);
    offset += n * 4;
    tensors.push({ stage, c, h, w, data });
  }
  if (offset !== payload.length) throw new FmapError("trailing bytes after last tensor");
  return tensors;
}
