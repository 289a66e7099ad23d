/** Channel-major float tensors plus the image preprocessing steps. */

export interface Tensor {
  data: Float64Array;
  c: number;
  h: number;
  w: number;
}

export function tensor(c: number, h: number, w: number): Tensor {
  return { data: new Float64Array(c * h * w), c, h, w };
}

/** Half-pixel-center bilinear resize with edge clamping. */
export function bilinearResize(src: Tensor, outH: number, outW: number): Tensor {
  const out = tensor(src.c, outH, outW);
  const ys = new Array<number>(outH);
  const xs = new Array<number>(outW);
  for (let y = 0; y < outH; y++) {
    ys[y] = Math.min(Math.max(((y + 0.5) * src.h) / outH - 0.5, 0), src.h - 1);
  }
  for (let x = 0; x < outW; x++) {
    xs[x] = Math.min(Math.max(((x + 0.5) * src.w) / outW - 0.5, 0), src.w - 1);
  }
  const plane = src.h * src.w;
  const outPlane = outH * outW;
  for (let ch = 0; ch < src.c; ch++) {
    const base = ch * plane;
    for (let y = 0; y < outH; y++) {
      const sy = ys[y];
      const y0 = Math.floor(sy);
      const y1 = Math.min(y0 + 1, src.h - 1);
      const fy = sy - y0;
      for (let x = 0; x < outW; x++) {
        const sx = xs[x];
        const x0 = Math.floor(sx);
        const x1 = Math.min(x0 + 1, src.w - 1);
        const fx = sx - x0;
        const v =
          src.data[base + y0 * src.w + x0] * (1 - fy) * (1 - fx) +
          src.data[base + y1 * src.w + x0] * fy * (1 - fx) +
          src.data[base + y0 * src.w + x1] * (1 - fy) * fx +
          src.data[base + y1 * src.w + x1] * fy * fx;
        out.data[ch * outPlane + y * outW + x] = v;
      }
    }
  }
  return out;
}

export const NORMALIZATION = {
  mean: [0.485, 0.456, 0.406],
  std: [0.229, 0.224, 0.225],
};

export function normalizeInPlace(img: Tensor): Tensor {
  const plane = img.h * img.w;
  for (let ch = 0; ch < img.c; ch++) {
    const mean = NORMALIZATION.mean[ch];
    const std = NORMALIZATION.std[ch];
    const base = ch * plane;
    for (let p = 0; p < plane; p++) {
      img.data[base + p] = (img.data[base + p] - mean) / std;
    }
  }
  return img;
}
