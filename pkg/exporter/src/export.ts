/** File-based export: one FMAP file plus a JSON sidecar per image. */

import * as fs from "node:fs";
import * as path from "node:path";

import { ArchConfig, ConfigError, checkInputSize, expectedShapes, parseConfig } from "./config";
import { FmapTensor, encodeFmap } from "./fmap";
import { decodePng, toRgbPlanes } from "./png";
import { NORMALIZATION, Tensor, bilinearResize, normalizeInPlace } from "./tensor";
import { WeightAsset, runSubnet } from "./supernet";

export interface ExportJob {
  configPath: string;
  imagesDir: string;
  outDir: string;
  asset: WeightAsset;
  size: number;
}

export function loadConfigFile(configPath: string): ArchConfig {
  let text: string;
  try {
    text = fs.readFileSync(configPath, "utf8");
  } catch {
    throw new ConfigError(`cannot read config file ${configPath}`);
  }
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch (err) {
    throw new ConfigError(`config file is not JSON: ${err}`);
  }
  return parseConfig(obj);
}

export function preprocessImage(file: string, size: number): Tensor {
  const raw = decodePng(fs.readFileSync(file));
  const planes = toRgbPlanes(raw);
  const img: Tensor = { data: planes, c: 3, h: raw.height, w: raw.width };
  const resized = raw.height === size && raw.width === size ? img : bilinearResize(img, size, size);
  return normalizeInPlace(resized);
}

export function featuresToFmap(config: ArchConfig, outputs: Tensor[], size: number): FmapTensor[] {
  const shapes = expectedShapes(config, size);
  if (outputs.length !== shapes.length) {
    throw new ConfigError(
      `subnet produced ${outputs.length} tensors, expected ${shapes.length}`
    );
  }
  return outputs.map((t, i) => {
    const want = shapes[i];
    if (t.c !== want.c || t.h !== want.h || t.w !== want.w) {
      throw new ConfigError(
        `stage ${want.stage} shape (${t.c},${t.h},${t.w}) != (${want.c},${want.h},${want.w})`
      );
    }
    return { stage: want.stage, c: t.c, h: t.h, w: t.w, data: Float32Array.from(t.data) };
  });
}

export function exportImage(
  asset: WeightAsset,
  config: ArchConfig,
  imageFile: string,
  size: number
): Buffer {
  const img = preprocessImage(imageFile, size);
  const outputs = runSubnet(asset, config, img);
  return encodeFmap(featuresToFmap(config, outputs, size));
}

export function sidecar(imageId: string, asset: WeightAsset, size: number): string {
  return JSON.stringify(
    {
      image_id: imageId,
      input_size: size,
      weights_checksum: `crc32:${asset.checksum}`,
      weights_seed: Number(asset.seed),
      normalization: NORMALIZATION,
    },
    null,
    1
  );
}

export function runExport(job: ExportJob): string[] {
  checkInputSize(job.size);
  const config = loadConfigFile(job.configPath);
  const files = fs
    .readdirSync(job.imagesDir)
    .filter((f) => f.toLowerCase().endsWith(".png"))
    .sort();
  if (files.length === 0) throw new ConfigError(`no PNG images in ${job.imagesDir}`);
  fs.mkdirSync(job.outDir, { recursive: true });
  const written: string[] = [];
  for (const file of files) {
    const imageId = path.parse(file).name;
    const blob = exportImage(job.asset, config, path.join(job.imagesDir, file), job.size);
    const outFile = path.join(job.outDir, `${imageId}.fmap`);
    fs.writeFileSync(outFile, blob);
    fs.writeFileSync(path.join(job.outDir, `${imageId}.json`), sidecar(imageId, job.asset, job.size));
    written.push(outFile);
  }
  return written;
}
