/**
 * Architecture-config JSON parsing and validation.
 *
 * The accept set must match the engine-side validator exactly: exactly the
 * keys {width, stages}, five stages each with exactly
 * {expansion, kernel, extract, patch}, values inside their domains, the
 * extraction block inside the stage's own range, and at least one stage
 * extracted. Anything else is rejected.
 */

export type WidthMode = "base" | "wide";

export interface StageConfig {
  expansion: number;
  kernel: number;
  extract: number | null;
  patch: number;
}

export interface ArchConfig {
  width: WidthMode;
  stages: StageConfig[];
}

export class ConfigError extends Error {}

export const WIDTHS: Record<WidthMode, number[]> = {
  base: [24, 40, 80, 112, 160],
  wide: [32, 48, 96, 136, 192],
};
export const RESOLUTION_DIVISORS = [4, 8, 16, 16, 32];
export const SE_STAGES = [false, true, false, true, true];
export const STEM_CHANNELS = 16;
export const N_STAGES = 5;
export const EXPANSIONS = [3, 4, 6];
export const KERNELS = [3, 5, 7];

function isPlainObject(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function isInt(v: unknown): v is number {
  return typeof v === "number" && Number.isInteger(v);
}

function sameKeys(obj: Record<string, unknown>, expected: string[]): boolean {
  const keys = Object.keys(obj).sort();
  const want = [...expected].sort();
  return keys.length === want.length && keys.every((k, i) => k === want[i]);
}

export function parseConfig(obj: unknown): ArchConfig {
  if (!isPlainObject(obj) || !sameKeys(obj, ["width", "stages"])) {
    throw new ConfigError("config must have exactly the keys 'width' and 'stages'");
  }
  const width = obj.width;
  if (width !== "base" && width !== "wide") {
    throw new ConfigError(`invalid parameter: width ${JSON.stringify(width)}`);
  }
  const stagesRaw = obj.stages;
  if (!Array.isArray(stagesRaw) || stagesRaw.length !== N_STAGES) {
    throw new ConfigError(`config must have exactly ${N_STAGES} stages`);
  }
  const stages: StageConfig[] = [];
  stagesRaw.forEach((raw, s) => {
    if (!isPlainObject(raw) || !sameKeys(raw, ["expansion", "kernel", "extract", "patch"])) {
      throw new ConfigError(`stage ${s} must have exactly expansion/kernel/extract/patch`);
    }
    const { expansion, kernel, extract, patch } = raw;
    if (!isInt(expansion) || !EXPANSIONS.includes(expansion)) {
      throw new ConfigError(`invalid parameter: stage ${s} expansion ${JSON.stringify(expansion)}`);
    }
    if (!isInt(kernel) || !KERNELS.includes(kernel)) {
      throw new ConfigError(`invalid parameter: stage ${s} kernel ${JSON.stringify(kernel)}`);
    }
    if (extract !== null) {
      if (!isInt(extract) || extract < 4 * s + 1 || extract > 4 * s + 4) {
        throw new ConfigError(`invalid parameter: stage ${s} extraction block ${JSON.stringify(extract)}`);
      }
    }
    if (!isInt(patch) || patch < 1 || patch > 16) {
      throw new ConfigError(`invalid parameter: stage ${s} patch size ${JSON.stringify(patch)}`);
    }
    stages.push({
      expansion,
      kernel,
      extract: extract === null ? null : extract,
      patch,
    });
  });
  const config: ArchConfig = { width, stages };
  if (extractedStages(config).length === 0) {
    throw new ConfigError("degenerate config: no extraction block selected");
  }
  return config;
}

export function extractedStages(config: ArchConfig): number[] {
  const out: number[] = [];
  config.stages.forEach((st, s) => {
    if (st.extract !== null) out.push(s);
  });
  return out;
}

export interface StagePlan {
  depths: number[];
  lastStage: number;
}

/** Minimal depth two per computed stage, deeper only to reach the extraction block. */
export function stagePlan(config: ArchConfig): StagePlan {
  const extracted = extractedStages(config);
  const lastStage = Math.max(...extracted);
  const depths = config.stages.map((st, s) => {
    if (s > lastStage) return 0;
    if (st.extract === null) return 2;
    return Math.max(2, st.extract - 4 * s);
  });
  return { depths, lastStage };
}

export interface TensorShape {
  stage: number;
  c: number;
  h: number;
  w: number;
}

export function expectedShapes(config: ArchConfig, inputSize: number): TensorShape[] {
  const widths = WIDTHS[config.width];
  return extractedStages(config).map((s) => {
    const res = Math.floor(inputSize / RESOLUTION_DIVISORS[s]);
    return { stage: s, c: widths[s], h: res, w: res };
  });
}

export function checkInputSize(size: number): void {
  if (!Number.isInteger(size) || size < 32 || size % 32 !== 0) {
    throw new ConfigError(`input size must be a positive multiple of 32, got ${size}`);
  }
}
