#!/usr/bin/env node
/**
 * Subcommands:
 *   make-asset --out w.bin [--seed 0]
 *   export --config c.json --images dir --out dir --weights w.bin [--size 224]
 *   serve --addr host:port --weights w.bin --images dir [--size 224]
 *   validate-corpus corpus.json        (prints per-entry verdicts as JSON)
 *
 * Exit codes: 0 ok, 2 configuration error, 3 asset/runtime error.
 */

import * as fs from "node:fs";

import { ConfigError, parseConfig } from "./config";
import { runExport } from "./export";
import { createServer } from "./serve";
import { AssetError, generateAsset, loadAsset } from "./supernet";

function parseFlags(argv: string[]): { positional: string[]; flags: Map<string, string> } {
  const positional: string[] = [];
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const value = argv[i + 1];
      if (value === undefined || value.startsWith("--")) {
        throw new ConfigError(`flag ${arg} needs a value`);
      }
      flags.set(arg.slice(2), value);
      i++;
    } else {
      positional.push(arg);
    }
  }
  return { positional, flags };
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) throw new ConfigError(`missing required flag --${name}`);
  return value;
}

function intFlag(flags: Map<string, string>, name: string, fallback: number): number {
  const raw = flags.get(name);
  if (raw === undefined) return fallback;
  const value = Number(raw);
  if (!Number.isInteger(value)) throw new ConfigError(`--${name} must be an integer`);
  return value;
}

function cmdMakeAsset(flags: Map<string, string>): number {
  const out = required(flags, "out");
  const seed = intFlag(flags, "seed", 0);
  const blob = generateAsset(seed);
  fs.writeFileSync(out, blob);
  console.log(`wrote ${blob.length} bytes to ${out} (seed ${seed})`);
  return 0;
}

function cmdExport(flags: Map<string, string>): number {
  const asset = loadAsset(required(flags, "weights"));
  const written = runExport({
    configPath: required(flags, "config"),
    imagesDir: required(flags, "images"),
    outDir: required(flags, "out"),
    asset,
    size: intFlag(flags, "size", 224),
  });
  console.log(`exported ${written.length} feature maps (weights crc32:${asset.checksum})`);
  return 0;
}

function cmdServe(flags: Map<string, string>): number {
  const addr = required(flags, "addr");
  const sep = addr.lastIndexOf(":");
  if (sep <= 0) throw new ConfigError(`--addr must be host:port, got ${addr}`);
  const host = addr.slice(0, sep);
  const port = Number(addr.slice(sep + 1));
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    throw new ConfigError(`bad port in ${addr}`);
  }
  const server = createServer({
    host,
    port,
    asset: loadAsset(required(flags, "weights")),
    imagesDir: required(flags, "images"),
    size: intFlag(flags, "size", 224),
  });
  server.listen(port, host, () => {
    const actual = server.address();
    const boundPort = typeof actual === "object" && actual ? actual.port : port;
    console.log(`serving on ${host}:${boundPort}`);
  });
  return 0;
}

function cmdValidateCorpus(positional: string[]): number {
  if (positional.length !== 1) throw new ConfigError("usage: validate-corpus corpus.json");
  const entries = JSON.parse(fs.readFileSync(positional[0], "utf8")) as Array<{
    id: number;
    config: unknown;
  }>;
  const verdicts = entries.map((entry) => {
    try {
      parseConfig(entry.config);
      return { id: entry.id, valid: true };
    } catch (err) {
      if (err instanceof ConfigError) return { id: entry.id, valid: false };
      throw err;
    }
  });
  console.log(JSON.stringify(verdicts));
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const { positional, flags } = parseFlags(rest);
    switch (command) {
      case "make-asset":
        return cmdMakeAsset(flags);
      case "export":
        return cmdExport(flags);
      case "serve":
        return cmdServe(flags);
      case "validate-corpus":
        return cmdValidateCorpus(positional);
      default:
        console.error(
          "usage: cli.js {make-asset|export|serve|validate-corpus} [flags]"
        );
        return 2;
    }
  } catch (err) {
    if (err instanceof ConfigError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err instanceof AssetError) {
      console.error(`asset error: ${err.message}`);
      return 3;
    }
    throw err;
  }
}

if (require.main === module) {
  const code = main(process.argv.slice(2));
  if (code !== 0) process.exit(code);
}
