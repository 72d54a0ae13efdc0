#!/usr/bin/env node
/** CLI: plot --in CSV --out FILE [--format svg|png] [--env NAME] */

import { readFileSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { loadCurves, SchemaError } from "./curves.js";
import { render } from "./render.js";

export interface CliArgs {
  input: string;
  output: string;
  format: "svg" | "png";
  env?: string;
}

export function parseArgs(argv: string[]): CliArgs {
  let input: string | undefined;
  let output: string | undefined;
  let format: "svg" | "png" = "svg";
  let env: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--in":
        input = argv[++i];
        break;
      case "--out":
        output = argv[++i];
        break;
      case "--format": {
        const value = argv[++i];
        if (value !== "svg" && value !== "png") {
          throw new Error(`--format must be svg or png, got "${value}"`);
        }
        format = value;
        break;
      }
      case "--env":
        env = argv[++i];
        break;
      default:
        throw new Error(`unknown argument "${argv[i]}"`);
    }
  }
  if (!input || !output) {
    throw new Error("usage: plot --in CSV --out FILE [--format svg|png] [--env NAME]");
  }
  return { input, output, format, env };
}

export function main(argv: string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  if (args.format === "png") {
    // SVG is the native output; rasterization needs an external tool such as
    // rsvg-convert or resvg, which are not bundled.
    console.error("error: png output requires an external SVG rasterizer; use --format svg");
    return 2;
  }
  try {
    const text = readFileSync(args.input, "utf8");
    let series = loadCurves(text);
    if (args.env !== undefined) {
      series = series.filter((s) => s.environment === args.env);
    }
    const svg = render(series, { title: args.env });
    writeFileSync(args.output, svg);
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${err.message}`);
      return 1;
    }
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
