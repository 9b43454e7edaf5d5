#!/usr/bin/env node
/**
 * Reference prediction adapter speaking the coalshap subprocess protocol:
 * newline-delimited JSON requests on stdin, one JSON reply per line on stdout.
 *
 *   -> {"op": "hello"}
 *   <- {"status": "ok", "protocol": 1}
 *   -> {"op": "predict", "subject": s, "coalition": bits,
 *       "input": <MCV1 path>, "output": <SEG1 path>}
 *   <- {"status": "ok"}   after writing the SEG1 file
 *
 * The driver ablates channels before writing the input volume, so this
 * process never ablates; it either runs the bundled union-reveal synthetic
 * model or shells out to an external engine command. Malformed requests get
 * {"status": "error"} replies and the loop continues — the process only
 * exits on stdin EOF.
 */

import { spawnSync } from "node:child_process";
import { appendFileSync } from "node:fs";
import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";
import { parseArgs } from "node:util";

import { readMcv, writeSeg } from "./codec.js";
import { syntheticLabels } from "./synthetic.js";

export const PROTOCOL_VERSION = 1;

export interface AdapterConfig {
  /** Command template; {input}, {output}, {coalition} are substituted. */
  engineCommand?: string;
  /** Class ids for the built-in union-reveal model. */
  syntheticLabelSet?: number[];
  logPath?: string;
}

export function validateConfig(config: AdapterConfig): void {
  const hasEngine = Boolean(config.engineCommand);
  const hasSynthetic = Boolean(config.syntheticLabelSet?.length);
  if (hasEngine === hasSynthetic) {
    throw new Error("exactly one of engineCommand / syntheticLabelSet must be set");
  }
}

interface PredictRequest {
  op: "predict";
  subject: string;
  coalition: number;
  input: string;
  output: string;
}

function log(config: AdapterConfig, message: string): void {
  if (config.logPath) {
    appendFileSync(config.logPath, `${new Date().toISOString()} ${message}\n`);
  }
}

function asPredict(request: Record<string, unknown>): PredictRequest {
  const { subject, coalition, input, output } = request;
  if (typeof subject !== "string") throw new Error("predict needs a string subject");
  if (typeof coalition !== "number" || !Number.isInteger(coalition) || coalition < 0) {
    throw new Error("predict needs a non-negative integer coalition bitmask");
  }
  if (typeof input !== "string" || typeof output !== "string") {
    throw new Error("predict needs input/output paths");
  }
  return { op: "predict", subject, coalition, input, output };
}

function runEngine(template: string, req: PredictRequest): void {
  let command = template;
  for (const [token, value] of [
    ["{input}", req.input],
    ["{output}", req.output],
    ["{coalition}", String(req.coalition)],
  ] as const) {
    command = command.split(token).join(value);
  }
  if (command === template) {
    command = `${template} ${req.input} ${req.output} ${req.coalition}`;
  }
  const result = spawnSync("/bin/sh", ["-c", command], { encoding: "utf-8" });
  if (result.error) {
    throw new Error(`engine failed to launch: ${result.error.message}`);
  }
  if (result.status !== 0) {
    const stderr = (result.stderr ?? "").slice(-500);
    throw new Error(`engine exited with code ${result.status}: ${stderr}`);
  }
}

function predict(config: AdapterConfig, req: PredictRequest): void {
  if (config.engineCommand) {
    runEngine(config.engineCommand, req);
    return;
  }
  const volume = readMcv(req.input);
  const labelSet = config.syntheticLabelSet!;
  const labels = syntheticLabels(volume, req.coalition, labelSet);
  writeSeg(
    {
      labels,
      dims: [volume.dims[1], volume.dims[2], volume.dims[3]],
      spacing: volume.spacing,
      labelSet,
    },
    req.output,
  );
}

export function handleLine(config: AdapterConfig, line: string): string {
  let request: unknown;
  try {
    request = JSON.parse(line);
  } catch {
    log(config, `malformed JSON: ${line.slice(0, 200)}`);
    return JSON.stringify({ status: "error", message: "malformed JSON request" });
  }
  if (typeof request !== "object" || request === null) {
    return JSON.stringify({ status: "error", message: "request must be a JSON object" });
  }
  const op = (request as Record<string, unknown>).op;
  if (op === "hello") {
    return JSON.stringify({ status: "ok", protocol: PROTOCOL_VERSION });
  }
  if (op === "predict") {
    try {
      const req = asPredict(request as Record<string, unknown>);
      predict(config, req);
      log(config, `predict ${req.subject}/${req.coalition} ok`);
      return JSON.stringify({ status: "ok" });
    } catch (err) {
      const message = err instanceof Error ? err.message : String(err);
      log(config, `predict failed: ${message}`);
      return JSON.stringify({ status: "error", message });
    }
  }
  return JSON.stringify({ status: "error", message: `unknown op: ${String(op)}` });
}

/** Request loop: one reply line per request line, in order, until EOF. */
export async function serve(
  config: AdapterConfig,
  input: Readable,
  output: Writable,
): Promise<void> {
  validateConfig(config);
  const lines = createInterface({ input, crlfDelay: Infinity });
  for await (const line of lines) {
    if (line.trim() === "") {
      continue;
    }
    output.write(handleLine(config, line) + "\n");
  }
}

export function configFromArgv(argv: string[]): AdapterConfig {
  const { values } = parseArgs({
    args: argv,
    options: {
      "engine-cmd": { type: "string" },
      "synthetic-labels": { type: "string" },
      log: { type: "string" },
    },
  });
  const config: AdapterConfig = { logPath: values.log };
  if (values["engine-cmd"]) {
    config.engineCommand = values["engine-cmd"];
  }
  if (values["synthetic-labels"]) {
    config.syntheticLabelSet = values["synthetic-labels"]
      .split(",")
      .map((s) => Number.parseInt(s.trim(), 10));
    if (config.syntheticLabelSet.some((l) => !Number.isInteger(l) || l < 1 || l > 255)) {
      throw new Error(`labels must be integers in 1..255: ${values["synthetic-labels"]}`);
    }
  }
  validateConfig(config);
  return config;
}

const isMain =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop()!);

if (isMain) {
  let config: AdapterConfig;
  try {
    config = configFromArgv(process.argv.slice(2));
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    process.exit(2);
  }
  serve(config, process.stdin, process.stdout).catch((err) => {
    console.error(`fatal: ${err instanceof Error ? err.message : String(err)}`);
    process.exit(1);
  });
}
