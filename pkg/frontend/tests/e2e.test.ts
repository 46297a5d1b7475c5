/** End-to-end checks against a real served bundle: the explorer's data paths
 * agree with the engine's front table, selection and CLI metrics. */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { BundleApi } from "../src/api.js";
import { argminRow, formatMetric, scatterPoints } from "../src/model.js";

const CONFIG = {
  seed: 31,
  clusters: 2,
  schedule: [
    { grid_resolution: [4, 4, 4], population_size: 8, generations: 2 },
    { grid_resolution: [7, 7, 7], population_size: 8, generations: 2 },
  ],
};

let work: string;
let bundleDir: string;
let server: ChildProcess | null = null;
let api: BundleApi;

function python(args: string[], timeoutMs = 280_000): string {
  return execFileSync("python3", ["-m", "morphreg.driver", ...args], {
    timeout: timeoutMs,
    encoding: "utf-8",
  });
}

beforeAll(async () => {
  work = mkdtempSync(join(tmpdir(), "morphreg-e2e-"));
  const probDir = join(work, "prob");
  bundleDir = join(work, "bundle");
  python([
    "synth", "--out", probDir, "--dims", "32", "--cube-side", "25",
    "--sphere-radius", "6", "--sphere-radius-target", "3", "--depth", "4",
    "--n-guidance", "64",
  ]);
  const cfgPath = join(work, "config.json");
  const { writeFileSync } = await import("node:fs");
  writeFileSync(cfgPath, JSON.stringify(CONFIG));
  python(["register", "--problem", probDir, "--config", cfgPath, "--out", bundleDir]);

  server = spawn("python3", ["-m", "morphreg.driver", "serve", "--bundle", bundleDir, "--port", "0"]);
  const port = await new Promise<number>((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(() => reject(new Error(`serve did not start: ${buffer}`)), 60_000);
    server!.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const m = buffer.match(/http:\/\/127\.0\.0\.1:(\d+)/);
      if (m) {
        clearTimeout(timer);
        resolve(Number(m[1]));
      }
    });
    server!.on("error", reject);
  });
  api = new BundleApi(`http://127.0.0.1:${port}`);
});

afterAll(() => {
  server?.kill();
});

describe("front explorer against a served bundle", () => {
  it("scatter point count equals the front table row count", async () => {
    for (const stage of [1, 2]) {
      const rows = await api.front(stage);
      const pts = scatterPoints(rows, "dissimilarity", "guidance");
      const csv = readFileSync(join(bundleDir, `front_stage${stage}.csv`), "utf-8");
      const csvRows = csv.trim().split("\n").length - 1; // header
      expect(pts.length).toBe(rows.length);
      expect(rows.length).toBe(csvRows);
    }
  });

  it("selecting the min-guidance solution persists the table argmin id", async () => {
    const rows = await api.front(2);
    const best = argminRow(rows, "guidance");
    // independent argmin over the on-disk table
    const csv = readFileSync(join(bundleDir, "front_stage2.csv"), "utf-8")
      .trim().split("\n").slice(1)
      .map((line) => line.split(","));
    let diskBest = csv[0];
    for (const row of csv) {
      if (Number(row[3]) < Number(diskBest[3])) diskBest = row;
    }
    expect(best.id).toBe(diskBest[0]);

    const sel = await api.select(best.id);
    expect(sel.id).toBe(best.id);
    const selected = JSON.parse(
      readFileSync(join(bundleDir, "selected.json"), "utf-8"),
    );
    expect(selected.id).toBe(best.id);
    const meta = await api.meta();
    expect(meta.selected?.id).toBe(best.id);
    expect(existsSync(join(bundleDir, "selected", "transformed_source.mha"))).toBe(true);
  });

  it("displayed Dice equals the CLI metrics output to all shown digits", async () => {
    const rows = await api.front(2);
    const best = argminRow(rows, "guidance");
    const shown = await api.metrics(best.id);
    const cliOut = JSON.parse(
      python(["metrics", "--bundle", bundleDir, "--solution", best.id]),
    );
    expect(shown.dice).toBe(cliOut.dice);
    expect(formatMetric(shown.dice)).toBe(formatMetric(cliOut.dice));
    expect(shown.guidance_error_mm2).toBe(cliOut.guidance_error_mm2);
  });

  it("slice and dvf payloads are consistent with the volume dims", async () => {
    const meta = await api.meta();
    const rows = await api.front(1);
    const slice = await api.slice(rows[0].id, "transformed", 10);
    expect(slice.width).toBe(meta.dims[0]);
    expect(slice.rows.length).toBe(meta.dims[1]);
    const dvf = await api.dvf(rows[0].id, 10);
    expect(dvf.vectors.length).toBe(meta.dims[1]);
    expect(dvf.vectors[0].length).toBe(meta.dims[0]);
    expect(dvf.vectors[0][0].length).toBe(3);
  });
});
