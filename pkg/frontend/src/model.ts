/** Pure view-model helpers for the front scatter; all numbers come from the
 * engine, never recomputed client-side. */

import type { FrontRow } from "./api.js";

export type AxisKey = "dissimilarity" | "deformation" | "guidance";

export const AXIS_LABELS: Record<AxisKey, string> = {
  dissimilarity: "dissimilarity",
  deformation: "deformation (mm²)",
  guidance: "guidance error (mm²)",
};

export function availableAxes(rows: FrontRow[]): AxisKey[] {
  const axes: AxisKey[] = ["dissimilarity", "deformation"];
  if (rows.some((r) => r.guidance !== null)) {
    axes.push("guidance");
  }
  return axes;
}

export function axisValue(row: FrontRow, axis: AxisKey): number {
  const v = axis === "guidance" ? row.guidance : row[axis];
  return v === null ? NaN : v;
}

export interface ScatterPoint {
  id: string;
  x: number;
  y: number;
  row: FrontRow;
}

export function scatterPoints(rows: FrontRow[], xAxis: AxisKey, yAxis: AxisKey): ScatterPoint[] {
  return rows.map((row) => ({
    id: row.id,
    x: axisValue(row, xAxis),
    y: axisValue(row, yAxis),
    row,
  }));
}

export interface LinearScale {
  lo: number;
  hi: number;
  map(v: number): number;
}

export function makeScale(values: number[], outLo: number, outHi: number): LinearScale {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (!isFinite(lo) || !isFinite(hi)) {
    lo = 0;
    hi = 1;
  }
  if (hi === lo) {
    hi = lo + 1;
  }
  const pad = 0.04 * (hi - lo);
  lo -= pad;
  hi += pad;
  return {
    lo,
    hi,
    map: (v: number) => outLo + ((v - lo) / (hi - lo)) * (outHi - outLo),
  };
}

/** Row whose guidance (or dissimilarity when guidance is absent) is minimal. */
export function argminRow(rows: FrontRow[], axis: AxisKey): FrontRow {
  let best = rows[0];
  for (const row of rows) {
    if (axisValue(row, axis) < axisValue(best, axis)) {
      best = row;
    }
  }
  return best;
}

export function nearestPoint(
  pts: ScatterPoint[],
  px: number,
  py: number,
  toCanvas: (p: ScatterPoint) => [number, number],
  radius = 12,
): ScatterPoint | null {
  let best: ScatterPoint | null = null;
  let bestD = radius * radius;
  for (const p of pts) {
    const [cx, cy] = toCanvas(p);
    const d = (cx - px) * (cx - px) + (cy - py) * (cy - py);
    if (d <= bestD) {
      bestD = d;
      best = p;
    }
  }
  return best;
}

export function formatMetric(v: number): string {
  if (!isFinite(v)) return "n/a";
  if (v !== 0 && (Math.abs(v) < 1e-3 || Math.abs(v) >= 1e4)) {
    return v.toExponential(4);
  }
  return v.toFixed(4);
}

/** Subsample a vector-field slice to at most maxN x maxN arrows. */
export function subsampleField(
  vectors: number[][][],
  maxN = 32,
): { row: number; col: number; v: number[] }[] {
  const nRows = vectors.length;
  const nCols = nRows > 0 ? vectors[0].length : 0;
  const stepR = Math.max(1, Math.ceil(nRows / maxN));
  const stepC = Math.max(1, Math.ceil(nCols / maxN));
  const out: { row: number; col: number; v: number[] }[] = [];
  for (let r = Math.floor(stepR / 2); r < nRows; r += stepR) {
    for (let c = Math.floor(stepC / 2); c < nCols; c += stepC) {
      out.push({ row: r, col: c, v: vectors[r][c] });
    }
  }
  return out;
}

/** Difference image in [0,1]: 0.5 is equal, darker/brighter is mismatch. */
export function differenceRows(a: number[][], b: number[][]): number[][] {
  return a.map((rowA, r) =>
    rowA.map((v, c) => Math.min(1, Math.max(0, 0.5 + (v - b[r][c]) * 0.5))),
  );
}
