import { describe, expect, it } from "vitest";

import type { FrontRow } from "../src/api.js";
import {
  argminRow,
  availableAxes,
  differenceRows,
  formatMetric,
  makeScale,
  nearestPoint,
  scatterPoints,
  subsampleField,
} from "../src/model.js";

const rows: FrontRow[] = [
  { id: "s1-00000", dissimilarity: 0.30, deformation: 1.0, guidance: 9.0 },
  { id: "s1-00001", dissimilarity: 0.25, deformation: 2.0, guidance: 5.0 },
  { id: "s1-00002", dissimilarity: 0.20, deformation: 4.0, guidance: 7.5 },
];

describe("availableAxes", () => {
  it("includes guidance only when present", () => {
    expect(availableAxes(rows)).toEqual(["dissimilarity", "deformation", "guidance"]);
    const noGuide = rows.map((r) => ({ ...r, guidance: null }));
    expect(availableAxes(noGuide)).toEqual(["dissimilarity", "deformation"]);
  });
});

describe("scatterPoints", () => {
  it("keeps one point per row under any axis pair", () => {
    for (const x of ["dissimilarity", "deformation", "guidance"] as const) {
      for (const y of ["dissimilarity", "deformation", "guidance"] as const) {
        const pts = scatterPoints(rows, x, y);
        expect(pts.length).toBe(rows.length);
        expect(new Set(pts.map((p) => p.id)).size).toBe(rows.length);
      }
    }
  });

  it("axis swap permutes coordinates", () => {
    const xy = scatterPoints(rows, "dissimilarity", "guidance");
    const yx = scatterPoints(rows, "guidance", "dissimilarity");
    for (let i = 0; i < rows.length; i++) {
      expect(xy[i].x).toBe(yx[i].y);
      expect(xy[i].y).toBe(yx[i].x);
    }
  });
});

describe("argminRow", () => {
  it("finds the lowest-guidance row", () => {
    expect(argminRow(rows, "guidance").id).toBe("s1-00001");
    expect(argminRow(rows, "dissimilarity").id).toBe("s1-00002");
  });

  it("handles a single row", () => {
    expect(argminRow([rows[0]], "guidance").id).toBe("s1-00000");
  });
});

describe("makeScale", () => {
  it("maps the padded range onto the output span", () => {
    const s = makeScale([0, 10], 100, 200);
    expect(s.map(0)).toBeGreaterThan(100);
    expect(s.map(10)).toBeLessThan(200);
    expect(s.map(5)).toBeCloseTo(150, 6);
  });

  it("degenerate input still produces a finite scale", () => {
    const s = makeScale([3, 3, 3], 0, 100);
    expect(Number.isFinite(s.map(3))).toBe(true);
  });
});

describe("nearestPoint", () => {
  it("picks within the radius only", () => {
    const pts = scatterPoints(rows, "dissimilarity", "deformation");
    const toCanvas = (p: { x: number; y: number }): [number, number] => [
      p.x * 100,
      p.y * 10,
    ];
    expect(nearestPoint(pts, 25, 20, toCanvas)?.id).toBe("s1-00001");
    expect(nearestPoint(pts, 900, 900, toCanvas)).toBeNull();
  });
});

describe("subsampleField", () => {
  it("caps the arrow grid at 32x32", () => {
    const vectors = Array.from({ length: 128 }, () =>
      Array.from({ length: 96 }, () => [1, 0, 0]),
    );
    const arrows = subsampleField(vectors);
    expect(arrows.length).toBeLessThanOrEqual(32 * 32);
    const rowsSeen = new Set(arrows.map((a) => a.row));
    expect(rowsSeen.size).toBeLessThanOrEqual(32);
  });

  it("keeps small fields intact", () => {
    const vectors = Array.from({ length: 8 }, () =>
      Array.from({ length: 8 }, () => [0, 1, 0]),
    );
    expect(subsampleField(vectors).length).toBe(64);
  });
});

describe("differenceRows", () => {
  it("equal slices map to mid-gray", () => {
    const a = [[0.25, 0.5], [0.75, 1.0]];
    expect(differenceRows(a, a).flat().every((v) => v === 0.5)).toBe(true);
  });

  it("clamps to [0, 1]", () => {
    const d = differenceRows([[1.0]], [[0.0]]);
    expect(d[0][0]).toBe(1.0);
    const d2 = differenceRows([[0.0]], [[1.0]]);
    expect(d2[0][0]).toBe(0.0);
  });
});

describe("formatMetric", () => {
  it("fixed digits in the readable range", () => {
    expect(formatMetric(0.9113)).toBe("0.9113");
    expect(formatMetric(1.1492)).toBe("1.1492");
  });

  it("exponential outside it", () => {
    expect(formatMetric(1e-7)).toContain("e-");
  });
});
