import { describe, expect, it } from "vitest";

import { RingBuffer, minMaxColumns, paintAnsi, rasterize } from "../src/chart.js";

describe("RingBuffer", () => {
  it("keeps the most recent window in order", () => {
    const buf = new RingBuffer(5);
    buf.push([1, 2, 3]);
    expect(Array.from(buf.toArray())).toEqual([1, 2, 3]);
    buf.push([4, 5, 6, 7]);
    expect(buf.size).toBe(5);
    expect(Array.from(buf.toArray())).toEqual([3, 4, 5, 6, 7]);
  });
});

describe("minMaxColumns", () => {
  it("partitions all samples and preserves extremes", () => {
    const n = 1000;
    const samples = new Array(n).fill(0).map((_, i) => Math.sin(i / 7));
    samples[531] = 9.5; // lone spike must survive any downsampling
    const cols = minMaxColumns(samples, 64);
    expect(cols).toHaveLength(64);
    const overallMax = Math.max(...cols.map((c) => c.max));
    expect(overallMax).toBe(9.5);
  });

  it("brackets a step within one pixel column", () => {
    const n = 997;
    const columns = 50;
    for (const step of [531, Math.floor(n / 2)]) {   // mid-bucket and boundary-aligned
      const samples = new Array(n).fill(0).map((_, i) => (i < step ? -1 : 1));
      const cols = minMaxColumns(samples, columns);
      const lastLow = cols.map((c) => c.min).lastIndexOf(-1);
      const firstHigh = cols.map((c) => c.max).indexOf(1);
      // the transition renders within a single pixel: either one column shows
      // both levels, or the levels sit in adjacent columns
      expect(firstHigh - lastLow).toBeLessThanOrEqual(1);
      expect(firstHigh).toBeGreaterThanOrEqual(0);
      // no column invents a level that does not exist in its bucket
      for (let c = 0; c < firstHigh; c++) expect(cols[c].max).toBe(-1);
      for (let c = lastLow + 1; c < columns; c++) expect(cols[c].min).toBe(1);
    }
  });

  it("matches a brute-force bucket scan on random data", () => {
    const rnd = (seed: number) => () => {
      seed = (seed * 1103515245 + 12345) & 0x7fffffff;
      return seed / 0x7fffffff;
    };
    const rand = rnd(42);
    const samples = new Array(317).fill(0).map(() => rand() * 2 - 1);
    const columns = 23;
    const cols = minMaxColumns(samples, columns);
    for (let c = 0; c < columns; c++) {
      const start = Math.floor((c * samples.length) / columns);
      const end = Math.max(start + 1,
        Math.floor(((c + 1) * samples.length) / columns));
      const slice = samples.slice(start, Math.min(end, samples.length));
      expect(cols[c].min).toBe(Math.min(...slice));
      expect(cols[c].max).toBe(Math.max(...slice));
    }
  });
});

describe("rasterize/paint", () => {
  it("covers each column between the envelope rows", () => {
    const trace = new Array(100).fill(0).map((_, i) => Math.sin(i / 5));
    const raster = rasterize([trace], 10, 20);
    expect(raster.cells).toHaveLength(10);
    for (let c = 0; c < 20; c++) {
      const hit = raster.cells.some((row) => row[c] === 0);
      expect(hit).toBe(true);
    }
    const lines = paintAnsi(raster);
    expect(lines).toHaveLength(10);
    expect(lines.some((l) => l.includes("█"))).toBe(true);
  });

  it("later channels paint over earlier ones", () => {
    const a = new Array(50).fill(-1);
    const b = new Array(50).fill(-1);
    const raster = rasterize([a, b], 8, 10);
    const painted = raster.cells.flat().filter((v) => v >= 0);
    expect(painted.every((v) => v === 1)).toBe(true);
  });

  it("handles constant traces without dividing by zero", () => {
    const raster = rasterize([new Array(10).fill(3)], 5, 5);
    expect(raster.lo).toBeLessThan(3);
    expect(raster.hi).toBeGreaterThan(3);
  });
});
