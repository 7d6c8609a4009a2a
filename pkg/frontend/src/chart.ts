/**
 * Strip-chart rendering: a ring buffer of recent samples per channel and
 * min/max per-pixel-column downsampling, so narrow spikes can never be
 * aliased away. The raster output is pure data; the ANSI painter sits on top.
 */

export interface Column {
  min: number;
  max: number;
}

/** Fixed-capacity scrolling window of the most recent samples. */
export class RingBuffer {
  private data: Float64Array;
  private length = 0;
  private next = 0;

  constructor(public readonly capacity: number) {
    this.data = new Float64Array(capacity);
  }

  push(values: ArrayLike<number>): void {
    for (let i = 0; i < values.length; i++) {
      this.data[this.next] = values[i];
      this.next = (this.next + 1) % this.capacity;
      if (this.length < this.capacity) this.length++;
    }
  }

  get size(): number {
    return this.length;
  }

  /** Oldest-to-newest copy of the window contents. */
  toArray(): Float64Array {
    const out = new Float64Array(this.length);
    const start = (this.next - this.length + this.capacity) % this.capacity;
    for (let i = 0; i < this.length; i++) {
      out[i] = this.data[(start + i) % this.capacity];
    }
    return out;
  }
}

/**
 * Reduce a trace to `columns` per-pixel min/max envelopes. Every sample lands
 * in exactly one column, so any excursion is preserved in its column's
 * min/max (the property the no-aliasing test pins down).
 */
export function minMaxColumns(samples: ArrayLike<number>, columns: number): Column[] {
  const n = samples.length;
  const out: Column[] = [];
  if (columns < 1) return out;
  for (let c = 0; c < columns; c++) {
    const start = Math.floor((c * n) / columns);
    const end = Math.max(start + 1, Math.floor(((c + 1) * n) / columns));
    let lo = Infinity;
    let hi = -Infinity;
    for (let i = start; i < Math.min(end, n); i++) {
      const v = samples[i];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    if (lo === Infinity) {
      const prev = out[out.length - 1];
      lo = prev ? prev.min : 0;
      hi = prev ? prev.max : 0;
    }
    out.push({ min: lo, max: hi });
  }
  return out;
}

export interface Raster {
  /** cells[row][col] = channel index that painted the cell, or -1 */
  cells: number[][];
  lo: number;
  hi: number;
}

/**
 * Rasterize several channel traces onto a rows x columns grid. Each channel's
 * min/max column envelope is drawn as a vertical run; later channels paint
 * over earlier ones (matching a strip chart's draw order).
 */
export function rasterize(traces: ArrayLike<number>[], rows: number,
                          columns: number): Raster {
  let lo = Infinity;
  let hi = -Infinity;
  const envelopes = traces.map((t) => minMaxColumns(t, columns));
  for (const env of envelopes) {
    for (const col of env) {
      if (col.min < lo) lo = col.min;
      if (col.max > hi) hi = col.max;
    }
  }
  if (!(hi > lo)) {
    lo -= 1;
    hi += 1;
  }
  const pad = (hi - lo) * 0.05;
  lo -= pad;
  hi += pad;
  const cells: number[][] = Array.from({ length: rows }, () =>
    new Array(columns).fill(-1));
  const toRow = (v: number) =>
    Math.min(rows - 1, Math.max(0, Math.round(((hi - v) / (hi - lo)) * (rows - 1))));
  envelopes.forEach((env, channel) => {
    env.forEach((col, c) => {
      const top = toRow(col.max);
      const bottom = toRow(col.min);
      for (let r = top; r <= bottom; r++) {
        cells[r][c] = channel;
      }
    });
  });
  return { cells, lo, hi };
}

/** Strip-chart axis colors: X blue, Y red, Z yellow. */
export const AXIS_ANSI = ["[34m", "[31m", "[33m"];
const RESET = "[0m";

export function paintAnsi(raster: Raster, colors: string[] = AXIS_ANSI): string[] {
  return raster.cells.map((row) => {
    let line = "";
    let current = -1;
    for (const cell of row) {
      if (cell < 0) {
        if (current >= 0) {
          line += RESET;
          current = -1;
        }
        line += " ";
      } else {
        if (cell !== current) {
          line += colors[cell % colors.length];
          current = cell;
        }
        line += "█";
      }
    }
    if (current >= 0) line += RESET;
    return line;
  });
}
