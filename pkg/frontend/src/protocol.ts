/**
 * Message shapes of the engine's WebSocket API and the binary batch codec.
 * Mirrors PROTOCOL.md at the repository root.
 */

export type CommandAction =
  | "start_task"
  | "stop_task"
  | "score"
  | "dbs_step"
  | "dbs_set"
  | "side_effect"
  | "set_point"
  | "set_view";

export interface CommandMessage {
  type: "command";
  id: number;
  action: CommandAction;
  args: Record<string, unknown>;
}

export interface DbsValues {
  amplitude: number;
  unit: "mA" | "V";
  frequency: number;
  pulse_width: number;
}

export interface Ack {
  type: "ack";
  id: number;
  ok: boolean;
  action?: CommandAction;
  sample_index?: number;
  error?: string;
  task_index?: number;
  event?: string;
  pending_dbs?: DbsValues;
  view?: Record<string, unknown>;
}

export interface EngineEvent {
  type: "event";
  action: string;
  sample_index?: number;
  task_index?: number;
  event?: string;
  missing?: number;
  [key: string]: unknown;
}

export interface StreamConfig {
  type: "stream_config";
  id: number;
  channels: string[];
  view: Record<string, unknown>;
  fs: number;
}

export interface EventsReply {
  type: "events";
  id: number;
  events: string[];
  open_task: string | null;
}

export interface StateReply {
  type: "state";
  id: number;
  sample_count: number;
  events: { string: string; range: [number, number] }[];
  open_task: string | null;
  pending_dbs: DbsValues;
  [key: string]: unknown;
}

export type ServerMessage = Ack | EngineEvent | StreamConfig | EventsReply | StateReply;

export interface Batch {
  startIndex: number;
  /** row-major: samples[i][c] is sample i of channel c */
  samples: number[][];
}

const BATCH_HEADER_BYTES = 8;

/** Decode one binary processed-sample batch (big-endian header + f32 data). */
export function decodeBatch(data: ArrayBuffer | Uint8Array): Batch {
  const buf = data instanceof Uint8Array
    ? data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength)
    : data;
  const view = new DataView(buf);
  const startIndex = view.getUint32(0, false);
  const count = view.getUint16(4, false);
  const channels = view.getUint8(6);
  const samples: number[][] = [];
  let offset = BATCH_HEADER_BYTES;
  for (let i = 0; i < count; i++) {
    const row: number[] = [];
    for (let c = 0; c < channels; c++) {
      row.push(view.getFloat32(offset, false));
      offset += 4;
    }
    samples.push(row);
  }
  return { startIndex, samples };
}

/** Encode a batch (used by tests to fabricate server traffic). */
export function encodeBatch(batch: Batch): Uint8Array {
  const count = batch.samples.length;
  const channels = count > 0 ? batch.samples[0].length : 0;
  const out = new Uint8Array(BATCH_HEADER_BYTES + 4 * count * channels);
  const view = new DataView(out.buffer);
  view.setUint32(0, batch.startIndex, false);
  view.setUint16(4, count, false);
  view.setUint8(6, channels);
  let offset = BATCH_HEADER_BYTES;
  for (const row of batch.samples) {
    for (const value of row) {
      view.setFloat32(offset, value, false);
      offset += 4;
    }
  }
  return out;
}
