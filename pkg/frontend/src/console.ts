/**
 * Interactive terminal console: live strip chart of the subscribed stream,
 * one-key motor-task / score / DBS / side-effect / set-point controls, and
 * the event list — everything driven through the engine socket.
 *
 *   node dist/console.js ws://127.0.0.1:8765
 *
 * Keys: 1-4 start RP/PP/FN/HM  x stop  0-4 after 's' score  +/- amplitude
 *       g confirm DBS (set)  e<1-8> side effect  m set-point  q quit
 */

import { EngineClient } from "./client.js";
import { RingBuffer, paintAnsi, rasterize } from "./chart.js";
import type { Batch, EngineEvent } from "./protocol.js";
import {
  UiSessionState, applyAck, applyEngineEvent, applyEventsList, formatDbs,
  initialState, setConnection,
} from "./state.js";

const TASK_KEYS: Record<string, string> = { "1": "RP", "2": "PP", "3": "FN", "4": "HM" };
const WINDOW_S = 5;
const CHART_ROWS = 14;

class Console {
  private state = initialState();
  private buffers: RingBuffer[] = [];
  private channels: string[] = [];
  private fs = 200;
  private scoreArmed = false;
  private sideEffectArmed = false;
  private dirty = true;

  constructor(private client: EngineClient) {}

  async run(): Promise<void> {
    this.state = setConnection(this.state, "connecting");
    this.client.onEvent = (doc) => {
      if (doc.type === "event") {
        this.state = applyEngineEvent(this.state, doc as EngineEvent);
        this.dirty = true;
      }
    };
    this.client.onBatch = (batch) => this.takeBatch(batch);
    this.client.onClose = () => {
      this.state = setConnection(this.state, "disconnected");
      this.dirty = true;
    };
    await this.client.connect();
    this.state = setConnection(this.state, "connected");
    const stream = await this.client.subscribe();
    this.fs = stream.fs;
    this.channels = stream.channels.slice(0, 3);   // accel x/y/z on the chart
    this.buffers = this.channels.map(() => new RingBuffer(WINDOW_S * this.fs));
    const reply = await this.client.listEvents();
    this.state = applyEventsList(this.state, reply.events, reply.open_task);
    this.hookKeys();
    const timer = setInterval(() => this.render(), 100);
    await new Promise<void>((resolve) => {
      process.stdin.on("data", (key: Buffer) => {
        if (key.toString() === "q") {
          clearInterval(timer);
          resolve();
        }
      });
      this.client.onClose = () => {
        clearInterval(timer);
        resolve();
      };
    });
    this.client.close();
  }

  private takeBatch(batch: Batch): void {
    batch.samples.forEach((row) => {
      this.buffers.forEach((buf, c) => buf.push([row[c] ?? 0]));
    });
    this.dirty = true;
  }

  private hookKeys(): void {
    if (!process.stdin.isTTY) return;
    process.stdin.setRawMode(true);
    process.stdin.resume();
    process.stdin.on("data", (key: Buffer) => void this.onKey(key.toString()));
  }

  private async onKey(key: string): Promise<void> {
    try {
      if (this.scoreArmed && /^[0-4]$/.test(key)) {
        this.scoreArmed = false;
        await this.send("score", { value: Number(key) });
        return;
      }
      if (this.sideEffectArmed && /^[1-8]$/.test(key)) {
        this.sideEffectArmed = false;
        await this.send("side_effect", { code: Number(key) - 1 });
        return;
      }
      if (key in TASK_KEYS) await this.send("start_task", { task: TASK_KEYS[key] });
      else if (key === "x") await this.send("stop_task");
      else if (key === "s") this.scoreArmed = true;
      else if (key === "e") this.sideEffectArmed = true;
      else if (key === "+") await this.send("dbs_step", { field: "amplitude", step: 0.5 });
      else if (key === "-") await this.send("dbs_step", { field: "amplitude", step: -0.5 });
      else if (key === "g") await this.send("dbs_set");
      else if (key === "m") await this.send("set_point");
    } catch {
      /* disconnects surface through onClose */
    }
    this.dirty = true;
  }

  private async send(action: Parameters<EngineClient["command"]>[0],
                     args: Record<string, unknown> = {}): Promise<void> {
    const { ack } = await this.client.command(action, args);
    this.state = applyAck(this.state, ack);
  }

  private render(): void {
    if (!this.dirty) return;
    this.dirty = false;
    const width = Math.max(40, (process.stdout.columns ?? 100) - 2);
    const lines: string[] = [];
    lines.push(`[${this.state.connection}]  open task: ` +
      `${this.state.openTask ?? "-"}  grey DBS: ${formatDbs(this.state.pendingDbs)}` +
      `  set: ${formatDbs(this.state.confirmedDbs)}` +
      (this.state.lastError ? `  ! ${this.state.lastError}` : ""));
    if (this.buffers.length > 0 && this.buffers[0].size > 1) {
      const raster = rasterize(this.buffers.map((b) => b.toArray()), CHART_ROWS, width);
      lines.push(...paintAnsi(raster));
    }
    lines.push("events:");
    for (const line of this.state.eventList.slice(-6)) lines.push(`  ${line}`);
    process.stdout.write("[2J[H" + lines.join("\n") + "\n");
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("console.js")) {
  const url = process.argv[2] ?? "ws://127.0.0.1:8765";
  new Console(new EngineClient(url)).run()
    .then(() => process.exit(0))
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}

export { Console };
