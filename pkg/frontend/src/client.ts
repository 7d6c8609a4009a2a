/**
 * WebSocket client for the session engine: promise-based commands with ack
 * correlation, pushed-event and binary-batch callbacks.
 */

import WebSocket from "ws";

import {
  Ack, Batch, CommandAction, EventsReply, ServerMessage, StateReply,
  StreamConfig, decodeBatch,
} from "./protocol.js";

export interface CommandResult {
  ack: Ack;
  rttMs: number;
}

type Pending = {
  resolve: (msg: ServerMessage) => void;
  reject: (err: Error) => void;
  sentAt: number;
  timer: NodeJS.Timeout;
};

export class EngineClient {
  private ws: WebSocket | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  onEvent: ((doc: ServerMessage) => void) | null = null;
  onBatch: ((batch: Batch) => void) | null = null;
  onClose: (() => void) | null = null;

  constructor(public readonly url: string,
              public readonly ackTimeoutMs: number = 5000) {}

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(this.url);
      this.ws = ws;
      ws.binaryType = "arraybuffer";
      ws.once("open", () => resolve());
      ws.once("error", (err) => reject(err));
      ws.on("close", () => {
        for (const p of this.pending.values()) {
          clearTimeout(p.timer);
          p.reject(new Error("connection closed"));
        }
        this.pending.clear();
        this.onClose?.();
      });
      ws.on("message", (data, isBinary) => this.handle(data, isBinary));
    });
  }

  close(): void {
    this.ws?.close();
  }

  private handle(data: WebSocket.RawData, isBinary: boolean): void {
    if (isBinary) {
      const buf = data as Buffer;
      this.onBatch?.(decodeBatch(new Uint8Array(buf)));
      return;
    }
    const doc = JSON.parse(data.toString()) as ServerMessage;
    const id = (doc as { id?: number }).id;
    if (id !== undefined && this.pending.has(id)) {
      const p = this.pending.get(id)!;
      this.pending.delete(id);
      clearTimeout(p.timer);
      p.resolve(doc);
      return;
    }
    this.onEvent?.(doc);
  }

  private request(doc: Record<string, unknown>): Promise<{ msg: ServerMessage; rttMs: number }> {
    const ws = this.ws;
    if (!ws || ws.readyState !== WebSocket.OPEN) {
      return Promise.reject(new Error("not connected"));
    }
    const id = this.nextId++;
    const sentAt = performance.now();
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(id);
        reject(new Error(`ack timeout for message ${id}`));
      }, this.ackTimeoutMs);
      this.pending.set(id, {
        resolve: (msg) => resolve({ msg, rttMs: performance.now() - sentAt }),
        reject,
        sentAt,
        timer,
      });
      ws.send(JSON.stringify({ ...doc, id }));
    });
  }

  async command(action: CommandAction,
                args: Record<string, unknown> = {}): Promise<CommandResult> {
    const { msg, rttMs } = await this.request({ type: "command", action, args });
    return { ack: msg as Ack, rttMs };
  }

  async subscribe(): Promise<StreamConfig> {
    const { msg } = await this.request({ type: "subscribe" });
    return msg as StreamConfig;
  }

  async listEvents(): Promise<EventsReply> {
    const { msg } = await this.request({ type: "list_events" });
    return msg as EventsReply;
  }

  async state(): Promise<StateReply> {
    const { msg } = await this.request({ type: "state" });
    return msg as StateReply;
  }
}
