/**
 * Headless scripted console session: drives the exact command sequence a
 * clinician would click, keeps the UI state mirror from acks/events only,
 * and reports ack round-trip times plus the engine's authoritative event
 * list for comparison. Used by the end-to-end test and runnable directly:
 *
 *   node dist/scripted.js ws://127.0.0.1:8765
 */

import { EngineClient } from "./client.js";
import type { CommandAction, EngineEvent } from "./protocol.js";
import {
  UiSessionState, applyAck, applyEngineEvent, applyEventsList, initialState,
  setConnection,
} from "./state.js";

export interface ScriptStep {
  action: CommandAction;
  args?: Record<string, unknown>;
}

/** The canonical annotation flow: four plain tasks, then the showcase task
 * "5-FN/S3/DBS-3.5V-130Hz-60us/SE6" (score 3, +0.5 V, set, side effect 6). */
export function captionScript(): ScriptStep[] {
  const steps: ScriptStep[] = [];
  for (let i = 0; i < 4; i++) {
    steps.push({ action: "start_task", args: { task: "RP" } });
    steps.push({ action: "stop_task" });
  }
  steps.push({ action: "start_task", args: { task: "FN" } });
  steps.push({ action: "score", args: { value: 3 } });
  steps.push({ action: "dbs_step", args: { field: "amplitude", step: 0.5 } });
  steps.push({ action: "dbs_set" });
  steps.push({ action: "side_effect", args: { code: 5 } });
  steps.push({ action: "stop_task" });
  return steps;
}

export interface ScriptedResult {
  state: UiSessionState;
  rttsMs: number[];
  engineEvents: string[];
  mirrorMatchesEngine: boolean;
  rejected: number;
}

export async function runScriptedSession(url: string, script: ScriptStep[],
                                         ackTimeoutMs = 5000): Promise<ScriptedResult> {
  const client = new EngineClient(url, ackTimeoutMs);
  let state = initialState();
  state = setConnection(state, "connecting");
  client.onEvent = (doc) => {
    if (doc.type === "event") {
      state = applyEngineEvent(state, doc as EngineEvent);
    }
  };
  await client.connect();
  state = setConnection(state, "connected");
  const rttsMs: number[] = [];
  let rejected = 0;
  try {
    for (const step of script) {
      const { ack, rttMs } = await client.command(step.action, step.args ?? {});
      rttsMs.push(rttMs);
      if (!ack.ok) rejected++;
      state = applyAck(state, ack);
    }
    const reply = await client.listEvents();
    const mirrorMatchesEngine =
      reply.events.length === state.eventList.length &&
      reply.events.every((line, i) => line === state.eventList[i]);
    // the refresh path must be a no-op when the mirror is already right
    state = applyEventsList(state, reply.events, reply.open_task);
    return {
      state,
      rttsMs,
      engineEvents: reply.events,
      mirrorMatchesEngine,
      rejected,
    };
  } finally {
    client.close();
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("scripted.js")) {
  const url = process.argv[2] ?? "ws://127.0.0.1:8765";
  runScriptedSession(url, captionScript())
    .then((result) => {
      console.log("event list:");
      for (const line of result.state.eventList) console.log(`  ${line}`);
      const worst = Math.max(...result.rttsMs);
      console.log(`acks: ${result.rttsMs.length}, worst rtt ${worst.toFixed(1)} ms`);
      console.log(`mirror matches engine: ${result.mirrorMatchesEngine}`);
      process.exit(result.mirrorMatchesEngine ? 0 : 1);
    })
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}
