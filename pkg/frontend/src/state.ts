/**
 * Console session state, derived exclusively from engine acks and pushed
 * events so the UI can restart mid-session and never invent a row: every
 * event-list entry is a string the engine formatted.
 */

import type { Ack, DbsValues, EngineEvent } from "./protocol.js";

export type Connection = "disconnected" | "connecting" | "connected";

export interface UiSessionState {
  connection: Connection;
  openTask: string | null;
  openTaskIndex: number | null;
  /** grey-box values being stepped; distinct from anything confirmed */
  pendingDbs: DbsValues | null;
  /** last values confirmed into the open task via the set button */
  confirmedDbs: DbsValues | null;
  eventList: string[];
  lastError: string | null;
  gapsSeen: number;
}

export function initialState(): UiSessionState {
  return {
    connection: "disconnected",
    openTask: null,
    openTaskIndex: null,
    pendingDbs: null,
    confirmedDbs: null,
    eventList: [],
    lastError: null,
    gapsSeen: 0,
  };
}

export function setConnection(state: UiSessionState, connection: Connection):
    UiSessionState {
  return { ...state, connection };
}

/** Apply one command ack from this client. Rejected acks only set lastError. */
export function applyAck(state: UiSessionState, ack: Ack): UiSessionState {
  if (!ack.ok) {
    return { ...state, lastError: ack.error ?? "rejected" };
  }
  const next = { ...state, lastError: null };
  switch (ack.action) {
    case "start_task":
      next.openTaskIndex = ack.task_index ?? null;
      next.openTask = "?";
      next.confirmedDbs = null;
      break;
    case "stop_task":
      if (ack.event) next.eventList = [...state.eventList, ack.event];
      next.openTask = null;
      next.openTaskIndex = null;
      next.confirmedDbs = null;
      break;
    case "dbs_step":
      next.pendingDbs = ack.pending_dbs ?? state.pendingDbs;
      break;
    case "dbs_set":
      next.confirmedDbs = ack.pending_dbs ?? state.pendingDbs;
      break;
    default:
      break;
  }
  return next;
}

/**
 * Apply a pushed engine event (these reach every client, including commands
 * issued elsewhere; the engine is the single source of truth).
 */
export function applyEngineEvent(state: UiSessionState, doc: EngineEvent):
    UiSessionState {
  const next = { ...state };
  switch (doc.action) {
    case "start_task":
      next.openTask = (doc as { task?: string }).task ?? "?";
      next.openTaskIndex = doc.task_index ?? null;
      break;
    case "stop_task":
      if (doc.event && !state.eventList.includes(doc.event)) {
        next.eventList = [...state.eventList, doc.event];
      }
      next.openTask = null;
      next.openTaskIndex = null;
      next.confirmedDbs = null;
      break;
    case "dbs_step":
      next.pendingDbs = (doc as { pending_dbs?: DbsValues }).pending_dbs
        ?? state.pendingDbs;
      break;
    case "dbs_set":
      next.confirmedDbs = (doc as { pending_dbs?: DbsValues }).pending_dbs
        ?? state.pendingDbs;
      break;
    case "frame_gap":
      next.gapsSeen = state.gapsSeen + 1;
      break;
    default:
      break;
  }
  return next;
}

/** Replace the mirror with the engine's authoritative list. */
export function applyEventsList(state: UiSessionState, events: string[],
                                openTask: string | null): UiSessionState {
  return { ...state, eventList: [...events], openTask };
}

export function formatDbs(values: DbsValues | null): string {
  if (!values) return "-";
  const amp = Number.isInteger(values.amplitude * 10) && values.amplitude * 10 % 10 === 0
    ? String(values.amplitude)
    : values.amplitude.toFixed(1);
  return `${amp}${values.unit} ${values.frequency}Hz ${values.pulse_width}us`;
}
