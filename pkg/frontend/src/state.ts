/**
 * Editor state and its pure reducer.
 *
 * Every UI interaction and network outcome is an event; the reducer is a
 * pure function of (state, event), so replaying a recorded event log
 * reproduces the exact final state. Controllers own the side effects
 * (debouncing, fetches, sequence numbers) and feed events in.
 */

import type { ManipulationResult } from "./types.js";

export type ControlMode = "beta" | "k";
export type EditMethod = "global" | "mapper" | "optimize";

export interface GlobalParams {
  target: string;
  neutral: string;
  alpha: number;
  controlMode: ControlMode;
  beta: number;
  k: number;
}

export interface HistoryEntry {
  params: GlobalParams;
  result: ManipulationResult;
}

export interface JobView {
  id: string;
  state: "queued" | "running" | "done" | "failed" | "cancelled";
  progress: number;
}

export interface EditorState {
  imageId: string | null;
  originalPngBase64: string | null;
  target: string;
  neutral: string;
  alpha: number;
  controlMode: ControlMode;
  beta: number;
  k: number;
  method: EditMethod;
  mapperName: string | null;
  lastResult: ManipulationResult | null;
  /** Sequence number of the request whose result we are waiting for. */
  inFlightSeq: number | null;
  /** Highest sequence number ever issued; stale results compare below it. */
  latestSeq: number;
  history: HistoryEntry[];
  banner: "stats-missing" | null;
  validationError: string | null;
  job: JobView | null;
  statsAvailable: boolean;
}

/** Interactive-session starting point: face editing at alpha 3, k = 20. */
export const FACE_DEFAULTS = { alpha: 3, k: 20 } as const;

export function initialState(): EditorState {
  return {
    imageId: null,
    originalPngBase64: null,
    target: "",
    neutral: "",
    alpha: FACE_DEFAULTS.alpha,
    controlMode: "k",
    beta: 0.1,
    k: FACE_DEFAULTS.k,
    method: "global",
    mapperName: null,
    lastResult: null,
    inFlightSeq: null,
    latestSeq: 0,
    history: [],
    banner: null,
    validationError: null,
    job: null,
    statsAvailable: false,
  };
}

export function requestInFlight(state: EditorState): boolean {
  return state.inFlightSeq !== null;
}

export function currentParams(state: EditorState): GlobalParams {
  return {
    target: state.target,
    neutral: state.neutral,
    alpha: state.alpha,
    controlMode: state.controlMode,
    beta: state.beta,
    k: state.k,
  };
}

export type EditorEvent =
  | { type: "image-loaded"; imageId: string; originalPngBase64: string }
  | { type: "stats-availability"; available: boolean }
  | { type: "prompt-edited"; field: "target" | "neutral"; value: string }
  | { type: "slider-changed"; control: "alpha" | "beta" | "k"; value: number }
  | { type: "mode-toggled"; mode: ControlMode }
  | { type: "method-changed"; method: EditMethod }
  | { type: "mapper-selected"; name: string }
  | { type: "request-started"; seq: number }
  | { type: "result-received"; seq: number; result: ManipulationResult }
  | { type: "request-failed"; seq: number; code: string; message: string }
  | { type: "validation-failed"; message: string }
  | { type: "banner-dismissed" }
  | { type: "history-restored"; index: number }
  | { type: "job-updated"; job: JobView }
  | { type: "job-cancelled" };

export function reduce(state: EditorState, event: EditorEvent): EditorState {
  switch (event.type) {
    case "image-loaded":
      return {
        ...state,
        imageId: event.imageId,
        originalPngBase64: event.originalPngBase64,
        lastResult: null,
        validationError: null,
      };

    case "stats-availability":
      return {
        ...state,
        statsAvailable: event.available,
        banner: event.available ? null : state.banner,
      };

    case "prompt-edited":
      return {
        ...state,
        [event.field]: event.value,
        validationError: null,
      };

    case "slider-changed":
      return { ...state, [event.control]: event.value };

    case "mode-toggled":
      return { ...state, controlMode: event.mode };

    case "method-changed":
      return { ...state, method: event.method };

    case "mapper-selected":
      return { ...state, mapperName: event.name };

    case "request-started":
      return {
        ...state,
        inFlightSeq: event.seq,
        latestSeq: Math.max(state.latestSeq, event.seq),
        validationError: null,
      };

    case "result-received": {
      if (event.seq < state.latestSeq) {
        // Superseded response: a newer request was issued after this one.
        return state;
      }
      const entry: HistoryEntry = { params: currentParams(state), result: event.result };
      return {
        ...state,
        inFlightSeq: null,
        lastResult: event.result,
        history: [...state.history, entry],
        banner: null,
      };
    }

    case "request-failed": {
      if (event.seq < state.latestSeq) {
        return state;
      }
      const next: EditorState = { ...state, inFlightSeq: null };
      if (event.code === "stats_missing") {
        next.banner = "stats-missing";
      } else if (event.code === "degenerate_prompt") {
        next.validationError = event.message;
      } else {
        next.validationError = `${event.code}: ${event.message}`;
      }
      return next;
    }

    case "validation-failed":
      return { ...state, validationError: event.message };

    case "banner-dismissed":
      return { ...state, banner: null };

    case "history-restored": {
      const entry = state.history[event.index];
      if (entry === undefined) {
        return state;
      }
      return {
        ...state,
        target: entry.params.target,
        neutral: entry.params.neutral,
        alpha: entry.params.alpha,
        controlMode: entry.params.controlMode,
        beta: entry.params.beta,
        k: entry.params.k,
        lastResult: entry.result,
        validationError: null,
      };
    }

    case "job-updated":
      return { ...state, job: event.job };

    case "job-cancelled":
      return state.job === null
        ? state
        : { ...state, job: { ...state.job, state: "cancelled" } };
  }
}

export function replay(events: EditorEvent[], start?: EditorState): EditorState {
  return events.reduce(reduce, start ?? initialState());
}
