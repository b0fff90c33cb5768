/**
 * Side-effect layer between the UI and the service API.
 *
 * Owns debouncing, sequence numbers, and job polling; every outcome flows
 * back into the pure reducer. Invariants enforced here:
 *
 * - slider activity issues at most one render request per 150 ms quiet
 *   period, and never while another render request is in flight (the latest
 *   desired parameters queue up instead);
 * - prompt submission supersedes an in-flight render: the old request is
 *   aborted and its response, if it still arrives, is discarded because its
 *   sequence number is stale;
 * - network concurrency stays at one manipulation request plus one job poll.
 */

import { debounce } from "./debounce.js";
import {
  currentParams,
  initialState,
  reduce,
  requestInFlight,
  type EditorEvent,
  type EditorState,
  type GlobalParams,
} from "./state.js";
import {
  isApiError,
  type GlobalManipulationRequest,
  type JobRecord,
  type ManipulationResult,
} from "./types.js";

export const SLIDER_DEBOUNCE_MS = 150;
export const JOB_POLL_MS = 250;

/** The slice of the service API the editor drives (ApiClient satisfies it). */
export interface EditorApi {
  uploadImage(file: Blob, name?: string): Promise<{ image_id: string }>;
  manipulateGlobal(
    req: GlobalManipulationRequest,
    signal?: AbortSignal,
  ): Promise<ManipulationResult>;
  precompute(params?: Record<string, unknown>): Promise<{ job_id: string }>;
  optimize(body: Record<string, unknown>): Promise<{ job_id: string }>;
  getJob(jobId: string): Promise<JobRecord>;
  getJobResult(jobId: string): Promise<Record<string, unknown>>;
}

function sameParams(a: GlobalParams, b: GlobalParams): boolean {
  return (
    a.target === b.target &&
    a.neutral === b.neutral &&
    a.alpha === b.alpha &&
    a.controlMode === b.controlMode &&
    a.beta === b.beta &&
    a.k === b.k
  );
}

export class EditorController {
  state: EditorState = initialState();

  private seq = 0;
  private abort: AbortController | null = null;
  private appliedParams: GlobalParams | null = null;
  private pendingParams: GlobalParams | null = null;
  private readonly debouncedRender: ReturnType<typeof debounce<[]>>;
  readonly eventLog: EditorEvent[] = [];

  constructor(
    private readonly api: EditorApi,
    private readonly onChange: (state: EditorState) => void = () => {},
  ) {
    this.debouncedRender = debounce(() => this.issueRender(false), SLIDER_DEBOUNCE_MS);
  }

  dispatch(event: EditorEvent): void {
    this.eventLog.push(event);
    this.state = reduce(this.state, event);
    this.onChange(this.state);
  }

  // -- user intents -----------------------------------------------------------

  async loadImage(file: Blob): Promise<void> {
    const base64 = await blobToBase64(file);
    const { image_id } = await this.api.uploadImage(file);
    this.dispatch({ type: "image-loaded", imageId: image_id, originalPngBase64: base64 });
  }

  onSliderChange(control: "alpha" | "beta" | "k", value: number): void {
    this.dispatch({ type: "slider-changed", control, value });
    if (this.state.imageId !== null && this.state.target !== "") {
      this.debouncedRender();
    }
  }

  onModeToggle(mode: "beta" | "k"): void {
    this.dispatch({ type: "mode-toggled", mode });
  }

  onPromptSubmit(target: string, neutral: string): void {
    if (target.trim() === "" || neutral.trim() === "") {
      this.dispatch({
        type: "validation-failed",
        message: "both a target attribute and a neutral class are required",
      });
      return;
    }
    this.dispatch({ type: "prompt-edited", field: "target", value: target });
    this.dispatch({ type: "prompt-edited", field: "neutral", value: neutral });
    if (this.state.imageId === null) {
      this.dispatch({ type: "validation-failed", message: "load an image first" });
      return;
    }
    this.debouncedRender.cancel();
    this.issueRender(true);
  }

  restoreHistory(index: number): void {
    // Pure state restoration: parameters and result come from the entry,
    // no network call is made.
    this.debouncedRender.cancel();
    this.dispatch({ type: "history-restored", index });
    const entry = this.state.history[index];
    if (entry !== undefined) {
      this.appliedParams = entry.params;
      this.pendingParams = null;
    }
  }

  dismissBanner(): void {
    this.dispatch({ type: "banner-dismissed" });
  }

  /** One-click remedy for the stats-missing banner. */
  async triggerPrecompute(params: Record<string, unknown> = {}): Promise<void> {
    const { job_id } = await this.api.precompute(params);
    await this.pollJob(job_id);
    this.dispatch({ type: "stats-availability", available: true });
    this.dispatch({ type: "banner-dismissed" });
    if (this.state.imageId !== null && this.state.target !== "") {
      this.issueRender(true);
    }
  }

  cancelJob(): void {
    // The next poll tick observes the cancelled state, stops, and resolves.
    this.dispatch({ type: "job-cancelled" });
  }

  // -- render requests ----------------------------------------------------------

  private nextSeq(): number {
    this.seq += 1;
    return this.seq;
  }

  private issueRender(supersede: boolean): void {
    if (this.state.imageId === null) {
      return;
    }
    const params = currentParams(this.state);
    if (requestInFlight(this.state)) {
      if (!supersede) {
        this.pendingParams = params;
        return;
      }
      this.abort?.abort();
      this.abort = null;
    }
    const seq = this.nextSeq();
    this.dispatch({ type: "request-started", seq });
    this.appliedParams = params;
    this.pendingParams = null;
    const controller = typeof AbortController !== "undefined" ? new AbortController() : null;
    this.abort = controller;
    const body = {
      image_id: this.state.imageId,
      target: params.target,
      neutral: params.neutral,
      alpha: params.alpha,
      ...(params.controlMode === "beta" ? { beta: params.beta } : { k: params.k }),
    };
    this.api.manipulateGlobal(body, controller?.signal).then(
      (result) => this.onRenderResult(seq, result),
      (error) => this.onRenderError(seq, error),
    );
  }

  private onRenderResult(seq: number, result: ManipulationResult): void {
    if (seq !== this.seq) {
      return; // stale: a newer request superseded this one
    }
    this.abort = null;
    this.dispatch({ type: "result-received", seq, result });
    this.maybeIssuePending();
  }

  private onRenderError(seq: number, error: unknown): void {
    if (seq !== this.seq) {
      return;
    }
    this.abort = null;
    if (isApiError(error)) {
      this.dispatch({ type: "request-failed", seq, code: error.code, message: error.message });
    } else if ((error as Error)?.name === "AbortError") {
      return;
    } else {
      this.dispatch({
        type: "request-failed",
        seq,
        code: "network_error",
        message: String(error),
      });
    }
    this.maybeIssuePending();
  }

  private maybeIssuePending(): void {
    if (this.pendingParams === null || requestInFlight(this.state)) {
      return;
    }
    if (this.appliedParams !== null && sameParams(this.pendingParams, this.appliedParams)) {
      this.pendingParams = null;
      return;
    }
    this.issueRender(false);
  }

  // -- optimize-method jobs -------------------------------------------------------

  async startOptimize(prompt: string, options: Record<string, unknown> = {}): Promise<void> {
    if (this.state.imageId === null) {
      this.dispatch({ type: "validation-failed", message: "load an image first" });
      return;
    }
    const { job_id } = await this.api.optimize({
      image_id: this.state.imageId,
      prompt,
      ...options,
    });
    await this.pollJob(job_id, async () => {
      const result = await this.api.getJobResult(job_id);
      if (typeof result.image_png_base64 === "string") {
        const seq = this.nextSeq();
        this.dispatch({ type: "request-started", seq });
        this.dispatch({
          type: "result-received",
          seq,
          result: {
            image_png_base64: result.image_png_base64,
            active_channels: 0,
            beta_used: 0,
            alpha: 0,
          },
        });
      }
    });
  }

  private pollJob(jobId: string, onDone?: () => Promise<void>): Promise<void> {
    return new Promise((resolve, reject) => {
      const cancelled = () =>
        this.state.job?.state === "cancelled" && this.state.job.id === jobId;
      const tick = async () => {
        if (cancelled()) {
          stop();
          resolve();
          return;
        }
        let record;
        try {
          record = await this.api.getJob(jobId);
        } catch (error) {
          stop();
          reject(error);
          return;
        }
        if (cancelled()) {
          stop();
          resolve();
          return;
        }
        this.dispatch({
          type: "job-updated",
          job: { id: jobId, state: record.state, progress: record.progress },
        });
        if (record.state === "done") {
          stop();
          if (onDone) {
            await onDone();
          }
          resolve();
        } else if (record.state === "failed") {
          stop();
          reject(new Error(record.error ?? "job failed"));
        }
      };
      const timer = setInterval(tick, JOB_POLL_MS);
      const stop = () => clearInterval(timer);
      void tick();
    });
  }
}

async function blobToBase64(blob: Blob): Promise<string> {
  const buffer = await blob.arrayBuffer();
  const bytes = new Uint8Array(buffer);
  let binary = "";
  for (const b of bytes) {
    binary += String.fromCharCode(b);
  }
  return btoa(binary);
}
