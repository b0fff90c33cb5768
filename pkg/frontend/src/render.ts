/** Pure view model: what the DOM should show for a given editor state. */

import {
  requestInFlight,
  type EditorState,
} from "./state.js";

export interface ViewModel {
  originalSrc: string | null;
  resultSrc: string | null;
  busy: boolean;
  bannerVisible: boolean;
  bannerText: string;
  validationText: string;
  activeChannelsText: string;
  betaUsedText: string;
  sliderValue: number;
  sliderMin: number;
  sliderMax: number;
  sliderStep: number;
  controlMode: "beta" | "k";
  alpha: number;
  historyVisible: boolean;
  historyCount: number;
  jobText: string;
  jobCancelVisible: boolean;
}

function pngSrc(base64: string | null | undefined): string | null {
  return base64 ? `data:image/png;base64,${base64}` : null;
}

export function viewModel(state: EditorState): ViewModel {
  const result = state.lastResult;
  const job = state.job;
  return {
    originalSrc: pngSrc(state.originalPngBase64),
    resultSrc: pngSrc(result?.image_png_base64),
    busy: requestInFlight(state),
    bannerVisible: state.banner === "stats-missing",
    bannerText:
      state.banner === "stats-missing"
        ? "Channel statistics have not been computed for this backend yet."
        : "",
    validationText: state.validationError ?? "",
    activeChannelsText: result ? `${result.active_channels} active channels` : "",
    betaUsedText: result ? `beta = ${result.beta_used.toFixed(4)}` : "",
    sliderValue: state.controlMode === "beta" ? state.beta : state.k,
    sliderMin: state.controlMode === "beta" ? 0 : 1,
    sliderMax: state.controlMode === "beta" ? 0.5 : 128,
    sliderStep: state.controlMode === "beta" ? 0.005 : 1,
    controlMode: state.controlMode,
    alpha: state.alpha,
    historyVisible: state.history.length > 0,
    historyCount: state.history.length,
    jobText:
      job && job.state !== "done"
        ? `${job.state} ${(job.progress * 100).toFixed(0)}%`
        : "",
    jobCancelVisible: job !== null && (job.state === "queued" || job.state === "running"),
  };
}
