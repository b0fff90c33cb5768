/** DOM bootstrap: wires the controller to the static page in index.html. */

import { ApiClient } from "./api.js";
import { EditorController } from "./controller.js";
import { viewModel } from "./render.js";
import { FACE_DEFAULTS, type EditorState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function apply(state: EditorState): void {
  const vm = viewModel(state);
  const original = el<HTMLImageElement>("original");
  const result = el<HTMLImageElement>("result");
  original.src = vm.originalSrc ?? "";
  original.style.visibility = vm.originalSrc ? "visible" : "hidden";
  result.src = vm.resultSrc ?? vm.originalSrc ?? "";
  result.style.visibility = vm.resultSrc || vm.originalSrc ? "visible" : "hidden";
  result.style.opacity = vm.busy ? "0.5" : "1";

  el("banner").style.display = vm.bannerVisible ? "block" : "none";
  el("banner-text").textContent = vm.bannerText;
  el("validation").textContent = vm.validationText;
  el("active-channels").textContent = vm.activeChannelsText;
  el("beta-used").textContent = vm.betaUsedText;
  el("job-status").textContent = vm.jobText;
  el("job-cancel").style.display = vm.jobCancelVisible ? "inline-block" : "none";

  const slider = el<HTMLInputElement>("disentangle");
  slider.min = String(vm.sliderMin);
  slider.max = String(vm.sliderMax);
  slider.step = String(vm.sliderStep);
  if (document.activeElement !== slider) {
    slider.value = String(vm.sliderValue);
  }
  el("disentangle-label").textContent =
    vm.controlMode === "beta" ? `beta ${vm.sliderValue}` : `k = ${vm.sliderValue}`;
  const alpha = el<HTMLInputElement>("alpha");
  if (document.activeElement !== alpha) {
    alpha.value = String(vm.alpha);
  }
  el("alpha-label").textContent = `alpha ${vm.alpha}`;

  const panel = el("history");
  panel.style.display = vm.historyVisible ? "block" : "none";
  const list = el("history-list");
  while (list.children.length > vm.historyCount) {
    list.removeChild(list.lastChild as Node);
  }
  for (let i = list.children.length; i < vm.historyCount; i += 1) {
    const entry = state.history[i];
    const button = document.createElement("button");
    button.textContent = `#${i + 1} ${entry.params.target} (alpha ${entry.params.alpha})`;
    const thumb = document.createElement("img");
    thumb.className = "thumb";
    thumb.src = entry.result.image_png_base64
      ? `data:image/png;base64,${entry.result.image_png_base64}`
      : "";
    button.prepend(thumb);
    button.addEventListener("click", () => controller.restoreHistory(i));
    const item = document.createElement("li");
    item.appendChild(button);
    list.appendChild(item);
  }
}

const controller = new EditorController(new ApiClient(""), apply);

function bind(): void {
  el<HTMLInputElement>("file").addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file) {
      void controller.loadImage(file);
    }
  });

  el("prompt-form").addEventListener("submit", (event) => {
    event.preventDefault();
    controller.onPromptSubmit(
      el<HTMLInputElement>("target").value,
      el<HTMLInputElement>("neutral").value,
    );
  });

  el<HTMLInputElement>("alpha").addEventListener("input", (event) => {
    controller.onSliderChange("alpha", Number((event.target as HTMLInputElement).value));
  });

  el<HTMLInputElement>("disentangle").addEventListener("input", (event) => {
    const value = Number((event.target as HTMLInputElement).value);
    controller.onSliderChange(
      controller.state.controlMode === "beta" ? "beta" : "k",
      value,
    );
  });

  el<HTMLSelectElement>("mode").addEventListener("change", (event) => {
    controller.onModeToggle((event.target as HTMLSelectElement).value as "beta" | "k");
  });

  el("precompute").addEventListener("click", () => {
    void controller.triggerPrecompute();
  });

  el("job-cancel").addEventListener("click", () => controller.cancelJob());

  el<HTMLInputElement>("alpha").value = String(FACE_DEFAULTS.alpha);
  el<HTMLInputElement>("disentangle").value = String(FACE_DEFAULTS.k);
  apply(controller.state);
}

document.addEventListener("DOMContentLoaded", bind);
