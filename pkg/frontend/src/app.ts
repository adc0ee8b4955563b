/** DOM wiring: binds the controller to the canvas and the control strip. */

import { ApiClient } from "./api.js";
import { EditorController } from "./controller.js";
import { channelColor, drawTimeline, fitViewBox, toX } from "./render.js";
import type { TimelineState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(baseUrl = ""): EditorController {
  const api = new ApiClient(baseUrl || window.location.origin);
  const controller = new EditorController(api);

  const canvas = el<HTMLCanvasElement>("timeline");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const status = el<HTMLSpanElement>("status");
  const badge = el<HTMLSpanElement>("badge");
  const sequenceSelect = el<HTMLSelectElement>("sequence-select");
  const modelSelect = el<HTMLSelectElement>("model-select");
  const scaleSlider = el<HTMLInputElement>("scale");
  const scaleLabel = el<HTMLSpanElement>("scale-label");
  const channelToggles = el<HTMLDivElement>("channel-toggles");

  function render(state: TimelineState): void {
    const data = state.sequence?.data ?? [];
    const box = fitViewBox(data, canvas.width, canvas.height);
    drawTimeline(ctx as never, state, box);
    scaleLabel.textContent = state.guidanceScale.toFixed(2);
    if (state.sequence) {
      status.textContent =
        `${state.sequence.id} — ${state.sequence.frames} frames @ ` +
        `${state.sequence.fps} fps, ${state.sequence.channels} channels` +
        (state.dirty ? " (edited)" : "");
    }
  }
  controller.onChange(render);

  function rebuildChannelToggles(state: TimelineState): void {
    channelToggles.innerHTML = "";
    const channels = state.sequence?.channels ?? 0;
    for (let c = 0; c < channels; c++) {
      const label = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = !state.hiddenChannels.has(c);
      box.addEventListener("change", () => controller.dispatch({ kind: "toggleChannel", channel: c }));
      label.append(box, ` ch${c}`);
      label.style.color = channelColor(c);
      channelToggles.append(label);
    }
  }

  async function refreshLists(): Promise<void> {
    const [models, sequences] = await Promise.all([api.listModels(), api.listSequences()]);
    modelSelect.innerHTML = "";
    for (const m of models) {
      const opt = document.createElement("option");
      opt.value = m.name;
      opt.textContent = `${m.name} (${m.variant})`;
      modelSelect.append(opt);
    }
    sequenceSelect.innerHTML = "";
    if (sequences.length === 0) {
      status.textContent = "no sequences in the run directory";
      return;
    }
    for (const s of sequences) {
      const opt = document.createElement("option");
      opt.value = s.id;
      opt.textContent = `${s.id} (${s.kind}, ${s.frames}f @ ${s.fps}fps)`;
      sequenceSelect.append(opt);
    }
  }

  sequenceSelect.addEventListener("change", async () => {
    try {
      const state = await controller.loadSequence(sequenceSelect.value);
      rebuildChannelToggles(state);
      badge.textContent = "";
    } catch (err) {
      status.textContent = String(err);
    }
  });

  modelSelect.addEventListener("change", () => {
    controller.modelName = modelSelect.value;
  });

  scaleSlider.addEventListener("input", () => {
    controller.dispatch({ kind: "setScale", scale: Number(scaleSlider.value) });
  });

  canvas.addEventListener("click", (ev) => {
    const state = controller.state;
    if (!state.sequence) return;
    const n = state.sequence.frames;
    const box = fitViewBox(state.sequence.data, canvas.width, canvas.height);
    // nearest frame to the click, current values as the starting keyframe
    let frame = 0;
    let best = Infinity;
    for (let i = 0; i < n; i++) {
      const d = Math.abs(toX(i, n, box) - ev.offsetX);
      if (d < best) { best = d; frame = i; }
    }
    controller.dispatch({
      kind: "placeKeyframe", frame, values: [...state.sequence.data[frame]],
    });
  });

  el<HTMLButtonElement>("regenerate").addEventListener("click", async () => {
    badge.textContent = "…";
    try {
      const result = await controller.regenerate(Number(el<HTMLInputElement>("seed").value));
      badge.textContent = result?.honored ? "✓ keyframes honored" : "✗ keyframe mismatch";
    } catch (err) {
      badge.textContent = String(err);
    }
  });

  el<HTMLButtonElement>("compare").addEventListener("click", async () => {
    controller.dispatch({ kind: "clearOverlays" });
    const seed = Number(el<HTMLInputElement>("seed").value);
    await controller.compareSeeds([seed, seed + 1]);
  });

  void refreshLists();
  return controller;
}
