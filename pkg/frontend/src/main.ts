/** DOM wiring for the editor page. All state lives in EditorStore; all
 * math lives on the server. This file only routes events to the client
 * and paints the store back into the page.
 */

import { ApiError, EditClient, type Triplet } from "./api";
import { hexToRgb, rgbToHex, formatRgb } from "./color";
import { debounce, SLIDER_DEBOUNCE_MS } from "./debounce";
import { pixelFromClick } from "./eyedropper";
import { describeRow } from "./journal";
import { EditorStore } from "./state";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const store = new EditorStore();
let client = new EditClient("http://127.0.0.1:8317");

const baseUrlInput = el<HTMLInputElement>("base-url");
const imageInput = el<HTMLInputElement>("image-file");
const modelInput = el<HTMLInputElement>("model-file");
const styleInput = el<HTMLInputElement>("style-index");
const createBtn = el<HTMLButtonElement>("create-session");
const preview = el<HTMLImageElement>("preview");
const statusLine = el<HTMLElement>("status");
const swatchIn = el<HTMLElement>("swatch-in");
const swatchCur = el<HTMLElement>("swatch-cur");
const cOutPicker = el<HTMLInputElement>("c-out");
const kSlider = el<HTMLInputElement>("k-slider");
const kLabel = el<HTMLElement>("k-label");
const sSlider = el<HTMLInputElement>("s-slider");
const sLabel = el<HTMLElement>("s-label");
const commitBtn = el<HTMLButtonElement>("commit-edit");
const undoBtn = el<HTMLButtonElement>("undo-edit");
const blendL1 = el<HTMLSelectElement>("blend-l1");
const blendL2 = el<HTMLSelectElement>("blend-l2");
const alphaSlider = el<HTMLInputElement>("alpha-slider");
const alphaLabel = el<HTMLElement>("alpha-label");
const journalList = el<HTMLUListElement>("journal");
const exportCube = el<HTMLAnchorElement>("export-cube");
const exportModel = el<HTMLAnchorElement>("export-model");

function showError(err: unknown): void {
  if (err instanceof ApiError && err.status === 409) {
    store.setStatus(`${err.detail} — try increasing K`);
  } else if (err instanceof ApiError) {
    store.setStatus(err.detail);
  } else {
    store.setStatus(String(err));
  }
}

function paintSwatch(node: HTMLElement, rgb: Triplet | null): void {
  if (!rgb) {
    node.style.background = "transparent";
    node.textContent = "–";
    return;
  }
  node.style.background = rgbToHex(rgb);
  node.textContent = formatRgb(rgb);
}

createBtn.addEventListener("click", async () => {
  const image = imageInput.files?.[0];
  const model = modelInput.files?.[0];
  if (!image || !model) {
    store.setStatus("choose an image and a model file first");
    return;
  }
  client = new EditClient(baseUrlInput.value.replace(/\/$/, ""));
  const style = styleInput.value === "" ? undefined : Number(styleInput.value);
  try {
    const info = await client.createSession(image, model, style);
    store.startSession(info);
    const styles = info.styles ?? 0;
    for (const select of [blendL1, blendL2]) {
      select.innerHTML = "";
      for (let i = 0; i < styles; i++) {
        const opt = document.createElement("option");
        opt.value = String(i);
        opt.textContent = `style ${i}`;
        select.appendChild(opt);
      }
    }
    if (styles >= 2) {
      blendL2.selectedIndex = 1;
      store.setBlendPair(0, 1);
    }
  } catch (err) {
    showError(err);
  }
});

preview.addEventListener("click", async (ev) => {
  const info = store.get().session;
  if (!info) {
    return;
  }
  const rect = preview.getBoundingClientRect();
  const hit = pixelFromClick(
    ev.clientX - rect.left,
    ev.clientY - rect.top,
    rect.width,
    rect.height,
    info.preview_width,
    info.preview_height,
  );
  if (!hit) {
    return;
  }
  try {
    store.applyEyedrop(await client.pixel(info.session_id, hit.x, hit.y));
  } catch (err) {
    showError(err);
  }
});

cOutPicker.addEventListener("input", () => {
  store.setCOut(hexToRgb(cOutPicker.value));
});

kSlider.addEventListener("input", () => store.setK(Number(kSlider.value)));
sSlider.addEventListener("input", () => store.setS(Number(sSlider.value)));

commitBtn.addEventListener("click", async () => {
  const { session, cIn, cOut, k, s } = store.get();
  if (!session || !cIn || !cOut) {
    return;
  }
  const req = { c_in: cIn, c_out: cOut, k, s };
  try {
    const res = await client.edit(session.session_id, req);
    store.applyEdit(req, res);
  } catch (err) {
    showError(err);
  }
});

undoBtn.addEventListener("click", async () => {
  const session = store.get().session;
  if (!session) {
    return;
  }
  try {
    store.applyUndo(await client.undo(session.session_id));
  } catch (err) {
    showError(err);
  }
});

const scheduleBlend = debounce(() => {
  const { session, blendL1: l1, blendL2: l2, alpha } = store.get();
  if (!session || !store.blendEnabled()) {
    return;
  }
  client
    .blend(session.session_id, l1, l2, alpha)
    .then((res) => store.applyBlend(res))
    .catch(showError);
}, SLIDER_DEBOUNCE_MS);

blendL1.addEventListener("change", () => {
  store.setBlendPair(Number(blendL1.value), Number(blendL2.value));
  scheduleBlend();
});
blendL2.addEventListener("change", () => {
  store.setBlendPair(Number(blendL1.value), Number(blendL2.value));
  scheduleBlend();
});
alphaSlider.addEventListener("input", () => {
  store.setAlpha(Number(alphaSlider.value));
  scheduleBlend();
});

store.subscribe((state) => {
  const enabled = store.controlsEnabled();
  for (const node of [cOutPicker, kSlider, sSlider, undoBtn]) {
    node.disabled = !enabled;
  }
  commitBtn.disabled = !store.editReady();
  const blendOk = store.blendEnabled();
  for (const node of [blendL1, blendL2, alphaSlider]) {
    node.disabled = !blendOk;
  }

  if (state.previewUrl) {
    const src = client.baseUrl + state.previewUrl;
    if (preview.src !== src) {
      preview.src = src;
    }
  }
  if (state.session) {
    kSlider.max = String(state.session.gaussians);
    exportCube.href = client.exportCubeUrl(state.session.session_id);
    exportModel.href = client.exportModelUrl(state.session.session_id);
  }
  paintSwatch(swatchIn, state.cIn);
  paintSwatch(swatchCur, state.cInCurrent);
  if (state.cOut) {
    cOutPicker.value = rgbToHex(state.cOut);
  }
  kLabel.textContent = String(state.k);
  sLabel.textContent = state.s.toFixed(2);
  alphaLabel.textContent = state.alpha.toFixed(2);
  statusLine.textContent = state.status;

  journalList.innerHTML = "";
  for (const row of state.journal) {
    const li = document.createElement("li");
    li.textContent = describeRow(row);
    journalList.appendChild(li);
  }
});
