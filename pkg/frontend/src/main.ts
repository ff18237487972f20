/** Page wiring: seed picker, main viewer, noise slider, variation gallery,
 * and the promote loop. All model interaction goes through ApiClient; all
 * bookkeeping through the pure state module.
 */

import { ApiClient, ApiError, type Meta } from "./api";
import { isEmptyMesh, parseObj } from "./obj";
import {
  applyVariations,
  beginRequest,
  fail,
  promote,
  startSession,
  type SessionState,
} from "./state";
import { Viewer } from "./viewer";

const api = new ApiClient("");

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const banner = el<HTMLDivElement>("banner");
const gallery = el<HTMLDivElement>("gallery");
const breadcrumb = el<HTMLDivElement>("breadcrumb");
const slider = el<HTMLInputElement>("t-noise");
const sliderLabel = el<HTMLSpanElement>("t-noise-value");
const sourceSelect = el<HTMLSelectElement>("source-index");

let meta: Meta;
let state: SessionState | null = null;
let mainViewer: Viewer;
const cardViewers: Viewer[] = [];

function showError(message: string) {
  banner.textContent = message;
  banner.hidden = false;
}

function clearError() {
  banner.hidden = true;
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `server ${err.status}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}

async function renderInto(viewer: Viewer, nodeId: string, empty: HTMLElement) {
  const mesh = parseObj(await api.meshText(nodeId));
  if (isEmptyMesh(mesh)) {
    empty.hidden = false;
    viewer.clear();
  } else {
    empty.hidden = true;
    viewer.setMesh(mesh);
  }
}

async function createSession() {
  clearError();
  try {
    const created = await api.createSession(Number(sourceSelect.value));
    state = startSession(created.session_id, created.root_id);
    gallery.replaceChildren();
    await renderInto(mainViewer, created.root_id, el("main-empty"));
    updateBreadcrumb();
  } catch (err) {
    showError(describe(err));
  }
}

function updateBreadcrumb() {
  if (!state) return;
  const hops: string[] = [];
  let cursor: string | null = state.currentId;
  while (cursor) {
    hops.push(cursor.slice(0, 6));
    cursor = state.parents.get(cursor) ?? null;
  }
  breadcrumb.textContent = `seed lineage: ${hops.reverse().join(" → ")}`;
}

async function requestVariations() {
  if (!state) return showError("create a session first");
  clearError();
  const { state: next, controller } = beginRequest(state);
  state = next;
  const tNoise = Number(slider.value);
  const seed = Math.floor(Math.random() * 2 ** 31);
  try {
    const result = await api.requestVariations(
      state.sessionId,
      tNoise,
      4,
      seed,
      controller.signal,
    );
    state = applyVariations(state, result.variation_ids, tNoise, seed);
    await renderGallery();
  } catch (err) {
    if (err instanceof DOMException && err.name === "AbortError") return;
    state = fail(state, describe(err));
    showError(describe(err));
  }
}

async function renderGallery() {
  if (!state) return;
  cardViewers.splice(0).forEach((v) => v.dispose());
  gallery.replaceChildren();
  for (const card of state.cards) {
    const div = document.createElement("div");
    div.className = "card";
    div.innerHTML = `
      <canvas class="card-canvas"></canvas>
      <div class="card-empty" hidden>no surface</div>
      <div class="card-label">t=${card.tNoise} seed=${card.seed}</div>
      <button class="promote">make seed</button>`;
    gallery.appendChild(div);
    const viewer = new Viewer(div.querySelector("canvas")!);
    cardViewers.push(viewer);
    div.querySelector<HTMLButtonElement>(".promote")!.onclick = async () => {
      if (!state) return;
      try {
        await api.promote(state.sessionId, card.nodeId);
        state = promote(state, card.nodeId);
        await renderInto(mainViewer, card.nodeId, el("main-empty"));
        gallery.replaceChildren();
        updateBreadcrumb();
      } catch (err) {
        showError(describe(err));
      }
    };
    try {
      await renderInto(viewer, card.nodeId, div.querySelector(".card-empty")!);
    } catch (err) {
      showError(describe(err));
    }
  }
}

async function init() {
  mainViewer = new Viewer(el<HTMLCanvasElement>("main-canvas"));
  try {
    meta = await api.meta();
  } catch (err) {
    showError(describe(err));
    return;
  }
  slider.max = String(meta.T);
  slider.value = String(meta.default_t_noise);
  sliderLabel.textContent = slider.value;
  el<HTMLSpanElement>("default-mark").textContent =
    `default ${meta.default_t_noise} of ${meta.T}`;
  slider.oninput = () => (sliderLabel.textContent = slider.value);
  for (let i = 0; i < meta.n_table_latents; i++) {
    const option = document.createElement("option");
    option.value = String(i);
    option.textContent = `training shape ${i}`;
    sourceSelect.appendChild(option);
  }
  el<HTMLButtonElement>("new-session").onclick = createSession;
  el<HTMLButtonElement>("vary").onclick = requestVariations;
}

init();
