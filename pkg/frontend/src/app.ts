/** DOM wiring: upload pair, paint mask, inspect proposals, toggle, compare.
 *
 * All imagery shown here is fetched from the service as PNG; the only canvas
 * drawing is the mask editor (user input) and overlay compositing of
 * already-downloaded artifacts.
 */

import { ApiError, SessionApi, SessionManifest } from "./api.js";
import { MaskModel } from "./mask.js";
import { blendOverlay, legendStops } from "./overlay.js";
import { FuseQueue, OverlayKind, SessionStore } from "./state.js";

const api = new SessionApi(
  (window as { REFILL_API_BASE?: string }).REFILL_API_BASE ?? "",
);
const store = new SessionStore();

let mask: MaskModel | null = null;
let painting = false;
let targetBitmap: ImageBitmap | null = null;
let initialResultUrl: string | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function artifactUrl(name: string): string {
  const m = store.state.manifest;
  if (!m) return "";
  // revision-stamped query defeats the browser cache across re-fuses
  return `${api.artifactUrl(m.id, name)}?r=${m.epoch}.${m.revision}`;
}

function notifyError(err: unknown): void {
  const text =
    err instanceof ApiError ? err.message : `request failed: ${String(err)}`;
  store.notify("error", text);
}

const fuseQueue = new FuseQueue(async (toggles) => {
  const m = store.state.manifest;
  if (!m) return;
  await api.fuse(m.id, { toggles });
  store.applyFuseSuccess(toggles);
  store.applyManifest(await api.getSession(m.id));
}, notifyError);

// ---------------------------------------------------------------------------
// session creation & polling

async function createSession(): Promise<void> {
  const target = ($("in-target") as HTMLInputElement).files?.[0];
  const source = ($("in-source") as HTMLInputElement).files?.[0];
  if (!target || !source) {
    store.notify("error", "pick both a target and a source image");
    return;
  }
  let maskBlob: Blob | null = ($("in-mask") as HTMLInputElement).files?.[0] ?? null;
  if (!maskBlob && mask && !mask.isEmpty()) maskBlob = await maskToPng(mask);
  if (!maskBlob) {
    store.notify("error", "paint a hole or pick a mask file (empty masks are rejected)");
    return;
  }
  try {
    const { id } = await api.createSession(target, maskBlob, source);
    store.setSession(id);
    store.notify("info", `session ${id} created; computing proposals…`);
    await loadTargetPreview(target);
    void pollUntilFused(id);
  } catch (err) {
    notifyError(err);
  }
}

async function pollUntilFused(id: string): Promise<void> {
  try {
    const m = await api.waitFor(id, (x) => x.state === "fused", {
      timeoutMs: 600_000,
    });
    store.applyManifest(m);
    if (!initialResultUrl) initialResultUrl = artifactUrl("result");
  } catch (err) {
    notifyError(err);
  }
}

async function loadTargetPreview(file: Blob): Promise<void> {
  targetBitmap = await createImageBitmap(file);
  const canvas = $("mask-canvas") as HTMLCanvasElement;
  canvas.width = targetBitmap.width;
  canvas.height = targetBitmap.height;
  mask = new MaskModel(targetBitmap.width, targetBitmap.height);
  drawMaskEditor();
}

// ---------------------------------------------------------------------------
// mask editor

function drawMaskEditor(): void {
  if (!mask) return;
  const canvas = $("mask-canvas") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (targetBitmap) ctx.drawImage(targetBitmap, 0, 0);
  else ctx.clearRect(0, 0, canvas.width, canvas.height);
  const m = mask.rasterize();
  const img = ctx.getImageData(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < m.length; i++) {
    if (!m[i]) continue;
    const j = i * 4;
    img.data[j] = Math.min(255, img.data[j] + 140); // hole tint
    img.data[j + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

function canvasPoint(ev: PointerEvent): { x: number; y: number } {
  const canvas = $("mask-canvas") as HTMLCanvasElement;
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
}

async function maskToPng(model: MaskModel): Promise<Blob> {
  const off = document.createElement("canvas");
  off.width = model.width;
  off.height = model.height;
  const ctx = off.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const img = ctx.createImageData(model.width, model.height);
  const m = model.rasterize();
  for (let i = 0; i < m.length; i++) {
    const j = i * 4;
    img.data[j] = img.data[j + 1] = img.data[j + 2] = m[i];
    img.data[j + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  return new Promise((resolve, reject) =>
    off.toBlob(
      (b) => (b ? resolve(b) : reject(new Error("mask PNG encode failed"))),
      "image/png",
    ),
  );
}

async function uploadMask(): Promise<void> {
  const m = store.state.manifest;
  if (!m || !mask) return;
  if (mask.isEmpty()) {
    store.notify("error", "mask is empty; paint a hole first");
    return;
  }
  try {
    store.markStale();
    await api.replaceMask(m.id, await maskToPng(mask));
    store.notify("info", "mask replaced; recomputing proposals…");
    void pollUntilFused(m.id);
  } catch (err) {
    notifyError(err);
  }
}

// ---------------------------------------------------------------------------
// proposal board & comparator

async function overlayCard(
  img: HTMLImageElement,
  canvas: HTMLCanvasElement,
  scalarName: string,
): Promise<void> {
  const bmp = await createImageBitmap(
    await (await fetch(img.src)).blob(),
  );
  const scalarBmp = await createImageBitmap(
    await (await fetch(artifactUrl(scalarName))).blob(),
  );
  canvas.width = bmp.width;
  canvas.height = bmp.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.drawImage(bmp, 0, 0);
  const base = ctx.getImageData(0, 0, bmp.width, bmp.height);
  ctx.drawImage(scalarBmp, 0, 0);
  const sc = ctx.getImageData(0, 0, bmp.width, bmp.height);
  const values = new Uint8ClampedArray(bmp.width * bmp.height);
  for (let i = 0; i < values.length; i++) values[i] = sc.data[i * 4];
  const blended = blendOverlay(base.data, values, bmp.width, bmp.height);
  const out = ctx.createImageData(bmp.width, bmp.height);
  out.data.set(blended);
  ctx.putImageData(out, 0, 0);
}

function renderBoard(m: SessionManifest): void {
  const board = $("board");
  board.innerHTML = "";
  const overlay = store.state.overlay;
  for (let i = 1; i <= m.n_proposals; i++) {
    const card = document.createElement("div");
    card.className = "card" + (store.state.stale ? " stale" : "");

    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = store.state.toggles[i - 1] ?? true;
    box.addEventListener("change", () => {
      const t = [...store.state.toggles];
      t[i - 1] = box.checked;
      store.markStale();
      fuseQueue.request(t);
    });
    label.append(box, ` proposal ${i}`);

    const img = document.createElement("img");
    img.src = artifactUrl(`preview_${i}`);
    img.alt = `proposal ${i} preview`;

    card.append(label, img);
    if (overlay !== "none") {
      const scalar = overlay === "weight" ? `weight_${i}` : `confidence_${i}`;
      const canvas = document.createElement("canvas");
      canvas.className = "overlay";
      card.append(canvas);
      void overlayCard(img, canvas, scalar).catch(notifyError);
    }
    board.append(card);
  }
}

function renderComparator(): void {
  const before = $("before") as HTMLImageElement;
  const after = $("after") as HTMLImageElement;
  if (initialResultUrl) before.src = initialResultUrl;
  after.src = artifactUrl("result");
  const slider = $("compare-slider") as HTMLInputElement;
  const clip = () => {
    after.style.clipPath = `inset(0 0 0 ${slider.value}%)`;
  };
  slider.oninput = clip;
  clip();
}

function renderLegend(): void {
  const el = $("legend");
  el.innerHTML = "";
  if (store.state.overlay === "none") return;
  for (const stop of legendStops()) {
    const chip = document.createElement("span");
    chip.className = "chip";
    chip.style.background = stop.cssColor;
    chip.title = stop.label;
    chip.textContent = stop.label;
    el.append(chip);
  }
}

function renderNotices(): void {
  const el = $("notices");
  el.innerHTML = "";
  for (const n of store.state.notices) {
    const div = document.createElement("div");
    div.className = `notice ${n.kind}`;
    div.textContent = n.text;
    const x = document.createElement("button");
    x.textContent = "×";
    x.addEventListener("click", () => store.dismiss(n.id));
    div.append(x);
    el.append(div);
  }
}

function renderStatus(): void {
  const m = store.state.manifest;
  const el = $("status");
  if (!m) {
    el.textContent = store.state.sessionId
      ? `session ${store.state.sessionId}: computing…`
      : "no session";
    return;
  }
  el.textContent =
    `session ${m.id} — ${m.state}` +
    (m.degraded ? " (degraded: fill only)" : "") +
    (store.state.stale ? " [recomputing…]" : "");
}

// ---------------------------------------------------------------------------

store.subscribe(() => {
  renderStatus();
  renderNotices();
  renderLegend();
  const m = store.state.manifest;
  if (m && m.state === "fused") {
    renderBoard(m);
    renderComparator();
  }
});

export function init(): void {
  $("btn-create").addEventListener("click", () => void createSession());
  $("btn-upload-mask").addEventListener("click", () => void uploadMask());
  $("btn-undo").addEventListener("click", () => {
    if (mask?.undo()) drawMaskEditor();
  });
  $("btn-redo").addEventListener("click", () => {
    if (mask?.redo()) drawMaskEditor();
  });
  ($("overlay-select") as HTMLSelectElement).addEventListener("change", (ev) => {
    store.setOverlay((ev.target as HTMLSelectElement).value as OverlayKind);
  });
  ($("brush-radius") as HTMLInputElement).addEventListener("input", (ev) => {
    store.setBrush({
      ...store.state.brush,
      radius: Number((ev.target as HTMLInputElement).value),
    });
  });
  ($("brush-erase") as HTMLInputElement).addEventListener("change", (ev) => {
    store.setBrush({
      ...store.state.brush,
      erase: (ev.target as HTMLInputElement).checked,
    });
  });

  const canvas = $("mask-canvas") as HTMLCanvasElement;
  canvas.addEventListener("pointerdown", (ev) => {
    if (!mask) return;
    painting = true;
    canvas.setPointerCapture(ev.pointerId);
    mask.beginStroke(store.state.brush, canvasPoint(ev));
    drawMaskEditor();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!painting || !mask) return;
    mask.extendStroke(canvasPoint(ev));
    drawMaskEditor();
  });
  canvas.addEventListener("pointerup", () => {
    painting = false;
    mask?.endStroke();
    drawMaskEditor();
  });
}

if (typeof document !== "undefined" && document.getElementById("btn-create")) {
  init();
}
