import { ApiClient } from "./api.js";
import { Palette } from "./palette.js";
import { Viewer } from "./viewer.js";
import { VIEW_MODES, ViewMode } from "./viewerState.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, parent: HTMLElement, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (text !== undefined) {
    node.textContent = text;
  }
  parent.appendChild(node);
  return node;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8008";
  const sceneId = params.get("scene");
  const annotator = params.get("annotator") ?? "anon";

  const api = new ApiClient(base);
  const palette = Palette.fromTaxonomy(await api.taxonomy());

  const root = document.getElementById("app")!;
  const toolbar = el("div", root);
  toolbar.className = "toolbar";
  const canvasHost = el("div", root);
  canvasHost.className = "canvas-host";

  const viewer = new Viewer(canvasHost, api, palette);

  const labelSelect = el("select", toolbar);
  for (let id = 0; id < palette.size; id++) {
    const opt = el("option", labelSelect, `${id} ${palette.nameOf(id)}`);
    opt.value = String(id);
    const [r, g, b] = palette.colorOf(id);
    opt.style.background = `rgb(${r},${g},${b})`;
  }
  labelSelect.value = "1";
  labelSelect.addEventListener("change", () => {
    viewer.state.setActiveLabel(Number(labelSelect.value));
  });

  const radius = el("input", toolbar);
  radius.type = "range";
  radius.min = "0.05";
  radius.max = "5";
  radius.step = "0.05";
  radius.value = "0.5";
  radius.addEventListener("input", () => {
    viewer.state.setBrushRadius(Number(radius.value));
  });

  for (const mode of VIEW_MODES) {
    const btn = el("button", toolbar, mode);
    btn.addEventListener("click", () => viewer.setViewMode(mode as ViewMode));
  }

  const verifyBtn = el("button", toolbar, "verify");
  verifyBtn.addEventListener("click", () => void viewer.verifyAgainstExport());

  const progress = el("span", toolbar, "0.0% labeled");
  const status = el("span", toolbar, "");
  viewer.onProgress = (pct) => {
    progress.textContent = `${pct.toFixed(1)}% labeled`;
  };
  viewer.onStatus = (text) => {
    status.textContent = text;
  };

  if (!sceneId) {
    status.textContent = "pass ?scene=<id> in the URL";
    return;
  }
  await viewer.load(sceneId);
  await viewer.openSession(annotator);
  status.textContent = `session open as ${annotator}`;
}

void boot();
