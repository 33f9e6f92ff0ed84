/** DOM wiring for the click-matting page. */

import { HttpMatteApi, type UiClick } from "./api.js";
import { UiSession } from "./session.js";
import { OverlayRenderer, downloadBlob, type OverlayMode } from "./overlay.js";

function toast(message: string): void {
  const el = document.getElementById("toast")!;
  el.textContent = message;
  el.classList.add("show");
  window.setTimeout(() => el.classList.remove("show"), 3200);
}

export function initApp(root: Document = document): UiSession {
  const canvas = root.getElementById("viewport") as HTMLCanvasElement;
  const fileInput = root.getElementById("file") as HTMLInputElement;
  const undoBtn = root.getElementById("undo") as HTMLButtonElement;
  const exportBtn = root.getElementById("export") as HTMLButtonElement;
  const modeSelect = root.getElementById("overlay-mode") as HTMLSelectElement;
  const opacitySlider = root.getElementById("opacity") as HTMLInputElement;
  const spinner = root.getElementById("spinner")!;

  const session = new UiSession(new HttpMatteApi(""));
  const renderer = new OverlayRenderer(canvas);
  let markers: readonly UiClick[] = [];

  const repaint = () =>
    renderer.render(markers, modeSelect.value as OverlayMode, Number(opacitySlider.value));

  session.on("busy", (busy) => {
    spinner.classList.toggle("show", busy);
    undoBtn.disabled = busy || markers.length === 0;
  });
  session.on("error", toast);
  session.on("markers", (m) => {
    markers = m;
    undoBtn.disabled = markers.length === 0;
    repaint();
  });
  session.on("matte", (blob) => {
    exportBtn.disabled = blob === null;
    void renderer.setMatte(blob).then(repaint);
  });

  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    await renderer.setImage(file);
    await session.loadImage(file);
    repaint();
  });

  canvas.addEventListener("click", (ev) => {
    void handleCanvasClick(ev, "positive");
  });
  canvas.addEventListener("contextmenu", (ev) => {
    ev.preventDefault();
    void handleCanvasClick(ev, "negative");
  });

  async function handleCanvasClick(ev: MouseEvent, sign: UiClick["sign"]): Promise<void> {
    const rect = canvas.getBoundingClientRect();
    const x = Math.round(((ev.clientX - rect.left) / rect.width) * canvas.width);
    const y = Math.round(((ev.clientY - rect.top) / rect.height) * canvas.height);
    const result = await session.placeClick(x, y, sign);
    if (!result.accepted && result.reason === "busy") {
      toast("still matting the previous click");
    }
  }

  undoBtn.addEventListener("click", () => void session.undo());
  exportBtn.addEventListener("click", () => {
    const matte = session.exportMatte();
    if (matte) downloadBlob(matte, "matte.png");
  });
  modeSelect.addEventListener("change", repaint);
  opacitySlider.addEventListener("input", repaint);

  undoBtn.disabled = true;
  exportBtn.disabled = true;
  return session;
}

if (typeof document !== "undefined" && document.getElementById("viewport")) {
  initApp();
}
