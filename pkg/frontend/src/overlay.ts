/** Canvas rendering: base image, matte overlay, click markers.
 *
 * Two overlay modes: "checker" composites the cutout over a checkerboard
 * using the matte as per-pixel alpha; "gray" shows the matte itself.
 * Pure rendering, no matting math.
 */

import type { UiClick } from "./api.js";

export type OverlayMode = "checker" | "gray";

const CHECKER = 12;

export class OverlayRenderer {
  private image: HTMLImageElement | null = null;
  private matteImage: HTMLImageElement | null = null;

  constructor(private canvas: HTMLCanvasElement) {}

  async setImage(blob: Blob): Promise<void> {
    this.image = await blobToImage(blob);
    this.canvas.width = this.image.naturalWidth;
    this.canvas.height = this.image.naturalHeight;
  }

  async setMatte(blob: Blob | null): Promise<void> {
    this.matteImage = blob ? await blobToImage(blob) : null;
  }

  render(markers: readonly UiClick[], mode: OverlayMode, opacity: number): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.image) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.drawImage(this.image, 0, 0);

    if (this.matteImage) {
      ctx.save();
      ctx.globalAlpha = opacity;
      if (mode === "gray") {
        ctx.drawImage(this.matteImage, 0, 0);
      } else {
        ctx.drawImage(makeCheckerCutout(this.image, this.matteImage), 0, 0);
      }
      ctx.restore();
    }

    for (const click of markers) {
      ctx.beginPath();
      ctx.arc(click.x, click.y, 5, 0, Math.PI * 2);
      ctx.fillStyle = click.sign === "positive" ? "#e03131" : "#1c7ed6";
      ctx.fill();
      ctx.lineWidth = 1.5;
      ctx.strokeStyle = "white";
      ctx.stroke();
    }
  }
}

function blobToImage(blob: Blob): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const url = URL.createObjectURL(blob);
    const img = new Image();
    img.onload = () => {
      URL.revokeObjectURL(url);
      resolve(img);
    };
    img.onerror = () => {
      URL.revokeObjectURL(url);
      reject(new Error("could not decode image"));
    };
    img.src = url;
  });
}

function makeCheckerCutout(image: HTMLImageElement, matte: HTMLImageElement): HTMLCanvasElement {
  const w = image.naturalWidth;
  const h = image.naturalHeight;
  const out = document.createElement("canvas");
  out.width = w;
  out.height = h;
  const ctx = out.getContext("2d")!;
  for (let y = 0; y < h; y += CHECKER) {
    for (let x = 0; x < w; x += CHECKER) {
      ctx.fillStyle = ((x / CHECKER + y / CHECKER) % 2 === 0) ? "#cccccc" : "#888888";
      ctx.fillRect(x, y, CHECKER, CHECKER);
    }
  }
  // cutout = image masked by the matte, drawn over the checkerboard
  const cut = document.createElement("canvas");
  cut.width = w;
  cut.height = h;
  const cctx = cut.getContext("2d")!;
  cctx.drawImage(matte, 0, 0);
  cctx.globalCompositeOperation = "source-in";
  cctx.drawImage(image, 0, 0);
  ctx.drawImage(cut, 0, 0);
  return out;
}

export function downloadBlob(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = filename;
  anchor.click();
  URL.revokeObjectURL(url);
}
