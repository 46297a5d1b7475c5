/** Linked slice viewers: source / target / transformed source with a shared
 * z slider, a difference toggle and a DVF arrow overlay. */

import { BundleApi, SliceData } from "./api.js";
import { differenceRows, formatMetric, subsampleField } from "./model.js";

function paintRows(canvas: HTMLCanvasElement, rows: number[][]): void {
  const h = rows.length;
  const w = h > 0 ? rows[0].length : 0;
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(w, h);
  let k = 0;
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      // fixed [0,1] grayscale window
      const v = Math.max(0, Math.min(255, Math.round(rows[r][c] * 255)));
      img.data[k++] = v;
      img.data[k++] = v;
      img.data[k++] = v;
      img.data[k++] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
}

export class SolutionInspector {
  private currentId: string | null = null;
  private z = 0;
  private nz = 1;
  private showDifference = false;
  private panes: Record<string, HTMLCanvasElement>;
  private dvfCanvas: HTMLCanvasElement;

  constructor(
    private api: BundleApi,
    private root: HTMLElement,
    private slider: HTMLInputElement,
    private zLabel: HTMLElement,
    private diffToggle: HTMLInputElement,
    private metricsBox: HTMLElement,
  ) {
    this.panes = {
      source: root.querySelector<HTMLCanvasElement>("#pane-source")!,
      target: root.querySelector<HTMLCanvasElement>("#pane-target")!,
      transformed: root.querySelector<HTMLCanvasElement>("#pane-transformed")!,
    };
    this.dvfCanvas = root.querySelector<HTMLCanvasElement>("#pane-dvf")!;
    slider.addEventListener("input", () => {
      this.z = Number(slider.value);
      zLabel.textContent = `z = ${this.z}`;
      void this.refresh();
    });
    diffToggle.addEventListener("change", () => {
      this.showDifference = diffToggle.checked;
      void this.refresh();
    });
  }

  configure(nz: number): void {
    this.nz = nz;
    this.slider.min = "0";
    this.slider.max = String(nz - 1);
    this.z = Math.floor(nz / 2);
    this.slider.value = String(this.z);
    this.zLabel.textContent = `z = ${this.z}`;
  }

  async load(id: string): Promise<void> {
    this.currentId = id;
    await this.refresh();
    const metrics = await this.api.metrics(id);
    const parts = Object.entries(metrics)
      .map(([k, v]) => `${k}: ${formatMetric(v)}`)
      .join("   ");
    this.metricsBox.textContent = `${id}   ${parts}`;
  }

  async refresh(): Promise<void> {
    if (this.currentId === null) {
      return;
    }
    const id = this.currentId;
    const [src, tgt, warped, dvf] = await Promise.all([
      this.api.slice(id, "source", this.z),
      this.api.slice(id, "target", this.z),
      this.api.slice(id, "transformed", this.z),
      this.api.dvf(id, this.z),
    ]);
    paintRows(this.panes.source, src.rows);
    paintRows(this.panes.target, tgt.rows);
    const shown: SliceData["rows"] = this.showDifference
      ? differenceRows(warped.rows, tgt.rows)
      : warped.rows;
    paintRows(this.panes.transformed, shown);
    this.paintDvf(dvf.vectors, dvf.spacing, warped.rows);
  }

  private paintDvf(vectors: number[][][], spacing: number[], backdrop: number[][]): void {
    const canvas = this.dvfCanvas;
    const h = vectors.length;
    const w = h > 0 ? vectors[0].length : 0;
    const scale = 8;
    canvas.width = w * scale;
    canvas.height = h * scale;
    const ctx = canvas.getContext("2d")!;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 0.5;
    for (let r = 0; r < h; r++) {
      for (let c = 0; c < w; c++) {
        const v = Math.round(backdrop[r][c] * 140);
        ctx.fillStyle = `rgb(${v},${v},${v})`;
        ctx.fillRect(c * scale, r * scale, scale, scale);
      }
    }
    ctx.globalAlpha = 1;
    ctx.strokeStyle = "#5cf";
    ctx.fillStyle = "#5cf";
    ctx.lineWidth = 1;
    for (const { row, col, v } of subsampleField(vectors)) {
      // in-plane components in voxel units for display
      const dx = (v[0] / spacing[0]) * scale;
      const dy = (v[1] / spacing[1]) * scale;
      const x0 = col * scale + scale / 2;
      const y0 = row * scale + scale / 2;
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      ctx.lineTo(x0 + dx, y0 + dy);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(x0 + dx, y0 + dy, 1.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
