/** Canvas scatter of the approximation front with axis pickers. */

import type { FrontRow } from "./api.js";
import {
  AXIS_LABELS,
  AxisKey,
  LinearScale,
  ScatterPoint,
  makeScale,
  nearestPoint,
  scatterPoints,
} from "./model.js";

const MARGIN = { left: 56, right: 14, top: 12, bottom: 40 };

export class FrontScatter {
  private points: ScatterPoint[] = [];
  private xScale!: LinearScale;
  private yScale!: LinearScale;
  private hovered: ScatterPoint | null = null;
  selectedId: string | null = null;
  currentId: string | null = null;
  onPick: (row: FrontRow) => void = () => {};

  constructor(
    private canvas: HTMLCanvasElement,
    private tooltip: HTMLElement,
  ) {
    canvas.addEventListener("mousemove", (ev) => this.handleMove(ev));
    canvas.addEventListener("mouseleave", () => {
      this.hovered = null;
      this.tooltip.style.display = "none";
      this.draw();
    });
    canvas.addEventListener("click", (ev) => {
      const p = this.hit(ev);
      if (p) {
        this.currentId = p.id;
        this.onPick(p.row);
        this.draw();
      }
    });
  }

  setData(rows: FrontRow[], xAxis: AxisKey, yAxis: AxisKey): void {
    this.points = scatterPoints(rows, xAxis, yAxis);
    this.xScale = makeScale(
      this.points.map((p) => p.x),
      MARGIN.left,
      this.canvas.width - MARGIN.right,
    );
    this.yScale = makeScale(
      this.points.map((p) => p.y),
      this.canvas.height - MARGIN.bottom,
      MARGIN.top,
    );
    this.xLabel = AXIS_LABELS[xAxis];
    this.yLabel = AXIS_LABELS[yAxis];
    this.draw();
  }

  private xLabel = "";
  private yLabel = "";

  get pointCount(): number {
    return this.points.length;
  }

  private toCanvas = (p: ScatterPoint): [number, number] => [
    this.xScale.map(p.x),
    this.yScale.map(p.y),
  ];

  private hit(ev: MouseEvent): ScatterPoint | null {
    const rect = this.canvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * this.canvas.width;
    const py = ((ev.clientY - rect.top) / rect.height) * this.canvas.height;
    return nearestPoint(this.points, px, py, this.toCanvas);
  }

  private handleMove(ev: MouseEvent): void {
    const p = this.hit(ev);
    if (p !== this.hovered) {
      this.hovered = p;
      this.draw();
    }
    if (p) {
      const g = p.row.guidance === null ? "" : `\nguidance ${p.row.guidance.toPrecision(6)}`;
      this.tooltip.textContent =
        `${p.id}\ndissimilarity ${p.row.dissimilarity.toPrecision(6)}` +
        `\ndeformation ${p.row.deformation.toPrecision(6)}${g}`;
      this.tooltip.style.display = "block";
      this.tooltip.style.left = `${ev.clientX + 14}px`;
      this.tooltip.style.top = `${ev.clientY + 14}px`;
      this.canvas.style.cursor = "pointer";
    } else {
      this.tooltip.style.display = "none";
      this.canvas.style.cursor = "default";
    }
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d")!;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, width, height);

    // axes
    ctx.strokeStyle = "#3a4a5a";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(MARGIN.left, MARGIN.top);
    ctx.lineTo(MARGIN.left, height - MARGIN.bottom);
    ctx.lineTo(width - MARGIN.right, height - MARGIN.bottom);
    ctx.stroke();
    ctx.fillStyle = "#9ab";
    ctx.font = "12px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(this.xLabel, (MARGIN.left + width - MARGIN.right) / 2, height - 8);
    ctx.save();
    ctx.translate(14, (MARGIN.top + height - MARGIN.bottom) / 2);
    ctx.rotate(-Math.PI / 2);
    ctx.fillText(this.yLabel, 0, 0);
    ctx.restore();

    // tick labels at scale ends
    ctx.textAlign = "left";
    ctx.fillText(this.xScale.lo.toPrecision(3), MARGIN.left, height - MARGIN.bottom + 16);
    ctx.textAlign = "right";
    ctx.fillText(
      this.xScale.hi.toPrecision(3), width - MARGIN.right, height - MARGIN.bottom + 16,
    );
    ctx.textAlign = "right";
    ctx.fillText(this.yScale.hi.toPrecision(3), MARGIN.left - 6, MARGIN.top + 10);
    ctx.fillText(this.yScale.lo.toPrecision(3), MARGIN.left - 6, height - MARGIN.bottom);

    for (const p of this.points) {
      const [cx, cy] = this.toCanvas(p);
      const isSelected = p.id === this.selectedId;
      const isCurrent = p.id === this.currentId;
      ctx.beginPath();
      ctx.arc(cx, cy, isSelected || isCurrent ? 6 : 3.5, 0, 2 * Math.PI);
      ctx.fillStyle = isSelected ? "#e33" : isCurrent ? "#fc3" : "#4cf";
      ctx.globalAlpha = this.hovered && this.hovered !== p ? 0.55 : 0.9;
      ctx.fill();
      ctx.globalAlpha = 1;
      if (isSelected) {
        ctx.strokeStyle = "#fff";
        ctx.stroke();
      }
    }
    if (this.hovered) {
      const [cx, cy] = this.toCanvas(this.hovered);
      ctx.beginPath();
      ctx.arc(cx, cy, 7, 0, 2 * Math.PI);
      ctx.strokeStyle = "#fff";
      ctx.stroke();
    }
  }
}
