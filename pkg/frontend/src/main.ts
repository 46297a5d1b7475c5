/** Explorer entry: front scatter, linked inspector and solution selection. */

import { BundleApi, FrontRow } from "./api.js";
import { SolutionInspector } from "./inspector.js";
import { AXIS_LABELS, AxisKey, availableAxes } from "./model.js";
import { FrontScatter } from "./scatter.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "http://127.0.0.1:8832";
const api = new BundleApi(base);

const el = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const banner = el<HTMLDivElement>("banner");
const stagePick = el<HTMLSelectElement>("stage");
const xPick = el<HTMLSelectElement>("x-axis");
const yPick = el<HTMLSelectElement>("y-axis");
const selectBtn = el<HTMLButtonElement>("select-btn");
const confirmBox = el<HTMLDivElement>("confirm");

const scatter = new FrontScatter(
  el<HTMLCanvasElement>("scatter"),
  el<HTMLDivElement>("tooltip"),
);
const inspector = new SolutionInspector(
  api,
  document.body,
  el<HTMLInputElement>("z-slider"),
  el<HTMLSpanElement>("z-label"),
  el<HTMLInputElement>("diff-toggle"),
  el<HTMLDivElement>("metrics"),
);

let rows: FrontRow[] = [];

function fillAxisPickers(axes: AxisKey[]): void {
  for (const pick of [xPick, yPick]) {
    const prev = pick.value;
    pick.innerHTML = "";
    for (const a of axes) {
      const opt = document.createElement("option");
      opt.value = a;
      opt.textContent = AXIS_LABELS[a];
      pick.appendChild(opt);
    }
    if (axes.includes(prev as AxisKey)) {
      pick.value = prev;
    }
  }
  if (xPick.value === yPick.value && axes.length > 1) {
    yPick.value = axes[1];
  }
}

function redraw(): void {
  scatter.setData(rows, xPick.value as AxisKey, yPick.value as AxisKey);
  el<HTMLSpanElement>("count").textContent = `${rows.length} solutions`;
}

async function loadStage(): Promise<void> {
  rows = await api.front(Number(stagePick.value));
  fillAxisPickers(availableAxes(rows));
  redraw();
}

async function boot(): Promise<void> {
  try {
    const meta = await api.meta();
    banner.style.display = "none";
    stagePick.innerHTML = "";
    for (const st of meta.stages) {
      const opt = document.createElement("option");
      opt.value = String(st.stage);
      opt.textContent =
        `stage ${st.stage} (${st.grid_resolution.join("x")}, ` +
        `${st.generations} gen)`;
      stagePick.appendChild(opt);
    }
    stagePick.value = String(meta.stages[meta.stages.length - 1].stage);
    if (meta.selected) {
      scatter.selectedId = meta.selected.id;
    }
    inspector.configure(meta.dims[2]);
    await loadStage();
    scatter.onPick = (row) => {
      void inspector.load(row.id);
      selectBtn.disabled = false;
    };
  } catch (err) {
    banner.textContent =
      `endpoint unreachable at ${base} - retrying... (${String(err)})`;
    banner.style.display = "block";
    setTimeout(() => void boot(), 2000);
  }
}

stagePick.addEventListener("change", () => void loadStage());
xPick.addEventListener("change", redraw);
yPick.addEventListener("change", redraw);

selectBtn.addEventListener("click", () => {
  const id = scatter.currentId;
  if (id === null) {
    return;
  }
  void api
    .select(id)
    .then((sel) => {
      scatter.selectedId = sel.id;
      scatter.draw();
      const parts = Object.entries(sel.metrics)
        .map(([k, v]) => `${k}: ${v}`)
        .join(", ");
      confirmBox.textContent = `selected ${sel.id} - ${parts}`;
      confirmBox.style.display = "block";
    })
    .catch((err) => {
      confirmBox.textContent = `selection failed: ${String(err)}`;
      confirmBox.style.display = "block";
    });
});

void boot();
