/** Typed client for the morphreg bundle endpoints. */

export interface FrontRow {
  id: string;
  dissimilarity: number;
  deformation: number;
  guidance: number | null;
}

export interface StageInfo {
  stage: number;
  grid_resolution: number[];
  population_size: number;
  generations: number;
}

export interface Manifest {
  seed: number;
  stages: StageInfo[];
  selected: { id: string; metrics: Record<string, number> } | null;
  dims: number[];
  spacing: number[];
}

export interface SliceData {
  kind: string;
  z: number;
  width: number;
  height: number;
  rows: number[][];
}

export interface DvfSlice {
  z: number;
  width: number;
  height: number;
  spacing: number[];
  vectors: number[][][]; // [row][col] -> [dx, dy, dz] in mm
}

export type Metrics = Record<string, number>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new ApiError(resp.status, `${url}: HTTP ${resp.status}`);
  }
  return (await resp.json()) as T;
}

export class BundleApi {
  constructor(readonly baseUrl: string) {}

  meta(): Promise<Manifest> {
    return getJson(`${this.baseUrl}/api/meta`);
  }

  async front(stage: number): Promise<FrontRow[]> {
    const rows = await getJson<Record<string, string>[]>(
      `${this.baseUrl}/api/front?stage=${stage}`,
    );
    return rows.map((r) => ({
      id: r.id,
      dissimilarity: Number(r.dissimilarity),
      deformation: Number(r.deformation),
      guidance: r.guidance === "" || r.guidance === undefined ? null : Number(r.guidance),
    }));
  }

  slice(id: string, kind: string, z: number): Promise<SliceData> {
    return getJson(
      `${this.baseUrl}/api/solution/${id}/slice?kind=${kind}&z=${z}`,
    );
  }

  dvf(id: string, z: number): Promise<DvfSlice> {
    return getJson(`${this.baseUrl}/api/solution/${id}/dvf?z=${z}`);
  }

  metrics(id: string): Promise<Metrics> {
    return getJson(`${this.baseUrl}/api/solution/${id}/metrics`);
  }

  async select(id: string): Promise<{ id: string; metrics: Metrics }> {
    const resp = await fetch(`${this.baseUrl}/api/select`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id }),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, `select: HTTP ${resp.status}`);
    }
    return (await resp.json()) as { id: string; metrics: Metrics };
  }
}
