// ============================================
// WORKBENCH API CLIENT
// ============================================
//
// Thin typed wrappers over the workbench HTTP endpoints. The UI never
// computes classes or probabilities itself — everything displayed comes
// back from one of these calls. Server rejections are turned into ApiError
// carrying the server's own message, so views can surface it verbatim.

export interface SampleView {
  id: string;
  image: string;
  x: number;
  y: number;
  class: string;
  ordinal: number;
}

export interface ModelView {
  present: boolean;
  stale: boolean;
  classes: string[];
}

export interface ProjectView {
  name: string;
  classes: string[];
  radius: number;
  images: Record<string, string>;
  samples: SampleView[];
  sample_count: number;
  model: ModelView;
  training: { state: string };
}

export interface MapRecord {
  x: number;
  y: number;
  informative: boolean;
  class: string | null;
  p: number[] | null;
}

export interface MapView {
  image: string;
  step: number;
  radius: number;
  classes: string[];
  grid_points: number;
  records: MapRecord[];
}

export interface BestTrial {
  c: number;
  gamma: number;
  cv_accuracy: number;
  stop_reason: string;
}

export interface TrainStatus {
  state: "idle" | "running" | "done" | "error";
  trials: string[];
  trial_count: number;
  error: string | null;
  stop_requested: boolean;
  best: BestTrial | null;
}

export interface TrainParams {
  search?: "random" | "grid";
  budget?: number;
  seed?: number;
  folds?: number;
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

async function raiseApiError(res: Response): Promise<never> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the HTTP status line
  }
  throw new ApiError(res.status, detail);
}

export class WorkbenchClient {
  constructor(readonly base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.base + path, init);
    if (!res.ok) {
      await raiseApiError(res);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getProject(): Promise<ProjectView> {
    return this.request("/api/project");
  }

  /** URL of the registered image's PNG (used as <img src>). */
  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}`;
  }

  addSample(image: string, x: number, y: number, tag: string): Promise<SampleView> {
    return this.post("/api/samples", { image, x, y, class: tag });
  }

  /** A correction is a fresh sample at a misclassified map point. */
  correct(image: string, x: number, y: number, tag: string): Promise<SampleView> {
    return this.post("/api/corrections", { image, x, y, class: tag });
  }

  removeSample(id: string): Promise<{ removed: string }> {
    return this.request(`/api/samples/${encodeURIComponent(id)}`, {
      method: "DELETE",
    });
  }

  retagSample(id: string, tag: string): Promise<SampleView> {
    return this.request(`/api/samples/${encodeURIComponent(id)}`, {
      method: "PATCH",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ class: tag }),
    });
  }

  startTraining(params: TrainParams = {}): Promise<{ started: boolean }> {
    return this.post("/api/train", params);
  }

  trainingStatus(): Promise<TrainStatus> {
    return this.request("/api/train/status");
  }

  stopTraining(): Promise<{ stopping: boolean }> {
    return this.post("/api/train/stop", {});
  }

  getMap(image: string, limiter = 0, step = 8): Promise<MapView> {
    const query = new URLSearchParams({
      image,
      limiter: String(limiter),
      step: String(step),
    });
    return this.request(`/api/map?${query.toString()}`);
  }
}
