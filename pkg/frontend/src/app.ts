// ============================================
// WORKBENCH APP CONTROLLER
// ============================================
//
// Wires the page to the API client. Event handlers stay thin: they map the
// pointer position to image pixels and call the controller methods below,
// which the tests drive directly. Every server rejection lands in
// #status-line verbatim.

import {
  ApiError,
  WorkbenchClient,
  type MapRecord,
  type ProjectView,
  type SampleView,
  type TrainParams,
  type TrainStatus,
} from "./api.js";
import { OverlayLayer } from "./overlay.js";
import {
  SessionView,
  formatTrialRow,
  parseTrialLine,
  toImagePoint,
  visibleRecords,
} from "./state.js";

export interface AppOptions {
  /** Training status poll interval (ms). Tests shrink it. */
  pollMs?: number;
  /** Grid step for map queries (px). */
  step?: number;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export class WorkbenchApp {
  readonly client: WorkbenchClient;
  session!: SessionView;
  project: ProjectView | null = null;

  /** Map records cached from one limiter-0 fetch; the slider re-filters
   * these locally, which must equal asking the server at that limiter. */
  mapRecords: MapRecord[] = [];
  mapClasses: string[] = [];
  lastError: string | null = null;

  private readonly pollMs: number;
  private readonly step: number;
  private renderedTrials = 0;
  private overlay!: OverlayLayer;

  // elements
  private stage!: HTMLElement;
  private frame!: HTMLImageElement;
  private imageSelect!: HTMLSelectElement;
  private classSelect!: HTMLSelectElement;
  private classFilterSelect!: HTMLSelectElement;
  private pendingBar!: HTMLElement;
  private pendingLabel!: HTMLElement;
  private limiterInput!: HTMLInputElement;
  private limiterValue!: HTMLElement;
  private trainBtn!: HTMLButtonElement;
  private stopBtn!: HTMLButtonElement;
  private trialLog!: HTMLElement;
  private trainState!: HTMLElement;
  private bestLine!: HTMLElement;
  private staleBadge!: HTMLElement;
  private sampleCount!: HTMLElement;
  private statusLine!: HTMLElement;
  private shownCount!: HTMLElement;
  private correctionToggle!: HTMLInputElement;
  private zoomLevel!: HTMLElement;

  constructor(client: WorkbenchClient, options: AppOptions = {}) {
    this.client = client;
    this.pollMs = options.pollMs ?? 500;
    this.step = options.step ?? 8;
  }

  /** Fetch the project and bind the page. Call once after the DOM exists. */
  async init(): Promise<void> {
    this.grabElements();
    this.project = await this.client.getProject();
    this.session = new SessionView(this.project.classes, this.project.radius);
    this.overlay = new OverlayLayer(
      byId("overlay"),
      byId("tooltip"),
      byId("map-hint"),
    );
    this.populateSelects();
    this.bindEvents();
    this.renderProject();

    const firstImage = Object.keys(this.project.images)[0];
    if (firstImage) this.chooseImage(firstImage);
  }

  private grabElements(): void {
    this.stage = byId("stage");
    this.frame = byId<HTMLImageElement>("frame");
    this.imageSelect = byId<HTMLSelectElement>("image-select");
    this.classSelect = byId<HTMLSelectElement>("class-select");
    this.classFilterSelect = byId<HTMLSelectElement>("class-filter");
    this.pendingBar = byId("pending-bar");
    this.pendingLabel = byId("pending-label");
    this.limiterInput = byId<HTMLInputElement>("limiter");
    this.limiterValue = byId("limiter-value");
    this.trainBtn = byId<HTMLButtonElement>("train-btn");
    this.stopBtn = byId<HTMLButtonElement>("stop-btn");
    this.trialLog = byId("trial-log");
    this.trainState = byId("train-state");
    this.bestLine = byId("best-line");
    this.staleBadge = byId("stale-badge");
    this.sampleCount = byId("sample-count");
    this.statusLine = byId("status-line");
    this.shownCount = byId("shown-count");
    this.correctionToggle = byId<HTMLInputElement>("correction-mode");
    this.zoomLevel = byId("zoom-level");
  }

  private populateSelects(): void {
    const project = this.project!;
    this.imageSelect.innerHTML = "";
    for (const id of Object.keys(project.images)) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      this.imageSelect.appendChild(opt);
    }
    this.classSelect.innerHTML = "";
    for (const tag of project.classes) {
      const opt = document.createElement("option");
      opt.value = tag;
      opt.textContent = tag;
      this.classSelect.appendChild(opt);
    }
    this.classFilterSelect.innerHTML = "";
    const all = document.createElement("option");
    all.value = "";
    all.textContent = "all classes";
    this.classFilterSelect.appendChild(all);
    for (const tag of project.classes) {
      const opt = document.createElement("option");
      opt.value = tag;
      opt.textContent = tag;
      this.classFilterSelect.appendChild(opt);
    }
  }

  private bindEvents(): void {
    this.stage.addEventListener("mousedown", (e) => this.onStageClick(e as MouseEvent));
    byId("confirm-sample").addEventListener("click", () => {
      void this.confirmPending();
    });
    byId("cancel-sample").addEventListener("click", () => this.cancelPending());
    this.imageSelect.addEventListener("change", () => {
      this.chooseImage(this.imageSelect.value);
    });
    this.classSelect.addEventListener("change", () => {
      this.session.setClass(this.classSelect.value);
    });
    this.classFilterSelect.addEventListener("change", () => {
      this.session.setClassFilter(this.classFilterSelect.value || null);
      this.applyFilter();
    });
    this.limiterInput.addEventListener("input", () => {
      this.setLimiter(Number(this.limiterInput.value));
    });
    this.trainBtn.addEventListener("click", () => {
      void this.startTraining(this.readTrainForm()).catch(() => {
        // surfaced already; keep the page alive
      });
    });
    this.stopBtn.addEventListener("click", () => {
      void this.requestStop();
    });
    byId("refresh-map").addEventListener("click", () => {
      void this.loadMap();
    });
    this.correctionToggle.addEventListener("change", () => {
      this.session.correctionMode = this.correctionToggle.checked;
    });
    byId("zoom-in").addEventListener("click", () => this.setZoom(+1));
    byId("zoom-out").addEventListener("click", () => this.setZoom(-1));
  }

  private readTrainForm(): TrainParams {
    return {
      search: byId<HTMLSelectElement>("search-kind").value as "random" | "grid",
      budget: Number(byId<HTMLInputElement>("budget").value) || 20,
      seed: Number(byId<HTMLInputElement>("seed").value) || 0,
      folds: Number(byId<HTMLInputElement>("folds").value) || 5,
    };
  }

  // --------------------------------------------
  // project view
  // --------------------------------------------

  async refresh(): Promise<ProjectView> {
    this.project = await this.client.getProject();
    this.renderProject();
    return this.project;
  }

  private renderProject(): void {
    const project = this.project!;
    this.sampleCount.textContent = String(project.sample_count);
    const stale = project.model.present && project.model.stale;
    this.staleBadge.classList.toggle("hidden", !stale);
    this.staleBadge.textContent = stale ? "model stale — retrain" : "";
    const running = project.training.state === "running";
    this.trainBtn.disabled = running;
    this.stopBtn.disabled = !running;
    if (running) this.trainState.textContent = "running";
  }

  chooseImage(id: string): void {
    this.session.image = id;
    this.imageSelect.value = id;
    this.frame.src = this.client.imageUrl(id);
    this.mapRecords = [];
    this.mapClasses = [];
    this.overlay.clearMarks();
    this.overlay.setHint(null);
    this.cancelPending();
  }

  // --------------------------------------------
  // sample placement
  // --------------------------------------------

  private onStageClick(e: MouseEvent): void {
    if (!this.session.image) return;
    const rect = this.stage.getBoundingClientRect();
    const { x, y } = toImagePoint(e.clientX, e.clientY, rect, this.session.scale);
    if (this.session.correctionMode) {
      void this.correctAt(x, y);
    } else {
      this.placeAt(x, y);
    }
  }

  /** Stage a sample at image pixel (x, y): circle preview, no API call yet. */
  placeAt(x: number, y: number): void {
    this.session.placePending(x, y);
    this.overlay.showPending(x, y, this.session.radius);
    this.pendingLabel.textContent = `${this.session.selectedClass} @ (${x}, ${y})`;
    this.pendingBar.classList.remove("hidden");
  }

  async confirmPending(): Promise<SampleView | null> {
    const pending = this.session.pending;
    if (!pending || !this.session.image) return null;
    try {
      const record = await this.client.addSample(
        this.session.image,
        pending.x,
        pending.y,
        this.session.selectedClass,
      );
      this.clearError();
      await this.refresh();
      return record;
    } catch (err) {
      this.surface(err);
      return null;
    } finally {
      this.cancelPending();
    }
  }

  cancelPending(): void {
    this.session.clearPending();
    this.overlay.clearPending();
    this.pendingBar.classList.add("hidden");
    this.pendingLabel.textContent = "";
  }

  /** Correction: a fresh sample at a misclassified point, tagged with the
   * currently selected class. The stale badge appears on success. */
  async correctAt(x: number, y: number): Promise<SampleView | null> {
    if (!this.session.image) return null;
    try {
      const record = await this.client.correct(
        this.session.image,
        x,
        y,
        this.session.selectedClass,
      );
      this.clearError();
      await this.refresh();
      return record;
    } catch (err) {
      this.surface(err);
      return null;
    }
  }

  // --------------------------------------------
  // training
  // --------------------------------------------

  /** Start a search and poll until it ends, appending one log row per
   * finished trial. Resolves with the terminal status. */
  async startTraining(params: TrainParams = {}): Promise<TrainStatus> {
    this.clearError();
    try {
      await this.client.startTraining(params);
    } catch (err) {
      this.surface(err); // e.g. busy (409) or a thin class (400), verbatim
      throw err;
    }
    this.trialLog.innerHTML = "";
    this.renderedTrials = 0;
    this.bestLine.textContent = "";
    this.trainBtn.disabled = true;
    this.stopBtn.disabled = false;

    let status: TrainStatus;
    for (;;) {
      status = await this.client.trainingStatus();
      this.appendTrialRows(status.trials);
      this.trainState.textContent =
        status.state === "running"
          ? `running — ${status.trial_count} trials`
          : status.state;
      if (status.state === "done" || status.state === "error") break;
      await sleep(this.pollMs);
    }

    this.trainBtn.disabled = false;
    this.stopBtn.disabled = true;
    if (status.state === "error" && status.error) {
      this.surface(new ApiError(0, status.error));
    }
    if (status.best) {
      this.bestLine.textContent =
        `best ${formatTrialRow({ index: 0, ...status.best }).replace(/^#000\s+/, "")}` +
        ` [${status.best.stop_reason}]`;
    }
    await this.refresh();
    if (this.session.image && this.project!.model.present) {
      await this.loadMap();
    }
    return status;
  }

  private appendTrialRows(trials: string[]): void {
    for (let i = this.renderedTrials; i < trials.length; i++) {
      const li = document.createElement("li");
      li.textContent = formatTrialRow(parseTrialLine(trials[i]));
      this.trialLog.appendChild(li);
    }
    this.renderedTrials = trials.length;
  }

  async requestStop(): Promise<void> {
    try {
      await this.client.stopTraining();
    } catch (err) {
      this.surface(err);
    }
  }

  // --------------------------------------------
  // map overlay
  // --------------------------------------------

  /** Fetch the full map (limiter 0) for the current image and render it at
   * the session's limiter. Returns the number of shown marks. */
  async loadMap(): Promise<number> {
    if (!this.session.image) return 0;
    try {
      const view = await this.client.getMap(this.session.image, 0, this.step);
      this.mapRecords = view.records;
      this.mapClasses = view.classes;
      this.overlay.setHint(null);
      return this.applyFilter();
    } catch (err) {
      this.mapRecords = [];
      this.overlay.clearMarks();
      if (err instanceof ApiError && err.status === 400) {
        this.overlay.setHint(err.detail); // typically: no trained model yet
        return 0;
      }
      this.surface(err);
      return 0;
    }
  }

  /** Re-filter the cached records without refetching. */
  applyFilter(): number {
    const n = this.overlay.render(
      this.mapRecords,
      this.mapClasses,
      this.session.limiter,
      this.session.classFilter,
    );
    this.shownCount.textContent = `${n} marks`;
    return n;
  }

  setLimiter(value: number): number {
    this.session.setLimiter(value);
    this.limiterInput.value = String(this.session.limiter);
    this.limiterValue.textContent = this.session.limiter.toFixed(2);
    return this.applyFilter();
  }

  /** The records the overlay would show at a limiter (for comparisons). */
  visibleAt(limiter: number, classFilter: string | null = null): MapRecord[] {
    return visibleRecords(this.mapRecords, limiter, classFilter);
  }

  // --------------------------------------------
  // zoom & errors
  // --------------------------------------------

  private setZoom(direction: number): void {
    if (direction > 0) this.session.zoomIn();
    else this.session.zoomOut();
    this.stage.style.transform = `scale(${this.session.scale})`;
    this.stage.style.transformOrigin = "top left";
    this.zoomLevel.textContent = `${Math.round(this.session.scale * 100)}%`;
  }

  surface(err: unknown): void {
    const msg =
      err instanceof ApiError
        ? err.detail
        : err instanceof Error
          ? err.message
          : String(err);
    this.lastError = msg;
    this.statusLine.textContent = msg;
    this.statusLine.classList.add("error");
  }

  clearError(): void {
    this.lastError = null;
    this.statusLine.textContent = "";
    this.statusLine.classList.remove("error");
  }
}
