// Application wiring: form + controls drive /api/search, the URL mirrors
// the view state, and every answer is rendered verbatim.

import { ApiError, type SearchApi, type SearchResponse } from "./api.js";
import { fromQueryString, toQueryString, type SearchView } from "./state.js";
import {
  renderBanner,
  renderOverlap,
  renderQueryPanel,
  renderResultCard,
} from "./render.js";

export type AppOptions = {
  root: HTMLElement;
  api: SearchApi;
  win?: Window;
  minIntervalMs?: number; // request spacing floor (two per second by default)
  retryMs?: number; // auto-retry delay while the engine is loading
};

export class App {
  private state: SearchView;
  private response: SearchResponse | null = null;
  private lastRequestAt = 0;
  private pendingTimer: ReturnType<typeof setTimeout> | null = null;
  private inflight: AbortController | null = null;
  private readonly win: Window;
  private readonly minIntervalMs: number;
  private readonly retryMs: number;

  private form!: HTMLFormElement;
  private queryInput!: HTMLInputElement;
  private validation!: HTMLElement;
  private bannerArea!: HTMLElement;
  private kSelect!: HTMLSelectElement;
  private retentionSlider!: HTMLInputElement;
  private retentionLabel!: HTMLElement;
  private expandToggle!: HTMLInputElement;
  private queryPanelArea!: HTMLElement;
  private resultsArea!: HTMLElement;
  private overlapArea!: HTMLElement;

  constructor(private options: AppOptions) {
    this.win = options.win ?? window;
    this.minIntervalMs = options.minIntervalMs ?? 500;
    this.retryMs = options.retryMs ?? 1000;
    this.state = fromQueryString(this.win.location.search);
    this.buildSkeleton();
    this.win.addEventListener("popstate", () => {
      this.state = fromQueryString(this.win.location.search);
      this.syncControls();
      if (this.state.query) this.scheduleSearch();
    });
    this.syncControls();
    if (this.state.query) this.scheduleSearch();
  }

  getState(): SearchView {
    return { ...this.state };
  }

  private buildSkeleton(): void {
    const root = this.options.root;
    root.innerHTML = "";

    this.form = document.createElement("form");
    this.form.className = "search-form";
    this.queryInput = document.createElement("input");
    this.queryInput.type = "search";
    this.queryInput.name = "query";
    this.queryInput.placeholder = "Describe the concepts you are looking for";
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.textContent = "Search";
    this.form.appendChild(this.queryInput);
    this.form.appendChild(submit);
    this.form.addEventListener("submit", (event) => {
      event.preventDefault();
      this.onSubmit();
    });

    this.validation = document.createElement("p");
    this.validation.className = "validation";

    const controls = document.createElement("div");
    controls.className = "controls";

    const kLabel = document.createElement("label");
    kLabel.textContent = "Results ";
    this.kSelect = document.createElement("select");
    this.kSelect.name = "k";
    for (const k of [5, 10, 20, 50]) {
      const option = document.createElement("option");
      option.value = String(k);
      option.textContent = String(k);
      this.kSelect.appendChild(option);
    }
    this.kSelect.addEventListener("change", () => {
      this.update({ k: Number(this.kSelect.value) });
    });
    kLabel.appendChild(this.kSelect);

    const retentionWrap = document.createElement("label");
    retentionWrap.textContent = "Retention ";
    this.retentionSlider = document.createElement("input");
    this.retentionSlider.type = "range";
    this.retentionSlider.name = "retention";
    this.retentionSlider.min = "1";
    this.retentionSlider.max = "100";
    this.retentionSlider.addEventListener("change", () => {
      this.update({ retention: Number(this.retentionSlider.value) });
    });
    this.retentionLabel = document.createElement("span");
    this.retentionLabel.className = "retention-value";
    retentionWrap.appendChild(this.retentionSlider);
    retentionWrap.appendChild(this.retentionLabel);

    const expandWrap = document.createElement("label");
    this.expandToggle = document.createElement("input");
    this.expandToggle.type = "checkbox";
    this.expandToggle.name = "expand";
    this.expandToggle.addEventListener("change", () => {
      this.update({ expand: this.expandToggle.checked });
    });
    expandWrap.appendChild(this.expandToggle);
    expandWrap.appendChild(document.createTextNode(" Expand query with phrases"));

    controls.appendChild(kLabel);
    controls.appendChild(retentionWrap);
    controls.appendChild(expandWrap);

    this.bannerArea = document.createElement("div");
    this.bannerArea.className = "banner-area";
    this.queryPanelArea = document.createElement("div");
    this.queryPanelArea.className = "query-panel-area";
    this.resultsArea = document.createElement("div");
    this.resultsArea.className = "results-area";
    this.overlapArea = document.createElement("div");
    this.overlapArea.className = "overlap-area";

    const main = document.createElement("div");
    main.className = "layout";
    main.appendChild(this.resultsArea);
    main.appendChild(this.queryPanelArea);

    root.appendChild(this.form);
    root.appendChild(this.validation);
    root.appendChild(controls);
    root.appendChild(this.bannerArea);
    root.appendChild(main);
    root.appendChild(this.overlapArea);
    this.renderQueryPanel();
  }

  private syncControls(): void {
    this.queryInput.value = this.state.query;
    this.kSelect.value = String(this.state.k);
    this.retentionSlider.value = String(this.state.retention);
    this.retentionLabel.textContent = `${this.state.retention}%`;
    this.expandToggle.checked = this.state.expand;
  }

  private onSubmit(): void {
    const query = this.queryInput.value.trim();
    if (!query) {
      this.validation.textContent = "Enter a query first.";
      return;
    }
    this.validation.textContent = "";
    this.update({ query, selectedDoc: null });
  }

  private update(patch: Partial<SearchView>): void {
    this.state = { ...this.state, ...patch };
    this.syncControls();
    this.pushUrl();
    if (this.state.query) this.scheduleSearch();
  }

  private pushUrl(): void {
    const target = this.win.location.pathname + toQueryString(this.state);
    this.win.history.replaceState(null, "", target);
  }

  private scheduleSearch(): void {
    const now = Date.now();
    const wait = Math.max(0, this.minIntervalMs - (now - this.lastRequestAt));
    if (this.pendingTimer !== null) clearTimeout(this.pendingTimer);
    this.pendingTimer = setTimeout(() => {
      this.pendingTimer = null;
      void this.execute();
    }, wait);
  }

  private async execute(): Promise<void> {
    this.lastRequestAt = Date.now();
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const response = await this.options.api.search(
        {
          query: this.state.query,
          k: this.state.k,
          expand: this.state.expand,
          retention: this.state.retention,
        },
        controller.signal,
      );
      if (controller.signal.aborted) return;
      this.response = response;
      this.bannerArea.innerHTML = "";
      this.renderResults();
      this.notify();
    } catch (error) {
      if (controller.signal.aborted) return;
      this.renderFailure(error);
      this.notify();
    }
  }

  private renderFailure(error: unknown): void {
    this.bannerArea.innerHTML = "";
    if (error instanceof ApiError && error.status === 503) {
      this.bannerArea.appendChild(
        renderBanner("loading", "The engine is still loading artifacts; retrying…"),
      );
      setTimeout(() => void this.execute(), this.retryMs);
      return;
    }
    this.bannerArea.appendChild(
      renderBanner("error", "Search failed (is the service running?).", () =>
        void this.execute(),
      ),
    );
  }

  private renderQueryPanel(): void {
    this.queryPanelArea.innerHTML = "";
    this.queryPanelArea.appendChild(
      renderQueryPanel(this.response ? this.response.query_concepts : null),
    );
  }

  private renderResults(): void {
    this.renderQueryPanel();
    this.resultsArea.innerHTML = "";
    if (!this.response) return;
    if (this.response.effective_query !== this.response.query) {
      this.resultsArea.appendChild(
        renderBanner("loading", `Expanded query: ${this.response.effective_query}`),
      );
    }
    this.response.results.forEach((row, index) => {
      this.resultsArea.appendChild(
        renderResultCard(row, index + 1, row.doc_id === this.state.selectedDoc,
          (docId) => this.selectDoc(docId)),
      );
    });
    this.renderOverlap();
  }

  private selectDoc(docId: string): void {
    this.state = { ...this.state, selectedDoc: docId };
    this.pushUrl();
    this.renderResults();
    this.notify();
  }

  private renderOverlap(): void {
    this.overlapArea.innerHTML = "";
    if (!this.response || !this.state.selectedDoc) return;
    const doc = this.response.results.find(
      (row) => row.doc_id === this.state.selectedDoc,
    );
    if (!doc) return;
    this.overlapArea.appendChild(
      renderOverlap(this.response.query_concepts, doc),
    );
  }

  private notify(): void {
    this.options.root.dispatchEvent(new CustomEvent("app-updated"));
  }
}

export function createApp(options: AppOptions): App {
  return new App(options);
}
