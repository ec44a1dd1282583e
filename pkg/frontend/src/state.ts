// The whole view state lives in the URL query string, so a reload or a
// shared link reproduces the exact same view.

export type SearchView = {
  query: string;
  k: number;
  expand: boolean;
  retention: number;
  selectedDoc: string | null;
};

export const DEFAULT_VIEW: SearchView = {
  query: "",
  k: 10,
  expand: false,
  retention: 25,
  selectedDoc: null,
};

export function toQueryString(view: SearchView): string {
  const params = new URLSearchParams();
  if (view.query) params.set("q", view.query);
  if (view.k !== DEFAULT_VIEW.k) params.set("k", String(view.k));
  if (view.expand) params.set("expand", "1");
  if (view.retention !== DEFAULT_VIEW.retention) {
    params.set("retention", String(view.retention));
  }
  if (view.selectedDoc) params.set("doc", view.selectedDoc);
  const encoded = params.toString();
  return encoded ? `?${encoded}` : "";
}

export function fromQueryString(search: string): SearchView {
  const params = new URLSearchParams(search);
  const k = Number(params.get("k"));
  const retention = Number(params.get("retention"));
  return {
    query: params.get("q") ?? DEFAULT_VIEW.query,
    k: Number.isFinite(k) && k >= 1 ? Math.floor(k) : DEFAULT_VIEW.k,
    expand: params.get("expand") === "1",
    retention:
      Number.isFinite(retention) && retention > 0 && retention <= 100
        ? retention
        : DEFAULT_VIEW.retention,
    selectedDoc: params.get("doc"),
  };
}
