// DOM builders. Everything rendered here is a verbatim view of the API
// payload; the only client-side computation is the overlap partition.

import type { QueryConcepts, SearchResultRow } from "./api.js";
import { partitionConcepts } from "./overlap.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function chip(label: string, kind: string, highlighted = false): HTMLElement {
  return el("span", `chip chip-${kind}${highlighted ? " chip-shared" : ""}`, label);
}

export function renderQueryPanel(concepts: QueryConcepts | null): HTMLElement {
  const panel = el("aside", "query-panel");
  panel.appendChild(el("h2", undefined, "Query concepts"));
  if (!concepts) {
    panel.appendChild(el("p", "muted", "Run a search to see the inferred topics and phrases."));
    return panel;
  }
  const topics = el("div", "chip-row");
  concepts.topics.forEach((t) => topics.appendChild(chip(t.name, "topic")));
  const phrases = el("div", "chip-row");
  concepts.phrases.forEach((p) => phrases.appendChild(chip(p.surface, "phrase")));
  panel.appendChild(el("h3", undefined, "Topics"));
  panel.appendChild(topics);
  panel.appendChild(el("h3", undefined, "Phrases"));
  panel.appendChild(phrases);
  return panel;
}

export function renderResultCard(
  row: SearchResultRow,
  rank: number,
  selected: boolean,
  onSelect: (docId: string) => void,
): HTMLElement {
  const card = el("article", `result-card${selected ? " selected" : ""}`);
  card.dataset.docId = row.doc_id;

  const header = el("header", "result-header");
  header.appendChild(el("span", "result-rank", String(rank)));
  const title = el("a", "result-title", row.title || row.doc_id);
  title.href = "#";
  title.addEventListener("click", (event) => {
    event.preventDefault();
    onSelect(row.doc_id);
  });
  header.appendChild(title);
  card.appendChild(header);

  const meta = el(
    "p",
    "result-meta",
    `score ${row.score.toFixed(4)} · backbone ${row.backbone_score.toFixed(4)}` +
      ` · topic overlap ${row.topic_overlap.toFixed(4)}`,
  );
  card.appendChild(meta);

  const topicRow = el("div", "chip-row");
  row.topics.forEach((t) =>
    topicRow.appendChild(chip(t.name, "topic", row.shared_topics.includes(t.name))),
  );
  card.appendChild(topicRow);

  const phraseRow = el("div", "chip-row");
  row.phrases.forEach((p) =>
    phraseRow.appendChild(chip(p.surface, "phrase", row.shared_phrases.includes(p.surface))),
  );
  card.appendChild(phraseRow);
  return card;
}

function overlapColumns(
  heading: string,
  queryConcepts: string[],
  docConcepts: string[],
  kind: string,
): HTMLElement {
  const section = el("section", "overlap-section");
  section.appendChild(el("h3", undefined, heading));
  const grid = el("div", "overlap-grid");
  const partition = partitionConcepts(queryConcepts, docConcepts);
  const columns: Array<[string, string[], boolean]> = [
    ["Query only", partition.queryOnly, false],
    ["Shared", partition.shared, true],
    ["Document only", partition.docOnly, false],
  ];
  for (const [label, items, highlighted] of columns) {
    const column = el("div", `overlap-column${highlighted ? " overlap-shared" : ""}`);
    column.appendChild(el("h4", undefined, label));
    const list = el("div", "chip-row");
    items.forEach((item) => list.appendChild(chip(item, kind, highlighted)));
    if (items.length === 0) list.appendChild(el("span", "muted", "none"));
    column.appendChild(list);
    grid.appendChild(column);
  }
  section.appendChild(grid);
  return section;
}

export function renderOverlap(
  queryConcepts: QueryConcepts,
  doc: SearchResultRow,
): HTMLElement {
  const container = el("section", "overlap-view");
  container.appendChild(
    el("h2", undefined, `Concept overlap with ${doc.title || doc.doc_id}`),
  );
  container.appendChild(
    overlapColumns(
      "Topics",
      queryConcepts.topics.map((t) => t.name),
      doc.topics.map((t) => t.name),
      "topic",
    ),
  );
  container.appendChild(
    overlapColumns(
      "Phrases",
      queryConcepts.phrases.map((p) => p.surface),
      doc.phrases.map((p) => p.surface),
      "phrase",
    ),
  );
  return container;
}

export function renderBanner(
  kind: "loading" | "error",
  message: string,
  onRetry?: () => void,
): HTMLElement {
  const banner = el("div", `banner banner-${kind}`, message);
  if (onRetry) {
    const button = el("button", "retry-button", "Retry");
    button.addEventListener("click", onRetry);
    banner.appendChild(button);
  }
  return banner;
}
