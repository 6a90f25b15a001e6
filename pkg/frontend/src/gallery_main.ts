// Gallery page bootstrap: filter controls plus the audit-review grid.

import { FetchHttp, GalleryFilters, listRuns } from "./api.js";
import {
  DELTA_SIGNS,
  FAMILIES,
  STATUSES,
  formatDelta,
  loadGallery,
  readFilters,
  statusLabel,
  verdictBadges,
} from "./gallery.js";

const http = new FetchHttp();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function option(value: string, label?: string): HTMLOptionElement {
  const node = document.createElement("option");
  node.value = value;
  node.textContent = label ?? value;
  return node;
}

function fillSelect(id: string, values: string[]): void {
  const select = el<HTMLSelectElement>(id);
  select.appendChild(option("", "any"));
  for (const value of values) select.appendChild(option(value));
}

async function refresh(runId: string, filters: GalleryFilters): Promise<void> {
  const grid = el("grid");
  grid.textContent = "loading...";
  const state = await loadGallery(http, runId, filters);
  grid.textContent = "";
  if (state.kind === "error") {
    grid.innerHTML = `<p class="error">${state.message}</p>`;
    return;
  }
  if (state.kind === "empty") {
    grid.innerHTML = `<p class="empty">No edits match the current filters.</p>`;
    return;
  }
  if (state.kind !== "loaded") return;
  el("count").textContent = `${state.items.length} edits`;
  for (const item of state.items) {
    const card = document.createElement("div");
    card.className = "card";
    const badges = verdictBadges(item)
      .map((b) => `<span class="badge ${b.ok ? "ok" : "fail"}">${b.label}</span>`)
      .join(" ");
    card.innerHTML = `
      <div class="pair">
        <figure><img src="${item.original_url ?? ""}" alt="original"><figcaption>original</figcaption></figure>
        <figure><img src="${item.edited_url ?? ""}" alt="edited"><figcaption>edited</figcaption></figure>
      </div>
      <div class="meta">
        <strong>${item.concept}</strong> (${item.family}) - ${item.city} / ${item.scene_id}<br>
        support: ${item.scene_support} - direction: ${item.direction}<br>
        status: ${statusLabel(item)} - proxy shift: ${formatDelta(item.delta_aux)}
        - attempts: ${item.attempts}<br>
        ${badges}
      </div>`;
    grid.appendChild(card);
  }
}

async function main(): Promise<void> {
  fillSelect("filter-family", FAMILIES);
  fillSelect("filter-status", STATUSES);
  fillSelect("filter-delta", DELTA_SIGNS);

  const runs = await listRuns(http);
  const runSelect = el<HTMLSelectElement>("run-select");
  for (const run of runs) runSelect.appendChild(option(run));

  const params = new URLSearchParams(window.location.search);
  const requested = params.get("run") ?? runs[0] ?? "";
  runSelect.value = requested;

  const citySelect = el<HTMLSelectElement>("filter-city");
  citySelect.appendChild(option("", "any"));
  for (const city of ["amsterdam", "abuja", "san_francisco", "santiago", "singapore"]) {
    citySelect.appendChild(option(city));
  }

  const filters = readFilters(params);
  for (const [id, key] of [
    ["filter-family", "family"],
    ["filter-city", "city"],
    ["filter-status", "status"],
    ["filter-delta", "delta_sign"],
  ] as const) {
    el<HTMLSelectElement>(id).value = filters[key] ?? "";
  }

  const apply = () => {
    const next = new URLSearchParams();
    next.set("run", runSelect.value);
    for (const [id, key] of [
      ["filter-family", "family"],
      ["filter-city", "city"],
      ["filter-status", "status"],
      ["filter-delta", "delta_sign"],
    ] as const) {
      const value = el<HTMLSelectElement>(id).value;
      if (value) next.set(key, value);
    }
    window.history.replaceState(null, "", `?${next.toString()}`);
    void refresh(runSelect.value, readFilters(next));
  };

  for (const id of ["run-select", "filter-family", "filter-city",
                    "filter-status", "filter-delta"]) {
    el(id).addEventListener("change", apply);
  }
  void refresh(requested, filters);
}

void main();
