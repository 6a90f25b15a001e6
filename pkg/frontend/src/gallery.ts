// Researcher audit gallery: browse original/edited pairs with verdicts,
// failure modes and proxy shifts, filtered by family, city, gate status and
// shift sign. All values come from the service; nothing is computed here.

import { ApiError, GalleryFilters, GalleryItem, Http, fetchGallery } from "./api.js";

export type GalleryState =
  | { kind: "loading" }
  | { kind: "error"; message: string }
  | { kind: "empty"; filters: GalleryFilters }
  | { kind: "loaded"; items: GalleryItem[] };

export const FAMILIES = [
  "PhysicalMaintenance",
  "EnvironmentalAmenity",
  "VisualLegibility",
  "MobilityInfrastructure",
];

export const STATUSES = ["valid", "rejected", "backend_failed"];
export const DELTA_SIGNS = ["positive", "negative", "zero"];

export function readFilters(params: URLSearchParams): GalleryFilters {
  const filters: GalleryFilters = {};
  const family = params.get("family");
  if (family && FAMILIES.includes(family)) filters.family = family;
  const city = params.get("city");
  if (city) filters.city = city;
  const status = params.get("status");
  if (status && STATUSES.includes(status)) filters.status = status;
  const sign = params.get("delta_sign");
  if (sign && DELTA_SIGNS.includes(sign)) filters.delta_sign = sign;
  return filters;
}

export async function loadGallery(
  http: Http,
  runId: string,
  filters: GalleryFilters,
): Promise<GalleryState> {
  let items: GalleryItem[];
  try {
    items = await fetchGallery(http, runId, filters);
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      return { kind: "error", message: `unknown run: ${runId}` };
    }
    return { kind: "error", message: String(err) };
  }
  if (items.length === 0) {
    return { kind: "empty", filters };
  }
  return { kind: "loaded", items };
}

export function formatDelta(delta: number | null): string {
  if (delta === null) return "not scored";
  const sign = delta >= 0 ? "+" : "";
  return `${sign}${delta.toFixed(3)}`;
}

export function verdictBadges(item: GalleryItem): { label: string; ok: boolean }[] {
  const verdict = item.verdict;
  if (!verdict) return [];
  const order = [
    "edit_attempted",
    "same_place_preserved",
    "is_localised",
    "is_realistic",
    "is_plausible",
  ];
  return order.map((name) => ({ label: name, ok: Boolean(verdict[name]) }));
}

export function statusLabel(item: GalleryItem): string {
  switch (item.status) {
    case "Accepted":
      return "valid";
    case "RejectedAllAttempts":
      return `rejected (${item.failure_modes.join(", ") || "no verdict"})`;
    case "BackendFailed":
      return "backend failed";
    default:
      return "incomplete";
  }
}
