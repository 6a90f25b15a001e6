// Typed client over the service endpoints. The UI performs no statistical
// computation; every number it shows comes from these payloads.

export interface PairView {
  done: boolean;
  assignment_id?: string;
  left_url?: string;
  right_url?: string;
  question: string;
  progress: { answered: number; total: number };
}

export interface GalleryItem {
  candidate_id: string;
  scene_id: string;
  city: string;
  concept: string;
  family: string;
  scene_support: string;
  direction: string;
  status: string | null;
  verdict: Record<string, unknown> | null;
  failure_modes: string[];
  delta_aux: number | null;
  original_url: string | null;
  edited_url: string | null;
  attempts: number;
}

export interface GalleryFilters {
  family?: string;
  city?: string;
  status?: string;
  delta_sign?: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class NetworkError extends Error {}

export interface Http {
  getJson(url: string): Promise<unknown>;
  postJson(url: string, body: unknown): Promise<unknown>;
}

export class FetchHttp implements Http {
  constructor(private base: string = "") {}

  private async request(url: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await fetch(this.base + url, init);
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return response.json();
  }

  getJson(url: string): Promise<unknown> {
    return this.request(url);
  }

  postJson(url: string, body: unknown): Promise<unknown> {
    return this.request(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}

export function nextPair(http: Http, session: string): Promise<PairView> {
  return http.getJson(
    `/judge/next?session=${encodeURIComponent(session)}`,
  ) as Promise<PairView>;
}

export function submitJudgement(
  http: Http,
  assignment: string,
  choice: "left" | "right",
  latencyMs: number,
): Promise<unknown> {
  return http.postJson("/judge", {
    assignment_id: assignment,
    choice,
    latency_ms: Math.max(0, Math.round(latencyMs)),
  });
}

export function galleryQuery(runId: string, filters: GalleryFilters): string {
  const params = new URLSearchParams();
  for (const key of ["family", "city", "status", "delta_sign"] as const) {
    const value = filters[key];
    if (value) params.set(key, value);
  }
  const query = params.toString();
  return `/runs/${encodeURIComponent(runId)}/edits${query ? "?" + query : ""}`;
}

export async function fetchGallery(
  http: Http,
  runId: string,
  filters: GalleryFilters,
): Promise<GalleryItem[]> {
  const payload = (await http.getJson(galleryQuery(runId, filters))) as {
    items: GalleryItem[];
  };
  return payload.items;
}

export async function listRuns(http: Http): Promise<string[]> {
  const payload = (await http.getJson("/runs")) as { runs: string[] };
  return payload.runs;
}
