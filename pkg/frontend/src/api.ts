// Thin typed client for the sepsiscds HTTP API; every view talks to the
// backend exclusively through this module.

import {
  BrowseResponse,
  Condition,
  DecisionAck,
  DecisionBody,
  RecommendationResponse,
  StudyCase,
  TrajectoryPayload,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiValidationError extends Error {
  constructor(public detail: string, public status: number) {
    super(detail);
  }
}

export interface BrowseFilter {
  age_min?: number;
  age_max?: number;
  gender?: string;
  outcome?: "died" | "survived";
  sofa_min?: number;
  sofa_max?: number;
  sirs_min?: number;
  sirs_max?: number;
  comorbidities?: string;
  clinician_actions?: number[];
  model_actions?: number[];
  sort?: string;
  order?: "asc" | "desc";
  limit?: number;
  offset?: number;
}

export function buildQuery(filter: BrowseFilter): string {
  const parts: string[] = [];
  for (const [key, value] of Object.entries(filter)) {
    if (value === undefined || value === null) continue;
    const text = Array.isArray(value) ? value.join(",") : String(value);
    if (text === "") continue;
    parts.push(`${encodeURIComponent(key)}=${encodeURIComponent(text)}`);
  }
  return parts.length ? `?${parts.join("&")}` : "";
}

export function newIdempotencyKey(): string {
  const rand = Math.random().toString(36).slice(2, 10);
  return `ui-${Date.now().toString(36)}-${rand}`;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = globalThis.fetch?.bind(globalThis),
    private token?: string
  ) {}

  private headers(json = false): Record<string, string> {
    const out: Record<string, string> = {};
    if (json) out["Content-Type"] = "application/json";
    if (this.token) out["Authorization"] = `Bearer ${this.token}`;
    return out;
  }

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: this.headers(),
    });
    if (!resp.ok) {
      throw new Error(`GET ${path} failed with ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  getPatients(filter: BrowseFilter = {}): Promise<BrowseResponse> {
    return this.get(`/patients${buildQuery(filter)}`);
  }

  getTrajectory(patientId: string): Promise<TrajectoryPayload> {
    return this.get(`/patients/${encodeURIComponent(patientId)}`);
  }

  getRecommendation(
    patientId: string,
    bin: number,
    condition: Condition
  ): Promise<RecommendationResponse> {
    return this.get(
      `/patients/${encodeURIComponent(patientId)}/timesteps/${bin}` +
      `/recommendation?condition=${condition}`);
  }

  async getCases(): Promise<StudyCase[]> {
    const doc = await this.get<{ cases: StudyCase[] }>("/study/cases");
    return doc.cases;
  }

  async postDecision(body: DecisionBody): Promise<DecisionAck> {
    const resp = await this.fetchFn(`${this.baseUrl}/study/decisions`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(body),
    });
    if (resp.status === 422) {
      const doc = await resp.json();
      throw new ApiValidationError(String(doc.detail ?? "validation failed"), 422);
    }
    if (!resp.ok) {
      throw new Error(`POST /study/decisions failed with ${resp.status}`);
    }
    return (await resp.json()) as DecisionAck;
  }

  getReport(): Promise<Record<string, unknown>> {
    return this.get("/study/report");
  }
}
