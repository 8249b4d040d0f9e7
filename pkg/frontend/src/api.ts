/**
 * Typed client for the workbench HTTP service.
 *
 * Every JSON endpoint answers with a `{data, error}` envelope; the client
 * unwraps it and turns error payloads into ServiceError instances so the
 * UI can render the machine-readable code.
 */

export type Direction = "head" | "tail";
export type Engine = "neural" | "bm25";

export interface ApiError {
  code: string;
  message: string;
}

export interface Envelope<T> {
  data: T | null;
  error: ApiError | null;
}

export interface WorkspaceStats {
  split: string;
  bundle: Record<string, number>;
  engines: { neural: boolean; "bm25-ranking": boolean; "bm25-linking": boolean };
  overlay: { live: number; tombstoned: number; "session-actions": number };
}

export interface RankingQuery {
  vertex: string;
  relation: string;
  direction: Direction;
  engine: Engine;
  limit: number;
  offset: number;
}

export interface RankingItem {
  rank: number;
  id: string;
  score: number;
  mention: string;
  surface: string;
  sentence: string;
}

export interface RankingPage {
  query: { vertex: string; relation: string; direction: Direction; engine: Engine };
  total: number;
  offset: number;
  items: RankingItem[];
}

export interface LinkingQuery {
  mention: string;
  relation: string;
  direction: Direction;
  engine: Engine;
  limit: number;
}

export interface LinkingItem {
  rank: number;
  vertex: string;
  label: string;
  score: number;
}

export interface LinkingPage {
  query: { mention: string; surface: string; relation: string; direction: Direction; engine: Engine };
  total: number;
  items: LinkingItem[];
}

export interface TripleDraft {
  mention: string;
  relation: string;
  vertex: string;
  direction: Direction;
  provenance?: string;
}

export interface OverlayEntry {
  id: string;
  mention: string;
  relation: string;
  vertex: string;
  direction: Direction;
  timestamp: string;
  provenance: string;
}

export interface AcceptedTriple extends OverlayEntry {
  created: boolean;
}

/** A service-reported failure, carrying the machine-readable code. */
export class ServiceError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

function queryString(params: Record<string, string | number>): string {
  const parts = Object.entries(params).map(
    ([key, value]) => `${encodeURIComponent(key)}=${encodeURIComponent(String(value))}`,
  );
  return parts.join("&");
}

export class WorkbenchClient {
  constructor(readonly baseUrl: string = "") {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    const body = (await response.json()) as Envelope<T>;
    if (body.error !== null) {
      throw new ServiceError(body.error.code, body.error.message);
    }
    if (body.data === null) {
      throw new ServiceError("empty-response", "service returned neither data nor error");
    }
    return body.data;
  }

  stats(): Promise<WorkspaceStats> {
    return this.call("/stats");
  }

  ranking(query: RankingQuery, signal?: AbortSignal): Promise<RankingPage> {
    return this.call(`/ranking?${queryString({ ...query })}`, { signal });
  }

  linking(query: LinkingQuery, signal?: AbortSignal): Promise<LinkingPage> {
    return this.call(`/linking?${queryString({ ...query })}`, { signal });
  }

  triples(): Promise<{ items: OverlayEntry[] }> {
    return this.call("/triples");
  }

  accept(draft: TripleDraft): Promise<AcceptedTriple> {
    return this.call("/triples", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(draft),
    });
  }

  remove(id: string): Promise<{ id: string; removed: boolean }> {
    return this.call(`/triples/${encodeURIComponent(id)}`, { method: "DELETE" });
  }

  /** The overlay in the bundle's task-triple TSV format, as plain text. */
  async exportTasks(): Promise<string> {
    const response = await fetch(`${this.baseUrl}/export`);
    return response.text();
  }
}
