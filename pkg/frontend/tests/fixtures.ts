/**
 * In-memory stand-in for the workbench service, installed as a fetch
 * stub. It mirrors the real endpoints' shapes, envelopes, and error
 * codes over a tiny fixture workspace, records every request, and can
 * hold selected requests open so tests can interleave responses.
 */

import type { LinkingItem, OverlayEntry, RankingItem } from "../src/api.js";

export const FIXTURE_RELATIONS = new Set(["r1", "r2"]);

export const FIXTURE_VERTICES: Record<string, string> = {
  a: "Aral basin",
  b: "Basin city",
  c: "Crater rim",
};

export const FIXTURE_SURFACES: Record<string, string> = {
  "m-d1": "the basin",
  "m-e1": "crater rim",
};

export interface FixtureContext {
  id: string;
  mention: string;
  surface: string;
  sentence: string;
  score: number;
}

export const FIXTURE_CONTEXTS: FixtureContext[] = [
  {
    id: "m-d1::0",
    mention: "m-d1",
    surface: "the basin",
    sentence: "Water pooled across The Basin each spring.",
    score: 3.25,
  },
  {
    id: "m-d1::1",
    mention: "m-d1",
    surface: "the basin",
    sentence: "Maps label the basin twice: the basin proper and its rim.",
    score: 1.5,
  },
  {
    id: "m-e1::0",
    mention: "m-e1",
    surface: "crater rim",
    sentence: "Dust settled on the Crater Rim at dusk.",
    score: 0.125,
  },
];

export const FIXTURE_SUGGESTIONS: LinkingItem[] = [
  { rank: 1, vertex: "a", label: "Aral basin", score: 9.75 },
  { rank: 2, vertex: "b", label: "Basin city", score: 4.5 },
  { rank: 3, vertex: "c", label: "Crater rim", score: 1.25 },
];

export interface RecordedRequest {
  method: string;
  url: string;
  body?: unknown;
}

function ok(data: unknown, status = 200): Response {
  return new Response(JSON.stringify({ data, error: null }), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function fail(status: number, code: string, message: string): Response {
  return new Response(JSON.stringify({ data: null, error: { code, message } }), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

interface Gate {
  match: string;
  promise: Promise<void>;
}

export class FakeService {
  readonly requests: RecordedRequest[] = [];
  /** The last item pages actually served, for parity assertions. */
  servedRanking: RankingItem[] = [];
  servedLinking: LinkingItem[] = [];
  bm25Available = true;

  private readonly overlay = new Map<string, OverlayEntry>();
  private gates: Gate[] = [];
  private tombstoned = 0;
  private counter = 0;

  /** Hold the next request whose URL contains `match` until released. */
  gateOnce(match: string): () => void {
    let release!: () => void;
    const promise = new Promise<void>((resolve) => {
      release = resolve;
    });
    this.gates.push({ match, promise });
    return release;
  }

  /** Pre-populate the overlay, as if accepted in an earlier session. */
  seedEntry(mention: string, relation: string, vertex: string, direction: string): OverlayEntry {
    return this.store(mention, relation, vertex, direction, "seed");
  }

  liveEntries(): OverlayEntry[] {
    return [...this.overlay.values()].sort((x, y) =>
      `${x.mention}\t${x.relation}\t${x.vertex}\t${x.direction}`.localeCompare(
        `${y.mention}\t${y.relation}\t${y.vertex}\t${y.direction}`,
      ),
    );
  }

  readonly fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url =
      typeof input === "string" ? input : input instanceof URL ? input.toString() : input.url;
    const method = init?.method ?? "GET";
    const body = init?.body !== undefined ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, url, body });

    const gate = this.gates.find((g) => url.includes(g.match));
    if (gate) {
      this.gates = this.gates.filter((g) => g !== gate);
      await gate.promise;
    }

    const parsed = new URL(url, "http://fake.test");
    const path = parsed.pathname;
    const params = parsed.searchParams;

    if (method === "GET" && path === "/stats") {
      return this.handleStats();
    }
    if (method === "GET" && path === "/ranking") {
      return this.handleRanking(params);
    }
    if (method === "GET" && path === "/linking") {
      return this.handleLinking(params);
    }
    if (method === "GET" && path === "/triples") {
      return ok({ items: this.liveEntries() });
    }
    if (method === "POST" && path === "/triples") {
      return this.handleAccept(body as Record<string, string>);
    }
    if (method === "DELETE" && path.startsWith("/triples/")) {
      return this.handleRemove(decodeURIComponent(path.slice("/triples/".length)));
    }
    if (method === "GET" && path === "/export") {
      return new Response(this.exportText(), {
        status: 200,
        headers: { "Content-Type": "text/tab-separated-values" },
      });
    }
    return fail(404, "unknown-endpoint", `no handler for ${method} ${path}`);
  };

  private handleStats(): Response {
    return ok({
      split: "test",
      bundle: {
        relations: 2,
        "closed-vertices": 3,
        "closed-triples": 4,
        "test-mentions": 2,
        "test-contexts": FIXTURE_CONTEXTS.length,
      },
      engines: {
        neural: true,
        "bm25-ranking": this.bm25Available,
        "bm25-linking": this.bm25Available,
      },
      overlay: {
        live: this.overlay.size,
        tombstoned: this.tombstoned,
        "session-actions": 0,
      },
    });
  }

  private validateQuery(params: URLSearchParams): Response | null {
    const relation = params.get("relation") ?? "";
    if (!FIXTURE_RELATIONS.has(relation)) {
      return fail(404, "unknown-relation", `relation '${relation}' is not in the bundle`);
    }
    const direction = params.get("direction") ?? "";
    if (direction !== "head" && direction !== "tail") {
      return fail(400, "bad-direction", `direction must be head or tail, got '${direction}'`);
    }
    return null;
  }

  private handleRanking(params: URLSearchParams): Response {
    const problem = this.validateQuery(params);
    if (problem) {
      return problem;
    }
    const vertex = params.get("vertex") ?? "";
    if (!(vertex in FIXTURE_VERTICES)) {
      return fail(404, "unknown-vertex", `vertex '${vertex}' is not closed-world`);
    }
    const limit = Number(params.get("limit") ?? "25");
    const offset = Number(params.get("offset") ?? "0");
    // a different vertex serves a different order, so interleaving tests
    // can tell the two pages apart
    const ordered = vertex === "b" ? [...FIXTURE_CONTEXTS].reverse() : FIXTURE_CONTEXTS;
    const window = ordered.slice(offset, offset + limit);
    const items: RankingItem[] = window.map((ctx, i) => ({
      rank: offset + i + 1,
      id: ctx.id,
      score: ctx.score,
      mention: ctx.mention,
      surface: ctx.surface,
      sentence: ctx.sentence,
    }));
    this.servedRanking = items;
    return ok({
      query: {
        vertex,
        relation: params.get("relation"),
        direction: params.get("direction"),
        engine: params.get("engine") ?? "neural",
      },
      total: ordered.length,
      offset,
      items,
    });
  }

  private handleLinking(params: URLSearchParams): Response {
    const problem = this.validateQuery(params);
    if (problem) {
      return problem;
    }
    const mention = params.get("mention") ?? "";
    if (!(mention in FIXTURE_SURFACES)) {
      return fail(404, "unknown-mention", `mention '${mention}' is not in this split`);
    }
    const limit = Number(params.get("limit") ?? "25");
    const all = mention === "m-e1" ? [] : FIXTURE_SUGGESTIONS;
    const items = all.slice(0, limit);
    this.servedLinking = items;
    return ok({
      query: {
        mention,
        surface: FIXTURE_SURFACES[mention],
        relation: params.get("relation"),
        direction: params.get("direction"),
        engine: params.get("engine") ?? "neural",
      },
      total: all.length,
      items,
    });
  }

  private store(
    mention: string,
    relation: string,
    vertex: string,
    direction: string,
    provenance: string,
  ): OverlayEntry {
    const key = [mention, relation, vertex, direction].join("\t");
    const existing = this.overlay.get(key);
    if (existing) {
      return existing;
    }
    this.counter += 1;
    const entry: OverlayEntry = {
      id: `ov${String(this.counter).padStart(4, "0")}`,
      mention,
      relation,
      vertex,
      direction: direction as OverlayEntry["direction"],
      timestamp: `2026-08-15T00:00:${String(this.counter).padStart(2, "0")}+00:00`,
      provenance,
    };
    this.overlay.set(key, entry);
    return entry;
  }

  private handleAccept(body: Record<string, string>): Response {
    for (const field of ["mention", "relation", "vertex", "direction"]) {
      if (!(field in body)) {
        return fail(400, "missing-field", `missing fields: ${field}`);
      }
    }
    if (!FIXTURE_RELATIONS.has(body.relation)) {
      return fail(404, "unknown-relation", `relation '${body.relation}' is not in the bundle`);
    }
    if (!(body.mention in FIXTURE_SURFACES)) {
      return fail(404, "unknown-mention", `mention '${body.mention}' is not in this split`);
    }
    if (!(body.vertex in FIXTURE_VERTICES)) {
      return fail(404, "unknown-vertex", `vertex '${body.vertex}' is not closed-world`);
    }
    const key = [body.mention, body.relation, body.vertex, body.direction].join("\t");
    const existed = this.overlay.has(key);
    const entry = this.store(
      body.mention,
      body.relation,
      body.vertex,
      body.direction,
      body.provenance ?? "workbench",
    );
    return ok({ ...entry, created: !existed }, existed ? 200 : 201);
  }

  private handleRemove(id: string): Response {
    for (const [key, entry] of this.overlay) {
      if (entry.id === id) {
        this.overlay.delete(key);
        this.tombstoned += 1;
        return ok({ id, removed: true });
      }
    }
    return fail(404, "unknown-triple", `no accepted triple with id '${id}'`);
  }

  private exportText(): string {
    const rows = this.liveEntries().map(
      (e) => `${e.mention}\t${e.relation}\t${e.vertex}\t${e.direction}\n`,
    );
    return "# mention id, relation, vertex, direction\n" + rows.join("");
  }
}
