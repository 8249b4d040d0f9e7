/**
 * Single-page workbench over the linking service.
 *
 * The left panel discovers contexts for a (vertex, relation) query, the
 * right panel suggests closed-world vertices for a selected mention, and
 * the overlay feed tracks accepted triples. The app is a pure client:
 * every rank, score, and count on screen is copied verbatim from the
 * last service response. Each panel keeps at most one request in flight;
 * superseded responses are discarded by sequence number.
 */

import type {
  AcceptedTriple,
  Direction,
  Engine,
  LinkingPage,
  OverlayEntry,
  RankingPage,
  RankingQuery,
} from "./api.js";
import { ServiceError, WorkbenchClient } from "./api.js";
import { highlightSurface } from "./highlight.js";

interface PanelGuard {
  seq: number;
  controller: AbortController | null;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export class WorkbenchApp {
  readonly root: HTMLElement;

  private readonly client: WorkbenchClient;
  private readonly rankingGuard: PanelGuard = { seq: 0, controller: null };
  private readonly linkingGuard: PanelGuard = { seq: 0, controller: null };
  private readonly inflight = new Set<Promise<unknown>>();
  private activeQuery: RankingQuery | null = null;
  private activeTotal = 0;
  private selectedMention: string | null = null;

  constructor(root: HTMLElement, client: WorkbenchClient) {
    this.root = root;
    this.client = client;
    this.buildSkeleton();
  }

  /** Load workspace stats and the current overlay feed. */
  start(): Promise<void> {
    return this.track(
      (async () => {
        try {
          const stats = await this.client.stats();
          const counts = stats.bundle;
          this.byId("stats-line").textContent =
            `split ${stats.split}: ${counts["closed-vertices"]} vertices, ` +
            `${counts["relations"]} relations, ${counts["closed-triples"]} closed triples; ` +
            `overlay ${stats.overlay.live} live / ${stats.overlay.tombstoned} tombstoned`;
          this.setEngineAvailability("neural", stats.engines.neural);
          this.setEngineAvailability("bm25", stats.engines["bm25-ranking"]);
          const feed = await this.client.triples();
          for (const entry of feed.items) {
            this.appendFeedEntry(entry);
          }
          this.clearError();
        } catch (err) {
          this.showError(err);
        }
      })(),
    );
  }

  /** Await every in-flight operation, including ones they trigger. */
  async settle(): Promise<void> {
    while (this.inflight.size > 0) {
      await Promise.allSettled([...this.inflight]);
    }
  }

  private track<T>(work: Promise<T>): Promise<T> {
    this.inflight.add(work);
    void work.finally(() => this.inflight.delete(work));
    return work;
  }

  private byId(id: string): HTMLElement {
    const node = this.root.querySelector(`#${id}`);
    if (!node) {
      throw new Error(`workbench skeleton is missing #${id}`);
    }
    return node as HTMLElement;
  }

  private buildSkeleton(): void {
    const header = el("header");
    header.append(el("h1", {}, "kglink workbench"), el("p", { id: "stats-line" }));

    const banner = el("div", { id: "error-banner", class: "banner", hidden: "" });
    const notice = el("div", { id: "notice", class: "notice", hidden: "" });

    const form = el("form", { id: "query-form" });
    form.append(
      el("input", { name: "vertex", placeholder: "vertex id", required: "" }),
      el("input", { name: "relation", placeholder: "relation id", required: "" }),
      this.buildSelect("direction", ["tail", "head"]),
      this.buildSelect("engine", ["neural", "bm25"]),
      el("input", { name: "limit", type: "number", value: "25", min: "0" }),
      el("button", { type: "submit", id: "search-button" }, "Search"),
    );
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const data = new FormData(form);
      this.track(
        this.runRanking({
          vertex: String(data.get("vertex") ?? ""),
          relation: String(data.get("relation") ?? ""),
          direction: String(data.get("direction")) as Direction,
          engine: String(data.get("engine")) as Engine,
          limit: Number(data.get("limit") ?? 25),
          offset: 0,
        }),
      );
    });

    const ranking = el("section", { id: "ranking-panel" });
    const pager = el("div", { class: "pager" });
    const prev = el("button", { type: "button", id: "prev-page" }, "Previous");
    const next = el("button", { type: "button", id: "next-page" }, "Next");
    prev.addEventListener("click", () => this.turnPage(-1));
    next.addEventListener("click", () => this.turnPage(+1));
    pager.append(prev, next);
    ranking.append(
      el("h2", {}, "Discover contexts"),
      form,
      el("p", { id: "ranking-summary" }),
      el("ol", { id: "ranking-results" }),
      pager,
    );

    const linking = el("section", { id: "linking-panel" });
    linking.append(
      el("h2", {}, "Link a mention"),
      el("p", { id: "linking-title" }, "Select a mention from the results."),
      el("ol", { id: "linking-results" }),
    );

    const overlay = el("section", { id: "overlay-panel" });
    const exportButton = el("button", { type: "button", id: "export-button" }, "Export");
    exportButton.addEventListener("click", () => {
      this.track(this.refreshExport());
    });
    overlay.append(
      el("h2", {}, "Accepted triples"),
      el("ul", { id: "overlay-feed" }),
      exportButton,
      el("pre", { id: "export-view" }),
    );

    const main = el("main");
    main.append(ranking, linking, overlay);
    this.root.replaceChildren(header, banner, notice, main);
  }

  private buildSelect(name: string, options: string[]): HTMLSelectElement {
    const select = el("select", { name });
    for (const option of options) {
      select.append(el("option", { value: option }, option));
    }
    return select;
  }

  private setEngineAvailability(engine: Engine, available: boolean): void {
    const option = this.root.querySelector<HTMLOptionElement>(
      `select[name="engine"] option[value="${engine}"]`,
    );
    if (option) {
      option.disabled = !available;
    }
  }

  async runRanking(query: RankingQuery): Promise<void> {
    const seq = ++this.rankingGuard.seq;
    this.rankingGuard.controller?.abort();
    const controller = new AbortController();
    this.rankingGuard.controller = controller;
    this.clearNotice();
    try {
      const page = await this.client.ranking(query, controller.signal);
      if (seq !== this.rankingGuard.seq) {
        return; // a newer query owns the panel now
      }
      this.activeQuery = query;
      this.activeTotal = page.total;
      this.renderRankingPage(page);
      this.clearError();
    } catch (err) {
      if (seq !== this.rankingGuard.seq) {
        return;
      }
      this.showError(err);
    }
  }

  private renderRankingPage(page: RankingPage): void {
    this.byId("ranking-summary").textContent =
      `${page.total} contexts match; showing ${page.items.length} from offset ${page.offset}`;
    const list = this.byId("ranking-results");
    list.replaceChildren(
      ...page.items.map((item) => {
        const row = el("li", { class: "result-row", "data-id": item.id });
        const sentence = el("span", { class: "sentence" });
        sentence.append(highlightSurface(item.sentence, item.surface));
        const mention = el(
          "button",
          { type: "button", class: "mention", "data-mention": item.mention },
          item.mention,
        );
        mention.addEventListener("click", () => {
          this.track(this.openLinking(item.mention));
        });
        row.append(
          el("span", { class: "rank" }, String(item.rank)),
          sentence,
          mention,
          el("span", { class: "score" }, String(item.score)),
        );
        return row;
      }),
    );
  }

  private turnPage(step: number): void {
    if (!this.activeQuery) {
      return;
    }
    const offset = this.activeQuery.offset + step * this.activeQuery.limit;
    if (offset < 0 || offset >= this.activeTotal) {
      return;
    }
    this.track(this.runRanking({ ...this.activeQuery, offset }));
  }

  async openLinking(mention: string): Promise<void> {
    if (!this.activeQuery) {
      return;
    }
    const seq = ++this.linkingGuard.seq;
    this.linkingGuard.controller?.abort();
    const controller = new AbortController();
    this.linkingGuard.controller = controller;
    this.clearNotice();
    try {
      const page = await this.client.linking(
        {
          mention,
          relation: this.activeQuery.relation,
          direction: this.activeQuery.direction,
          engine: this.activeQuery.engine,
          limit: this.activeQuery.limit,
        },
        controller.signal,
      );
      if (seq !== this.linkingGuard.seq) {
        return;
      }
      this.selectedMention = mention;
      this.renderLinkingPage(page);
      this.clearError();
    } catch (err) {
      if (seq !== this.linkingGuard.seq) {
        return;
      }
      this.showError(err);
    }
  }

  private renderLinkingPage(page: LinkingPage): void {
    this.byId("linking-title").textContent =
      `${page.query.mention} ("${page.query.surface}") via ${page.query.relation} ` +
      `(${page.query.direction}, ${page.query.engine}): ${page.total} candidates`;
    const list = this.byId("linking-results");
    if (page.items.length === 0) {
      const empty = el("li", { class: "empty-state" }, "No suggestions for this mention.");
      list.replaceChildren(empty);
      return;
    }
    list.replaceChildren(
      ...page.items.map((item) => {
        const row = el("li", { class: "suggestion-row", "data-vertex": item.vertex });
        const accept = el("button", { type: "button", class: "accept" }, "Accept");
        accept.addEventListener("click", () => {
          this.track(this.acceptSuggestion(item.vertex));
        });
        row.append(
          el("span", { class: "rank" }, String(item.rank)),
          el("span", { class: "vertex" }, item.vertex),
          el("span", { class: "label" }, item.label),
          el("span", { class: "score" }, String(item.score)),
          accept,
        );
        return row;
      }),
    );
  }

  async acceptSuggestion(vertex: string): Promise<void> {
    if (!this.activeQuery || !this.selectedMention) {
      return;
    }
    try {
      const result = await this.client.accept({
        mention: this.selectedMention,
        relation: this.activeQuery.relation,
        vertex,
        direction: this.activeQuery.direction,
        provenance: "workbench-ui",
      });
      if (result.created) {
        this.appendFeedEntry(result);
        this.setNotice(`Accepted ${result.id}.`);
      } else {
        this.setNotice(`Already accepted as ${result.id}; overlay unchanged.`);
      }
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  private appendFeedEntry(entry: OverlayEntry | AcceptedTriple): void {
    const feed = this.byId("overlay-feed");
    if (feed.querySelector(`[data-id="${entry.id}"]`)) {
      return;
    }
    const row = el("li", { class: "overlay-entry", "data-id": entry.id });
    const reject = el("button", { type: "button", class: "reject" }, "Reject");
    reject.addEventListener("click", () => {
      this.track(this.removeEntry(entry.id));
    });
    row.append(
      el(
        "span",
        { class: "triple" },
        `${entry.mention} -[${entry.relation}]-> ${entry.vertex} (${entry.direction})`,
      ),
      el("span", { class: "provenance" }, entry.provenance),
      reject,
    );
    feed.append(row);
  }

  async removeEntry(id: string): Promise<void> {
    try {
      await this.client.remove(id);
      this.byId("overlay-feed").querySelector(`[data-id="${id}"]`)?.remove();
      this.setNotice(`Rejected ${id}.`);
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  async refreshExport(): Promise<void> {
    try {
      this.byId("export-view").textContent = await this.client.exportTasks();
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  private showError(err: unknown): void {
    const banner = this.byId("error-banner");
    if (err instanceof ServiceError) {
      banner.textContent = `${err.code}: ${err.message}`;
    } else {
      banner.textContent = `network-error: ${err instanceof Error ? err.message : String(err)}`;
    }
    banner.hidden = false;
  }

  private clearError(): void {
    const banner = this.byId("error-banner");
    banner.hidden = true;
    banner.textContent = "";
  }

  private setNotice(text: string): void {
    const notice = this.byId("notice");
    notice.textContent = text;
    notice.hidden = false;
  }

  private clearNotice(): void {
    const notice = this.byId("notice");
    notice.hidden = true;
    notice.textContent = "";
  }
}

export function mountWorkbench(root: HTMLElement, baseUrl: string): WorkbenchApp {
  return new WorkbenchApp(root, new WorkbenchClient(baseUrl));
}
