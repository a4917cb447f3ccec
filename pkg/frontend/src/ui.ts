/**
 * DOM layer: draws the composition canvas, handles mouse editing, and
 * renders ranked results strictly in service order.
 */

import { SearchClient, debounce, toResultCells, QueryOutcome } from "./client.js";
import {
  CanvasState,
  Corner,
  addPlacement,
  canQuery,
  deletePlacement,
  emptyState,
  movePlacement,
  relabelPlacement,
  resizePlacement,
  selectPlacement,
  toQueryBody,
} from "./state.js";

const PALETTE = [
  "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
  "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080",
];

const HANDLE_PX = 7;

type DragMode =
  | { kind: "none" }
  | { kind: "move"; id: number; lastX: number; lastY: number }
  | { kind: "resize"; id: number; corner: Corner; lastX: number; lastY: number };

export class CanvasApp {
  state: CanvasState = emptyState();
  vocabulary: string[] = [];
  k = 20;
  private drag: DragMode = { kind: "none" };
  private colorByClass = new Map<string, string>();
  private requery: () => void;

  constructor(
    private client: SearchClient,
    private canvas: HTMLCanvasElement,
    private classList: HTMLElement,
    private resultsGrid: HTMLElement,
    private statusLine: HTMLElement,
    private errorBox: HTMLElement,
    private queryButton: HTMLButtonElement,
    private kSelect: HTMLSelectElement,
  ) {
    this.requery = debounce(() => void this.submit(), 300);
    canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMouseMove(e));
    window.addEventListener("mouseup", () => this.onMouseUp());
    window.addEventListener("keydown", (e) => this.onKeyDown(e));
    queryButton.addEventListener("click", () => void this.submit());
    kSelect.addEventListener("change", () => {
      this.k = Number(kSelect.value);
      this.editHappened();
    });
  }

  async start(): Promise<void> {
    try {
      this.vocabulary = await this.client.classes();
    } catch (err) {
      this.showErrors([`cannot reach service at ${this.client.endpoint}: ${String(err)}`]);
      return;
    }
    this.vocabulary.forEach((label, i) => {
      this.colorByClass.set(label, PALETTE[i % PALETTE.length] ?? "#888888");
      const button = document.createElement("button");
      button.textContent = label;
      button.style.borderColor = this.colorByClass.get(label) ?? "#888888";
      button.addEventListener("click", () => {
        if (this.state.selectedId !== null) {
          this.state = relabelPlacement(this.state, this.state.selectedId, label, this.vocabulary);
        } else {
          this.state = addPlacement(this.state, label);
        }
        this.editHappened();
      });
      this.classList.appendChild(button);
    });
    try {
      const status = (await this.client.status()) as { corpus_size?: number };
      this.statusLine.textContent = `corpus: ${status.corpus_size ?? "?"} images`;
    } catch {
      this.statusLine.textContent = "status unavailable";
    }
    this.render();
  }

  private editHappened(): void {
    this.render();
    if (canQuery(this.state)) {
      this.requery();
    }
  }

  private async submit(): Promise<void> {
    if (!canQuery(this.state)) return;
    const outcome: QueryOutcome = await this.client.query(toQueryBody(this.state, this.k));
    if (outcome.kind === "stale") return;
    if (outcome.kind === "error") {
      this.showErrors(outcome.messages);
      return;
    }
    this.showErrors([]);
    this.renderResults(outcome);
  }

  private renderResults(outcome: Extract<QueryOutcome, { kind: "ok" }>): void {
    this.resultsGrid.replaceChildren();
    for (const cell of toResultCells(outcome.response)) {
      const card = document.createElement("div");
      card.className = "result-card";
      if (cell.uri) {
        const img = document.createElement("img");
        img.src = cell.uri;
        img.alt = cell.imageId;
        card.appendChild(img);
      }
      const caption = document.createElement("div");
      caption.textContent = `#${cell.rank} ${cell.imageId} (${cell.distance.toFixed(4)})`;
      card.appendChild(caption);
      this.resultsGrid.appendChild(card);
    }
    const timing = outcome.response.timing_ms;
    this.statusLine.textContent = `query ${outcome.seq}: ${outcome.response.results.length} results in ${(timing.total ?? 0).toFixed(1)} ms`;
  }

  private showErrors(messages: string[]): void {
    this.errorBox.replaceChildren();
    for (const message of messages) {
      const line = document.createElement("div");
      line.textContent = message;
      this.errorBox.appendChild(line);
    }
    this.errorBox.style.display = messages.length ? "block" : "none";
  }

  private toNormalized(e: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: (e.clientX - rect.left) / rect.width,
      y: (e.clientY - rect.top) / rect.height,
    };
  }

  private hitCorner(px: number, py: number): { id: number; corner: Corner } | null {
    const rect = this.canvas.getBoundingClientRect();
    const tolX = HANDLE_PX / rect.width;
    const tolY = HANDLE_PX / rect.height;
    for (let i = this.state.placements.length - 1; i >= 0; i--) {
      const p = this.state.placements[i];
      if (!p) continue;
      const corners: [Corner, number, number][] = [
        ["nw", p.x0, p.y0], ["ne", p.x1, p.y0], ["sw", p.x0, p.y1], ["se", p.x1, p.y1],
      ];
      for (const [corner, cx, cy] of corners) {
        if (Math.abs(px - cx) <= tolX && Math.abs(py - cy) <= tolY) {
          return { id: p.id, corner };
        }
      }
    }
    return null;
  }

  private hitBox(px: number, py: number): number | null {
    for (let i = this.state.placements.length - 1; i >= 0; i--) {
      const p = this.state.placements[i];
      if (p && px >= p.x0 && px <= p.x1 && py >= p.y0 && py <= p.y1) {
        return p.id;
      }
    }
    return null;
  }

  private onMouseDown(e: MouseEvent): void {
    const { x, y } = this.toNormalized(e);
    const corner = this.hitCorner(x, y);
    if (corner) {
      this.state = selectPlacement(this.state, corner.id);
      this.drag = { kind: "resize", id: corner.id, corner: corner.corner, lastX: x, lastY: y };
      this.render();
      return;
    }
    const id = this.hitBox(x, y);
    this.state = selectPlacement(this.state, id);
    if (id !== null) {
      this.drag = { kind: "move", id, lastX: x, lastY: y };
    }
    this.render();
  }

  private onMouseMove(e: MouseEvent): void {
    if (this.drag.kind === "none") return;
    const { x, y } = this.toNormalized(e);
    const dx = x - this.drag.lastX;
    const dy = y - this.drag.lastY;
    if (this.drag.kind === "move") {
      this.state = movePlacement(this.state, this.drag.id, dx, dy);
    } else {
      this.state = resizePlacement(this.state, this.drag.id, this.drag.corner, dx, dy);
    }
    this.drag = { ...this.drag, lastX: x, lastY: y };
    this.editHappened();
  }

  private onMouseUp(): void {
    this.drag = { kind: "none" };
  }

  private onKeyDown(e: KeyboardEvent): void {
    if ((e.key === "Delete" || e.key === "Backspace") && this.state.selectedId !== null) {
      const active = document.activeElement;
      if (active instanceof HTMLInputElement || active instanceof HTMLSelectElement) return;
      this.state = deletePlacement(this.state, this.state.selectedId);
      this.editHappened();
    }
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const w = this.canvas.width;
    const h = this.canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#fafafa";
    ctx.fillRect(0, 0, w, h);
    for (const p of this.state.placements) {
      const color = this.colorByClass.get(p.classLabel) ?? "#555555";
      const x = p.x0 * w;
      const y = p.y0 * h;
      const bw = (p.x1 - p.x0) * w;
      const bh = (p.y1 - p.y0) * h;
      ctx.fillStyle = color + "22";
      ctx.fillRect(x, y, bw, bh);
      ctx.lineWidth = p.id === this.state.selectedId ? 3 : 1.5;
      ctx.strokeStyle = color;
      ctx.strokeRect(x, y, bw, bh);
      ctx.fillStyle = color;
      ctx.font = "12px sans-serif";
      ctx.fillText(p.classLabel, x + 4, y + 14);
      if (p.id === this.state.selectedId) {
        for (const [cx, cy] of [[p.x0, p.y0], [p.x1, p.y0], [p.x0, p.y1], [p.x1, p.y1]]) {
          ctx.fillRect((cx ?? 0) * w - 3, (cy ?? 0) * h - 3, 6, 6);
        }
      }
    }
    this.queryButton.disabled = !canQuery(this.state);
  }
}
