/**
 * Canvas editing state and its pure update operations.
 *
 * All coordinates are normalized to [0, 1]; edits clamp boxes back inside
 * the canvas and never let a box collapse below a minimum size. State is
 * immutable: every edit returns a new state object, which keeps undo and
 * re-query triggering trivial for the UI layer.
 */

import { QueryBody, serializeQueryBody } from "./schema.js";

export interface Placement {
  id: number;
  classLabel: string;
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface CanvasState {
  width: number;
  height: number;
  placements: Placement[];
  selectedId: number | null;
  nextId: number;
}

export const MIN_BOX_SIZE = 0.02;

export function emptyState(width = 248, height = 248): CanvasState {
  return { width, height, placements: [], selectedId: null, nextId: 1 };
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

function clampBox(x0: number, y0: number, x1: number, y1: number) {
  let cx0 = clamp(Math.min(x0, x1), 0, 1 - MIN_BOX_SIZE);
  let cy0 = clamp(Math.min(y0, y1), 0, 1 - MIN_BOX_SIZE);
  let cx1 = clamp(Math.max(x0, x1), MIN_BOX_SIZE, 1);
  let cy1 = clamp(Math.max(y0, y1), MIN_BOX_SIZE, 1);
  if (cx1 - cx0 < MIN_BOX_SIZE) cx1 = clamp(cx0 + MIN_BOX_SIZE, MIN_BOX_SIZE, 1);
  if (cx1 - cx0 < MIN_BOX_SIZE) cx0 = cx1 - MIN_BOX_SIZE;
  if (cy1 - cy0 < MIN_BOX_SIZE) cy1 = clamp(cy0 + MIN_BOX_SIZE, MIN_BOX_SIZE, 1);
  if (cy1 - cy0 < MIN_BOX_SIZE) cy0 = cy1 - MIN_BOX_SIZE;
  return { x0: cx0, y0: cy0, x1: cx1, y1: cy1 };
}

export function addPlacement(
  state: CanvasState,
  classLabel: string,
  box: { x0: number; y0: number; x1: number; y1: number } = {
    x0: 0.35,
    y0: 0.35,
    x1: 0.65,
    y1: 0.65,
  },
): CanvasState {
  const placement: Placement = { id: state.nextId, classLabel, ...clampBox(box.x0, box.y0, box.x1, box.y1) };
  return {
    ...state,
    placements: [...state.placements, placement],
    selectedId: placement.id,
    nextId: state.nextId + 1,
  };
}

export function deletePlacement(state: CanvasState, id: number): CanvasState {
  return {
    ...state,
    placements: state.placements.filter((p) => p.id !== id),
    selectedId: state.selectedId === id ? null : state.selectedId,
  };
}

export function selectPlacement(state: CanvasState, id: number | null): CanvasState {
  return { ...state, selectedId: id };
}

export function movePlacement(state: CanvasState, id: number, dx: number, dy: number): CanvasState {
  return updatePlacement(state, id, (p) => {
    const w = p.x1 - p.x0;
    const h = p.y1 - p.y0;
    const x0 = clamp(p.x0 + dx, 0, 1 - w);
    const y0 = clamp(p.y0 + dy, 0, 1 - h);
    return { ...p, x0, y0, x1: x0 + w, y1: y0 + h };
  });
}

export type Corner = "nw" | "ne" | "sw" | "se";

export function resizePlacement(
  state: CanvasState,
  id: number,
  corner: Corner,
  dx: number,
  dy: number,
): CanvasState {
  return updatePlacement(state, id, (p) => {
    let { x0, y0, x1, y1 } = p;
    if (corner === "nw" || corner === "sw") x0 += dx;
    else x1 += dx;
    if (corner === "nw" || corner === "ne") y0 += dy;
    else y1 += dy;
    return { ...p, ...clampBox(x0, y0, x1, y1) };
  });
}

export function relabelPlacement(
  state: CanvasState,
  id: number,
  classLabel: string,
  vocabulary: readonly string[],
): CanvasState {
  if (!vocabulary.includes(classLabel)) {
    return state; // only classes the service reports are allowed
  }
  return updatePlacement(state, id, (p) => ({ ...p, classLabel }));
}

function updatePlacement(
  state: CanvasState,
  id: number,
  fn: (p: Placement) => Placement,
): CanvasState {
  return {
    ...state,
    placements: state.placements.map((p) => (p.id === id ? fn(p) : p)),
  };
}

export function toQueryBody(state: CanvasState, k?: number, nprobe?: number): QueryBody {
  const body: QueryBody = {
    width: state.width,
    height: state.height,
    objects: state.placements.map((p) => ({
      class: p.classLabel,
      bbox: [p.x0, p.y0, p.x1, p.y1],
    })),
  };
  if (k !== undefined) body.k = k;
  if (nprobe !== undefined) body.nprobe = nprobe;
  return body;
}

export function serializeState(state: CanvasState, k?: number, nprobe?: number): string {
  return serializeQueryBody(toQueryBody(state, k, nprobe));
}

export function canQuery(state: CanvasState): boolean {
  return state.placements.length > 0;
}
