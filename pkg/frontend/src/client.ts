/**
 * Search service client with stale-response discarding.
 *
 * The canvas re-queries while the user drags, so responses can arrive out of
 * order. Every submission gets a sequence number; a response is applied only
 * when its sequence number still matches the latest submission, otherwise it
 * is reported as stale and dropped. At most one request is meaningfully in
 * flight; older ones are additionally aborted when the runtime supports it.
 */

import {
  QueryBody,
  QueryResponse,
  parseErrorResponse,
  parseClassesResponse,
  parseQueryResponse,
  serializeQueryBody,
} from "./schema.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type QueryOutcome =
  | { kind: "ok"; seq: number; response: QueryResponse }
  | { kind: "error"; seq: number; messages: string[] }
  | { kind: "stale"; seq: number };

export class SearchClient {
  readonly endpoint: string;
  private fetchImpl: FetchLike;
  private seq = 0;
  private controller: AbortController | null = null;

  constructor(endpoint: string, fetchImpl?: FetchLike) {
    this.endpoint = endpoint.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  get latestSeq(): number {
    return this.seq;
  }

  async query(body: QueryBody): Promise<QueryOutcome> {
    const mySeq = ++this.seq;
    if (this.controller) {
      this.controller.abort();
    }
    const controller = typeof AbortController !== "undefined" ? new AbortController() : null;
    this.controller = controller;
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.endpoint}/query`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: serializeQueryBody(body),
        signal: controller?.signal,
      });
    } catch (err) {
      if (mySeq !== this.seq) return { kind: "stale", seq: mySeq };
      return { kind: "error", seq: mySeq, messages: [`request failed: ${String(err)}`] };
    }
    if (mySeq !== this.seq) {
      return { kind: "stale", seq: mySeq };
    }
    let payload: unknown;
    try {
      payload = await response.json();
    } catch {
      return { kind: "error", seq: mySeq, messages: ["response: not valid JSON"] };
    }
    if (mySeq !== this.seq) {
      return { kind: "stale", seq: mySeq };
    }
    if (!response.ok) {
      return { kind: "error", seq: mySeq, messages: parseErrorResponse(payload) };
    }
    return { kind: "ok", seq: mySeq, response: parseQueryResponse(payload) };
  }

  async classes(): Promise<string[]> {
    const response = await this.fetchImpl(`${this.endpoint}/classes`);
    return parseClassesResponse(await response.json());
  }

  async status(): Promise<unknown> {
    const response = await this.fetchImpl(`${this.endpoint}/status`);
    return response.json();
  }
}

/** Trailing-edge debounce; the canvas re-queries 300 ms after the last edit. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs = 300,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}

/**
 * Ordered view model of a response: exactly the service's ranking, never
 * re-sorted on the client.
 */
export interface ResultCell {
  rank: number;
  imageId: string;
  distance: number;
  uri: string | null;
}

export function toResultCells(response: QueryResponse): ResultCell[] {
  return response.results.map((item, i) => ({
    rank: i + 1,
    imageId: item.image_id,
    distance: item.distance,
    uri: item.uri,
  }));
}
