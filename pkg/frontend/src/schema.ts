/**
 * Wire formats of the search service, with validators.
 *
 * The /query body is the one canvas schema used everywhere (service, CLI,
 * on-disk canvases): {width, height, objects: [{class, bbox}], k?, nprobe?}.
 * Serialization keeps a fixed key order so that serialize(deserialize(body))
 * is byte-identical for any valid body.
 */

export type BBoxArray = [number, number, number, number];

export interface QueryObject {
  class: string;
  bbox: BBoxArray;
}

export interface QueryBody {
  width: number;
  height: number;
  objects: QueryObject[];
  k?: number;
  nprobe?: number;
}

export interface ResultItem {
  image_id: string;
  distance: number;
  uri: string | null;
}

export interface QueryResponse {
  results: ResultItem[];
  timing_ms: Record<string, number>;
}

export interface ErrorResponse {
  errors: string[];
}

export class SchemaError extends Error {
  problems: string[];

  constructor(problems: string[]) {
    super(problems.join("; "));
    this.problems = problems;
  }
}

function isObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isPositiveInt(value: unknown): value is number {
  return typeof value === "number" && Number.isInteger(value) && value > 0;
}

function isUnitCoord(value: unknown): value is number {
  return typeof value === "number" && Number.isFinite(value) && value >= 0 && value <= 1;
}

export function validateQueryBody(value: unknown): QueryBody {
  const problems: string[] = [];
  if (!isObject(value)) {
    throw new SchemaError(["body: expected an object"]);
  }
  if (!isPositiveInt(value.width)) problems.push("width: expected a positive integer");
  if (!isPositiveInt(value.height)) problems.push("height: expected a positive integer");
  if ("k" in value && value.k !== undefined && !isPositiveInt(value.k)) {
    problems.push("k: expected a positive integer");
  }
  if ("nprobe" in value && value.nprobe !== undefined && !isPositiveInt(value.nprobe)) {
    problems.push("nprobe: expected a positive integer");
  }
  if (!Array.isArray(value.objects)) {
    problems.push("objects: expected a list");
  } else {
    value.objects.forEach((obj, i) => {
      if (!isObject(obj)) {
        problems.push(`objects[${i}]: expected an object`);
        return;
      }
      if (typeof obj.class !== "string" || obj.class.length === 0) {
        problems.push(`objects[${i}].class: missing or empty`);
      }
      const bbox = obj.bbox;
      if (!Array.isArray(bbox) || bbox.length !== 4 || !bbox.every(isUnitCoord)) {
        problems.push(`objects[${i}].bbox: expected four numbers in [0, 1]`);
      } else {
        const [x0, y0, x1, y1] = bbox as BBoxArray;
        if (x1 <= x0 || y1 <= y0) {
          problems.push(`objects[${i}].bbox: degenerate box`);
        }
      }
    });
  }
  if (problems.length > 0) {
    throw new SchemaError(problems);
  }
  return value as unknown as QueryBody;
}

/** Serialize with a fixed key order so round trips are byte-identical. */
export function serializeQueryBody(body: QueryBody): string {
  const objects = body.objects.map((o) => ({ class: o.class, bbox: o.bbox }));
  const ordered: Record<string, unknown> = {
    width: body.width,
    height: body.height,
    objects,
  };
  if (body.k !== undefined) ordered.k = body.k;
  if (body.nprobe !== undefined) ordered.nprobe = body.nprobe;
  return JSON.stringify(ordered);
}

export function deserializeQueryBody(text: string): QueryBody {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new SchemaError(["body: not valid JSON"]);
  }
  return validateQueryBody(raw);
}

export function parseQueryResponse(value: unknown): QueryResponse {
  if (!isObject(value) || !Array.isArray(value.results)) {
    throw new SchemaError(["response: expected {results: [...]}"]);
  }
  const results = value.results.map((item, i) => {
    if (
      !isObject(item) ||
      typeof item.image_id !== "string" ||
      typeof item.distance !== "number"
    ) {
      throw new SchemaError([`results[${i}]: expected {image_id, distance, uri}`]);
    }
    return {
      image_id: item.image_id,
      distance: item.distance,
      uri: typeof item.uri === "string" ? item.uri : null,
    };
  });
  const timing = isObject(value.timing_ms) ? (value.timing_ms as Record<string, number>) : {};
  return { results, timing_ms: timing };
}

export function parseErrorResponse(value: unknown): string[] {
  if (isObject(value) && Array.isArray(value.errors)) {
    return value.errors.map(String);
  }
  return ["request failed"];
}

export function parseClassesResponse(value: unknown): string[] {
  if (!isObject(value) || !Array.isArray(value.classes)) {
    throw new SchemaError(["response: expected {classes: [...]}"]);
  }
  return value.classes.map(String);
}
