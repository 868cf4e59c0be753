/**
 * Wire protocol: newline-delimited JSON, server speaks first.
 *
 *   hello:    {"hello": {"vocab": K, "mask_id": M, "eos_id": E|null}}
 *   request:  {"id": n, "tokens": [int|null, ...], "block": [start, len],
 *              "positions": [int, ...]}
 *   response: {"id": n, "probs": {"<pos>": [p, ...]}}
 *   error:    {"id": n, "error": "..."}   (connection closes afterwards)
 */

import { z } from "zod";

export const requestSchema = z.object({
  id: z.number().int().nonnegative(),
  tokens: z.array(z.union([z.number().int().nonnegative(), z.null()])),
  block: z.tuple([z.number().int().nonnegative(), z.number().int().positive()]),
  positions: z.array(z.number().int().nonnegative()).min(1),
});

export type DenoiseRequest = z.infer<typeof requestSchema>;

export interface Hello {
  vocab: number;
  mask_id: number;
  eos_id: number | null;
}

export function helloLine(hello: Hello): string {
  return JSON.stringify({ hello });
}

export function responseLine(id: number, probs: Map<number, number[]>): string {
  const obj: Record<string, number[]> = {};
  for (const [pos, vec] of probs) obj[String(pos)] = vec;
  return JSON.stringify({ id, probs: obj });
}

export function errorLine(id: number | null, message: string): string {
  return JSON.stringify({ id: id ?? -1, error: message });
}

export function parseRequest(line: string): DenoiseRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new Error("malformed JSON");
  }
  const parsed = requestSchema.safeParse(raw);
  if (!parsed.success) {
    throw new Error(`bad request shape: ${parsed.error.issues[0]?.message ?? "unknown"}`);
  }
  return parsed.data;
}
