import type { ImagePayload, NextAssignment, Progress, VoteRecord } from "./types.js";

/** Field names that would leak the ours/baseline assignment. A payload
 * carrying any of them is rejected outright. */
const FORBIDDEN_FIELDS = ["ours", "assignment", "assignment_key", "key"];

export class PayloadLeakError extends Error {}

function assertNoAssignmentKey(obj: unknown): void {
  if (obj === null || typeof obj !== "object") return;
  for (const field of FORBIDDEN_FIELDS) {
    if (field in (obj as Record<string, unknown>)) {
      throw new PayloadLeakError(`payload contains forbidden field "${field}"`);
    }
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  async nextAssignment(annotator: string | null): Promise<NextAssignment> {
    const query = annotator ? `?annotator=${encodeURIComponent(annotator)}` : "";
    const resp = await this.fetchFn(`${this.baseUrl}/api/next-assignment${query}`);
    if (!resp.ok) throw new Error(`next-assignment failed: ${resp.status}`);
    const payload = (await resp.json()) as NextAssignment;
    assertNoAssignmentKey(payload);
    if (payload.pair) assertNoAssignmentKey(payload.pair);
    return payload;
  }

  /** The query image is fetched only after the realism vote; the
   * next-assignment payload never contains it. */
  async fetchImage(pairId: string): Promise<ImagePayload> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/image/${encodeURIComponent(pairId)}`);
    if (!resp.ok) throw new Error(`image fetch failed: ${resp.status}`);
    return (await resp.json()) as ImagePayload;
  }

  /** POST the completed vote. Retries transparently: the server dedupes on
   * (pair, annotator), so a retried submission lands at most once. */
  async postVote(vote: VoteRecord, retries = 2): Promise<string> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= retries; attempt++) {
      try {
        const resp = await this.fetchFn(`${this.baseUrl}/api/vote`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(vote),
        });
        if (resp.ok) {
          const body = (await resp.json()) as { status: string };
          return body.status;
        }
        throw new Error(`vote rejected: ${resp.status}`);
      } catch (err) {
        lastError = err;
        if (err instanceof Error && err.message.startsWith("vote rejected")) throw err;
      }
    }
    throw lastError instanceof Error ? lastError : new Error("vote failed");
  }

  async progress(): Promise<Progress> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/progress`);
    if (!resp.ok) throw new Error(`progress failed: ${resp.status}`);
    return (await resp.json()) as Progress;
  }
}
