import { vi } from "vitest";
import type { PairPayload, VoteRecord } from "../src/types.js";

export function makePair(id: string, extra: Record<string, unknown> = {}): PairPayload {
  const shape = {
    dims: [4, 4, 4] as [number, number, number],
    occupied: [
      [1, 1, 1],
      [1, 2, 1],
      [2, 1, 2],
    ],
  };
  return { pair_id: id, category: "box", shape_a: shape, shape_b: shape, ...extra } as PairPayload;
}

export interface MockServer {
  fetchFn: typeof fetch;
  votes: VoteRecord[];
  voteCalls: number;
  imageCalls: string[];
  failNextVotes: number;
}

/** In-memory stand-in for the judging API with idempotent vote handling. */
export function mockServer(pairs: PairPayload[], opts: { leakKey?: boolean } = {}): MockServer {
  let cursor = 0;
  const state: MockServer = {
    votes: [],
    voteCalls: 0,
    imageCalls: [],
    failNextVotes: 0,
    fetchFn: undefined as unknown as typeof fetch,
  };
  const json = (payload: unknown, status = 200) =>
    new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });

  state.fetchFn = vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.includes("/api/next-assignment")) {
      const pair = cursor < pairs.length ? pairs[cursor] : null;
      const payload: Record<string, unknown> = {
        annotator: "tok123",
        done: pair === null,
        pair,
      };
      if (opts.leakKey) payload.ours = "a";
      return json(payload);
    }
    if (url.includes("/api/image/")) {
      const pairId = decodeURIComponent(url.split("/api/image/")[1]);
      state.imageCalls.push(pairId);
      return json({ pair_id: pairId, h: 2, w: 2, pixels: [[0, 1], [1, 0]] });
    }
    if (url.includes("/api/vote")) {
      state.voteCalls += 1;
      if (state.failNextVotes > 0) {
        state.failNextVotes -= 1;
        throw new TypeError("network down");
      }
      const vote = JSON.parse(String(init?.body)) as VoteRecord;
      const dup = state.votes.find(
        (v) => v.pair_id === vote.pair_id && v.annotator_id === vote.annotator_id,
      );
      if (dup) return json({ status: "duplicate" });
      state.votes.push(vote);
      cursor += 1;
      return json({ status: "accepted" });
    }
    if (url.includes("/api/progress")) {
      return json({
        total_pairs: pairs.length,
        complete_pairs: 0,
        total_votes: state.votes.length,
        votes_per_pair: 5,
      });
    }
    return json({ error: "not found" }, 404);
  }) as unknown as typeof fetch;
  return state;
}

export function appDom(): Document {
  // jsdom has no 2D context; the views fall back to angle bookkeeping only
  (HTMLCanvasElement.prototype as unknown as { getContext: () => null }).getContext = () => null;
  document.body.innerHTML = `
    <p id="status"></p>
    <div id="error-screen" hidden></div>
    <canvas id="viewer-a" width="64" height="64"></canvas>
    <canvas id="viewer-b" width="64" height="64"></canvas>
    <div id="query-image" hidden><canvas id="query-image-canvas" width="32" height="32"></canvas></div>
    <section id="question-realism"><button id="realism-a"></button><button id="realism-b"></button></section>
    <section id="question-coherence" class="locked"><button id="coherence-a"></button><button id="coherence-b"></button></section>
    <span id="progress"></span>
  `;
  return document;
}
