/** Judging-protocol tests: phased reveal, lock order, synchronized rotation,
 * assignment-key hygiene, idempotent votes, session restore. */
import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, PayloadLeakError } from "../src/api.js";
import { App, findElements } from "../src/app.js";
import { RotationClock } from "../src/rotation.js";
import { appDom, makePair, mockServer } from "./helpers.js";

function buildApp(server = mockServer([makePair("p0"), makePair("p1")])) {
  const doc = appDom();
  localStorage.clear();
  const api = new ApiClient("", server.fetchFn);
  const app = new App(findElements(doc), api, localStorage, new RotationClock(12000, 0));
  return { app, doc, server };
}

describe("phased question reveal", () => {
  it("keeps the query image absent until the realism vote, then shows it", async () => {
    const { app, doc, server } = buildApp();
    await app.start();
    const image = doc.getElementById("query-image")!;
    expect(image.hidden).toBe(true);
    expect(image.getAttribute("data-loaded")).toBeNull();
    expect(server.imageCalls).toHaveLength(0); // not even fetched

    app.answerRealism("a");
    await Promise.resolve();
    await new Promise((r) => setTimeout(r, 0));
    expect(server.imageCalls).toEqual(["p0"]);
    expect(image.hidden).toBe(false);
    expect(image.getAttribute("data-loaded")).toBe("true");
  });

  it("unlocks question 2 only after question 1", async () => {
    const { app, doc } = buildApp();
    await app.start();
    const q1 = doc.getElementById("question-realism")!;
    const q2 = doc.getElementById("question-coherence")!;
    expect(q1.getAttribute("data-enabled")).toBe("true");
    expect(q2.getAttribute("data-enabled")).toBe("false");
    expect((doc.getElementById("coherence-a") as HTMLButtonElement).disabled).toBe(true);

    app.answerRealism("b");
    await new Promise((r) => setTimeout(r, 0));
    expect(q1.getAttribute("data-enabled")).toBe("false");
    expect(q2.getAttribute("data-enabled")).toBe("true");
  });

  it("ignores out-of-phase answers", async () => {
    const { app, server } = buildApp();
    await app.start();
    await app.answerCoherence("a"); // phase 1: must be a no-op
    expect(server.votes).toHaveLength(0);
    app.answerRealism("a");
    await new Promise((r) => setTimeout(r, 0));
    app.answerRealism("b"); // phase 2: realism locked, no state change
    expect(app.session.realismChoice).toBe("a");
  });
});

describe("vote submission", () => {
  it("posts one complete ordered record and advances", async () => {
    const { app, server } = buildApp();
    await app.start();
    app.answerRealism("a");
    await new Promise((r) => setTimeout(r, 0));
    await app.answerCoherence("b");
    expect(server.votes).toHaveLength(1);
    const vote = server.votes[0];
    expect(vote.pair_id).toBe("p0");
    expect(vote.realism_choice).toBe("a");
    expect(vote.coherence_choice).toBe("b");
    expect(vote.t_coherence).toBeGreaterThanOrEqual(vote.t_realism);
    expect(app.session.pair?.pair_id).toBe("p1");
  });

  it("retries a failed POST and lands the vote at most once", async () => {
    const { app, server } = buildApp();
    await app.start();
    app.answerRealism("a");
    await new Promise((r) => setTimeout(r, 0));
    server.failNextVotes = 1; // first attempt dies on the network
    await app.answerCoherence("a");
    expect(server.voteCalls).toBe(2);
    expect(server.votes).toHaveLength(1);
  });

  it("debounces rapid keyboard votes", async () => {
    const { app, server } = buildApp();
    await app.start();
    app.handleKey("ArrowLeft", 1000);
    app.handleKey("ArrowRight", 1200); // within 500 ms: ignored
    await new Promise((r) => setTimeout(r, 0));
    expect(app.session.realismChoice).toBe("a");
    app.handleKey("ArrowRight", 1600);
    await new Promise((r) => setTimeout(r, 0));
    expect(server.votes).toHaveLength(1);
    expect(server.votes[0].coherence_choice).toBe("b");
  });
});

describe("synchronized rotation", () => {
  it("renders both viewports at the identical angle on every tick", async () => {
    const { app } = buildApp();
    await app.start();
    for (const t of [0, 400, 1234, 9999, 12000, 17321]) {
      app.tick(t);
      expect(app.viewA.lastAngle).not.toBeNull();
      expect(app.viewA.lastAngle).toBe(app.viewB.lastAngle);
    }
  });

  it("completes a full 360-degree loop over one period", () => {
    const clock = new RotationClock(12000, 0);
    expect(clock.angleAt(0)).toBe(0);
    expect(clock.angleAt(6000)).toBeCloseTo(Math.PI, 12);
    expect(clock.angleAt(12000)).toBe(0);
    expect(clock.angleAt(15000)).toBeCloseTo(clock.angleAt(3000), 12);
  });
});

describe("assignment-key hygiene", () => {
  it("hard-rejects a payload carrying an assignment field", async () => {
    const server = mockServer([makePair("p0")], { leakKey: true });
    const { app, doc } = buildApp(server);
    await app.start();
    const error = doc.getElementById("error-screen")!;
    expect(error.hidden).toBe(false);
    expect(error.textContent).toMatch(/assignment/);
    expect((doc.getElementById("realism-a") as HTMLButtonElement).disabled).toBe(true);
  });

  it("never exposes the assignment in DOM state", async () => {
    const { app, doc } = buildApp();
    await app.start();
    app.answerRealism("a");
    await new Promise((r) => setTimeout(r, 0));
    const html = doc.body.innerHTML;
    expect(html).not.toMatch(/ours/);
    expect(html).not.toMatch(/assignment/);
    expect(html).not.toMatch(/baseline/);
  });

  it("the api client validates payloads independently", async () => {
    const server = mockServer([makePair("p0", { key: "b" })]);
    const api = new ApiClient("", server.fetchFn);
    await expect(api.nextAssignment(null)).rejects.toBeInstanceOf(PayloadLeakError);
  });
});

describe("session restore", () => {
  it("restores a mid-pair phase-2 session with the realism choice intact", async () => {
    const server = mockServer([makePair("p0"), makePair("p1")]);
    const first = buildApp(server);
    await first.app.start();
    first.app.answerRealism("b");
    await new Promise((r) => setTimeout(r, 0));
    expect(server.votes).toHaveLength(0); // nothing persisted yet

    // simulate refresh: new app over the same storage and server
    const doc = appDom();
    const api = new ApiClient("", server.fetchFn);
    const again = new App(findElements(doc), api, localStorage, new RotationClock());
    await again.start();
    expect(again.session.phase).toBe("judging_coherence");
    expect(again.session.pair?.pair_id).toBe("p0");
    expect(again.session.realismChoice).toBe("b");
    expect(doc.getElementById("query-image")!.hidden).toBe(false); // phase 2 shows it
    await again.answerCoherence("a");
    expect(server.votes).toHaveLength(1);
    expect(server.votes[0].realism_choice).toBe("b");
  });
});

describe("completion", () => {
  it("walks through every pair and reaches the done state", async () => {
    const server = mockServer([makePair("p0"), makePair("p1")]);
    const { app } = buildApp(server);
    await app.start();
    for (let i = 0; i < 2; i++) {
      app.answerRealism("a");
      await new Promise((r) => setTimeout(r, 0));
      await app.answerCoherence("a");
    }
    expect(app.session.phase).toBe("done");
    expect(server.votes).toHaveLength(2);
  });
});
