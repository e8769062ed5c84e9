import { ApiClient } from "./api.js";
import type { Choice, PairPayload, Phase, VoteRecord } from "./types.js";
import { PROTOCOL_VERSION } from "./types.js";

const STORE_PREFIX = "voxdiff.";

export interface SessionSnapshot {
  annotator: string | null;
  pair: PairPayload | null;
  phase: Phase;
  realismChoice: Choice | null;
  tRealism: number | null;
}

/** Judging-session state machine.
 *
 * Phase 1 (realism): two shapes, no image. Answering reveals the image and
 * unlocks phase 2 (coherence). The complete vote is persisted only after
 * the coherence answer; a refresh mid-pair restores the local state with
 * the realism choice intact but nothing yet on the server.
 */
export class Session {
  annotator: string | null = null;
  pair: PairPayload | null = null;
  phase: Phase = "judging_realism";
  realismChoice: Choice | null = null;
  private tRealism: number | null = null;
  private submitting = false;

  constructor(
    private api: ApiClient,
    private storage: Storage,
    private now: () => number = () => Date.now() / 1000,
  ) {}

  /** Restore a mid-pair session or fetch the next assignment. */
  async start(): Promise<"restored" | "fetched" | "done"> {
    this.annotator = this.storage.getItem(STORE_PREFIX + "annotator");
    const savedPair = this.storage.getItem(STORE_PREFIX + "pair");
    const savedPhase = this.storage.getItem(STORE_PREFIX + "phase") as Phase | null;
    if (savedPair && savedPhase && savedPhase !== "done") {
      this.pair = JSON.parse(savedPair) as PairPayload;
      this.phase = savedPhase;
      this.realismChoice = (this.storage.getItem(STORE_PREFIX + "realism") as Choice) || null;
      const t = this.storage.getItem(STORE_PREFIX + "t_realism");
      this.tRealism = t ? Number(t) : null;
      return "restored";
    }
    return (await this.loadNext()) ? "fetched" : "done";
  }

  async loadNext(): Promise<boolean> {
    const assignment = await this.api.nextAssignment(this.annotator);
    this.annotator = assignment.annotator;
    this.storage.setItem(STORE_PREFIX + "annotator", assignment.annotator);
    if (assignment.done || !assignment.pair) {
      this.phase = "done";
      this.pair = null;
      this.clearPairState();
      return false;
    }
    this.pair = assignment.pair;
    this.phase = "judging_realism";
    this.realismChoice = null;
    this.tRealism = null;
    this.storage.setItem(STORE_PREFIX + "pair", JSON.stringify(assignment.pair));
    this.storage.setItem(STORE_PREFIX + "phase", this.phase);
    this.storage.removeItem(STORE_PREFIX + "realism");
    this.storage.removeItem(STORE_PREFIX + "t_realism");
    return true;
  }

  /** Q1 answer: locks in the realism choice locally and unlocks Q2. */
  submitRealism(choice: Choice): void {
    if (this.phase !== "judging_realism" || !this.pair) {
      throw new Error("realism can only be answered in phase 1");
    }
    this.realismChoice = choice;
    this.tRealism = this.now();
    this.phase = "judging_coherence";
    this.storage.setItem(STORE_PREFIX + "realism", choice);
    this.storage.setItem(STORE_PREFIX + "t_realism", String(this.tRealism));
    this.storage.setItem(STORE_PREFIX + "phase", this.phase);
  }

  /** Q2 answer: persists the complete vote, then advances to the next pair. */
  async submitCoherence(choice: Choice): Promise<boolean> {
    if (this.phase !== "judging_coherence" || !this.pair) {
      throw new Error("coherence can only be answered after realism");
    }
    if (this.submitting) return false; // one in-flight submission at a time
    if (!this.realismChoice || this.tRealism === null || !this.annotator) {
      throw new Error("incomplete session state");
    }
    this.submitting = true;
    try {
      const vote: VoteRecord = {
        pair_id: this.pair.pair_id,
        annotator_id: this.annotator,
        realism_choice: this.realismChoice,
        coherence_choice: choice,
        t_realism: this.tRealism,
        t_coherence: this.now(),
        protocol_version: PROTOCOL_VERSION,
      };
      await this.api.postVote(vote);
      this.clearPairState();
      return await this.loadNext();
    } finally {
      this.submitting = false;
    }
  }

  snapshot(): SessionSnapshot {
    return {
      annotator: this.annotator,
      pair: this.pair,
      phase: this.phase,
      realismChoice: this.realismChoice,
      tRealism: this.tRealism,
    };
  }

  private clearPairState(): void {
    this.storage.removeItem(STORE_PREFIX + "pair");
    this.storage.removeItem(STORE_PREFIX + "phase");
    this.storage.removeItem(STORE_PREFIX + "realism");
    this.storage.removeItem(STORE_PREFIX + "t_realism");
  }
}
