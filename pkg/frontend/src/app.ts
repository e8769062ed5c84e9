import { ApiClient, PayloadLeakError } from "./api.js";
import { RotationClock } from "./rotation.js";
import { Session } from "./session.js";
import type { Choice } from "./types.js";
import { VoxelView, drawImagePayload } from "./voxelview.js";

const KEY_DEBOUNCE_MS = 500;

export interface AppElements {
  viewerA: HTMLCanvasElement;
  viewerB: HTMLCanvasElement;
  queryImage: HTMLElement;
  queryImageCanvas: HTMLCanvasElement;
  realismBlock: HTMLElement;
  coherenceBlock: HTMLElement;
  realismButtons: { a: HTMLButtonElement; b: HTMLButtonElement };
  coherenceButtons: { a: HTMLButtonElement; b: HTMLButtonElement };
  status: HTMLElement;
  errorScreen: HTMLElement;
  progress: HTMLElement;
}

export function findElements(doc: Document): AppElements {
  const get = <T extends HTMLElement>(id: string) => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    viewerA: get<HTMLCanvasElement>("viewer-a"),
    viewerB: get<HTMLCanvasElement>("viewer-b"),
    queryImage: get("query-image"),
    queryImageCanvas: get<HTMLCanvasElement>("query-image-canvas"),
    realismBlock: get("question-realism"),
    coherenceBlock: get("question-coherence"),
    realismButtons: {
      a: get<HTMLButtonElement>("realism-a"),
      b: get<HTMLButtonElement>("realism-b"),
    },
    coherenceButtons: {
      a: get<HTMLButtonElement>("coherence-a"),
      b: get<HTMLButtonElement>("coherence-b"),
    },
    status: get("status"),
    errorScreen: get("error-screen"),
    progress: get("progress"),
  };
}

/** Wires the session state machine to the DOM: synchronized viewers, phased
 * question reveal, keyboard shortcuts with debounce. */
export class App {
  readonly session: Session;
  readonly viewA: VoxelView;
  readonly viewB: VoxelView;
  readonly clock: RotationClock;
  private lastKeyAt = -Infinity;
  private animating = false;

  constructor(
    private els: AppElements,
    private api: ApiClient,
    storage: Storage,
    clock?: RotationClock,
    now?: () => number,
  ) {
    this.session = new Session(api, storage, now);
    this.viewA = new VoxelView(els.viewerA);
    this.viewB = new VoxelView(els.viewerB);
    this.clock = clock ?? new RotationClock();
    els.realismButtons.a.addEventListener("click", () => this.answerRealism("a"));
    els.realismButtons.b.addEventListener("click", () => this.answerRealism("b"));
    els.coherenceButtons.a.addEventListener("click", () => void this.answerCoherence("a"));
    els.coherenceButtons.b.addEventListener("click", () => void this.answerCoherence("b"));
  }

  async start(): Promise<void> {
    try {
      const how = await this.session.start();
      if (how === "restored" && this.session.phase === "judging_coherence") {
        // refresh mid-pair: realism already answered locally, show phase 2
        this.presentPair();
        await this.revealImage();
      } else if (how === "done") {
        this.renderDone();
      } else {
        this.presentPair();
      }
    } catch (err) {
      this.renderError(err);
    }
    void this.refreshProgress();
  }

  /** Phase-1 presentation: two rotating shapes, question 2 locked, no image. */
  presentPair(): void {
    const pair = this.session.pair;
    if (!pair) return this.renderDone();
    this.viewA.setShape(pair.shape_a);
    this.viewB.setShape(pair.shape_b);
    this.els.queryImage.hidden = true;
    this.els.queryImage.removeAttribute("data-loaded");
    this.setBlockEnabled(this.els.realismBlock, this.els.realismButtons, this.session.phase === "judging_realism");
    this.setBlockEnabled(
      this.els.coherenceBlock,
      this.els.coherenceButtons,
      this.session.phase === "judging_coherence",
    );
    this.els.status.textContent = `pair ${pair.pair_id} (${pair.category})`;
    this.els.errorScreen.hidden = true;
  }

  answerRealism(choice: Choice): void {
    if (this.session.phase !== "judging_realism") return;
    try {
      this.session.submitRealism(choice);
    } catch (err) {
      return this.renderError(err);
    }
    void this.revealImage();
  }

  /** The query image appears only now, centered, and question 2 unlocks. */
  async revealImage(): Promise<void> {
    const pair = this.session.pair;
    if (!pair) return;
    this.setBlockEnabled(this.els.realismBlock, this.els.realismButtons, false);
    try {
      const img = await this.api.fetchImage(pair.pair_id);
      drawImagePayload(this.els.queryImageCanvas, img.pixels);
      this.els.queryImage.hidden = false;
      this.els.queryImage.setAttribute("data-loaded", "true");
      this.setBlockEnabled(this.els.coherenceBlock, this.els.coherenceButtons, true);
    } catch (err) {
      this.renderError(err);
    }
  }

  async answerCoherence(choice: Choice): Promise<void> {
    if (this.session.phase !== "judging_coherence") return;
    try {
      const more = await this.session.submitCoherence(choice);
      void this.refreshProgress();
      if (more) {
        this.presentPair();
      } else {
        this.renderDone();
      }
    } catch (err) {
      this.renderError(err);
    }
  }

  /** Left/right arrows answer the active question; debounced against
   * accidental double votes. */
  handleKey(key: string, nowMs: number): void {
    if (key !== "ArrowLeft" && key !== "ArrowRight") return;
    if (nowMs - this.lastKeyAt < KEY_DEBOUNCE_MS) return;
    this.lastKeyAt = nowMs;
    const choice: Choice = key === "ArrowLeft" ? "a" : "b";
    if (this.session.phase === "judging_realism") this.answerRealism(choice);
    else if (this.session.phase === "judging_coherence") void this.answerCoherence(choice);
  }

  /** One shared clock tick renders both viewports at the same angle. */
  tick(nowMs: number): void {
    const angle = this.clock.angleAt(nowMs);
    this.viewA.render(angle);
    this.viewB.render(angle);
  }

  startAnimation(win: Window): void {
    if (this.animating) return;
    this.animating = true;
    const loop = (t: number) => {
      this.tick(t);
      win.requestAnimationFrame(loop);
    };
    win.requestAnimationFrame(loop);
    win.addEventListener("keydown", (ev) => this.handleKey(ev.key, ev.timeStamp));
  }

  private setBlockEnabled(
    block: HTMLElement,
    buttons: { a: HTMLButtonElement; b: HTMLButtonElement },
    enabled: boolean,
  ): void {
    block.classList.toggle("locked", !enabled);
    block.setAttribute("data-enabled", String(enabled));
    buttons.a.disabled = !enabled;
    buttons.b.disabled = !enabled;
  }

  private renderDone(): void {
    this.viewA.clear();
    this.viewB.clear();
    this.els.status.textContent = "all pairs judged, thank you";
    this.setBlockEnabled(this.els.realismBlock, this.els.realismButtons, false);
    this.setBlockEnabled(this.els.coherenceBlock, this.els.coherenceButtons, false);
    this.els.queryImage.hidden = true;
  }

  private renderError(err: unknown): void {
    this.els.errorScreen.hidden = false;
    this.els.errorScreen.textContent =
      err instanceof PayloadLeakError
        ? "refusing to continue: the server payload leaked the assignment"
        : `error: ${err instanceof Error ? err.message : String(err)}`;
    this.setBlockEnabled(this.els.realismBlock, this.els.realismButtons, false);
    this.setBlockEnabled(this.els.coherenceBlock, this.els.coherenceButtons, false);
  }

  async refreshProgress(): Promise<void> {
    try {
      const p = await this.api.progress();
      this.els.progress.textContent = `${p.complete_pairs}/${p.total_pairs} pairs complete (${p.total_votes} votes)`;
    } catch {
      // progress display is best-effort
    }
  }
}

export function boot(doc: Document, win: Window): App {
  const app = new App(findElements(doc), new ApiClient(""), win.localStorage);
  void app.start();
  app.startAnimation(win);
  return app;
}
