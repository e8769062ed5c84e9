/** One shared rotation clock drives every viewport, so the two shapes stay
 * frame-synchronized through a full 360-degree loop. */
export class RotationClock {
  constructor(
    private periodMs: number = 12000,
    private epochMs: number = 0,
  ) {}

  /** Rotation angle in radians at the given wall-clock time. */
  angleAt(nowMs: number): number {
    const phase = (((nowMs - this.epochMs) % this.periodMs) + this.periodMs) % this.periodMs;
    return (phase / this.periodMs) * 2 * Math.PI;
  }
}
