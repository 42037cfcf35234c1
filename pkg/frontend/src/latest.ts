/** One-slot latest-value cell shared by the socket reader and render loop.
 *
 * Writers overwrite, readers take; a monotonic tick guard drops frames that
 * arrive out of order so the view never steps backwards.
 */
export class LatestCell<T extends { tick: number }> {
  private value: T | null = null;
  private lastTaken = -1;

  offer(next: T): boolean {
    if (next.tick <= this.lastTaken || (this.value !== null && next.tick <= this.value.tick)) {
      return false; // stale
    }
    this.value = next;
    return true;
  }

  /** Returns the newest unseen value, or null when nothing new arrived. */
  take(): T | null {
    if (this.value === null) return null;
    const out = this.value;
    this.value = null;
    this.lastTaken = out.tick;
    return out;
  }

  peekTick(): number {
    return this.value ? this.value.tick : this.lastTaken;
  }
}
